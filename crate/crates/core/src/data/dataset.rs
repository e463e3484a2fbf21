use rand::seq::SliceRandom;

use super::phantom::{generate_phantom, subject_seed, PhantomConfig};
use super::preprocess::{crop_resize, histogram_match_volume, normalize_range, QuantileTable};
use super::{BrainMask, SliceImage};
use crate::rng::{self, tag};
use crate::{Error, Result};

/// A preprocessed slice and its brain mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub image: SliceImage,
    pub mask: BrainMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

/// Subject-disjoint train / validation / test partition of one cohort.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SliceRecord>,
    pub validation: Vec<SliceRecord>,
    pub test: Vec<SliceRecord>,
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &[SliceRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every record tagged with its split, in file order.
    pub fn iter(&self) -> impl Iterator<Item = (SplitName, &SliceRecord)> {
        SplitName::ALL
            .into_iter()
            .flat_map(move |name| self.get(name).iter().map(move |r| (name, r)))
    }

    /// `(height, width)` shared by all records, if any.
    pub fn extent(&self) -> Option<(usize, usize)> {
        self.iter().next().map(|(_, r)| (r.image.height, r.image.width))
    }
}

/// Subject counts of the 70 / 15 / 15 partition of `n` subjects.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.70 * n as f64).round() as usize;
    let validation = ((0.15 * n as f64).round() as usize).min(n - train);
    (train, validation, n - train - validation)
}

/// Assigns shuffled subject ids to the three splits.
pub fn partition_subjects(n: usize, seed: u64, cohort_tag: u64) -> [Vec<usize>; 3] {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, cohort_tag]));
    let (a, b, _) = split_sizes(n);
    let mut parts = [ids[..a].to_vec(), ids[a..a + b].to_vec(), ids[a + b..].to_vec()];
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

/// Whether slice `slice` of unlabelled subject `subject` receives a lesion.
pub fn lesion_draw(cfg: &PhantomConfig, subject: usize, slice: usize) -> bool {
    use rand::Rng;
    rng::stream(cfg.seed, &[tag::LESION_DRAW, subject as u64, slice as u64]).random_bool(cfg.lesion_probability)
}

/// Native-resolution volume of one subject after range normalization.
fn subject_volume(cfg: &PhantomConfig, cohort_tag: u64, subject: usize) -> Result<(Vec<SliceImage>, Vec<BrainMask>)> {
    let seed = subject_seed(cfg, cohort_tag, subject);
    let mut slices = Vec::with_capacity(cfg.slices_per_subject);
    let mut masks = Vec::with_capacity(cfg.slices_per_subject);
    for s in 0..cfg.slices_per_subject {
        let lesion = cohort_tag == tag::UNLABELLED_COHORT && lesion_draw(cfg, subject, s);
        let mut p = generate_phantom(cfg, seed, s, lesion)?;
        p.image.subject = subject as u32;
        slices.push(p.image);
        masks.push(p.mask);
    }
    Ok((normalize_range(&slices)?, masks))
}

/// The histogram reference: the middle slice of the first unlabelled
/// subject after range normalization.
pub fn reference_table(cfg: &PhantomConfig) -> Result<QuantileTable> {
    let (slices, masks) = subject_volume(cfg, tag::UNLABELLED_COHORT, 0)?;
    let mid = cfg.slices_per_subject / 2;
    QuantileTable::from_reference(&slices[mid], &masks[mid])
}

fn build_cohort(cfg: &PhantomConfig, cohort_tag: u64, subjects: usize, table: &QuantileTable) -> Result<DatasetSplit> {
    let parts = partition_subjects(subjects, cfg.seed, cohort_tag);
    let mut out = DatasetSplit::default();
    for (name, ids) in SplitName::ALL.into_iter().zip(parts) {
        let dst = match name {
            SplitName::Train => &mut out.train,
            SplitName::Validation => &mut out.validation,
            SplitName::Test => &mut out.test,
        };
        for subject in ids {
            let (slices, masks) = subject_volume(cfg, cohort_tag, subject)?;
            let matched = histogram_match_volume(&slices, &masks, table)?;
            for (img, mask) in matched.iter().zip(&masks) {
                let (image, mask) = crop_resize(img, mask, cfg.crop_extent, cfg.output_resolution)?;
                // bilinear resampling bleeds brain intensities past the
                // nearest-neighbour mask edge; restore the background
                let pixels = image.pixels.iter().zip(&mask.bits).map(|(&v, &m)| if m { v } else { -1.0 }).collect();
                let image = image.with_pixels(pixels);
                dst.push(SliceRecord { image, mask });
            }
        }
    }
    Ok(out)
}

/// Generates and preprocesses both cohorts: `(healthy, unlabelled)`.
pub fn make_dataset(cfg: &PhantomConfig) -> Result<(DatasetSplit, DatasetSplit)> {
    cfg.validate()?;
    for (field, n) in [("healthy_subjects", cfg.healthy_subjects), ("unlabelled_subjects", cfg.unlabelled_subjects)] {
        if n < 10 {
            return Err(Error::config(field, "at least 10 subjects required"));
        }
    }
    let table = reference_table(cfg)?;
    let healthy = build_cohort(cfg, tag::HEALTHY_COHORT, cfg.healthy_subjects, &table)?;
    let unlabelled = build_cohort(cfg, tag::UNLABELLED_COHORT, cfg.unlabelled_subjects, &table)?;
    Ok((healthy, unlabelled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventy_fifteen_fifteen() {
        assert_eq!(split_sizes(100), (70, 15, 15));
        assert_eq!(split_sizes(60), (42, 9, 9));
        let (a, b, c) = split_sizes(10);
        assert_eq!(a + b + c, 10);
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let parts = partition_subjects(37, 9, 1);
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }
}
