use std::collections::BTreeSet;
use std::f64::consts::PI;

use ldvae_core::data::{
    apply_augment, generate_phantom, histogram_match, load_dataset, make_dataset, save_dataset, AugmentDraws,
    DatasetSplit, QuantileTable, SplitName,
};
use ldvae_core::{BrainMask, Error, FormatError, PhantomConfig, SliceImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(subjects: usize, slices: usize) -> PhantomConfig {
    PhantomConfig {
        native_resolution: 32,
        crop_extent: 28,
        output_resolution: 16,
        healthy_subjects: subjects,
        unlabelled_subjects: subjects,
        slices_per_subject: slices,
        ..PhantomConfig::default()
    }
}

fn subjects(split: &DatasetSplit, name: SplitName) -> BTreeSet<u32> {
    split.get(name).iter().map(|r| r.image.subject).collect()
}

#[test]
fn hundred_subjects_split_seventy_fifteen_fifteen() {
    let (healthy, unlabelled) = make_dataset(&small(100, 2)).unwrap();
    for split in [&healthy, &unlabelled] {
        let [tr, va, te] = SplitName::ALL.map(|n| subjects(split, n));
        assert_eq!((tr.len(), va.len(), te.len()), (70, 15, 15));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(split.len(), 200);
    }
    assert!(healthy.iter().all(|(_, r)| r.image.lesion_px == 0));
    let lesions = unlabelled.iter().filter(|(_, r)| r.image.lesion_px > 0).count();
    assert!(lesions > 60 && lesions < 140, "{lesions} lesion slices of 200");
}

#[test]
fn zero_lesion_probability_gives_clean_unlabelled_cohort() {
    let cfg = PhantomConfig { lesion_probability: 0.0, ..small(12, 4) };
    let (_, unlabelled) = make_dataset(&cfg).unwrap();
    assert!(unlabelled.iter().all(|(_, r)| r.image.lesion_px == 0));
}

#[test]
fn dataset_slices_are_well_formed() {
    let (healthy, unlabelled) = make_dataset(&small(10, 6)).unwrap();
    for (_, r) in healthy.iter().chain(unlabelled.iter()) {
        assert!(r.image.in_range());
        assert_eq!((r.image.height, r.image.width), (16, 16));
        assert!(r.mask.interior_count() > 0);
        for (&v, &m) in r.image.pixels.iter().zip(&r.mask.bits) {
            if !m {
                assert_eq!(v, -1.0);
            }
        }
    }
    assert!(make_dataset(&small(9, 6)).is_err());
}

#[test]
fn generation_is_order_independent_and_seeded() {
    let cfg = small(10, 3);
    let a = make_dataset(&cfg).unwrap();
    let b = make_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let c = make_dataset(&PhantomConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn lesion_area_matches_radius_in_flat_region() {
    let base = PhantomConfig::default();
    for r in [3.0, 4.5, 6.0] {
        let cfg = PhantomConfig { lesion_radius: (r, r), ..base.clone() };
        for seed in 0..5 {
            let p = generate_phantom(&cfg, 100 + seed, 15, true).unwrap();
            let area = PI * r * r;
            let px = p.image.lesion_px as f64;
            assert!((px - area).abs() <= 0.15 * area, "r {r}: {px} vs {area}");
            assert!(p.lesion.iter().zip(&p.mask.bits).all(|(&l, &m)| !l || m));
        }
    }
}

#[test]
fn dataset_file_round_trip_and_errors() {
    let (healthy, _) = make_dataset(&small(10, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.ldsd");
    save_dataset(&healthy, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    let bits = |s: &DatasetSplit| {
        s.iter()
            .flat_map(|(_, r)| r.image.pixels.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&back), bits(&healthy));
    assert_eq!(back, healthy);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Format(FormatError::Truncated { .. }))));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Format(FormatError::BadMagic { .. }))));

    let mut flipped = bytes.clone();
    let mid = flipped.len() - 40;
    flipped[mid] ^= 0x10;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Format(FormatError::Checksum { .. }))));

    assert!(matches!(load_dataset(dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn uniform_image_against_two_valued_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 32 * 32;
    let img = SliceImage::new(32, 32, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let reference = SliceImage::new(32, 32, (0..n).map(|i| if i % 3 == 0 { 0.6 } else { -0.4 }).collect()).unwrap();
    let mask = BrainMask::full(32, 32);
    let out = histogram_match(&img, &mask, &reference, &mask).unwrap();
    // the single bin straddling the jump may interpolate a few pixels
    let off = out.pixels.iter().filter(|&&v| v != 0.6 && v != -0.4).count();
    assert!(off <= n / 256 + 1, "{off} pixels between the two levels");
    let high = out.pixels.iter().filter(|&&v| v == 0.6).count() as f64 / n as f64;
    assert!((high - 1.0 / 3.0).abs() < 0.01, "{high}");
}

#[test]
fn self_matching_is_identity_up_to_bin_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = SliceImage::new(32, 32, (0..1024).map(|_| rng.random_range(-0.9..0.9)).collect()).unwrap();
    let mask = BrainMask::full(32, 32);
    let width = QuantileTable::from_reference(&img, &mask).unwrap().max_bin_width();
    let out = histogram_match(&img, &mask, &img, &mask).unwrap();
    let max = out.pixels.iter().zip(&img.pixels).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(max as f64 <= width + 1e-6, "{max} vs bin width {width}");
}

#[test]
fn forced_brightness_shift() {
    let img = SliceImage::new(1, 2, vec![0.5, -1.0]).unwrap();
    let mask = BrainMask::new(1, 2, vec![true, false]).unwrap();
    let up = AugmentDraws { brightness: 0.1, ..AugmentDraws::default() };
    let (out, _) = apply_augment(&img, &mask, &up);
    assert!((out.pixels[0] - 0.6).abs() < 1e-6);
    assert_eq!(out.pixels[1], -1.0);
}
