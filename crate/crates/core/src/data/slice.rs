use crate::{Error, Result};

/// One 2-D slice with pixels in `[-1, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub subject: u32,
    pub slice_index: u16,
    /// Annotated lesion pixels at native (pre-resize) resolution.
    pub lesion_px: u32,
}

impl SliceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape(
                "SliceImage::new",
                format!("{} pixels", height * width),
                pixels.len(),
            ));
        }
        Ok(SliceImage {
            height,
            width,
            pixels,
            subject: 0,
            slice_index: 0,
            lesion_px: 0,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("consistent extents")
    }

    /// Copy of `self` with different pixels and the same identity fields.
    pub fn with_pixels(&self, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        SliceImage {
            pixels,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        SliceImage {
            height: self.height,
            width: self.width,
            pixels: Vec::new(),
            subject: self.subject,
            slice_index: self.slice_index,
            lesion_px: self.lesion_px,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn in_range(&self) -> bool {
        self.pixels.iter().all(|v| (-1.0..=1.0).contains(v))
    }
}

/// Binary within-brain map with the same extents as its slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BrainMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BrainMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("BrainMask::new", format!("{} bits", height * width), bits.len()));
        }
        Ok(BrainMask { height, width, bits })
    }

    pub fn full(height: usize, width: usize) -> Self {
        BrainMask {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn interior_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Inclusive bounding box `(y0, x0, y1, x1)` of the interior.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (y, x) = (i / self.width, i % self.width);
            bb = Some(match bb {
                None => (y, x, y, x),
                Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
            });
        }
        bb
    }

    pub(crate) fn check_matches(&self, op: &'static str, img: &SliceImage) -> Result<()> {
        if self.height != img.height || self.width != img.width {
            return Err(Error::shape(
                op,
                format!("mask {}x{}", img.height, img.width),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }
}
