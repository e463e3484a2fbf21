use rand::Rng;

use crate::data::SliceImage;

/// Copy of `x` with `count` axis-aligned `size x size` squares, each at a
/// uniform random position and filled with one uniform gray level in
/// `[-1, 1]`. `size` is clamped to the slice extent.
pub fn apply_square_masks<R: Rng + ?Sized>(x: &SliceImage, size: usize, count: usize, rng: &mut R) -> SliceImage {
    let mut out = x.clone();
    let (sh, sw) = (size.min(x.height), size.min(x.width));
    if sh == 0 || sw == 0 {
        return out;
    }
    for _ in 0..count {
        let y0 = rng.random_range(0..=x.height - sh);
        let x0 = rng.random_range(0..=x.width - sw);
        let gray: f32 = rng.random_range(-1.0..=1.0);
        for y in y0..y0 + sh {
            out.pixels[y * x.width + x0..y * x.width + x0 + sw].fill(gray);
        }
    }
    out
}
