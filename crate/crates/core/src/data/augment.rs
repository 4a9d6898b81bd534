use rand::Rng;

use crate::tensor::Tensor;

pub const ERASE_MIN_FRACTION: f64 = 0.02;
pub const ERASE_MAX_FRACTION: f64 = 0.20;
const ERASE_ATTEMPTS: usize = 10;

/// Rectangle in `(row, col)` pixel coordinates of a `[c, h, w]` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EraseRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentInfo {
    pub flipped: bool,
    pub erased: Option<EraseRect>,
}

/// Mirrors the last (width) axis.
pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let w = *img.shape().last().expect("image has a width axis");
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Zeroes `rect` in every channel.
pub fn erase_rect(img: &Tensor, rect: EraseRect) -> Tensor {
    let (h, w) = match img.shape() {
        [_, h, w] => (*h, *w),
        other => panic!("erase_rect needs a [c, h, w] image, got {other:?}"),
    };
    let mut out = img.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        for y in rect.top..rect.top + rect.height {
            plane[y * w + rect.left..y * w + rect.left + rect.width].fill(0.0);
        }
    }
    out
}

/// Samples a rectangle covering 2–20% of the image area with a log-uniform
/// aspect ratio in `[0.3, 3.3]`. Returns `None` when no attempt fits.
fn sample_rect<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Option<EraseRect> {
    let area = (h * w) as f64;
    for _ in 0..ERASE_ATTEMPTS {
        let target = area * rng.random_range(ERASE_MIN_FRACTION..=ERASE_MAX_FRACTION);
        let aspect = rng.random_range(0.3f64.ln()..=3.3f64.ln()).exp();
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh > h || ew > w {
            continue;
        }
        let frac = (eh * ew) as f64 / area;
        if !(ERASE_MIN_FRACTION..=ERASE_MAX_FRACTION).contains(&frac) {
            continue;
        }
        return Some(EraseRect {
            top: rng.random_range(0..=h - eh),
            left: rng.random_range(0..=w - ew),
            height: eh,
            width: ew,
        });
    }
    None
}

pub fn augment_with_info<R: Rng + ?Sized>(
    img: &Tensor,
    flip_p: f64,
    erase_p: f64,
    rng: &mut R,
) -> (Tensor, AugmentInfo) {
    let mut info = AugmentInfo::default();
    let mut out = if rng.random::<f64>() < flip_p {
        info.flipped = true;
        flip_horizontal(img)
    } else {
        img.clone()
    };
    if rng.random::<f64>() < erase_p {
        if let [_, h, w] = *img.shape() {
            if let Some(rect) = sample_rect(h, w, rng) {
                out = erase_rect(&out, rect);
                info.erased = Some(rect);
            }
        }
    }
    (out, info)
}

/// Random horizontal flip with probability `flip_p`, then random erasing
/// with probability `erase_p`.
pub fn augment<R: Rng + ?Sized>(img: &Tensor, flip_p: f64, erase_p: f64, rng: &mut R) -> Tensor {
    augment_with_info(img, flip_p, erase_p, rng).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image() -> Tensor {
        Tensor::from_fn(&[2, 5, 7], |i| i as f64 + 1.0)
    }

    #[test]
    fn flip_is_involution() {
        let img = image();
        assert_ne!(flip_horizontal(&img), img);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);

        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let once = augment(&img, 1.0, 0.0, &mut r1);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(augment(&once, 1.0, 0.0, &mut r2), img);
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let img = image();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            assert_eq!(augment(&img, 0.0, 0.0, &mut rng), img);
        }
    }

    #[test]
    fn erased_fraction_in_range() {
        let img = Tensor::from_fn(&[1, 16, 16], |_| 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut erased = 0;
        for _ in 0..1000 {
            let (out, info) = augment_with_info(&img, 0.0, 1.0, &mut rng);
            let zeros = out.data().iter().filter(|v| **v == 0.0).count();
            if info.erased.is_some() {
                erased += 1;
                let frac = zeros as f64 / 256.0;
                assert!((ERASE_MIN_FRACTION..=ERASE_MAX_FRACTION).contains(&frac), "{frac}");
            } else {
                assert_eq!(zeros, 0);
            }
        }
        assert!(erased > 950, "{erased}");
    }
}
