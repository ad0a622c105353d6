//! Binary morphology with a square all-ones structuring element.
//!
//! Pixels outside the image count as unset for both erosion and dilation.

use crate::error::{Error, Result};
use crate::image::BinaryMask;

fn check_kernel(kernel: usize) -> Result<usize> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Config(format!("structuring element side must be odd, got {kernel}")));
    }
    Ok(kernel / 2)
}

/// One separable pass along x (`horizontal`) or y. `all` selects erosion
/// semantics (every in-window pixel set and inside the image); otherwise any
/// set pixel in the window suffices.
fn line_pass(m: &BinaryMask, radius: usize, horizontal: bool, all: bool) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    BinaryMask::from_fn(w, h, |x, y| {
        let (pos, len) = if horizontal { (x, w) } else { (y, h) };
        let lo = pos as isize - radius as isize;
        let hi = pos + radius;
        if all && (lo < 0 || hi >= len) {
            return false;
        }
        let range = lo.max(0) as usize..=hi.min(len - 1);
        let mut it = range.map(|p| if horizontal { m.get(p, y) } else { m.get(x, p) });
        if all {
            it.all(|b| b)
        } else {
            it.any(|b| b)
        }
    })
}

pub fn erode(m: &BinaryMask, kernel: usize) -> Result<BinaryMask> {
    let r = check_kernel(kernel)?;
    Ok(line_pass(&line_pass(m, r, true, true), r, false, true))
}

pub fn dilate(m: &BinaryMask, kernel: usize) -> Result<BinaryMask> {
    let r = check_kernel(kernel)?;
    Ok(line_pass(&line_pass(m, r, true, false), r, false, false))
}

/// Erosion followed by dilation under the same element.
pub fn morph_open(m: &BinaryMask, kernel: usize) -> Result<BinaryMask> {
    dilate(&erode(m, kernel)?, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_open(m: &BinaryMask, k: usize) -> BinaryMask {
        let r = (k / 2) as isize;
        let (w, h) = (m.width() as isize, m.height() as isize);
        let at = |m: &BinaryMask, x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && m.get(x as usize, y as usize);
        let window = |x: usize, y: usize| {
            (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (x as isize + dx, y as isize + dy)))
        };
        let eroded = BinaryMask::from_fn(m.width(), m.height(), |x, y| window(x, y).all(|(a, b)| at(m, a, b)));
        BinaryMask::from_fn(m.width(), m.height(), |x, y| window(x, y).any(|(a, b)| at(&eroded, a, b)))
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(morph_open(&BinaryMask::full(4, 4), 4), Err(Error::Config(_))));
    }

    #[test]
    fn full_mask_survives() {
        for k in [1, 3, 5, 7] {
            let m = BinaryMask::full(12, 9);
            assert_eq!(morph_open(&m, k).unwrap(), m);
        }
    }

    #[test]
    fn isolated_pixel_removed() {
        let mut m = BinaryMask::empty(11, 11);
        m.set(5, 5, true);
        assert_eq!(morph_open(&m, 5).unwrap().count(), 0);
    }

    #[test]
    fn solid_block_unchanged() {
        let m = BinaryMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        assert_eq!(morph_open(&m, 5).unwrap(), m);
        assert_eq!(brute_open(&m, 5), m);
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_idempotent(
            bits in proptest::collection::vec(proptest::bool::weighted(0.6), 14 * 10),
            k in prop_oneof![Just(3usize), Just(5usize)],
        ) {
            let m = BinaryMask::new(14, 10, bits).unwrap();
            let opened = morph_open(&m, k).unwrap();
            prop_assert_eq!(&opened, &brute_open(&m, k));
            prop_assert_eq!(&morph_open(&opened, k).unwrap(), &opened);
            prop_assert!(m.contains(&opened));
        }
    }
}
