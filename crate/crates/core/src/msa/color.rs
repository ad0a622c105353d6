use crate::image::{Frame, GrayImage};

/// BT.601 luma, `round(0.299 R + 0.587 G + 0.114 B)` with halves rounded up.
pub fn luma(px: [u8; 3]) -> u8 {
    let [r, g, b] = px.map(u32::from);
    ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
}

/// Saturation and value on a 0..=255 scale. Hue is never needed.
pub fn sat_val(px: [u8; 3]) -> (u8, u8) {
    let max = u32::from(*px.iter().max().unwrap());
    let min = u32::from(*px.iter().min().unwrap());
    if max == 0 {
        return (0, 0);
    }
    // round(255 (max - min) / max), halves up
    let s = (2 * 255 * (max - min) + max) / (2 * max);
    (s as u8, max as u8)
}

pub fn rgb_to_gray(frame: &Frame) -> GrayImage {
    let data = frame.pixels().map(luma).collect();
    GrayImage { width: frame.width(), height: frame.height(), data }
}

/// Returns the `(S, V)` planes.
pub fn rgb_to_sv(frame: &Frame) -> (GrayImage, GrayImage) {
    let (s, v): (Vec<u8>, Vec<u8>) = frame.pixels().map(sat_val).unzip();
    let (w, h) = (frame.width(), frame.height());
    (GrayImage { width: w, height: h, data: s }, GrayImage { width: w, height: h, data: v })
}
