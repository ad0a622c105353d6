//! Mixed-prior shadow attention.
//!
//! A frame is thresholded twice, once on BT.601 luma and once jointly on
//! saturation and value. Each binary mask is cleaned with a morphological
//! opening, the two are OR-ed, and the union is turned into a per-pixel
//! weight map that emphasises candidate shadow pixels in the frame.

pub mod color;
pub mod morph;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::image::{BinaryMask, Frame, GrayImage};

pub use color::{rgb_to_gray, rgb_to_sv};
pub use morph::{dilate, erode, morph_open};

/// How the prior mask is attached to the frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `I ⊙ (1 + w·m)` on every colour channel.
    #[default]
    Multiplicative,
    /// Frame unchanged, `w·255·m` appended as a fourth channel.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsaConfig {
    pub gray_min: u8,
    pub gray_max: u8,
    pub s_min: u8,
    pub s_max: u8,
    pub v_min: u8,
    pub v_max: u8,
    pub kernel: usize,
    pub weight_strength: f64,
    pub weighting: Weighting,
}

impl Default for MsaConfig {
    fn default() -> Self {
        MsaConfig {
            gray_min: 0,
            gray_max: 120,
            s_min: 0,
            s_max: 155,
            v_min: 6,
            v_max: 130,
            kernel: 5,
            weight_strength: 1.0,
            weighting: Weighting::Multiplicative,
        }
    }
}

impl MsaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lo, hi) in [
            ("gray", self.gray_min, self.gray_max),
            ("saturation", self.s_min, self.s_max),
            ("value", self.v_min, self.v_max),
        ] {
            if lo > hi {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is inverted")));
            }
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel must be odd and positive, got {}", self.kernel)));
        }
        if !(self.weight_strength >= 0.0 && self.weight_strength.is_finite()) {
            return Err(Error::Config(format!("weight strength must be >= 0, got {}", self.weight_strength)));
        }
        Ok(())
    }
}

/// Inclusive `[lo, hi]` range on one channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelRange {
    pub lo: u8,
    pub hi: u8,
}

/// Sets a pixel iff every channel lies within its range.
pub fn threshold_mask(channels: &[(&GrayImage, ChannelRange)]) -> Result<BinaryMask> {
    let Some((first, _)) = channels.first() else {
        return Err(Error::Input("threshold needs at least one channel".into()));
    };
    let (w, h) = (first.width, first.height);
    for (img, range) in channels {
        if (img.width, img.height) != (w, h) {
            return Err(shape_err!("channel sizes differ: {}x{} vs {}x{}", w, h, img.width, img.height));
        }
        if range.lo > range.hi {
            return Err(Error::Config(format!("inverted range [{}, {}]", range.lo, range.hi)));
        }
    }
    let bits = (0..w * h)
        .map(|i| channels.iter().all(|(img, r)| (r.lo..=r.hi).contains(&img.data[i])))
        .collect();
    BinaryMask::new(w, h, bits)
}

/// Union of two opened masks.
pub fn combine(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.union(b)
}

/// Per-pixel weights, `1 + w` on the mask and `1` elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn from_mask(mask: &BinaryMask, w: f64) -> Result<Self> {
        check_strength(w)?;
        Ok(AttentionMap {
            width: mask.width(),
            height: mask.height(),
            weights: mask.bits().iter().map(|&b| if b { 1.0 + w } else { 1.0 }).collect(),
        })
    }
}

/// Frame values as scalars after weighting, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedFrame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl WeightedFrame {
    /// The frame's own values with no weighting applied.
    pub fn identity(frame: &Frame) -> Self {
        WeightedFrame {
            width: frame.width(),
            height: frame.height(),
            channels: 3,
            data: frame.rgb().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Unweighted frame in the layout `weighting` produces.
    pub fn unweighted(frame: &Frame, weighting: Weighting) -> Self {
        match weighting {
            Weighting::Multiplicative => Self::identity(frame),
            Weighting::Concat => concat_channel(frame, &BinaryMask::empty(frame.width(), frame.height()), 0.0),
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Quantises back to 8-bit RGB for display, saturating at 255.
    pub fn to_frame(&self) -> Frame {
        let rgb = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|px| px[..3].iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect::<Vec<_>>())
            .collect();
        Frame::new(self.width, self.height, rgb).expect("weighted frame dimensions")
    }
}

fn check_strength(w: f64) -> Result<()> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::Config(format!("weight strength must be >= 0, got {w}")));
    }
    Ok(())
}

/// `I ⊙ (1 + w·m)` per channel.
pub fn apply_attention(frame: &Frame, mask: &BinaryMask, w: f64) -> Result<WeightedFrame> {
    check_strength(w)?;
    if (frame.width(), frame.height()) != (mask.width(), mask.height()) {
        return Err(shape_err!("frame and mask sizes differ"));
    }
    let data = frame
        .rgb()
        .chunks_exact(3)
        .zip(mask.bits())
        .flat_map(|(px, &m)| {
            let gain = if m { 1.0 + w } else { 1.0 };
            px.iter().map(move |&v| f64::from(v) * gain)
        })
        .collect();
    Ok(WeightedFrame { width: frame.width(), height: frame.height(), channels: 3, data })
}

fn concat_channel(frame: &Frame, mask: &BinaryMask, w: f64) -> WeightedFrame {
    let data = frame
        .rgb()
        .chunks_exact(3)
        .zip(mask.bits())
        .flat_map(|(px, &m)| {
            let extra = if m { 255.0 * w } else { 0.0 };
            [f64::from(px[0]), f64::from(px[1]), f64::from(px[2]), extra]
        })
        .collect();
    WeightedFrame { width: frame.width(), height: frame.height(), channels: 4, data }
}

/// Everything the prior produces for one frame.
#[derive(Clone, Debug)]
pub struct MsaOutput {
    pub gray_mask: BinaryMask,
    pub hsv_mask: BinaryMask,
    pub combined: BinaryMask,
    pub attention: AttentionMap,
    pub weighted: WeightedFrame,
}

impl MsaOutput {
    pub fn shadow_fraction(&self) -> f64 {
        self.combined.count() as f64 / (self.combined.width() * self.combined.height()) as f64
    }
}

/// Thresholds, opens, unions and applies the prior. Pure in `(frame, cfg)`.
pub fn msa_map(frame: &Frame, cfg: &MsaConfig) -> Result<MsaOutput> {
    cfg.validate()?;
    let gray = rgb_to_gray(frame);
    let (s, v) = rgb_to_sv(frame);
    let gray_raw = threshold_mask(&[(&gray, ChannelRange { lo: cfg.gray_min, hi: cfg.gray_max })])?;
    let hsv_raw = threshold_mask(&[
        (&s, ChannelRange { lo: cfg.s_min, hi: cfg.s_max }),
        (&v, ChannelRange { lo: cfg.v_min, hi: cfg.v_max }),
    ])?;
    let gray_mask = morph_open(&gray_raw, cfg.kernel)?;
    let hsv_mask = morph_open(&hsv_raw, cfg.kernel)?;
    let combined = combine(&hsv_mask, &gray_mask)?;
    let attention = AttentionMap::from_mask(&combined, cfg.weight_strength)?;
    let weighted = match cfg.weighting {
        Weighting::Multiplicative => apply_attention(frame, &combined, cfg.weight_strength)?,
        Weighting::Concat => concat_channel(frame, &combined, cfg.weight_strength),
    };
    Ok(MsaOutput { gray_mask, hsv_mask, combined, attention, weighted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_validation() {
        assert!(MsaConfig::default().validate().is_ok());
        let bad = MsaConfig { gray_min: 10, gray_max: 5, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = MsaConfig { kernel: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = MsaConfig { weight_strength: -0.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_gray_range_sets_everything() {
        let img = GrayImage::new(3, 2, vec![0, 10, 255, 7, 128, 99]).unwrap();
        let m = threshold_mask(&[(&img, ChannelRange { lo: 0, hi: 255 })]).unwrap();
        assert_eq!(m.count(), 6);
    }

    #[test]
    fn threshold_matches_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = GrayImage::new(4, 4, (0..16).map(|_| rng.gen()).collect()).unwrap();
        let v = GrayImage::new(4, 4, (0..16).map(|_| rng.gen()).collect()).unwrap();
        let m = threshold_mask(&[(&s, ChannelRange { lo: 0, hi: 155 }), (&v, ChannelRange { lo: 6, hi: 130 })]).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let (sv, vv) = (s.get(x, y), v.get(x, y));
                assert_eq!(m.get(x, y), sv <= 155 && (6..=130).contains(&vv));
            }
        }
        let small = GrayImage::new(2, 2, vec![0; 4]).unwrap();
        assert!(threshold_mask(&[(&s, ChannelRange { lo: 0, hi: 1 }), (&small, ChannelRange { lo: 0, hi: 1 })]).is_err());
    }

    #[test]
    fn combine_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = BinaryMask::new(5, 5, (0..25).map(|_| rng.gen()).collect()).unwrap();
        let b = BinaryMask::new(5, 5, (0..25).map(|_| rng.gen()).collect()).unwrap();
        assert_eq!(combine(&a, &BinaryMask::empty(5, 5)).unwrap(), a);
        assert_eq!(combine(&a, &a).unwrap(), a);
        let c = combine(&a, &b).unwrap();
        for i in 0..25 {
            assert_eq!(c.bits()[i], a.bits()[i] || b.bits()[i]);
        }
        assert!(combine(&a, &BinaryMask::empty(4, 5)).is_err());
    }

    #[test]
    fn attention_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = Frame::new(4, 4, (0..48).map(|_| rng.gen()).collect()).unwrap();
        let full = BinaryMask::full(4, 4);
        let id = apply_attention(&f, &full, 0.0).unwrap();
        assert_eq!(id, WeightedFrame::identity(&f));
        let doubled = apply_attention(&f, &full, 1.0).unwrap();
        for (a, b) in doubled.data.iter().zip(f.rgb()) {
            assert_eq!(*a, 2.0 * f64::from(*b));
        }
        let checker = BinaryMask::from_fn(4, 4, |x, y| (x + y) % 2 == 0);
        let half = apply_attention(&f, &checker, 0.5).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let gain = if (x + y) % 2 == 0 { 1.5 } else { 1.0 };
                for c in 0..3 {
                    assert_eq!(half.get(x, y, c), f64::from(f.pixel(x, y)[c]) * gain);
                }
            }
        }
        assert!(matches!(apply_attention(&f, &full, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn white_frame_has_no_shadow() {
        let f = Frame::filled(16, 16, [255, 255, 255]);
        let out = msa_map(&f, &MsaConfig::default()).unwrap();
        assert_eq!(out.combined.count(), 0);
        assert_eq!(out.weighted, WeightedFrame::identity(&f));
    }

    #[test]
    fn black_frame_follows_gray_mask() {
        let f = Frame::filled(16, 16, [0, 0, 0]);
        let out = msa_map(&f, &MsaConfig::default()).unwrap();
        assert_eq!(out.hsv_mask.count(), 0);
        assert_eq!(out.gray_mask, BinaryMask::full(16, 16));
        assert_eq!(out.combined, out.gray_mask);
    }

    #[test]
    fn concat_adds_a_channel() {
        let f = Frame::filled(8, 8, [0, 0, 0]);
        let cfg = MsaConfig { weighting: Weighting::Concat, ..Default::default() };
        let out = msa_map(&f, &cfg).unwrap();
        assert_eq!(out.weighted.channels, 4);
        assert_eq!(out.weighted.get(3, 3, 3), 255.0);
        assert_eq!(out.weighted.get(3, 3, 0), 0.0);
    }

    #[test]
    fn union_contains_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let f = Frame::new(16, 16, (0..768).map(|_| rng.gen()).collect()).unwrap();
            let out = msa_map(&f, &MsaConfig { kernel: 3, ..Default::default() }).unwrap();
            assert!(out.combined.contains(&out.gray_mask));
            assert!(out.combined.contains(&out.hsv_mask));
        }
    }
}
