//! Synthetic referring-shadow videos.
//!
//! Each video shows one or two bright rectangles ("objects") on a bright,
//! low-saturation background. Every object casts a darkened parallelogram
//! shadow directly below it. Objects either stay put or drift and bounce
//! within their half of the frame. A few tiny dark specks per frame act as
//! clutter that the colour prior should reject after opening.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Attributes, DatasetManifest, FrameRef, Motion, Scene, ShadowType};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Frame};
use crate::imageio;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_videos: usize,
    /// The last `n_test` videos form the test split.
    pub n_test: usize,
    pub frames_per_video: usize,
    pub width: usize,
    pub height: usize,
    /// Objects per video are drawn from `1..=max_objects` (at most 2).
    pub max_objects: usize,
    /// Inclusive side-length range of the object rectangle, pixels.
    pub object_size: [usize; 2],
    /// Inclusive vertical extent range of the shadow, pixels.
    pub shadow_length: [usize; 2],
    /// Horizontal offset of the shadow's far edge relative to its near edge.
    pub shadow_skew: [f64; 2],
    /// Multiplier applied to background pixels inside a shadow, in `(0, 1)`.
    pub darkening: f64,
    /// Penumbra width of soft shadows, pixels.
    pub soft_edge: f64,
    /// Maximum per-axis speed of moving objects, pixels per frame.
    pub max_speed: f64,
    pub specks_per_frame: usize,
    pub noise: u8,
    pub mention_object: bool,
    pub mention_motion: bool,
    pub mention_shape: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 28,
            n_test: 8,
            frames_per_video: 12,
            width: 48,
            height: 48,
            max_objects: 2,
            object_size: [6, 10],
            shadow_length: [6, 10],
            shadow_skew: [-4.0, 4.0],
            darkening: 0.45,
            soft_edge: 2.0,
            max_speed: 0.6,
            specks_per_frame: 4,
            noise: 6,
            mention_object: true,
            mention_motion: true,
            mention_shape: true,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_videos == 0 || self.frames_per_video == 0 {
            return bad("n_videos and frames_per_video must be positive");
        }
        if self.n_test > self.n_videos {
            return bad("n_test exceeds n_videos");
        }
        if !(1..=2).contains(&self.max_objects) {
            return bad("max_objects must be 1 or 2");
        }
        if !(self.darkening > 0.0 && self.darkening < 1.0) {
            return bad("darkening factor must lie in (0, 1)");
        }
        let [o0, o1] = self.object_size;
        let [l0, l1] = self.shadow_length;
        let [s0, s1] = self.shadow_skew;
        if o0 == 0 || o0 > o1 || l0 == 0 || l0 > l1 || !(s0 <= s1) || !s0.is_finite() || !s1.is_finite() {
            return bad("geometry ranges must be positive and ordered");
        }
        if !(self.soft_edge >= 0.0 && self.max_speed >= 0.0) {
            return bad("soft_edge and max_speed must be >= 0");
        }
        let lane = self.width / self.max_objects;
        let span_x = o1 as f64 + s0.abs().max(s1.abs()) + 2.0;
        if (lane as f64) < span_x || self.height < o1 + l1 + 2 {
            return bad("image too small for the configured geometry");
        }
        Ok(())
    }
}

/// Object rectangle and its shadow at one frame. The shadow is the
/// parallelogram with corners `(x, y0)`, `(x + w, y0)`, `(x + w + skew, y0 + len)`,
/// `(x + skew, y0 + len)` where `y0 = y + h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowGeometry {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub len: f64,
    pub skew: f64,
}

impl ShadowGeometry {
    pub fn polygon(&self) -> [(f64, f64); 4] {
        let y0 = self.y + self.h;
        [
            (self.x, y0),
            (self.x + self.w, y0),
            (self.x + self.w + self.skew, y0 + self.len),
            (self.x + self.skew, y0 + self.len),
        ]
    }

    fn object_contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }
}

/// Even-odd test of a point against a closed polygon.
fn polygon_contains(poly: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance((px, py): (f64, f64), (ax, ay): (f64, f64), (bx, by): (f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Pixel-centre rasterisation of a polygon.
fn rasterize(poly: &[(f64, f64)], width: usize, height: usize) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| polygon_contains(poly, x as f64 + 0.5, y as f64 + 0.5))
}

#[derive(Clone, Debug)]
pub struct SynthRecord {
    pub record_id: String,
    pub expression: String,
    pub attributes: Attributes,
    /// Geometry per frame.
    pub geometry: Vec<ShadowGeometry>,
    pub masks: Vec<BinaryMask>,
}

#[derive(Clone, Debug)]
pub struct SynthVideo {
    pub video_id: String,
    pub frames: Vec<Frame>,
    pub records: Vec<SynthRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub videos: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub records: usize,
    pub frames: usize,
    pub pairs: usize,
    pub min_words: usize,
    pub max_words: usize,
}

const PALETTE: [(&str, [u8; 3]); 4] =
    [("yellow", [240, 200, 40]), ("cyan", [80, 200, 240]), ("pink", [240, 120, 180]), ("green", [120, 230, 120])];

struct Instance {
    geom: ShadowGeometry,
    vx: f64,
    vy: f64,
    lane: (f64, f64),
    color: (&'static str, [u8; 3]),
    shadow_type: ShadowType,
    motion: Motion,
}

impl Instance {
    fn x_extent(&self) -> (f64, f64) {
        (self.geom.skew.min(0.0), self.geom.w + self.geom.skew.max(0.0))
    }

    fn advance(&mut self, height: f64) {
        let (lo, hi) = self.x_extent();
        let g = &mut self.geom;
        g.x += self.vx;
        if g.x + lo < self.lane.0 + 1.0 || g.x + hi > self.lane.1 - 1.0 {
            self.vx = -self.vx;
            g.x += 2.0 * self.vx;
        }
        g.y += self.vy;
        if g.y < 1.0 || g.y + g.h + g.len > height - 1.0 {
            self.vy = -self.vy;
            g.y += 2.0 * self.vy;
        }
    }
}

fn pick_usize(rng: &mut ChaCha8Rng, [lo, hi]: [usize; 2]) -> usize {
    rng.gen_range(lo..=hi)
}

fn position_word(inst: &Instance, n_objects: usize, width: f64) -> &'static str {
    let (lo, hi) = inst.x_extent();
    let centre = inst.geom.x + 0.5 * (lo + hi);
    if n_objects > 1 {
        return if centre < width / 2.0 { "left" } else { "right" };
    }
    if centre < width / 3.0 {
        "left"
    } else if centre > 2.0 * width / 3.0 {
        "right"
    } else {
        "middle"
    }
}

fn expression(cfg: &SynthConfig, inst: &Instance, position: &str, rng: &mut ChaCha8Rng) -> String {
    let kind = match inst.shadow_type {
        ShadowType::Hard => "hard",
        ShadowType::Soft => "soft",
    };
    let place = if position == "middle" { "in the middle".to_string() } else { format!("on the {position} side") };
    let mut subject = format!("the {kind} shadow");
    if cfg.mention_object {
        subject.push_str(&format!(" of the {} box", inst.color.0));
    }
    if cfg.mention_motion {
        subject.push_str(match inst.motion {
            Motion::Moving => " that is moving",
            Motion::Stable => " that stays still",
        });
    }
    let mut text = if rng.gen_bool(0.5) { format!("{subject} is {place}") } else { format!("{place} is {subject}") };
    // The lean clause avoids left/right so position words stay unambiguous
    // for an order-free text encoder.
    if cfg.mention_shape {
        let skew = inst.geom.skew;
        if skew > 1.0 {
            text.push_str(" and slants forward");
        } else if skew < -1.0 {
            text.push_str(" and slants backward");
        }
    }
    text
}

fn render_frame(
    cfg: &SynthConfig,
    background: [f64; 3],
    instances: &[Instance],
    rng: &mut ChaCha8Rng,
) -> Frame {
    let (w, h) = (cfg.width, cfg.height);
    let noise = f64::from(cfg.noise);
    let mut px: Vec<[f64; 3]> = (0..w * h)
        .map(|_| background.map(|b| b + if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 }))
        .collect();
    for _ in 0..cfg.specks_per_frame {
        let side = rng.gen_range(1..=2);
        let x0 = rng.gen_range(0..w - side);
        let y0 = rng.gen_range(0..h - side);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                px[y * w + x] = px[y * w + x].map(|v| v * cfg.darkening);
            }
        }
    }
    for inst in instances {
        let poly = inst.geom.polygon();
        for y in 0..h {
            for x in 0..w {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                if !polygon_contains(&poly, p.0, p.1) {
                    continue;
                }
                let depth = match inst.shadow_type {
                    ShadowType::Hard => 1.0,
                    ShadowType::Soft if cfg.soft_edge > 0.0 => {
                        let edge = (0..4).map(|i| segment_distance(p, poly[i], poly[(i + 1) % 4])).fold(f64::MAX, f64::min);
                        (edge / cfg.soft_edge).min(1.0)
                    }
                    ShadowType::Soft => 1.0,
                };
                let factor = 1.0 - (1.0 - cfg.darkening) * depth;
                px[y * w + x] = px[y * w + x].map(|v| v * factor);
            }
        }
    }
    for inst in instances {
        for y in 0..h {
            for x in 0..w {
                if inst.geom.object_contains(x as f64 + 0.5, y as f64 + 0.5) {
                    px[y * w + x] = inst.color.1.map(f64::from);
                }
            }
        }
    }
    let rgb = px.iter().flat_map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8)).collect();
    Frame::new(w, h, rgb).expect("frame dimensions")
}

fn make_video(cfg: &SynthConfig, index: usize, rng: &mut ChaCha8Rng) -> SynthVideo {
    let video_id = format!("v{index:03}");
    let n_objects = rng.gen_range(1..=cfg.max_objects);
    let scene = *[Scene::Indoor, Scene::Outdoor, Scene::Day, Scene::Night].choose(rng).expect("non-empty");
    let base = match scene {
        Scene::Outdoor | Scene::Day => rng.gen_range(200.0..230.0),
        Scene::Indoor | Scene::Night => rng.gen_range(165.0..190.0),
    };
    let background = [0, 1, 2].map(|_| base + rng.gen_range(-8.0..8.0));
    let mut colors = PALETTE.to_vec();
    colors.shuffle(rng);
    let lane_w = cfg.width as f64 / n_objects as f64;
    let mut instances: Vec<Instance> = (0..n_objects)
        .map(|k| {
            let ow = pick_usize(rng, cfg.object_size) as f64;
            let oh = pick_usize(rng, cfg.object_size) as f64;
            let len = pick_usize(rng, cfg.shadow_length) as f64;
            let [s0, s1] = cfg.shadow_skew;
            let skew = if s0 < s1 { rng.gen_range(s0..=s1) } else { s0 };
            let lane = (k as f64 * lane_w, (k + 1) as f64 * lane_w);
            let (lo, hi) = (skew.min(0.0), ow + skew.max(0.0));
            let x = rng.gen_range(lane.0 + 1.0 - lo..=lane.1 - 1.0 - hi);
            let y = rng.gen_range(1.0..=cfg.height as f64 - 1.0 - oh - len);
            let motion = if rng.gen_bool(0.5) { Motion::Moving } else { Motion::Stable };
            let (vx, vy) = match motion {
                Motion::Moving if cfg.max_speed > 0.0 => {
                    let mut v = || rng.gen_range(0.5 * cfg.max_speed..=cfg.max_speed) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    (v(), v())
                }
                _ => (0.0, 0.0),
            };
            let motion = if vx == 0.0 && vy == 0.0 { Motion::Stable } else { motion };
            Instance {
                geom: ShadowGeometry { x, y, w: ow, h: oh, len, skew },
                vx,
                vy,
                lane,
                color: colors[k],
                shadow_type: if rng.gen_bool(0.5) { ShadowType::Hard } else { ShadowType::Soft },
                motion,
            }
        })
        .collect();
    let mut records: Vec<SynthRecord> = instances
        .iter()
        .enumerate()
        .map(|(k, inst)| SynthRecord {
            record_id: format!("{video_id}_s{k}"),
            expression: expression(cfg, inst, position_word(inst, n_objects, cfg.width as f64), rng),
            attributes: Attributes { shadow_type: Some(inst.shadow_type), motion: Some(inst.motion), scene: Some(scene) },
            geometry: Vec::new(),
            masks: Vec::new(),
        })
        .collect();
    let mut frames = Vec::with_capacity(cfg.frames_per_video);
    for t in 0..cfg.frames_per_video {
        if t > 0 {
            instances.iter_mut().for_each(|i| i.advance(cfg.height as f64));
        }
        frames.push(render_frame(cfg, background, &instances, rng));
        for (rec, inst) in records.iter_mut().zip(&instances) {
            rec.geometry.push(inst.geom);
            rec.masks.push(rasterize(&inst.geom.polygon(), cfg.width, cfg.height));
        }
    }
    SynthVideo { video_id, frames, records }
}

/// Generates every video in memory. Deterministic in `cfg`.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SynthVideo>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.n_videos).map(|i| make_video(cfg, i, &mut rng)).collect())
}

/// Writes the dataset under `out` (`videos/<id>/frames/*.png`,
/// `videos/<id>/masks/<record>/*.png`, `manifest.json`).
pub fn generate_synthetic(cfg: &SynthConfig, out: &Path) -> Result<(DatasetManifest, SynthSummary)> {
    let videos = synthesize(cfg)?;
    let mut manifest = DatasetManifest::new(out);
    let n_train = cfg.n_videos - cfg.n_test;
    let mut summary = SynthSummary { videos: videos.len(), train_videos: n_train, test_videos: cfg.n_test, ..Default::default() };
    let mut words = Vec::new();
    for (i, v) in videos.iter().enumerate() {
        let frame_rel: Vec<String> =
            (0..v.frames.len()).map(|t| format!("videos/{}/frames/{t:03}.png", v.video_id)).collect();
        for (rel, frame) in frame_rel.iter().zip(&v.frames) {
            imageio::write_frame_png(&manifest.resolve(rel), frame)?;
        }
        summary.frames += v.frames.len();
        for r in &v.records {
            let mut refs = Vec::with_capacity(r.masks.len());
            for (t, mask) in r.masks.iter().enumerate() {
                let mask_path = format!("videos/{}/masks/{}/{t:03}.png", v.video_id, r.record_id);
                imageio::write_mask_png(&manifest.resolve(&mask_path), mask)?;
                refs.push(FrameRef { frame_path: frame_rel[t].clone(), mask_path });
            }
            summary.records += 1;
            summary.pairs += refs.len();
            words.push(crate::text::word_count(&r.expression));
            manifest.records.push(AnnotationRecord {
                record_id: r.record_id.clone(),
                video_id: v.video_id.clone(),
                expression: r.expression.clone(),
                frames: refs,
                attributes: r.attributes.clone(),
            });
        }
        if i < n_train {
            manifest.split.train.push(v.video_id.clone());
        } else {
            manifest.split.test.push(v.video_id.clone());
        }
    }
    summary.min_words = words.iter().copied().min().unwrap_or(0);
    summary.max_words = words.iter().copied().max().unwrap_or(0);
    manifest.save(&out.join("manifest.json"))?;
    Ok((manifest, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_manifest, validate};
    use crate::text::word_count;

    fn small() -> SynthConfig {
        SynthConfig { n_videos: 6, n_test: 2, frames_per_video: 4, ..SynthConfig::default() }
    }

    /// Independent parallelogram test: interpolate the left and right edges
    /// at the sample row.
    fn oracle(g: &ShadowGeometry, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let y0 = g.y + g.h;
            if py < y0 || py >= y0 + g.len {
                return false;
            }
            let t = (py - y0) / g.len;
            let left = g.x + g.skew * t;
            px >= left && px < left + g.w
        })
    }

    #[test]
    fn masks_match_oracle_rasterizer() {
        let cfg = small();
        for v in synthesize(&cfg).unwrap() {
            for r in &v.records {
                for (g, m) in r.geometry.iter().zip(&r.masks) {
                    let o = oracle(g, cfg.width, cfg.height);
                    assert_eq!(crate::metrics::iou(m, &o).unwrap(), 1.0, "{}", r.record_id);
                    assert!(m.count() > 0);
                }
            }
        }
    }

    #[test]
    fn expressions_follow_grammar() {
        let cfg = SynthConfig { n_videos: 40, ..small() };
        for v in synthesize(&cfg).unwrap() {
            for r in &v.records {
                let n = word_count(&r.expression);
                assert!((6..=27).contains(&n), "{}", r.expression);
                assert!(r.expression.contains("hard") || r.expression.contains("soft"));
                let sides = r.expression.matches("left").count() + r.expression.matches("right").count();
                assert!(sides <= 1, "{}", r.expression);
                if v.records.len() > 1 {
                    assert_eq!(sides, 1, "{}", r.expression);
                }
            }
            if let [a, b] = &v.records[..] {
                assert_ne!(a.expression, b.expression);
            }
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let cfg = small();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic(&cfg, a.path()).unwrap();
        generate_synthetic(&cfg, b.path()).unwrap();
        let files = |root: &Path| {
            let mut out = Vec::new();
            let mut stack = vec![root.to_path_buf()];
            while let Some(dir) = stack.pop() {
                for e in std::fs::read_dir(dir).unwrap() {
                    let p = e.unwrap().path();
                    if p.is_dir() {
                        stack.push(p);
                    } else {
                        out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                    }
                }
            }
            out.sort();
            out
        };
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert!(!fa.is_empty());
        assert!(fa == fb);
    }

    #[test]
    fn generated_dataset_is_clean_and_counts_agree() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        let (_, summary) = generate_synthetic(&cfg, dir.path()).unwrap();
        let m = load_manifest(&dir.path().join("manifest.json")).unwrap();
        assert!(validate(&m).is_clean(), "{:?}", validate(&m).violations);
        let s = crate::dataset::stats(&m);
        assert_eq!((s.records, s.pairs, s.videos), (summary.records, summary.pairs, summary.videos));
        assert_eq!(m.split.test.len(), 2);
    }

    #[test]
    fn shadows_are_darker_than_background() {
        let cfg = SynthConfig { noise: 0, specks_per_frame: 0, ..small() };
        for v in synthesize(&cfg).unwrap() {
            let f = &v.frames[0];
            for r in &v.records {
                if r.attributes.shadow_type != Some(ShadowType::Hard) {
                    continue;
                }
                let m = &r.masks[0];
                let g = &r.geometry[0];
                let obj = BinaryMask::from_fn(f.width(), f.height(), |x, y| g.object_contains(x as f64 + 0.5, y as f64 + 0.5));
                for y in 0..f.height() {
                    for x in 0..f.width() {
                        if m.get(x, y) && !obj.get(x, y) {
                            assert!(f.pixel(x, y).iter().all(|&c| c < 120), "{:?}", f.pixel(x, y));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(SynthConfig { darkening: 1.0, ..small() }.validate().is_err());
        assert!(SynthConfig { width: 10, ..small() }.validate().is_err());
        assert!(SynthConfig { n_test: 9, ..small() }.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("blocker");
        std::fs::write(&file, b"x").unwrap();
        assert!(generate_synthetic(&small(), &file).unwrap_err().is_io());
    }
}
