//! Query-based referring shadow segmenter.
//!
//! Per frame: colour prior weighting, patch-mean visual tokens with a fixed
//! 2D sinusoidal code, embedded expression tokens, a joint self-attention
//! encoder, a query decoder whose queries are refreshed from memory, and
//! box / score / mask heads. Memory is stored as plain tensors, so every
//! frame is its own tape and gradients never cross frame boundaries.

mod checkpoint;
mod train;
mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{
    evaluate, frame_loss, ground_truth_scores, prepare, train, EpochReport, EvalOptions, Evaluation, PreparedSample, TrainConfig, TrainReport,
};
pub use vocab::{Vocabulary, UNKNOWN_TOKEN};

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::image::{BinaryMask, Frame};
use crate::msa::{msa_map, MsaConfig, WeightedFrame, Weighting};
use crate::nn::{Linear, Mlp3, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::tsm::{
    memory_embed, memory_read, propagate, select_memory, ClipRecord, MemoryMode, MemoryParams, MemoryWindow,
    TraceRecord, TripleEntity, CLIP_FRAMES,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub queries: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_width: usize,
    pub patch: usize,
    pub seed: u64,
    /// Apply the colour prior before encoding.
    pub msa_enabled: bool,
    pub msa: MsaConfig,
    pub memory: MemoryMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 32,
            queries: 5,
            heads: 4,
            encoder_layers: 1,
            decoder_layers: 2,
            ffn_width: 64,
            patch: 4,
            seed: 1,
            msa_enabled: true,
            msa: MsaConfig { weighting: Weighting::Concat, ..MsaConfig::default() },
            memory: MemoryMode::IntraHier,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!("width {} must be a positive multiple of heads {}", self.d, self.heads)));
        }
        if self.d % 4 != 0 {
            return Err(Error::Config("width must be a multiple of 4 for the position code".into()));
        }
        if self.queries == 0 || self.patch == 0 || self.ffn_width == 0 {
            return Err(Error::Config("queries, patch and ffn_width must be positive".into()));
        }
        self.msa.validate()
    }

    pub fn input_channels(&self) -> usize {
        match self.msa.weighting {
            Weighting::Multiplicative => 3,
            Weighting::Concat => 4,
        }
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ffn1: Linear,
    ffn2: Linear,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
    ffn1: Linear,
    ffn2: Linear,
}

#[derive(Clone, Debug)]
struct Parts {
    patch_proj: Linear,
    text_embed: ParamId,
    encoder: Vec<EncoderLayer>,
    queries: ParamId,
    decoder: Vec<DecoderLayer>,
    box_head: Mlp3,
    score_head: Linear,
    mask_head: Mlp3,
    memory: MemoryParams,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    parts: Parts,
}

/// Size-dependent constants shared by every frame of a video.
#[derive(Clone, Debug)]
pub struct FrameGeometry {
    pub width: usize,
    pub height: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    /// `(grid_h·grid_w) × d` position code.
    pub position: Tensor,
    /// `(height·width) × (grid_h·grid_w)` bilinear upsampling operator, one
    /// row per pixel with at most four non-zero weights.
    pub upsample: Tensor,
}

/// 1D bilinear weights from `n_in` cells of size `factor` to `n_out` pixels,
/// sampling at pixel centres with edge clamping. Returns `n_in × n_out`.
fn bilinear_1d(n_in: usize, n_out: usize, factor: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_in * n_out];
    for o in 0..n_out {
        let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        let t = src - i0 as f64;
        w[i0 * n_out + o] += 1.0 - t;
        w[i1 * n_out + o] += t;
    }
    w
}

/// Row code in the first half of each row, column code in the second, each
/// as interleaved sin/cos pairs.
pub fn position_code(grid_h: usize, grid_w: usize, d: usize) -> Tensor {
    let half = d / 2;
    let pairs = half / 2;
    let mut data = Vec::with_capacity(grid_h * grid_w * d);
    for r in 0..grid_h {
        for c in 0..grid_w {
            for pos in [r as f64, c as f64] {
                for k in 0..pairs {
                    let freq = 1.0 / 10000f64.powf(k as f64 / pairs as f64);
                    data.push((pos * freq).sin());
                    data.push((pos * freq).cos());
                }
            }
        }
    }
    Tensor::new(&[grid_h * grid_w, d], data).expect("position code shape")
}

impl FrameGeometry {
    pub fn new(width: usize, height: usize, patch: usize, d: usize) -> Result<Self> {
        if width < patch || height < patch {
            return Err(Error::Input(format!("frame {width}x{height} is smaller than one {patch}x{patch} patch")));
        }
        let (grid_w, grid_h) = (width / patch, height / patch);
        let ux = bilinear_1d(grid_w, width, patch);
        let uy = bilinear_1d(grid_h, height, patch);
        let tokens = grid_h * grid_w;
        let mut up = vec![0.0; tokens * height * width];
        for i in 0..grid_h {
            for j in 0..grid_w {
                for y in 0..height {
                    let wy = uy[i * height + y];
                    if wy == 0.0 {
                        continue;
                    }
                    for x in 0..width {
                        up[(y * width + x) * tokens + i * grid_w + j] = wy * ux[j * width + x];
                    }
                }
            }
        }
        Ok(FrameGeometry {
            width,
            height,
            grid_w,
            grid_h,
            position: position_code(grid_h, grid_w, d),
            upsample: Tensor::new(&[height * width, tokens], up)?,
        })
    }

    pub fn tokens(&self) -> usize {
        self.grid_w * self.grid_h
    }
}

/// Per-channel means over non-overlapping `patch × patch` cells, scaled to
/// `[0, 1]`. Rows are cells in raster order.
pub fn patch_features(frame: &WeightedFrame, patch: usize) -> Result<Tensor> {
    if patch == 0 || frame.width < patch || frame.height < patch {
        return Err(Error::Input(format!("frame {}x{} is smaller than one patch", frame.width, frame.height)));
    }
    let (gw, gh, c) = (frame.width / patch, frame.height / patch, frame.channels);
    let mut data = vec![0.0; gw * gh * c];
    for y in 0..gh * patch {
        for x in 0..gw * patch {
            let cell = (y / patch) * gw + x / patch;
            let base = (y * frame.width + x) * c;
            for ch in 0..c {
                data[cell * c + ch] += frame.data[base + ch];
            }
        }
    }
    let norm = 1.0 / (255.0 * (patch * patch) as f64);
    data.iter_mut().for_each(|v| *v *= norm);
    Tensor::new(&[gw * gh, c], data)
}

/// Index of the highest score, lowest index on ties.
pub fn select_referred_query(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Tape values of one frame's forward pass.
pub struct FrameVars<'g> {
    /// `N_q × 4`, sigmoid-activated `(cx, cy, w, h)`.
    pub boxes: Var<'g>,
    /// `N_q × 1` pre-sigmoid confidence.
    pub score_logits: Var<'g>,
    /// `N_q × (H·W)`.
    pub mask_logits: Var<'g>,
    pub decoded: Var<'g>,
    pub queries_in: Var<'g>,
    /// Every attention weight matrix, in evaluation order.
    pub attention: Vec<Var<'g>>,
    pub memory_read: bool,
}

impl FrameVars<'_> {
    pub fn entity(&self) -> TripleEntity {
        TripleEntity::new((*self.boxes.value()).clone(), (*self.decoded.value()).clone(), (*self.queries_in.value()).clone())
            .expect("entity shapes follow the config")
    }

    pub fn output(&self, geom: &FrameGeometry) -> FrameOutput {
        let nq = self.boxes.value().shape()[0];
        FrameOutput {
            boxes: (*self.boxes.value()).clone(),
            mask_logits: self.mask_logits.value().reshape(&[nq, geom.height, geom.width]).expect("mask shape"),
            query_scores: self.score_logits.value().data().iter().map(|&z| crate::autograd::sigmoid(z)).collect(),
            entity: self.entity(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub boxes: Tensor,
    /// `N_q × H × W`.
    pub mask_logits: Tensor,
    pub query_scores: Vec<f64>,
    pub entity: TripleEntity,
}

impl FrameOutput {
    pub fn referred(&self) -> usize {
        select_referred_query(&self.query_scores)
    }

    /// Mask of query `q`, set where the sigmoid reaches 0.5.
    pub fn mask(&self, q: usize) -> BinaryMask {
        let s = self.mask_logits.shape();
        let (h, w) = (s[1], s[2]);
        let plane = &self.mask_logits.data()[q * h * w..(q + 1) * h * w];
        BinaryMask::new(w, h, plane.iter().map(|&z| z >= 0.0).collect()).expect("plane size")
    }
}

/// Memory carried from frame to frame within one video.
#[derive(Clone, Debug, Default)]
pub struct VideoState {
    pub window: MemoryWindow,
    pending: Vec<TripleEntity>,
    previous: Option<TripleEntity>,
    frame: usize,
}

impl VideoState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frame_index(&self) -> usize {
        self.frame
    }

    pub fn clip_index(&self) -> usize {
        self.frame / CLIP_FRAMES
    }

    pub fn previous(&self) -> Option<&TripleEntity> {
        self.previous.as_ref()
    }

    /// Stores the frame's record; a completed clip enters the window.
    pub fn record(&mut self, entity: TripleEntity) -> Result<()> {
        self.pending.push(entity.clone());
        self.previous = Some(entity);
        if self.pending.len() == CLIP_FRAMES {
            let clip = ClipRecord::new(self.clip_index(), std::mem::take(&mut self.pending))?;
            self.window.push_clip(clip)?;
        }
        self.frame += 1;
        Ok(())
    }
}

/// Per-video outputs plus the memory trace.
#[derive(Clone, Debug)]
pub struct VideoOutput {
    pub frames: Vec<FrameOutput>,
    pub trace: Vec<TraceRecord>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (d, ffn, h) = (config.d, config.ffn_width, config.heads);
        let patch_proj = Linear::new(&mut store, "patch.proj", config.input_channels(), d, &mut rng);
        // Unit-scale rows so text tokens are not drowned by the position code.
        let text_embed = store.add_uniform("text.embed", &[vocab.len(), d], 1, &mut rng);
        let encoder = (0..config.encoder_layers)
            .map(|i| {
                Ok(EncoderLayer {
                    attn: MultiHeadAttention::new(&mut store, &format!("enc{i}.attn"), d, h, &mut rng)?,
                    ffn1: Linear::new(&mut store, &format!("enc{i}.ffn1"), d, ffn, &mut rng),
                    ffn2: Linear::new(&mut store, &format!("enc{i}.ffn2"), ffn, d, &mut rng),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let queries = store.add_uniform("queries", &[config.queries, d], d, &mut rng);
        let decoder = (0..config.decoder_layers)
            .map(|i| {
                Ok(DecoderLayer {
                    self_attn: MultiHeadAttention::new(&mut store, &format!("dec{i}.self"), d, h, &mut rng)?,
                    cross_attn: MultiHeadAttention::new(&mut store, &format!("dec{i}.cross"), d, h, &mut rng)?,
                    ffn1: Linear::new(&mut store, &format!("dec{i}.ffn1"), d, ffn, &mut rng),
                    ffn2: Linear::new(&mut store, &format!("dec{i}.ffn2"), ffn, d, &mut rng),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let box_head = Mlp3::new(&mut store, "head.box", [d, d, d, 4], &mut rng);
        let score_head = Linear::new(&mut store, "head.score", d, 1, &mut rng);
        let mask_head = Mlp3::new(&mut store, "head.mask", [d, d, d, d], &mut rng);
        let memory = MemoryParams::new(&mut store, d, h, &mut rng)?;
        let parts =
            Parts { patch_proj, text_embed, encoder, queries, decoder, box_head, score_head, mask_head, memory };
        Ok(Model { config, vocab, store, parts })
    }

    pub fn geometry(&self, width: usize, height: usize) -> Result<FrameGeometry> {
        FrameGeometry::new(width, height, self.config.patch, self.config.d)
    }

    /// Colour-prior weighting (or the unweighted layout) reduced to patch means.
    pub fn frame_features(&self, frame: &Frame, msa: bool) -> Result<Tensor> {
        let weighted = if msa {
            msa_map(frame, &self.config.msa)?.weighted
        } else {
            WeightedFrame::unweighted(frame, self.config.msa.weighting)
        };
        patch_features(&weighted, self.config.patch)
    }

    /// `F_i`: projected patch means plus the position code.
    pub fn encode_frame<'g>(&self, g: &'g Graph, features: &Tensor, geom: &FrameGeometry) -> Result<Var<'g>> {
        if features.dims2()?.0 != geom.tokens() {
            return Err(shape_err!("{} patch rows for a {}-token grid", features.dims2()?.0, geom.tokens()));
        }
        let x = self.parts.patch_proj.forward(g, &self.store, g.constant(features.clone()))?;
        x.add(g.constant(geom.position.clone()))
    }

    /// `F_ε`: one embedding row per token.
    pub fn encode_text<'g>(&self, g: &'g Graph, tokens: &[usize]) -> Result<Var<'g>> {
        if tokens.is_empty() {
            return Err(Error::Input("empty expression".into()));
        }
        let v = self.vocab.len();
        let mut onehot = vec![0.0; tokens.len() * v];
        for (r, &t) in tokens.iter().enumerate() {
            if t >= v {
                return Err(Error::Input(format!("token index {t} outside vocabulary of {v}")));
            }
            onehot[r * v + t] = 1.0;
        }
        g.constant(Tensor::new(&[tokens.len(), v], onehot)?).matmul(g.param(&self.store, self.parts.text_embed))
    }

    fn ffn<'g>(&self, g: &'g Graph, a: &Linear, b: &Linear, x: Var<'g>) -> Result<Var<'g>> {
        b.forward(g, &self.store, a.forward(g, &self.store, x)?.relu())
    }

    /// `F_m`: joint encoder over image then text tokens.
    pub fn fuse<'g>(&self, g: &'g Graph, f_i: Var<'g>, f_e: Var<'g>, attention: &mut Vec<Var<'g>>) -> Result<Var<'g>> {
        let mut x = g.concat_rows(&[f_i, f_e])?;
        for layer in &self.parts.encoder {
            let a = layer.attn.forward(g, &self.store, x, x, x)?;
            attention.extend(a.weights);
            x = x.add(a.output)?;
            x = x.add(self.ffn(g, &layer.ffn1, &layer.ffn2, x)?)?;
        }
        Ok(x)
    }

    pub fn decode_queries<'g>(
        &self,
        g: &'g Graph,
        f_m: Var<'g>,
        queries: Var<'g>,
        attention: &mut Vec<Var<'g>>,
    ) -> Result<Var<'g>> {
        let mut q = queries;
        for layer in &self.parts.decoder {
            let s = layer.self_attn.forward(g, &self.store, q, q, q)?;
            attention.extend(s.weights);
            q = q.add(s.output)?;
            let c = layer.cross_attn.forward(g, &self.store, q, f_m, f_m)?;
            attention.extend(c.weights);
            q = q.add(c.output)?;
            q = q.add(self.ffn(g, &layer.ffn1, &layer.ffn2, q)?)?;
        }
        Ok(q)
    }

    /// Box, score and upsampled mask logits for every query.
    pub fn predict<'g>(
        &self,
        g: &'g Graph,
        decoded: Var<'g>,
        image_tokens: Var<'g>,
        geom: &FrameGeometry,
    ) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
        let boxes = self.parts.box_head.forward(g, &self.store, decoded)?.sigmoid();
        let scores = self.parts.score_head.forward(g, &self.store, decoded)?;
        let embed = self.parts.mask_head.forward(g, &self.store, decoded)?;
        let low = embed.matmul_t(image_tokens)?;
        // Pixel-major product so the zero-skipping kernels see the sparse side.
        let masks = g.constant(geom.upsample.clone()).matmul(low.transpose()?)?.transpose()?;
        Ok((boxes, scores, masks))
    }

    /// Queries for the current frame: learned queries, refreshed by a memory
    /// read when `mode` and the state allow one.
    fn frame_queries<'g>(
        &self,
        g: &'g Graph,
        state: &VideoState,
        mode: MemoryMode,
        attention: &mut Vec<Var<'g>>,
    ) -> Result<(Var<'g>, bool)> {
        let q0 = g.param(&self.store, self.parts.queries);
        let Some(memory) = select_memory(mode, &state.window, state.previous()) else {
            return Ok((q0, false));
        };
        let prev = state.previous().expect("memory implies a previous frame");
        let p = &self.parts.memory;
        let h_mem = memory_embed(g, &self.store, &memory, p)?;
        let read = memory_read(g, &self.store, g.constant(prev.t_que.clone()), h_mem, p)?;
        attention.extend(read.weights);
        Ok((q0.add(propagate(g, &self.store, read.output, p)?)?, true))
    }

    /// Full forward pass for one frame given the video's memory state.
    pub fn forward_frame<'g>(
        &self,
        g: &'g Graph,
        features: &Tensor,
        tokens: &[usize],
        geom: &FrameGeometry,
        state: &VideoState,
        mode: MemoryMode,
    ) -> Result<FrameVars<'g>> {
        let mut attention = Vec::new();
        let f_i = self.encode_frame(g, features, geom)?;
        let f_e = self.encode_text(g, tokens)?;
        let f_m = self.fuse(g, f_i, f_e, &mut attention)?;
        let (queries_in, memory_read) = self.frame_queries(g, state, mode, &mut attention)?;
        let decoded = self.decode_queries(g, f_m, queries_in, &mut attention)?;
        let image_tokens = f_m.slice_rows(0, geom.tokens())?;
        let (boxes, score_logits, mask_logits) = self.predict(g, decoded, image_tokens, geom)?;
        Ok(FrameVars { boxes, score_logits, mask_logits, decoded, queries_in, attention, memory_read })
    }

    /// Runs a whole video in order, carrying memory between frames.
    pub fn forward_video(&self, video_id: &str, frames: &[Frame], expression: &str, opts: &EvalOptions) -> Result<VideoOutput> {
        let first = frames.first().ok_or_else(|| Error::Input("video has no frames".into()))?;
        let geom = self.geometry(first.width(), first.height())?;
        let tokens = self.vocab.encode(expression)?;
        let features =
            frames.iter().map(|f| self.frame_features(f, opts.msa)).collect::<Result<Vec<_>>>()?;
        self.forward_features(video_id, &features, &tokens, &geom, opts.memory)
    }

    pub fn forward_features(
        &self,
        video_id: &str,
        features: &[Tensor],
        tokens: &[usize],
        geom: &FrameGeometry,
        mode: MemoryMode,
    ) -> Result<VideoOutput> {
        let mut state = VideoState::new();
        let mut out = VideoOutput { frames: Vec::with_capacity(features.len()), trace: Vec::new() };
        for (t, f) in features.iter().enumerate() {
            let g = Graph::new();
            let vars = self.forward_frame(&g, f, tokens, geom, &state, mode)?;
            let frame = vars.output(geom);
            out.trace.push(TraceRecord {
                video_id: video_id.to_string(),
                frame: t,
                clip_index: state.clip_index(),
                memory_read: vars.memory_read,
                window: state.window.indices(),
                boxes: frame.boxes.data().chunks_exact(4).map(|b| [b[0], b[1], b[2], b[3]]).collect(),
                t_rep_norm: frame.entity.t_rep.norm(),
                t_que_norm: frame.entity.t_que.norm(),
            });
            state.record(frame.entity.clone())?;
            out.frames.push(frame);
        }
        Ok(out)
    }

    /// Same architecture with the parameters replaced by `store`, which must
    /// share this model's layout.
    pub fn with_params(&self, store: &ParamStore) -> Result<Model> {
        let mut m = self.clone();
        m.store.load_named(&store.to_named())?;
        Ok(m)
    }

    /// Parameter ids owned by the memory path.
    pub fn memory_params(&self) -> Vec<ParamId> {
        self.parts.memory.params()
    }
}
