//! Twin-track memory.
//!
//! The intra-clip track is the record of the frame processed just before the
//! current one. The inter-clip track is a ring buffer of the five most recent
//! completed clips, summarised at three temporal scales:
//!
//! | slot | source (newest first)       |
//! |------|-----------------------------|
//! | T1   | newest clip                 |
//! | T2   | mean of clips 2 and 3       |
//! | T3   | mean of clips 4 and 5       |
//!
//! Until five clips exist, missing slots replicate the oldest available
//! clip. Stored representations are detached values; gradients do not flow
//! back into earlier frames.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{AttentionOutput, Linear, Mlp3, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const WINDOW_CLIPS: usize = 5;
pub const CLIP_FRAMES: usize = 3;

/// Per-frame memory record: boxes, representations and queries.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleEntity {
    pub t_box: Tensor,
    pub t_rep: Tensor,
    pub t_que: Tensor,
}

impl TripleEntity {
    pub fn new(t_box: Tensor, t_rep: Tensor, t_que: Tensor) -> Result<Self> {
        let (nq, four) = t_box.dims2()?;
        if four != 4 {
            return Err(shape_err!("boxes must be N_q x 4, got {:?}", t_box.shape()));
        }
        let (nr, d) = t_rep.dims2()?;
        if nr != nq || t_que.shape() != [nq, d] {
            return Err(shape_err!(
                "entity rows disagree: boxes {:?}, rep {:?}, query {:?}",
                t_box.shape(),
                t_rep.shape(),
                t_que.shape()
            ));
        }
        if t_box.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("box coordinates must lie in [0, 1]".into()));
        }
        Ok(TripleEntity { t_box, t_rep, t_que })
    }

    pub fn queries(&self) -> usize {
        self.t_rep.shape()[0]
    }
}

/// One completed clip of up to three frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip_index: usize,
    pub frames: Vec<TripleEntity>,
    /// Elementwise mean of the frames' representations.
    pub clip_rep: Tensor,
}

impl ClipRecord {
    pub fn new(clip_index: usize, frames: Vec<TripleEntity>) -> Result<Self> {
        if frames.is_empty() || frames.len() > CLIP_FRAMES {
            return Err(Error::Input(format!("a clip holds 1..={CLIP_FRAMES} frames, got {}", frames.len())));
        }
        let shape = frames[0].t_rep.shape().to_vec();
        let mut acc = vec![0.0; frames[0].t_rep.len()];
        for f in &frames {
            if f.t_rep.shape() != shape.as_slice() {
                return Err(shape_err!("frame representations differ in shape"));
            }
            acc.iter_mut().zip(f.t_rep.data()).for_each(|(a, v)| *a += v);
        }
        let n = frames.len() as f64;
        let clip_rep = Tensor::new(&shape, acc.into_iter().map(|v| v / n).collect())?;
        Ok(ClipRecord { clip_index, frames, clip_rep })
    }
}

/// Ring buffer of the most recent clips, oldest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryWindow {
    clips: VecDeque<ClipRecord>,
}

impl MemoryWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> impl DoubleEndedIterator<Item = &ClipRecord> {
        self.clips.iter()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.clip_index).collect()
    }

    pub fn newest(&self) -> Option<&ClipRecord> {
        self.clips.back()
    }

    /// Appends `clip`, evicting the oldest entry beyond five.
    pub fn push_clip(&mut self, clip: ClipRecord) -> Result<()> {
        let expected = self.clips.back().map_or(0, |c| c.clip_index + 1);
        if clip.clip_index != expected {
            return Err(Error::Sequencing { expected, got: clip.clip_index });
        }
        self.clips.push_back(clip);
        if self.clips.len() > WINDOW_CLIPS {
            self.clips.pop_front();
        }
        Ok(())
    }
}

/// Memory at three temporal scales, each `N_q × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalMemory {
    pub t1: Tensor,
    pub t2: Tensor,
    pub t3: Tensor,
}

impl HierarchicalMemory {
    /// All three scales set to the same representation.
    pub fn uniform(rep: Tensor) -> Self {
        HierarchicalMemory { t1: rep.clone(), t2: rep.clone(), t3: rep }
    }

    pub fn slots(&self) -> [&Tensor; 3] {
        [&self.t1, &self.t2, &self.t3]
    }
}

fn mean2(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |x, y| 0.5 * (x + y)).expect("clip representations share a shape")
}

/// Derives the three scales from the window. An empty window yields
/// [`Error::ColdStart`]; callers skip the memory read in that case.
pub fn build_hierarchy(window: &MemoryWindow) -> Result<HierarchicalMemory> {
    let mut reps: Vec<&Tensor> = window.clips().rev().map(|c| &c.clip_rep).collect();
    let Some(&oldest) = reps.last() else {
        return Err(Error::ColdStart);
    };
    reps.resize(WINDOW_CLIPS, oldest);
    Ok(HierarchicalMemory { t1: reps[0].clone(), t2: mean2(reps[1], reps[2]), t3: mean2(reps[3], reps[4]) })
}

/// Which memory tracks feed the current frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryMode {
    /// No memory read; every frame starts from the initial queries.
    Off,
    /// Previous-frame record only.
    Intra,
    /// Previous-frame queries reading the newest clip at a single scale.
    IntraSingle,
    /// Previous-frame queries reading all three scales.
    #[default]
    IntraHier,
}

impl MemoryMode {
    pub const ALL: [MemoryMode; 4] = [MemoryMode::Off, MemoryMode::Intra, MemoryMode::IntraSingle, MemoryMode::IntraHier];

    pub fn as_str(self) -> &'static str {
        match self {
            MemoryMode::Off => "off",
            MemoryMode::Intra => "intra",
            MemoryMode::IntraSingle => "intra+single",
            MemoryMode::IntraHier => "intra+hier",
        }
    }
}

impl std::str::FromStr for MemoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MemoryMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown memory mode {s:?}")))
    }
}

/// Picks the memory to read for the current frame, or `None` at cold start.
/// Inter-clip modes fall back to the previous frame until a clip completes.
pub fn select_memory(
    mode: MemoryMode,
    window: &MemoryWindow,
    previous: Option<&TripleEntity>,
) -> Option<HierarchicalMemory> {
    let intra = HierarchicalMemory::uniform(previous?.t_rep.clone());
    match mode {
        MemoryMode::Off => None,
        MemoryMode::Intra => Some(intra),
        MemoryMode::IntraSingle => {
            Some(window.newest().map_or(intra, |c| HierarchicalMemory::uniform(c.clip_rep.clone())))
        }
        MemoryMode::IntraHier => Some(build_hierarchy(window).unwrap_or(intra)),
    }
}

/// Learned pieces of the memory path.
#[derive(Clone, Debug)]
pub struct MemoryParams {
    /// One projection per temporal scale.
    pub fc: [Linear; 3],
    /// Fuses the concatenated scales back to width `d`.
    pub embed_mlp: Mlp3,
    pub read_attention: MultiHeadAttention,
    pub prop_mlp: Mlp3,
}

impl MemoryParams {
    pub fn new(store: &mut ParamStore, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(MemoryParams {
            fc: [0, 1, 2].map(|i| Linear::new(store, &format!("memory.fc{}", i + 1), d, d, rng)),
            embed_mlp: Mlp3::new(store, "memory.embed", [3 * d, d, d, d], rng),
            read_attention: MultiHeadAttention::new(store, "memory.read", d, heads, rng)?,
            prop_mlp: Mlp3::new(store, "memory.prop", [d, d, d, d], rng),
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = self.fc.iter().flat_map(Linear::params).collect();
        out.extend(self.embed_mlp.params());
        out.extend(self.read_attention.params());
        out.extend(self.prop_mlp.params());
        out
    }
}

/// `h_mem = MLP(concat(FC1(T1), FC2(T2), FC3(T3)))`.
pub fn memory_embed<'g>(
    g: &'g Graph,
    store: &ParamStore,
    memory: &HierarchicalMemory,
    p: &MemoryParams,
) -> Result<Var<'g>> {
    let parts = memory
        .slots()
        .into_iter()
        .zip(&p.fc)
        .map(|(t, fc)| fc.forward(g, store, g.constant(t.clone())))
        .collect::<Result<Vec<_>>>()?;
    p.embed_mlp.forward(g, store, g.concat_cols(&parts)?)
}

/// Attention with the previous frame's queries as Q and `h_mem` as K and V.
pub fn memory_read<'g>(
    g: &'g Graph,
    store: &ParamStore,
    intra_queries: Var<'g>,
    h_mem: Var<'g>,
    p: &MemoryParams,
) -> Result<AttentionOutput<'g>> {
    let (_, dq) = intra_queries.value().dims2()?;
    let (_, dm) = h_mem.value().dims2()?;
    if dq != dm {
        return Err(shape_err!("query width {} differs from memory width {}", dq, dm));
    }
    p.read_attention.forward(g, store, intra_queries, h_mem, h_mem)
}

/// Refreshed representation `MLP(E_m)`.
pub fn propagate<'g>(g: &'g Graph, store: &ParamStore, e_m: Var<'g>, p: &MemoryParams) -> Result<Var<'g>> {
    p.prop_mlp.forward(g, store, e_m)
}

/// One line of the optional memory trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub video_id: String,
    pub frame: usize,
    pub clip_index: usize,
    pub memory_read: bool,
    pub window: Vec<usize>,
    pub boxes: Vec<[f64; 4]>,
    pub t_rep_norm: f64,
    pub t_que_norm: f64,
}

impl TraceRecord {
    pub fn parse_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serialises")
    }
}
