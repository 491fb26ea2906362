//! Face-region guided cross-attention.
//!
//! Visual tokens query the landmark tokens of the same frame. Before the
//! softmax, the region-patch proximity mask is added to every head's logits.
//! The attended values go through an output projection and are added back to
//! the visual tokens; there is no normalization layer. The output keeps the
//! visual token count, so landmark tokens never enter the decoder sequence.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RppMask;
use crate::nn::{Affine, ParamSet};

/// Attention ablation selector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    /// Cross-attention biased by the proximity mask.
    #[default]
    Frgca,
    /// Plain cross-attention, mask ignored.
    Simple,
    /// No landmark conditioning; visual tokens pass through unchanged.
    None,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 3] = [Self::Frgca, Self::Simple, Self::None];

    pub fn name(self) -> &'static str {
        match self {
            Self::Frgca => "frgca",
            Self::Simple => "simple",
            Self::None => "none",
        }
    }
}

impl std::str::FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frgca" => Ok(Self::Frgca),
            "simple" => Ok(Self::Simple),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidConfig(format!("unknown attention variant {s:?}"))),
        }
    }
}

/// Divisor applied to the query-key logits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// `√(d_attn / heads)`
    #[default]
    PerHead,
    /// `√d_attn`
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrgcaConfig {
    /// Defaults to the token dimension.
    pub attn_dim: Option<usize>,
    pub heads: usize,
    pub scale: ScoreScale,
    pub qkv_bias: bool,
}

impl Default for FrgcaConfig {
    fn default() -> Self {
        Self {
            attn_dim: None,
            heads: 8,
            scale: ScoreScale::PerHead,
            qkv_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrgcaParams {
    pub w_q: Affine,
    pub w_k: Affine,
    pub w_v: Affine,
    pub w_o: Affine,
    heads: usize,
    scale: ScoreScale,
}

pub fn init_frgca(dim: usize, config: &FrgcaConfig, seed: u64) -> Result<FrgcaParams> {
    let attn_dim = config.attn_dim.unwrap_or(dim);
    if dim == 0 || attn_dim == 0 {
        return Err(Error::InvalidConfig("attention dimensions must be positive".into()));
    }
    if config.heads == 0 || attn_dim % config.heads != 0 {
        return Err(Error::InvalidConfig(format!(
            "attention dim {attn_dim} not divisible by {} heads",
            config.heads
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(FrgcaParams {
        w_q: Affine::uniform(dim, attn_dim, config.qkv_bias, &mut rng),
        w_k: Affine::uniform(dim, attn_dim, config.qkv_bias, &mut rng),
        w_v: Affine::uniform(dim, attn_dim, config.qkv_bias, &mut rng),
        w_o: Affine::uniform(attn_dim, dim, true, &mut rng),
        heads: config.heads,
        scale: config.scale,
    })
}

impl FrgcaParams {
    pub fn dim(&self) -> usize {
        self.w_q.input_dim()
    }

    pub fn attn_dim(&self) -> usize {
        self.w_q.output_dim()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.attn_dim() / self.heads
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_q: self.w_q.zeros_like(),
            w_k: self.w_k.zeros_like(),
            w_v: self.w_v.zeros_like(),
            w_o: self.w_o.zeros_like(),
            heads: self.heads,
            scale: self.scale,
        }
    }

    fn logit_scale(&self) -> f64 {
        let denom = match self.scale {
            ScoreScale::PerHead => self.head_dim(),
            ScoreScale::Total => self.attn_dim(),
        };
        1.0 / (denom as f64).sqrt()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.visit("", &mut |_, _, d| d.iter().for_each(|v| h.write_u64(v.to_bits())));
        h.finish()
    }
}

impl ParamSet for FrgcaParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.w_q.visit(&format!("{prefix}.w_q"), f);
        self.w_k.visit(&format!("{prefix}.w_k"), f);
        self.w_v.visit(&format!("{prefix}.w_v"), f);
        self.w_o.visit(&format!("{prefix}.w_o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.w_q.visit_mut(&format!("{prefix}.w_q"), f);
        self.w_k.visit_mut(&format!("{prefix}.w_k"), f);
        self.w_v.visit_mut(&format!("{prefix}.w_v"), f);
        self.w_o.visit_mut(&format!("{prefix}.w_o"), f);
    }
}

/// Row softmax with the row maximum subtracted first.
fn softmax_rows(mut x: Array2<f64>) -> Array2<f64> {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    x
}

struct FrameState {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// one `N x M` matrix per head
    attn: Vec<Array2<f64>>,
    attended: Array2<f64>,
}

/// Everything the backward pass needs from one forward call.
pub struct FrgcaCache {
    variant: AttentionVariant,
    h_v: Array3<f64>,
    h_l: Array3<f64>,
    frames: Vec<FrameState>,
    fingerprint: u64,
}

impl FrgcaCache {
    pub fn variant(&self) -> AttentionVariant {
        self.variant
    }
}

fn check_inputs(
    h_v: &Array3<f64>,
    h_l: &Array3<f64>,
    masks: Option<&[RppMask]>,
    params: &FrgcaParams,
) -> Result<()> {
    let (t, n, d) = h_v.dim();
    let (tl, m, dl) = h_l.dim();
    if t != tl {
        return Err(Error::ShapeMismatch(format!(
            "visual tokens have {t} frames, landmark tokens {tl}"
        )));
    }
    if d != params.dim() || dl != params.dim() {
        return Err(Error::ShapeMismatch(format!(
            "token dims ({d}, {dl}) do not match attention input dim {}",
            params.dim()
        )));
    }
    if let Some(masks) = masks {
        if masks.len() != t {
            return Err(Error::ShapeMismatch(format!("{} masks for {t} frames", masks.len())));
        }
        if let Some(bad) = masks.iter().find(|mk| mk.entries().dim() != (n, m)) {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?}, expected ({n}, {m})",
                bad.entries().dim()
            )));
        }
    }
    if h_v.iter().chain(h_l.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention inputs".into()));
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("attention parameters".into()));
    }
    Ok(())
}

fn attend_frame(
    hv: ArrayView2<f64>,
    hl: ArrayView2<f64>,
    mask: Option<&RppMask>,
    params: &FrgcaParams,
) -> FrameState {
    let q = params.w_q.forward(hv);
    let k = params.w_k.forward(hl);
    let v = params.w_v.forward(hl);
    let dh = params.head_dim();
    let scale = params.logit_scale();
    let mut attended = Array2::zeros((hv.nrows(), params.attn_dim()));
    let mut attn = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut logits = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        if let Some(mask) = mask {
            logits += mask.entries();
        }
        let a = softmax_rows(logits);
        attended.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        attn.push(a);
    }
    FrameState {
        q,
        k,
        v,
        attn,
        attended,
    }
}

/// Forward pass. `masks` holds one `N x M` mask per frame and is only read by
/// the `Frgca` variant.
pub fn frgca_forward(
    h_v: &Array3<f64>,
    h_l: &Array3<f64>,
    masks: &[RppMask],
    params: &FrgcaParams,
    variant: AttentionVariant,
) -> Result<(Array3<f64>, FrgcaCache)> {
    let masks = (variant == AttentionVariant::Frgca).then_some(masks);
    check_inputs(h_v, h_l, masks, params)?;
    let mut out = h_v.clone();
    let mut frames = Vec::new();
    if variant != AttentionVariant::None {
        for t in 0..h_v.dim().0 {
            let hv = h_v.index_axis(Axis(0), t);
            let state = attend_frame(hv, h_l.index_axis(Axis(0), t), masks.map(|m| &m[t]), params);
            let projected = params.w_o.forward(state.attended.view());
            out.index_axis_mut(Axis(0), t).zip_mut_with(&projected, |o, p| *o += p);
            frames.push(state);
        }
    }
    let cache = FrgcaCache {
        variant,
        h_v: h_v.clone(),
        h_l: h_l.clone(),
        frames,
        fingerprint: params.fingerprint(),
    };
    Ok((out, cache))
}

pub struct FrgcaGrads {
    pub h_v: Array3<f64>,
    pub h_l: Array3<f64>,
    pub params: FrgcaParams,
}

/// Reverse-mode gradients of [`frgca_forward`] for the given output cotangent.
pub fn frgca_backward(
    cotangent: &Array3<f64>,
    cache: &FrgcaCache,
    params: &FrgcaParams,
) -> Result<FrgcaGrads> {
    if cotangent.dim() != cache.h_v.dim() {
        return Err(Error::ShapeMismatch(format!(
            "cotangent {:?}, forward output {:?}",
            cotangent.dim(),
            cache.h_v.dim()
        )));
    }
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache("parameters changed since the forward pass".into()));
    }
    if cache.variant != AttentionVariant::None && cache.frames.len() != cache.h_v.dim().0 {
        return Err(Error::StaleCache("cache holds no per-frame state".into()));
    }
    let mut grads = FrgcaGrads {
        h_v: cotangent.clone(),
        h_l: Array3::zeros(cache.h_l.dim()),
        params: params.zeros_like(),
    };
    if cache.variant == AttentionVariant::None {
        return Ok(grads);
    }
    let dh = params.head_dim();
    let scale = params.logit_scale();
    for (t, st) in cache.frames.iter().enumerate() {
        let g = cotangent.index_axis(Axis(0), t);
        let hv = cache.h_v.index_axis(Axis(0), t);
        let hl = cache.h_l.index_axis(Axis(0), t);
        let d_attended = params
            .w_o
            .backward(st.attended.view(), g, &mut grads.params.w_o);
        let mut dq = Array2::zeros(st.q.raw_dim());
        let mut dk = Array2::zeros(st.k.raw_dim());
        let mut dv = Array2::zeros(st.v.raw_dim());
        for (h, a) in st.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_out = d_attended.slice(cols);
            let da = d_out.dot(&st.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&d_out));
            // softmax Jacobian, row by row
            let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let dlogits = a * &(&da - &row_dot) * scale;
            dq.slice_mut(cols).assign(&dlogits.dot(&st.k.slice(cols)));
            dk.slice_mut(cols).assign(&dlogits.t().dot(&st.q.slice(cols)));
        }
        let dhv = params.w_q.backward(hv, dq.view(), &mut grads.params.w_q);
        let dhl_k = params.w_k.backward(hl, dk.view(), &mut grads.params.w_k);
        let dhl_v = params.w_v.backward(hl, dv.view(), &mut grads.params.w_v);
        grads.h_v.index_axis_mut(Axis(0), t).zip_mut_with(&dhv, |a, b| *a += b);
        grads.h_l.index_axis_mut(Axis(0), t).assign(&(dhl_k + dhl_v));
    }
    Ok(grads)
}

/// Per-frame, per-head attention matrices (`N x M`, rows sum to one). A
/// missing mask means plain cross-attention.
pub fn attention_weights(
    h_v: &Array3<f64>,
    h_l: &Array3<f64>,
    masks: Option<&[RppMask]>,
    params: &FrgcaParams,
) -> Result<Vec<Vec<Array2<f64>>>> {
    check_inputs(h_v, h_l, masks, params)?;
    Ok((0..h_v.dim().0)
        .map(|t| {
            attend_frame(
                h_v.index_axis(Axis(0), t),
                h_l.index_axis(Axis(0), t),
                masks.map(|m| &m[t]),
                params,
            )
            .attn
        })
        .collect())
}

/// One exported attention map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMapRecord {
    pub frame: usize,
    pub head: usize,
    pub weights: Vec<Vec<f64>>,
}

pub fn export_attention(weights: &[Vec<Array2<f64>>]) -> Vec<AttentionMapRecord> {
    weights
        .iter()
        .enumerate()
        .flat_map(|(frame, heads)| {
            heads.iter().enumerate().map(move |(head, a)| AttentionMapRecord {
                frame,
                head,
                weights: a.outer_iter().map(|r| r.to_vec()).collect(),
            })
        })
        .collect()
}
