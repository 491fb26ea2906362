//! Face-region landmark projector.
//!
//! Each region's points are flattened (ascending landmark index, `x` before
//! `y`) and sent through that region's own affine map; all 68 points also go
//! through one global affine map. The global token is broadcast-added to every
//! region token. All maps are single affine layers with no activation.

use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LandmarkClip, RegionPartition, NUM_LANDMARKS};
use crate::nn::{Affine, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct FrlpParams {
    pub local: Vec<Affine>,
    pub global: Affine,
    dim: usize,
}

/// Which projector branches feed the landmark tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorMode {
    #[default]
    Full,
    LocalOnly,
    GlobalOnly,
}

impl std::str::FromStr for ProjectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "local_only" | "local-only" => Ok(Self::LocalOnly),
            "global_only" | "global-only" => Ok(Self::GlobalOnly),
            _ => Err(Error::InvalidConfig(format!("unknown projector mode {s:?}"))),
        }
    }
}

pub fn init_frlp(dim: usize, partition: &RegionPartition, seed: u64) -> Result<FrlpParams> {
    if dim == 0 {
        return Err(Error::InvalidConfig("token dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local = partition
        .group_sizes()
        .into_iter()
        .map(|n| Affine::uniform(2 * n, dim, true, &mut rng))
        .collect();
    let global = Affine::uniform(2 * NUM_LANDMARKS, dim, true, &mut rng);
    Ok(FrlpParams { local, global, dim })
}

impl FrlpParams {
    pub fn from_parts(local: Vec<Affine>, global: Affine) -> Result<Self> {
        let dim = global.output_dim();
        if global.input_dim() != 2 * NUM_LANDMARKS {
            return Err(Error::ShapeMismatch(format!(
                "global map input width {} != {}",
                global.input_dim(),
                2 * NUM_LANDMARKS
            )));
        }
        if let Some((i, m)) = local.iter().enumerate().find(|(_, m)| m.output_dim() != dim) {
            return Err(Error::ShapeMismatch(format!(
                "local map {i} outputs {} but global outputs {dim}",
                m.output_dim()
            )));
        }
        Ok(Self { local, global, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            local: self.local.iter().map(Affine::zeros_like).collect(),
            global: self.global.zeros_like(),
            dim: self.dim,
        }
    }

    fn check(&self, partition: &RegionPartition) -> Result<()> {
        if self.local.len() != partition.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} local maps for {} regions",
                self.local.len(),
                partition.len()
            )));
        }
        for (i, (m, n)) in self.local.iter().zip(partition.group_sizes()).enumerate() {
            if m.input_dim() != 2 * n {
                return Err(Error::ShapeMismatch(format!(
                    "local map {i} input width {} but group has {n} points",
                    m.input_dim()
                )));
            }
        }
        Ok(())
    }
}

impl ParamSet for FrlpParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, m) in self.local.iter().enumerate() {
            m.visit(&format!("{prefix}.local.{i}"), f);
        }
        self.global.visit(&format!("{prefix}.global"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, m) in self.local.iter_mut().enumerate() {
            m.visit_mut(&format!("{prefix}.local.{i}"), f);
        }
        self.global.visit_mut(&format!("{prefix}.global"), f);
    }
}

/// `T x (2·|indices|)` matrix of flattened coordinates.
fn flatten_points(clip: &LandmarkClip, indices: impl Iterator<Item = usize> + Clone) -> Array2<f64> {
    let width = 2 * indices.clone().count();
    let mut out = Array2::zeros((clip.num_frames(), width));
    for (t, frame) in clip.frames().iter().enumerate() {
        for (k, i) in indices.clone().enumerate() {
            let [x, y] = frame.points()[i];
            out[[t, 2 * k]] = x;
            out[[t, 2 * k + 1]] = y;
        }
    }
    out
}

pub fn local_project(
    clip: &LandmarkClip,
    partition: &RegionPartition,
    params: &FrlpParams,
) -> Result<Array3<f64>> {
    params.check(partition)?;
    let mut out = Array3::zeros((clip.num_frames(), partition.len(), params.dim));
    for (m, (group, map)) in partition.groups().iter().zip(&params.local).enumerate() {
        let x = flatten_points(clip, group.indices.iter().copied());
        out.slice_mut(s![.., m, ..]).assign(&map.forward(x.view()));
    }
    Ok(out)
}

pub fn global_project(clip: &LandmarkClip, params: &FrlpParams) -> Result<Array3<f64>> {
    let x = flatten_points(clip, 0..NUM_LANDMARKS);
    let y = params.global.forward(x.view());
    Ok(y.insert_axis(Axis(1)))
}

/// Local, global and combined landmark tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTokens {
    pub local: Array3<f64>,
    pub global: Array3<f64>,
    pub combined: Array3<f64>,
}

pub fn combine_tokens(local: Array3<f64>, global: Array3<f64>) -> Result<LandmarkTokens> {
    let (t, _, d) = local.dim();
    if global.dim() != (t, 1, d) {
        return Err(Error::ShapeMismatch(format!(
            "global tokens {:?} do not match local tokens {:?}",
            global.dim(),
            local.dim()
        )));
    }
    let combined = &local + &global;
    if combined.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("landmark tokens".into()));
    }
    Ok(LandmarkTokens {
        local,
        global,
        combined,
    })
}

/// Full projector forward pass under the chosen branch mode.
pub fn frlp_forward(
    clip: &LandmarkClip,
    partition: &RegionPartition,
    params: &FrlpParams,
    mode: ProjectorMode,
) -> Result<LandmarkTokens> {
    let mut local = local_project(clip, partition, params)?;
    let mut global = global_project(clip, params)?;
    match mode {
        ProjectorMode::Full => {}
        ProjectorMode::LocalOnly => global.fill(0.0),
        ProjectorMode::GlobalOnly => local.fill(0.0),
    }
    combine_tokens(local, global)
}

/// Parameter gradients given `∂L/∂h_l` (shape `T x M x d`).
pub fn frlp_backward(
    clip: &LandmarkClip,
    partition: &RegionPartition,
    params: &FrlpParams,
    mode: ProjectorMode,
    grad_tokens: &Array3<f64>,
) -> Result<FrlpParams> {
    params.check(partition)?;
    let expected = (clip.num_frames(), partition.len(), params.dim);
    if grad_tokens.dim() != expected {
        return Err(Error::ShapeMismatch(format!(
            "token gradient {:?}, expected {expected:?}",
            grad_tokens.dim()
        )));
    }
    let mut grads = params.zeros_like();
    if mode != ProjectorMode::GlobalOnly {
        for (m, group) in partition.groups().iter().enumerate() {
            let x = flatten_points(clip, group.indices.iter().copied());
            let g = grad_tokens.slice(s![.., m, ..]);
            params.local[m].backward(x.view(), g, &mut grads.local[m]);
        }
    }
    if mode != ProjectorMode::LocalOnly {
        let x = flatten_points(clip, 0..NUM_LANDMARKS);
        let g = grad_tokens.sum_axis(Axis(1));
        params.global.backward(x.view(), g.view(), &mut grads.global);
    }
    Ok(grads)
}
