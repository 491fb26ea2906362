//! Two-layer vision projector: affine, GELU, affine, applied per token.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, Affine, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct VisionProjector {
    pub fc1: Affine,
    pub fc2: Affine,
}

pub fn init_vision(raw_dim: usize, dim: usize, seed: u64) -> Result<VisionProjector> {
    if raw_dim == 0 || dim == 0 {
        return Err(Error::InvalidConfig("vision projector dims must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(VisionProjector {
        fc1: Affine::uniform(raw_dim, dim, true, &mut rng),
        fc2: Affine::uniform(dim, dim, true, &mut rng),
    })
}

impl VisionProjector {
    pub fn raw_dim(&self) -> usize {
        self.fc1.input_dim()
    }

    pub fn dim(&self) -> usize {
        self.fc2.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }
}

impl ParamSet for VisionProjector {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
    }
}

pub struct VisionCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    shape: (usize, usize),
}

fn as_rows(raw: &Array3<f64>) -> Array2<f64> {
    let (t, n, k) = raw.dim();
    raw.to_shape((t * n, k)).expect("contiguous").to_owned()
}

pub fn vision_forward(raw: &Array3<f64>, params: &VisionProjector) -> Result<(Array3<f64>, VisionCache)> {
    let (t, n, k) = raw.dim();
    if k != params.raw_dim() {
        return Err(Error::ShapeMismatch(format!(
            "raw feature width {k}, projector expects {}",
            params.raw_dim()
        )));
    }
    let input = as_rows(raw);
    let pre = params.fc1.forward(input.view());
    let hidden = pre.mapv(gelu);
    let out = params.fc2.forward(hidden.view());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("visual tokens".into()));
    }
    let out = out
        .to_shape((t, n, params.dim()))
        .expect("row count preserved")
        .into_owned();
    Ok((out, VisionCache { input, pre, hidden, shape: (t, n) }))
}

pub fn vision_project(raw: &Array3<f64>, params: &VisionProjector) -> Result<Array3<f64>> {
    vision_forward(raw, params).map(|(out, _)| out)
}

/// Parameter gradients and `∂L/∂raw` given `∂L/∂h_v`.
pub fn vision_backward(
    grad_out: &Array3<f64>,
    cache: &VisionCache,
    params: &VisionProjector,
) -> Result<(VisionProjector, Array3<f64>)> {
    let (t, n) = cache.shape;
    if grad_out.dim() != (t, n, params.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "visual token gradient {:?}, expected {:?}",
            grad_out.dim(),
            (t, n, params.dim())
        )));
    }
    let mut grads = params.zeros_like();
    let g = grad_out.to_shape((t * n, params.dim())).expect("row count preserved");
    let d_hidden = params.fc2.backward(cache.hidden.view(), g.view(), &mut grads.fc2);
    let d_pre = d_hidden * &cache.pre.mapv(gelu_grad);
    let d_in = params.fc1.backward(cache.input.view(), d_pre.view(), &mut grads.fc1);
    let d_in = d_in
        .to_shape((t, n, params.raw_dim()))
        .expect("row count preserved")
        .into_owned();
    Ok((grads, d_in))
}
