//! Affine layers, activation, parameter traversal and the JSON tensor archive.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = x Wᵀ + b` applied row-wise. `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Affine {
    pub fn zeros(input: usize, output: usize, with_bias: bool) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: with_bias.then(|| Array1::zeros(output)),
        }
    }

    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn uniform<R: Rng + ?Sized>(input: usize, output: usize, with_bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((output, input), || rng.random_range(-bound..bound)),
            bias: with_bias.then(|| Array1::zeros(output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim(), self.bias.is_some())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: ArrayView2<f64>, g: ArrayView2<f64>, grad: &mut Affine) -> Array2<f64> {
        grad.weight += &g.t().dot(&x);
        if let Some(b) = &mut grad.bias {
            *b += &g.sum_axis(Axis(0));
        }
        g.dot(&self.weight)
    }
}

impl ParamSet for Affine {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            &format!("{prefix}.weight"),
            self.weight.shape(),
            self.weight.as_slice().expect("standard layout"),
        );
        if let Some(b) = &self.bias {
            f(&format!("{prefix}.bias"), b.shape(), b.as_slice().expect("standard layout"));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(
            &format!("{prefix}.weight"),
            self.weight.as_slice_mut().expect("standard layout"),
        );
        if let Some(b) = &mut self.bias {
            f(&format!("{prefix}.bias"), b.as_slice_mut().expect("standard layout"));
        }
    }
}

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Named traversal over every parameter tensor, in a fixed order.
///
/// Gradient containers reuse the parameter types, so two structurally equal
/// sets visit matching tensors in the same order.
pub trait ParamSet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn from_array3(a: &ndarray::Array3<f64>) -> Self {
        Self {
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array3(&self) -> Result<ndarray::Array3<f64>> {
        let &[a, b, c] = self.shape.as_slice() else {
            return Err(Error::ShapeMismatch(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            )));
        };
        ndarray::Array3::from_shape_vec((a, b, c), self.data.clone())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))
    }
}

/// Flat `name -> {shape, data}` checkpoint, serialized as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, StoredTensor>,
}

impl TensorArchive {
    pub fn capture(params: &dyn ParamSet, prefix: &str) -> Self {
        let mut archive = Self::default();
        archive.insert(params, prefix);
        archive
    }

    pub fn insert(&mut self, params: &dyn ParamSet, prefix: &str) {
        params.visit(prefix, &mut |name, shape, data| {
            self.tensors.insert(
                name.to_string(),
                StoredTensor {
                    shape: shape.to_vec(),
                    data: data.to_vec(),
                },
            );
        });
    }

    /// Copies archived values into `params`; every visited tensor must be
    /// present with a matching length.
    pub fn restore(&self, params: &mut dyn ParamSet, prefix: &str) -> Result<()> {
        let mut err = None;
        params.visit_mut(prefix, &mut |name, data| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(name) {
                Some(t) if t.data.len() == data.len() => data.copy_from_slice(&t.data),
                Some(t) => {
                    err = Some(Error::ShapeMismatch(format!(
                        "{name}: archive has {} values, model expects {}",
                        t.data.len(),
                        data.len()
                    )))
                }
                None => err = Some(Error::ShapeMismatch(format!("{name}: missing from archive"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_forward_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Affine::uniform(3, 2, true, &mut rng);
        layer.bias = Some(array![0.5, -1.0]);
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5]];
        let y = layer.forward(x.view());
        for n in 0..2 {
            for o in 0..2 {
                let mut acc = layer.bias.as_ref().unwrap()[o];
                for i in 0..3 {
                    acc += layer.weight[[o, i]] * x[[n, i]];
                }
                assert!((y[[n, o]] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn uniform_init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Affine::uniform(16, 8, true, &mut rng);
        assert!(layer.weight.iter().all(|w| w.abs() <= 0.25));
        assert!(layer.bias.unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((gelu(10.0) - 10.0).abs() < 1e-12);
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn archive_round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Affine::uniform(3, 2, true, &mut rng);
        let archive = TensorArchive::capture(&a, "frgca.w_q");
        assert!(archive.tensors.contains_key("frgca.w_q.weight"));
        assert_eq!(archive.tensors["frgca.w_q.weight"].shape, vec![2, 3]);
        let mut b = a.zeros_like();
        archive.restore(&mut b, "frgca.w_q").unwrap();
        assert_eq!(a, b);
        let mut wrong = Affine::zeros(4, 2, true);
        assert!(archive.restore(&mut wrong, "frgca.w_q").is_err());
        assert!(archive.restore(&mut b, "frgca.w_k").is_err());
    }
}
