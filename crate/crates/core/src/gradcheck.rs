//! Central finite-difference checks for every hand-written backward pass.
//!
//! The numeric side only ever calls forward functions, so it stays
//! independent of the analytic gradients it checks.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frgca::{frgca_backward, frgca_forward, init_frgca, AttentionVariant, FrgcaConfig};
use crate::frlp::{frlp_backward, frlp_forward, init_frlp, ProjectorMode};
use crate::geometry::{canonical_points, default_partition, LandmarkClip, LandmarkFrame, PatchGrid, RppMask};
use crate::nn::ParamSet;
use crate::toytrain::model::Pipeline;
use crate::toytrain::synth::Sample;
use crate::toytrain::train::{init_model, ToyDims, TrainConfig};
use crate::toytrain::vision::{init_vision, vision_backward, vision_forward};

pub const FD_STEP: f64 = 1e-5;
pub const MODULE_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Denominator floor so that gradients at round-off scale are compared
/// absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn nudge<P: ParamSet>(params: &mut P, index: usize, delta: f64) {
    let mut offset = 0;
    params.visit_mut("", &mut |_, data| {
        if (offset..offset + data.len()).contains(&index) {
            data[index - offset] += delta;
        }
        offset += data.len();
    });
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every scalar in `params`.
pub fn check_params<P, F>(params: &P, analytic: &P, step: f64, loss: F) -> f64
where
    P: ParamSet + Clone,
    F: Fn(&P) -> f64,
{
    let grads = analytic.flatten();
    let mut worst: f64 = 0.0;
    for (i, &g) in grads.iter().enumerate() {
        let mut plus = params.clone();
        nudge(&mut plus, i, step);
        let mut minus = params.clone();
        nudge(&mut minus, i, -step);
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
        worst = worst.max(relative_error(g, numeric));
    }
    worst
}

pub fn check_array<F>(x: &Array3<f64>, analytic: &Array3<f64>, step: f64, loss: F) -> f64
where
    F: Fn(&Array3<f64>) -> f64,
{
    let mut worst: f64 = 0.0;
    for (idx, &g) in analytic.indexed_iter() {
        let mut plus = x.clone();
        plus[idx] += step;
        let mut minus = x.clone();
        minus[idx] -= step;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
        worst = worst.max(relative_error(g, numeric));
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(name: &str, checked: usize, err: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            checked,
            max_relative_error: err,
            tolerance,
            passed: err < tolerance,
        }
    }
}

fn rand3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn jittered_clip(rng: &mut ChaCha8Rng, frames: usize) -> LandmarkClip {
    let base = canonical_points();
    LandmarkClip::new(
        (0..frames)
            .map(|_| {
                LandmarkFrame::new(
                    base.iter()
                        .map(|&[x, y]| [x + rng.random_range(-0.03..0.03), y + rng.random_range(-0.03..0.03)])
                        .collect(),
                )
                .expect("jittered canonical face is in range")
            })
            .collect(),
    )
    .expect("frame count within limit")
}

/// `Σ weights ⊙ out`: a scalar whose cotangent is `weights`.
fn weighted_sum(out: &Array3<f64>, weights: &Array3<f64>) -> f64 {
    (out * weights).sum()
}

fn frlp_check(seed: u64, mode: ProjectorMode) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let part = default_partition();
    let params = init_frlp(8, &part, rng.random())?;
    let clip = jittered_clip(&mut rng, 2);
    let weights = rand3(&mut rng, (2, 9, 8));
    let grads = frlp_backward(&clip, &part, &params, mode, &weights)?;
    let err = check_params(&params, &grads, FD_STEP, |p| {
        weighted_sum(&frlp_forward(&clip, &part, p, mode).expect("forward").combined, &weights)
    });
    let name = match mode {
        ProjectorMode::Full => "frlp.params",
        ProjectorMode::LocalOnly => "frlp.params[local_only]",
        ProjectorMode::GlobalOnly => "frlp.params[global_only]",
    };
    Ok(GradCheckReport::new(name, params.num_params(), err, MODULE_TOLERANCE))
}

fn frgca_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, n, m, d) = (2, 8, 9, 8);
    let params = init_frgca(d, &FrgcaConfig { heads: 2, ..Default::default() }, rng.random())?;
    let h_v = rand3(&mut rng, (t, n, d));
    let h_l = rand3(&mut rng, (t, m, d));
    let masks: Vec<RppMask> = (0..t)
        .map(|_| RppMask::from_entries(Array2::from_shape_simple_fn((n, m), || -rng.random::<f64>())))
        .collect::<Result<_>>()?;
    let weights = rand3(&mut rng, (t, n, d));
    let mut reports = Vec::new();
    for variant in [AttentionVariant::Frgca, AttentionVariant::Simple] {
        let (_, cache) = frgca_forward(&h_v, &h_l, &masks, &params, variant)?;
        let g = frgca_backward(&weights, &cache, &params)?;
        let f = |hv: &Array3<f64>, hl: &Array3<f64>, p: &crate::frgca::FrgcaParams| {
            weighted_sum(&frgca_forward(hv, hl, &masks, p, variant).expect("forward").0, &weights)
        };
        let tag = variant.name();
        let e = check_params(&params, &g.params, FD_STEP, |p| f(&h_v, &h_l, p));
        reports.push(GradCheckReport::new(&format!("frgca.params[{tag}]"), params.num_params(), e, MODULE_TOLERANCE));
        let e = check_array(&h_v, &g.h_v, FD_STEP, |x| f(x, &h_l, &params));
        reports.push(GradCheckReport::new(&format!("frgca.h_v[{tag}]"), h_v.len(), e, MODULE_TOLERANCE));
        let e = check_array(&h_l, &g.h_l, FD_STEP, |x| f(&h_v, x, &params));
        reports.push(GradCheckReport::new(&format!("frgca.h_l[{tag}]"), h_l.len(), e, MODULE_TOLERANCE));
    }
    Ok(reports)
}

fn vision_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_vision(6, 8, rng.random())?;
    let raw = rand3(&mut rng, (2, 8, 6));
    let weights = rand3(&mut rng, (2, 8, 8));
    let (_, cache) = vision_forward(&raw, &params)?;
    let (grads, d_raw) = vision_backward(&weights, &cache, &params)?;
    let f = |x: &Array3<f64>, p: &crate::toytrain::VisionProjector| {
        weighted_sum(&vision_forward(x, p).expect("forward").0, &weights)
    };
    Ok(vec![
        GradCheckReport::new(
            "vision.params",
            params.num_params(),
            check_params(&params, &grads, FD_STEP, |p| f(&raw, p)),
            MODULE_TOLERANCE,
        ),
        GradCheckReport::new(
            "vision.raw",
            raw.len(),
            check_array(&raw, &d_raw, FD_STEP, |x| f(x, &params)),
            MODULE_TOLERANCE,
        ),
    ])
}

fn end_to_end_check(seed: u64, dims: ToyDims, variant: AttentionVariant) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = TrainConfig {
        seed: rng.random(),
        dims: dims.clone(),
        variant,
        ..Default::default()
    };
    let params = init_model(&config)?;
    let pipeline = Pipeline {
        partition: default_partition(),
        grid: PatchGrid::new(dims.grid_rows, dims.grid_cols)?,
        variant,
        projector: ProjectorMode::Full,
        context_cap: config.context_cap,
    };
    let vocab = dims.vocab;
    let sample = Sample {
        raw: rand3(&mut rng, (dims.frames, dims.grid_rows * dims.grid_cols, dims.raw_dim)),
        clip: jittered_clip(&mut rng, dims.frames),
        instruction: vec![3 % vocab, 4 % vocab],
        response: vec![1 % vocab, 2 % vocab, 0],
        label: 1 % vocab,
    };
    let (_, grads) = pipeline.loss_and_grad(&params, &sample)?;
    let err = check_params(&params, &grads, FD_STEP, |p| pipeline.loss(p, &sample).expect("forward"));
    let name = format!(
        "pipeline[{} T={} N={} d={} V={}]",
        variant.name(),
        dims.frames,
        dims.grid_rows * dims.grid_cols,
        dims.dim,
        vocab
    );
    Ok(GradCheckReport::new(&name, params.num_params(), err, END_TO_END_TOLERANCE))
}

/// Every module check plus two end-to-end pipeline checks.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for (k, mode) in [ProjectorMode::Full, ProjectorMode::LocalOnly, ProjectorMode::GlobalOnly]
        .into_iter()
        .enumerate()
    {
        reports.push(frlp_check(seed.wrapping_add(k as u64), mode)?);
    }
    reports.extend(frgca_checks(seed.wrapping_add(10))?);
    reports.extend(vision_checks(seed.wrapping_add(20))?);
    let small = ToyDims {
        frames: 1,
        grid_rows: 2,
        grid_cols: 2,
        dim: 4,
        raw_dim: 3,
        attn_dim: None,
        heads: 2,
        vocab: 5,
    };
    let large = ToyDims {
        frames: 2,
        grid_rows: 2,
        grid_cols: 4,
        dim: 8,
        raw_dim: 4,
        attn_dim: None,
        heads: 2,
        vocab: 5,
    };
    reports.push(end_to_end_check(seed.wrapping_add(30), small.clone(), AttentionVariant::Frgca)?);
    reports.push(end_to_end_check(seed.wrapping_add(31), small, AttentionVariant::Simple)?);
    reports.push(end_to_end_check(seed.wrapping_add(32), large, AttentionVariant::Frgca)?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Affine;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn catches_wrong_gradient() {
        let mut p = Affine::zeros(2, 1, false);
        p.weight[[0, 0]] = 1.5;
        p.weight[[0, 1]] = -0.5;
        let loss = |a: &Affine| a.weight.iter().map(|w| w * w).sum::<f64>();
        let mut good = p.zeros_like();
        good.weight = &p.weight * 2.0;
        assert!(check_params(&p, &good, FD_STEP, loss) < 1e-8);
        let mut bad = good.clone();
        bad.weight[[0, 1]] += 0.01;
        assert!(check_params(&p, &bad, FD_STEP, loss) > 1e-3);
    }

    #[test]
    fn suite_passes() {
        for r in run_suite(0).unwrap() {
            println!("{:<40} n={:<5} err={:.3e}", r.name, r.checked, r.max_relative_error);
            assert!(r.passed, "{r:?}");
        }
    }
}
