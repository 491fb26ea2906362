//! Deterministic synthetic samples for the toy pipeline.
//!
//! Each sample carries noise-only raw visual features and a landmark clip in
//! which exactly one face region is displaced. For [`TaskKind::RegionShift`]
//! the response names the displaced region, so the label is recoverable from
//! landmark geometry and from nothing else.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{canonical_points, LandmarkClip, LandmarkFrame, PatchGrid, Region, NUM_REGIONS};

/// Label tokens are `0..NUM_REGIONS`; then end-of-response and two fixed
/// instruction tokens.
pub const EOS_TOKEN: usize = NUM_REGIONS;
pub const INSTRUCTION_TOKENS: [usize; 2] = [NUM_REGIONS + 1, NUM_REGIONS + 2];
pub const MIN_VOCAB: usize = NUM_REGIONS + 3;

/// Upward displacement applied to the labelled region.
const REGION_SHIFT: f64 = 0.06;
const GLOBAL_JITTER: f64 = 0.02;
const POINT_NOISE: f64 = 0.004;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Response is the index of the displaced region.
    #[default]
    RegionShift,
    /// Response is drawn independently of the geometry (null control).
    RandomLabel,
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// `T x N x d_raw`
    pub raw: Array3<f64>,
    pub clip: LandmarkClip,
    pub instruction: Vec<usize>,
    pub response: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthShape {
    pub frames: usize,
    pub grid: PatchGrid,
    pub raw_dim: usize,
}

fn make_sample(seed: u64, index: usize, kind: TaskKind, shape: &SynthShape) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let label = rng.random_range(0..NUM_REGIONS);
    let moved = match kind {
        TaskKind::RegionShift => label,
        TaskKind::RandomLabel => rng.random_range(0..NUM_REGIONS),
    };
    let base = canonical_points();
    let frames = (0..shape.frames)
        .map(|_| {
            let jx = rng.random_range(-GLOBAL_JITTER..GLOBAL_JITTER);
            let jy = rng.random_range(-GLOBAL_JITTER..GLOBAL_JITTER);
            let range = Region::ALL[moved].landmark_range();
            let points = base
                .iter()
                .enumerate()
                .map(|(i, &[x, y])| {
                    let nx: f64 = rng.sample(StandardNormal);
                    let ny: f64 = rng.sample(StandardNormal);
                    let lift = if range.contains(&i) { REGION_SHIFT } else { 0.0 };
                    [x + jx + POINT_NOISE * nx, y + jy - lift + POINT_NOISE * ny]
                })
                .collect();
            LandmarkFrame::new(points).expect("synthetic landmarks stay in range")
        })
        .collect();
    let clip = LandmarkClip::with_max_frames(frames, shape.frames).expect("frame count fixed");
    let raw = Array3::from_shape_simple_fn(
        (shape.frames, shape.grid.num_patches(), shape.raw_dim),
        || rng.sample(StandardNormal),
    );
    Sample {
        raw,
        clip,
        instruction: INSTRUCTION_TOKENS.to_vec(),
        response: vec![label, EOS_TOKEN],
        label,
    }
}

/// `size` samples; sample `i` depends only on `(seed, i)`, so generation is
/// order-independent and runs in parallel.
pub fn synth_dataset(seed: u64, size: usize, kind: TaskKind, shape: &SynthShape) -> Result<Vec<Sample>> {
    if size == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    if shape.frames == 0 || shape.raw_dim == 0 {
        return Err(Error::InvalidConfig("frames and raw feature width must be positive".into()));
    }
    Ok((0..size)
        .into_par_iter()
        .map(|i| make_sample(seed, i, kind, shape))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{default_partition, region_centroids};

    fn shape() -> SynthShape {
        SynthShape {
            frames: 2,
            grid: PatchGrid::new(2, 2).unwrap(),
            raw_dim: 3,
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let a = synth_dataset(4, 20, TaskKind::RegionShift, &shape()).unwrap();
        let b = synth_dataset(4, 20, TaskKind::RegionShift, &shape()).unwrap();
        assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.raw, y.raw);
            assert_eq!(x.clip, y.clip);
            assert_eq!(x.response, y.response);
        }
        let c = synth_dataset(5, 20, TaskKind::RegionShift, &shape()).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.clip != y.clip));
        assert_eq!(a[0].raw.dim(), (2, 4, 3));
        assert!(synth_dataset(4, 0, TaskKind::RegionShift, &shape()).is_err());
    }

    #[test]
    fn labels_roughly_uniform() {
        let data = synth_dataset(0, 10_000, TaskKind::RegionShift, &SynthShape { frames: 1, grid: PatchGrid::new(1, 1).unwrap(), raw_dim: 1 }).unwrap();
        let mut counts = [0usize; NUM_REGIONS];
        for s in &data {
            counts[s.label] += 1;
        }
        let expected = 10_000.0 / NUM_REGIONS as f64;
        for c in counts {
            assert!((c as f64 - expected).abs() <= 0.05 * expected, "{counts:?}");
        }
    }

    #[test]
    fn labelled_region_is_the_one_lifted() {
        let part = default_partition();
        let base = region_centroids(&crate::geometry::canonical_frame(), &part);
        for s in synth_dataset(1, 50, TaskKind::RegionShift, &shape()).unwrap() {
            for f in s.clip.frames() {
                let c = region_centroids(f, &part);
                // relative vertical offset against the mean offset of all regions
                let offs: Vec<f64> = c.iter().zip(&base).map(|(a, b)| a[1] - b[1]).collect();
                let lowest = offs
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert_eq!(lowest, s.label);
            }
            assert_eq!(s.response, vec![s.label, EOS_TOKEN]);
        }
    }
}
