//! Stratified selection of top-rated records for a test split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datapipe::record::AnnotationRecord;
use crate::error::{Error, Result};
use crate::evalkit::EvalTask;

pub const DEFAULT_PER_TASK: usize = 500;

/// Class weights per task. Weights need not sum to one.
pub type TargetDistribution = BTreeMap<EvalTask, BTreeMap<String, f64>>;

/// Integer quotas summing to `total` by the largest-remainder rule; equal
/// remainders favour the earlier class. Every quota is within 1 of its exact
/// share.
pub fn quotas(weights: &BTreeMap<String, f64>, total: usize) -> Result<BTreeMap<String, usize>> {
    if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidConfig("class weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.values().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidConfig("class weights sum to zero".into()));
    }
    let exact: Vec<(&String, f64)> = weights.iter().map(|(c, w)| (c, w / sum * total as f64)).collect();
    let mut out: BTreeMap<String, usize> = exact.iter().map(|(c, e)| ((*c).clone(), e.floor() as usize)).collect();
    let assigned: usize = out.values().sum();
    let mut order: Vec<(usize, f64)> = exact.iter().enumerate().map(|(i, (_, e))| (i, e - e.floor())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in order.iter().take(total.saturating_sub(assigned)) {
        *out.get_mut(exact[i].0).expect("class present") += 1;
    }
    Ok(out)
}

/// Observed class frequencies per task, the default split target.
pub fn observed_distribution(records: &[AnnotationRecord]) -> TargetDistribution {
    let mut out: TargetDistribution = BTreeMap::new();
    for r in records {
        *out.entry(r.task).or_default().entry(r.class_key()).or_insert(0.0) += 1.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSummary {
    pub selected: usize,
    pub classes: BTreeMap<String, usize>,
    /// Mean of each rating over the selected records that carry it.
    pub mean_ratings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub per_task: usize,
    pub tasks: BTreeMap<EvalTask, TaskSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub records: Vec<AnnotationRecord>,
    pub summary: SplitSummary,
}

fn rank_key(r: &AnnotationRecord) -> (std::cmp::Reverse<Option<u8>>, &str) {
    (std::cmp::Reverse(r.ratings.overall), &r.id)
}

/// For each task with a target, fills class quotas of `per_task` records
/// with the best overall ratings (ties by id ascending). The seed only
/// shuffles the order of the returned records.
pub fn build_test_split(
    records: &[AnnotationRecord],
    per_task: usize,
    target: &TargetDistribution,
    seed: u64,
) -> Result<Split> {
    if per_task == 0 {
        return Err(Error::InvalidConfig("per-task split size must be positive".into()));
    }
    let mut pools: BTreeMap<(EvalTask, String), Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        pools.entry((r.task, r.class_key())).or_default().push(r);
    }
    for pool in pools.values_mut() {
        pool.sort_by(|a, b| rank_key(a).cmp(&rank_key(b)));
    }
    let mut selected = Vec::new();
    let mut tasks = BTreeMap::new();
    for (&task, weights) in target {
        let q = quotas(weights, per_task)?;
        let mut classes = BTreeMap::new();
        let start = selected.len();
        for (class, &need) in &q {
            let pool = pools.get(&(task, class.clone())).map_or(&[][..], Vec::as_slice);
            if pool.len() < need {
                return Err(Error::InsufficientRecords {
                    task: task.name().to_string(),
                    class: class.clone(),
                    needed: need,
                    available: pool.len(),
                });
            }
            selected.extend(pool[..need].iter().map(|r| (*r).clone()));
            classes.insert(class.clone(), need);
        }
        let chosen = &selected[start..];
        let mut mean_ratings = BTreeMap::new();
        for (i, name) in ["label_accuracy", "desc_video_consistency", "desc_label_consistency", "overall"]
            .iter()
            .enumerate()
        {
            let vals: Vec<f64> = chosen
                .iter()
                .filter_map(|r| r.ratings.fields()[i].1)
                .map(f64::from)
                .collect();
            if !vals.is_empty() {
                mean_ratings.insert(name.to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        tasks.insert(
            task,
            TaskSummary {
                selected: chosen.len(),
                classes,
                mean_ratings,
            },
        );
    }
    selected.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        records: selected,
        summary: SplitSummary { seed, per_task, tasks },
    })
}
