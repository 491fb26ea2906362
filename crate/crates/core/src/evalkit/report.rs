//! Evaluation records, chunk voting and the aggregated metric report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::metrics::{
    compute_avg_f1, compute_mae, compute_mean_attr_accuracy, compute_uar_war, confusion_matrix, BP4D_AUS,
    DISFA_AUS,
};
use crate::evalkit::taxonomy::{argmax_first, match_synonyms, EvalTask, Taxonomy};
use crate::evalkit::text::{parse_age_with, parse_aus_with, strip_negatives_with, NegationCues};

/// One generated description with its ground truth.
///
/// `gt` is a class name for expression and deepfake, a list of AU numbers,
/// an integer age, or for attributes either the list of positive attribute
/// names or a 0/1 vector over all attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub id: String,
    pub task: EvalTask,
    pub text: String,
    pub gt: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroundTruth {
    Class(usize),
    Aus(BTreeSet<u32>),
    Attributes(Vec<bool>),
    Age(i64),
}

/// Parsed model output for one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    Class(Option<usize>),
    Aus(BTreeSet<u32>),
    Attributes(BTreeSet<usize>),
    Age(Option<i64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuList {
    #[default]
    Disfa,
    Bp4d,
}

impl AuList {
    pub fn aus(self) -> &'static [u32] {
        match self {
            Self::Disfa => &DISFA_AUS,
            Self::Bp4d => &BP4D_AUS,
        }
    }
}

impl std::str::FromStr for AuList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disfa" => Ok(Self::Disfa),
            "bp4d" => Ok(Self::Bp4d),
            other => Err(Error::InvalidConfig(format!("unknown AU list {other:?}; expected disfa or bp4d"))),
        }
    }
}

/// Optional overrides for the bundled resources.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub au_list: AuList,
    /// Replacement taxonomy files keyed by task name.
    pub taxonomies: BTreeMap<EvalTask, PathBuf>,
    pub negation_cues: Option<PathBuf>,
}

/// Taxonomies and negation cues used for scoring.
#[derive(Debug, Clone)]
pub struct EvalResources {
    pub expression: Taxonomy,
    pub attribute: Taxonomy,
    pub deepfake: Taxonomy,
    pub cues: NegationCues,
    pub au_list: AuList,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl EvalResources {
    pub fn builtin() -> Self {
        Self {
            expression: Taxonomy::builtin(EvalTask::Expression).expect("bundled taxonomy is valid"),
            attribute: Taxonomy::builtin(EvalTask::Attribute).expect("bundled taxonomy is valid"),
            deepfake: Taxonomy::builtin(EvalTask::Deepfake).expect("bundled taxonomy is valid"),
            cues: NegationCues::default(),
            au_list: AuList::default(),
        }
    }

    pub fn from_config(config: &EvalConfig) -> Result<Self> {
        let mut res = Self::builtin();
        res.au_list = config.au_list;
        for (&task, path) in &config.taxonomies {
            let t = Taxonomy::from_json(task, &read_text(path)?)?;
            match task {
                EvalTask::Expression => res.expression = t,
                EvalTask::Attribute => res.attribute = t,
                EvalTask::Deepfake => res.deepfake = t,
                EvalTask::Au | EvalTask::Age => {
                    return Err(Error::InvalidConfig(format!("{task} takes no taxonomy")));
                }
            }
        }
        if let Some(path) = &config.negation_cues {
            res.cues = NegationCues::from_json(&read_text(path)?)?;
        }
        Ok(res)
    }

    pub fn taxonomy(&self, task: EvalTask) -> Option<&Taxonomy> {
        match task {
            EvalTask::Expression => Some(&self.expression),
            EvalTask::Attribute => Some(&self.attribute),
            EvalTask::Deepfake => Some(&self.deepfake),
            EvalTask::Au | EvalTask::Age => None,
        }
    }
}

fn bad(record: &EvalRecord, what: &str) -> Error {
    Error::InvalidRecord(format!("record {:?} ({}): {what}", record.id, record.task))
}

impl EvalRecord {
    pub fn ground_truth(&self, res: &EvalResources) -> Result<GroundTruth> {
        use serde_json::Value;
        match self.task {
            EvalTask::Expression | EvalTask::Deepfake => {
                let tax = res.taxonomy(self.task).expect("taxonomy task");
                let name = self.gt.as_str().ok_or_else(|| bad(self, "ground truth must be a class name"))?;
                tax.index_of(name)
                    .map(GroundTruth::Class)
                    .ok_or_else(|| bad(self, &format!("unknown class {name:?}")))
            }
            EvalTask::Au => {
                let items = self.gt.as_array().ok_or_else(|| bad(self, "ground truth must be a list of AU numbers"))?;
                items
                    .iter()
                    .map(|v| {
                        v.as_u64()
                            .and_then(|n| u32::try_from(n).ok())
                            .ok_or_else(|| bad(self, "AU numbers must be non-negative integers"))
                    })
                    .collect::<Result<_>>()
                    .map(GroundTruth::Aus)
            }
            EvalTask::Age => self
                .gt
                .as_i64()
                .map(GroundTruth::Age)
                .ok_or_else(|| bad(self, "ground truth must be an integer age")),
            EvalTask::Attribute => {
                let names = res.attribute.classes();
                let items = self.gt.as_array().ok_or_else(|| bad(self, "ground truth must be a list"))?;
                if !items.is_empty() && items.iter().all(Value::is_number) {
                    if items.len() != names.len() {
                        return Err(bad(self, &format!("attribute vector needs {} entries", names.len())));
                    }
                    items
                        .iter()
                        .map(|v| match v.as_u64() {
                            Some(0) => Ok(false),
                            Some(1) => Ok(true),
                            _ => Err(bad(self, "attribute vector entries must be 0 or 1")),
                        })
                        .collect::<Result<_>>()
                        .map(GroundTruth::Attributes)
                } else {
                    let mut flags = vec![false; names.len()];
                    for v in items {
                        let name = v.as_str().ok_or_else(|| bad(self, "attribute names must be strings"))?;
                        let i = res
                            .attribute
                            .index_of(name)
                            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))?;
                        flags[i] = true;
                    }
                    Ok(GroundTruth::Attributes(flags))
                }
            }
        }
    }

    pub fn predict(&self, res: &EvalResources) -> Prediction {
        match self.task {
            EvalTask::Au => Prediction::Aus(parse_aus_with(&self.text, &res.cues)),
            EvalTask::Age => Prediction::Age(parse_age_with(&self.text, &res.cues)),
            EvalTask::Expression | EvalTask::Deepfake => {
                let tax = res.taxonomy(self.task).expect("taxonomy task");
                Prediction::Class(match_synonyms(&strip_negatives_with(&self.text, &res.cues), tax))
            }
            EvalTask::Attribute => {
                Prediction::Attributes(res.attribute.match_all(&strip_negatives_with(&self.text, &res.cues)))
            }
        }
    }
}

/// Reads JSONL records; blank lines are skipped and the first malformed line
/// is reported with its number.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    parse_records(&read_text(path)?)
}

pub fn parse_records(text: &str) -> Result<Vec<EvalRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::InvalidRecord(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Modal class over one chunk group. Unmatched chunks do not vote. Ties go
/// to `fake` for deepfake and to the earliest class otherwise.
pub fn vote_chunks(preds: &[Option<usize>], taxonomy: &Taxonomy) -> Result<Option<usize>> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("chunk group has no records".into()));
    }
    let mut counts = vec![0usize; taxonomy.len()];
    for p in preds.iter().flatten() {
        counts[*p] += 1;
    }
    if taxonomy.task() == EvalTask::Deepfake {
        if let Some(fake) = taxonomy.index_of("fake") {
            let top = counts.iter().copied().max().unwrap_or(0);
            if top > 0 && counts[fake] == top {
                return Ok(Some(fake));
            }
        }
    }
    Ok(argmax_first(&counts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Confusion {
    pub classes: Vec<String>,
    /// `[gt][pred]`, last column for unmatched outputs
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gt");
        for c in &self.classes {
            write!(out, ",{c}").expect("writing to a String");
        }
        out.push_str(",no_match\n");
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c);
            for n in row {
                write!(out, ",{n}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskMetrics {
    /// scored units after chunk voting
    pub samples: usize,
    pub no_match: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Confusion>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub tasks: BTreeMap<EvalTask, TaskMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

struct Unit {
    gt: GroundTruth,
    pred: Prediction,
}

/// Chunked records of one task collapse into a single voted unit per group.
fn units(records: &[&EvalRecord], res: &EvalResources) -> Result<Vec<Unit>> {
    let mut out = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        match &r.chunk {
            None => out.push(Unit {
                gt: r.ground_truth(res)?,
                pred: r.predict(res),
            }),
            Some(g) => groups.entry(g.as_str()).or_default().push(r),
        }
    }
    for (group, members) in groups {
        let task = members[0].task;
        let tax = match task {
            EvalTask::Expression | EvalTask::Deepfake => res.taxonomy(task).expect("taxonomy task"),
            _ => return Err(bad(members[0], "chunk voting applies to expression and deepfake records")),
        };
        let gt = members[0].ground_truth(res)?;
        let mut preds = Vec::with_capacity(members.len());
        for m in &members {
            if m.ground_truth(res)? != gt {
                return Err(bad(m, &format!("chunk group {group:?} has conflicting ground truth")));
            }
            match m.predict(res) {
                Prediction::Class(p) => preds.push(p),
                _ => unreachable!("class task"),
            }
        }
        out.push(Unit {
            gt,
            pred: Prediction::Class(vote_chunks(&preds, tax)?),
        });
    }
    Ok(out)
}

fn score_task(task: EvalTask, units: &[Unit], res: &EvalResources) -> Result<TaskMetrics> {
    let mut metrics = BTreeMap::new();
    let mut confusion = None;
    let no_match;
    match task {
        EvalTask::Expression | EvalTask::Deepfake => {
            let tax = res.taxonomy(task).expect("taxonomy task");
            let (preds, gts): (Vec<Option<usize>>, Vec<usize>) = units
                .iter()
                .map(|u| match (&u.pred, &u.gt) {
                    (Prediction::Class(p), GroundTruth::Class(g)) => (*p, *g),
                    _ => unreachable!("class task"),
                })
                .unzip();
            let r = compute_uar_war(&preds, &gts, tax.len())?;
            metrics.insert("uar".into(), r.uar);
            metrics.insert("war".into(), r.war);
            metrics.insert("accuracy".into(), r.war);
            no_match = preds.iter().filter(|p| p.is_none()).count();
            confusion = Some(Confusion {
                classes: tax.classes().to_vec(),
                counts: confusion_matrix(&preds, &gts, tax.len())?,
            });
        }
        EvalTask::Au => {
            let (preds, gts): (Vec<BTreeSet<u32>>, Vec<BTreeSet<u32>>) = units
                .iter()
                .map(|u| match (&u.pred, &u.gt) {
                    (Prediction::Aus(p), GroundTruth::Aus(g)) => (p.clone(), g.clone()),
                    _ => unreachable!("au task"),
                })
                .unzip();
            let r = compute_avg_f1(&preds, &gts, res.au_list.aus())?;
            metrics.insert("avg_f1".into(), r.mean);
            for (au, f1) in r.per_au {
                metrics.insert(format!("f1_au{au}"), f1);
            }
            no_match = preds.iter().filter(|p| p.is_empty()).count();
        }
        EvalTask::Age => {
            let (preds, gts): (Vec<Option<i64>>, Vec<i64>) = units
                .iter()
                .map(|u| match (&u.pred, &u.gt) {
                    (Prediction::Age(p), GroundTruth::Age(g)) => (*p, *g),
                    _ => unreachable!("age task"),
                })
                .unzip();
            let r = compute_mae(&preds, &gts)?;
            metrics.insert("mae".into(), r.mae);
            metrics.insert("parse_failure_rate".into(), r.parse_failure_rate);
            no_match = preds.iter().filter(|p| p.is_none()).count();
        }
        EvalTask::Attribute => {
            let names = res.attribute.classes();
            let (preds, gts): (Vec<BTreeSet<String>>, Vec<Vec<bool>>) = units
                .iter()
                .map(|u| match (&u.pred, &u.gt) {
                    (Prediction::Attributes(p), GroundTruth::Attributes(g)) => {
                        (p.iter().map(|&i| names[i].clone()).collect(), g.clone())
                    }
                    _ => unreachable!("attribute task"),
                })
                .unzip();
            let r = compute_mean_attr_accuracy(&preds, &gts, names)?;
            metrics.insert("mean_accuracy".into(), r.mean);
            for (name, acc) in r.per_attribute {
                metrics.insert(format!("accuracy_{name}"), acc);
            }
            no_match = preds.iter().filter(|p| p.is_empty()).count();
        }
    }
    Ok(TaskMetrics {
        samples: units.len(),
        no_match,
        metrics,
        confusion,
    })
}

/// Scores every task present in `records`. Records are ordered by id first,
/// so input order never changes the report.
pub fn evaluate_records(records: &[EvalRecord], res: &EvalResources) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no evaluation records".into()));
    }
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut by_task: BTreeMap<EvalTask, Vec<&EvalRecord>> = BTreeMap::new();
    for r in sorted {
        by_task.entry(r.task).or_default().push(r);
    }
    let mut report = MetricReport::default();
    for (task, recs) in by_task {
        let units = units(&recs, res)?;
        report.tasks.insert(task, score_task(task, &units, res)?);
    }
    Ok(report)
}
