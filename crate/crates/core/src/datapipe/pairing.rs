//! Random instruction assignment from a per-task bank.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::record::AnnotationRecord;
use crate::error::{Error, Result};
use crate::evalkit::EvalTask;

/// Replaced by "image" or "video" when an instruction is assigned.
pub const MEDIA_PLACEHOLDER: &str = "{media}";

/// Instruction templates per task, each with one media placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<EvalTask, Vec<String>>", into = "BTreeMap<EvalTask, Vec<String>>")]
pub struct InstructionBank {
    tasks: BTreeMap<EvalTask, Vec<String>>,
}

impl InstructionBank {
    pub fn new(tasks: BTreeMap<EvalTask, Vec<String>>) -> Result<Self> {
        for (task, list) in &tasks {
            if list.is_empty() {
                return Err(Error::InvalidConfig(format!("instruction list for {task} is empty")));
            }
            if let Some(bad) = list.iter().find(|s| s.matches(MEDIA_PLACEHOLDER).count() != 1) {
                return Err(Error::InvalidConfig(format!(
                    "instruction {bad:?} must contain {MEDIA_PLACEHOLDER} exactly once"
                )));
            }
        }
        Ok(Self { tasks })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn instructions(&self, task: EvalTask) -> Option<&[String]> {
        self.tasks.get(&task).map(Vec::as_slice)
    }
}

impl TryFrom<BTreeMap<EvalTask, Vec<String>>> for InstructionBank {
    type Error = Error;

    fn try_from(tasks: BTreeMap<EvalTask, Vec<String>>) -> Result<Self> {
        Self::new(tasks)
    }
}

impl From<InstructionBank> for BTreeMap<EvalTask, Vec<String>> {
    fn from(bank: InstructionBank) -> Self {
        bank.tasks
    }
}

/// Gives every record lacking an instruction one drawn uniformly, with
/// replacement, from its task's list. Draws happen in record order from a
/// single generator seeded by `seed`.
pub fn pair_instructions(
    records: Vec<AnnotationRecord>,
    bank: &InstructionBank,
    seed: u64,
) -> Result<Vec<AnnotationRecord>> {
    if let Some(r) = records.iter().find(|r| bank.instructions(r.task).is_none()) {
        return Err(Error::MissingTask(r.task.name().to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(records
        .into_iter()
        .map(|mut r| {
            if r.instruction.is_none() {
                let list = bank.instructions(r.task).expect("checked above");
                let template = &list[rng.random_range(0..list.len())];
                r.instruction = Some(template.replace(MEDIA_PLACEHOLDER, r.media.kind.word()));
            }
            r
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::record::tests::record;
    use crate::datapipe::record::MediaType;
    use serde_json::json;

    fn bank(n: usize) -> InstructionBank {
        let list = (0..n).map(|i| format!("Q{i}: describe the {{media}}.")).collect();
        InstructionBank::new(BTreeMap::from([(EvalTask::Expression, list)])).unwrap()
    }

    fn records(n: usize) -> Vec<AnnotationRecord> {
        (0..n)
            .map(|i| record(&format!("r{i}"), EvalTask::Expression, json!("fear"), Some(7)))
            .collect()
    }

    #[test]
    fn deterministic_and_substituted() {
        let mut recs = records(5);
        recs[1].media.kind = MediaType::Image;
        recs[2].instruction = Some("keep me".into());
        let a = pair_instructions(recs.clone(), &bank(3), 9).unwrap();
        let b = pair_instructions(recs.clone(), &bank(3), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[2].instruction.as_deref(), Some("keep me"));
        assert!(a[1].instruction.as_ref().unwrap().ends_with("describe the image."));
        assert!(a[0].instruction.as_ref().unwrap().ends_with("describe the video."));
        for (x, y) in a.iter().zip(&recs) {
            let mut x = x.clone();
            x.instruction = y.instruction.clone();
            assert_eq!(&x, y);
        }
    }

    #[test]
    fn usage_is_roughly_uniform() {
        let out = pair_instructions(records(10_000), &bank(100), 0).unwrap();
        let mut counts = BTreeMap::new();
        for r in &out {
            *counts.entry(r.instruction.clone().unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 100);
        assert!(counts.values().all(|&c| (60..=140).contains(&c)), "{counts:?}");
    }

    #[test]
    fn bank_validation() {
        let bad = BTreeMap::from([(EvalTask::Age, vec!["no placeholder".to_string()])]);
        assert!(InstructionBank::new(bad).is_err());
        let twice = BTreeMap::from([(EvalTask::Age, vec!["{media} {media}".to_string()])]);
        assert!(InstructionBank::new(twice).is_err());
        assert!(InstructionBank::new(BTreeMap::from([(EvalTask::Age, vec![])])).is_err());
        let parsed: InstructionBank = serde_json::from_str(r#"{"age": ["How old is the person in this {media}?"]}"#).unwrap();
        assert_eq!(parsed.instructions(EvalTask::Age).unwrap().len(), 1);
        assert!(serde_json::from_str::<InstructionBank>(r#"{"age": []}"#).is_err());
        let recs = vec![record("x", EvalTask::Age, json!(3), None)];
        assert!(matches!(pair_instructions(recs, &bank(2), 0), Err(Error::MissingTask(_))));
    }
}
