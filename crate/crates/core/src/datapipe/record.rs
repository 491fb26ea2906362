//! Annotation records, JSONL manifests and rating filtering.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::EvalTask;

pub const DEFAULT_THRESHOLD: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaType {
    Image,
    Video,
}

impl MediaType {
    pub fn word(self) -> &'static str {
        match self {
            Self::Image => "image",
            Self::Video => "video",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Media {
    pub path: String,
    #[serde(rename = "type")]
    pub kind: MediaType,
}

/// Four 1–10 scores from the automatic rater; any may be absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ratings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_accuracy: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub desc_video_consistency: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub desc_label_consistency: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall: Option<u8>,
}

impl Ratings {
    pub fn fields(&self) -> [(&'static str, Option<u8>); 4] {
        [
            ("label_accuracy", self.label_accuracy),
            ("desc_video_consistency", self.desc_video_consistency),
            ("desc_label_consistency", self.desc_label_consistency),
            ("overall", self.overall),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub id: String,
    pub task: EvalTask,
    pub media: Media,
    /// Class name (expression, deepfake), AU numbers, attribute names, or age.
    pub label: serde_json::Value,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default)]
    pub ratings: Ratings,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidRecord(format!("record {:?}: {what}", self.id)));
        if self.id.is_empty() {
            return bad("empty id".into());
        }
        for (name, value) in self.ratings.fields() {
            if let Some(v) = value {
                if !(1..=10).contains(&v) {
                    return bad(format!("rating {name} = {v} outside 1..=10"));
                }
            }
        }
        let l = &self.label;
        let ok = match self.task {
            EvalTask::Expression | EvalTask::Deepfake => l.as_str().is_some_and(|s| !s.is_empty()),
            EvalTask::Au => l.as_array().is_some_and(|a| a.iter().all(|v| v.as_u64().is_some())),
            EvalTask::Attribute => l.as_array().is_some_and(|a| a.iter().all(|v| v.is_string())),
            EvalTask::Age => l.as_u64().is_some(),
        };
        if !ok {
            return bad(format!("label {l} does not fit task {}", self.task));
        }
        Ok(())
    }

    /// Key that groups records into classes for split quotas. Set-valued
    /// labels join their sorted members with '+'.
    pub fn class_key(&self) -> String {
        match &self.label {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Array(items) => {
                let mut parts: Vec<String> = items
                    .iter()
                    .map(|v| v.as_str().map_or_else(|| v.to_string(), String::from))
                    .collect();
                if items.iter().all(serde_json::Value::is_u64) {
                    parts.sort_by_key(|p| p.parse::<u64>().unwrap_or(u64::MAX));
                } else {
                    parts.sort();
                }
                parts.dedup();
                parts.join("+")
            }
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<AnnotationRecord>,
    pub errors: Vec<LineError>,
}

/// Parses JSONL; malformed or invalid lines are reported, not fatal.
pub fn parse_manifest(text: &str) -> Manifest {
    let mut out = Manifest::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<AnnotationRecord>(line)
            .map_err(Error::from)
            .and_then(|r| r.validate().map(|_| r));
        match parsed {
            Ok(r) => out.records.push(r),
            Err(e) => out.errors.push(LineError {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    out
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_manifest(&text))
}

pub fn manifest_to_jsonl(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(records: &[AnnotationRecord], path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

/// Splits into (kept, removed). A record is kept only when its overall
/// rating is present and strictly above `threshold`. Order is preserved.
pub fn filter_by_rating(
    records: Vec<AnnotationRecord>,
    threshold: u8,
) -> (Vec<AnnotationRecord>, Vec<AnnotationRecord>) {
    records
        .into_iter()
        .partition(|r| r.ratings.overall.is_some_and(|o| o > threshold))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    pub(crate) fn record(id: &str, task: EvalTask, label: serde_json::Value, overall: Option<u8>) -> AnnotationRecord {
        AnnotationRecord {
            id: id.into(),
            task,
            media: Media {
                path: format!("media/{id}.mp4"),
                kind: MediaType::Video,
            },
            label,
            description: format!("description of {id}"),
            instruction: None,
            ratings: Ratings {
                overall,
                ..Default::default()
            },
        }
    }

    #[test]
    fn threshold_rule() {
        let recs: Vec<_> = (1..=10)
            .map(|o| record(&o.to_string(), EvalTask::Expression, json!("happiness"), Some(o)))
            .collect();
        let (kept, removed) = filter_by_rating(recs.clone(), DEFAULT_THRESHOLD);
        let ids: Vec<&str> = kept.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["7", "8", "9", "10"]);
        assert_eq!(removed.len(), 6);
        let (all, _) = filter_by_rating(recs, 0);
        assert_eq!(all.len(), 10);
        let unrated = record("u", EvalTask::Age, json!(30), None);
        let (kept, removed) = filter_by_rating(vec![unrated], 0);
        assert!(kept.is_empty());
        assert_eq!(removed.len(), 1);
    }

    #[test]
    fn manifest_errors_have_line_numbers() {
        assert_eq!(parse_manifest(""), Manifest::default());
        let good = |id: &str| serde_json::to_string(&record(id, EvalTask::Age, json!(20), Some(8))).unwrap();
        let text = format!("{}\n{}\n{{broken\n{}\n", good("a"), good("b"), good("c"));
        let m = parse_manifest(&text);
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.errors.len(), 1);
        assert_eq!(m.errors[0].line, 3);
    }

    #[test]
    fn validation() {
        let mut r = record("a", EvalTask::Age, json!("thirty"), Some(5));
        assert!(r.validate().is_err());
        r.label = json!(30);
        assert!(r.validate().is_ok());
        r.ratings.label_accuracy = Some(11);
        assert!(r.validate().is_err());
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(parse_manifest(&line).errors.len(), 1);
        assert!(record("b", EvalTask::Au, json!(["1"]), None).validate().is_err());
        assert!(record("c", EvalTask::Au, json!([12, 4]), None).validate().is_ok());
    }

    #[test]
    fn class_keys() {
        assert_eq!(record("a", EvalTask::Au, json!([12, 4, 4]), None).class_key(), "4+12");
        assert_eq!(record("a", EvalTask::Attribute, json!(["young", "bald"]), None).class_key(), "bald+young");
        assert_eq!(record("a", EvalTask::Age, json!(30), None).class_key(), "30");
        assert_eq!(record("a", EvalTask::Deepfake, json!("fake"), None).class_key(), "fake");
    }

    fn arb_record() -> impl Strategy<Value = AnnotationRecord> {
        (
            "[a-z0-9]{1,8}",
            prop::option::of(1u8..=10),
            prop::option::of(1u8..=10),
            prop::option::of("[ -~]{0,20}"),
            "[ -~]{0,30}",
            any::<bool>(),
        )
            .prop_map(|(id, overall, acc, instruction, description, video)| {
                let mut r = record(&id, EvalTask::Expression, json!("sadness"), overall);
                r.ratings.label_accuracy = acc;
                r.instruction = instruction;
                r.description = description;
                r.media.kind = if video { MediaType::Video } else { MediaType::Image };
                r
            })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(recs in prop::collection::vec(arb_record(), 0..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.jsonl");
            save_manifest(&recs, &path).unwrap();
            let m = load_manifest(&path).unwrap();
            prop_assert!(m.errors.is_empty());
            prop_assert_eq!(m.records, recs);
        }

        #[test]
        fn filter_partitions_and_is_monotone(
            overalls in prop::collection::vec(prop::option::of(1u8..=10), 0..40),
            t1 in 0u8..=10,
            t2 in 0u8..=10,
        ) {
            let recs: Vec<_> = overalls
                .iter()
                .enumerate()
                .map(|(i, &o)| record(&i.to_string(), EvalTask::Expression, json!("fear"), o))
                .collect();
            let (kept, removed) = filter_by_rating(recs.clone(), t1);
            prop_assert_eq!(kept.len() + removed.len(), recs.len());
            let mut ids: Vec<&str> = kept.iter().chain(&removed).map(|r| r.id.as_str()).collect();
            ids.sort();
            let mut expected: Vec<&str> = recs.iter().map(|r| r.id.as_str()).collect();
            expected.sort();
            prop_assert_eq!(ids, expected);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            prop_assert!(filter_by_rating(recs.clone(), hi).0.len() <= filter_by_rating(recs, lo).0.len());
        }
    }
}
