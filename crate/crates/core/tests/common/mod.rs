#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facecond::datapipe::{manifest_to_jsonl, AnnotationRecord, Media, MediaType, Ratings};
use facecond::evalkit::EvalTask;
use facecond::geometry::{canonical_points, LandmarkClip, LandmarkFrame, LandmarkFile};
use facecond::nn::StoredTensor;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_facecond")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("FACECOND_LOG")
        .output()
        .expect("binary runs")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn record(id: &str, task: EvalTask, label: serde_json::Value, overall: Option<u8>) -> AnnotationRecord {
    AnnotationRecord {
        id: id.into(),
        task,
        media: Media {
            path: format!("clips/{id}.mp4"),
            kind: if id.len() % 2 == 0 { MediaType::Video } else { MediaType::Image },
        },
        label,
        description: format!("Description for {id}."),
        instruction: None,
        ratings: Ratings {
            overall,
            label_accuracy: overall.map(|o| o.min(9) + 1),
            ..Default::default()
        },
    }
}

/// Paths of a full set of CLI inputs.
pub struct Inputs {
    pub landmarks: PathBuf,
    pub tokens: PathBuf,
    pub records: PathBuf,
    pub manifest: PathBuf,
    pub bank: PathBuf,
}

impl Inputs {
    pub fn all(&self) -> [&Path; 5] {
        [&self.landmarks, &self.tokens, &self.records, &self.manifest, &self.bank]
    }
}

pub fn write_inputs(dir: &Path) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frames: Vec<LandmarkFrame> = (0..2)
        .map(|_| {
            let pts = canonical_points()
                .into_iter()
                .map(|[x, y]| [x + rng.random_range(-0.01..0.01), y + rng.random_range(-0.01..0.01)])
                .collect();
            LandmarkFrame::new(pts).unwrap()
        })
        .collect();
    let clip = LandmarkClip::new(frames).unwrap();
    let landmarks = dir.join("landmarks.json");
    LandmarkFile::from_clip("clip-1", &clip).write(&landmarks).unwrap();

    let tokens = dir.join("tokens.json");
    let h_v = Array3::from_shape_simple_fn((2, 16, 8), || rng.random_range(-1.0..1.0));
    std::fs::write(&tokens, serde_json::to_string(&StoredTensor::from_array3(&h_v)).unwrap()).unwrap();

    let records = dir.join("records.jsonl");
    let mut lines = String::new();
    for name in ["expression.jsonl", "deepfake.jsonl", "au.jsonl", "age.jsonl", "attribute.jsonl"] {
        let task = name.trim_end_matches(".jsonl");
        let text = std::fs::read_to_string(fixture(name)).unwrap();
        let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let gts: Vec<serde_json::Value> = rows
            .iter()
            .map(|v| match (task, &v["expected"]) {
                ("expression", serde_json::Value::Null) => json!("neutral"),
                ("deepfake", serde_json::Value::Null) => json!("fake"),
                ("age", serde_json::Value::Null) => json!(30),
                (_, e) => e.clone(),
            })
            .collect();
        for (i, v) in rows.iter().enumerate() {
            let mut rec = json!({"id": format!("{task}-{i:02}"), "task": task, "text": v["text"], "gt": gts[i]});
            if task == "deepfake" {
                // groups of three chunks share the first chunk's label
                rec["chunk"] = json!(format!("video-{}", i / 3));
                rec["gt"] = gts[i - i % 3].clone();
            }
            lines.push_str(&rec.to_string());
            lines.push('\n');
        }
    }
    std::fs::write(&records, lines).unwrap();

    let manifest = dir.join("manifest.jsonl");
    let mut recs = Vec::new();
    for i in 0..120 {
        let class = ["real", "fake", "fake"][i % 3];
        let overall = if i % 17 == 0 { None } else { Some((i * 7 % 10) as u8 + 1) };
        recs.push(record(&format!("df{i:03}"), EvalTask::Deepfake, json!(class), overall));
    }
    for i in 0..60 {
        let class = ["happiness", "anger", "neutral"][i % 3];
        let mut r = record(&format!("ex{i:03}"), EvalTask::Expression, json!(class), Some((i % 10) as u8 + 1));
        if i % 10 == 0 {
            r.instruction = Some("Describe the expression.".into());
        }
        recs.push(r);
    }
    let mut text = manifest_to_jsonl(&recs);
    text.push_str("{not json}\n");
    std::fs::write(&manifest, text).unwrap();

    let bank = dir.join("bank.json");
    let mut b: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    b.insert("deepfake", (0..5).map(|i| format!("Is this {{media}} real or fake? ({i})")).collect());
    b.insert("expression", (0..5).map(|i| format!("Describe the expression in the {{media}}. ({i})")).collect());
    std::fs::write(&bank, serde_json::to_string(&b).unwrap()).unwrap();

    Inputs { landmarks, tokens, records, manifest, bank }
}
