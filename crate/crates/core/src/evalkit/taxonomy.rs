//! Per-task class vocabularies and synonym matching.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::text::{count_phrase, first_sentence};

const EXPRESSION: &str = include_str!("../../resources/taxonomy/expression.json");
const ATTRIBUTE: &str = include_str!("../../resources/taxonomy/attribute.json");
const DEEPFAKE: &str = include_str!("../../resources/taxonomy/deepfake.json");

/// Evaluation task of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Expression,
    Au,
    Attribute,
    Age,
    Deepfake,
}

impl EvalTask {
    pub const ALL: [EvalTask; 5] = [Self::Expression, Self::Au, Self::Attribute, Self::Age, Self::Deepfake];

    pub fn name(self) -> &'static str {
        match self {
            Self::Expression => "expression",
            Self::Au => "au",
            Self::Attribute => "attribute",
            Self::Age => "age",
            Self::Deepfake => "deepfake",
        }
    }

    /// Tasks scored through a synonym taxonomy.
    pub fn uses_taxonomy(self) -> bool {
        matches!(self, Self::Expression | Self::Attribute | Self::Deepfake)
    }
}

impl std::fmt::Display for EvalTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered classes, each with lowercase synonym phrases. Phrase sets are
/// pairwise disjoint; class order breaks ties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    task: EvalTask,
    classes: Vec<String>,
    synonyms: Vec<Vec<String>>,
}

impl Taxonomy {
    pub fn new(task: EvalTask, entries: Vec<(String, Vec<String>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig(format!("{task} taxonomy has no classes")));
        }
        let mut owner: BTreeMap<String, String> = BTreeMap::new();
        let mut classes = Vec::with_capacity(entries.len());
        let mut synonyms = Vec::with_capacity(entries.len());
        for (class, phrases) in entries {
            if classes.contains(&class) {
                return Err(Error::InvalidConfig(format!("{task} taxonomy repeats class {class:?}")));
            }
            let phrases: Vec<String> = phrases.iter().map(|p| p.trim().to_lowercase()).collect();
            if phrases.is_empty() || phrases.iter().any(String::is_empty) {
                return Err(Error::InvalidConfig(format!("class {class:?} needs non-empty phrases")));
            }
            for p in &phrases {
                if let Some(prev) = owner.insert(p.clone(), class.clone()) {
                    if prev != class {
                        return Err(Error::InvalidConfig(format!(
                            "phrase {p:?} listed under both {prev:?} and {class:?}"
                        )));
                    }
                }
            }
            classes.push(class);
            synonyms.push(phrases);
        }
        Ok(Self { task, classes, synonyms })
    }

    /// Parses `{class: [phrases]}`, keeping the file's class order.
    pub fn from_json(task: EvalTask, text: &str) -> Result<Self> {
        let OrderedEntries(entries) = serde_json::from_str(text)?;
        Self::new(task, entries)
    }

    /// Bundled default for a taxonomy-scored task.
    pub fn builtin(task: EvalTask) -> Result<Self> {
        let text = match task {
            EvalTask::Expression => EXPRESSION,
            EvalTask::Attribute => ATTRIBUTE,
            EvalTask::Deepfake => DEEPFAKE,
            EvalTask::Au | EvalTask::Age => {
                return Err(Error::InvalidConfig(format!("{task} is scored without a taxonomy")))
            }
        };
        Self::from_json(task, text)
    }

    pub fn task(&self) -> EvalTask {
        self.task
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn synonyms(&self, class: usize) -> &[String] {
        &self.synonyms[class]
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Phrase hits per class in `text`, matched case-insensitively.
    pub fn match_counts(&self, text: &str) -> Vec<usize> {
        let lowered = text.to_lowercase();
        self.synonyms
            .iter()
            .map(|phrases| phrases.iter().map(|p| count_phrase(&lowered, p)).sum())
            .collect()
    }

    /// Every class with at least one hit anywhere in `text`.
    pub fn match_all(&self, text: &str) -> BTreeSet<usize> {
        self.match_counts(text)
            .into_iter()
            .enumerate()
            .filter(|&(_, n)| n > 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// JSON object read as key/value pairs in file order, duplicates kept.
struct OrderedEntries(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl<'de> serde::de::Visitor<'de> for Visitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an object mapping class names to phrase lists")
            }

            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = map.next_entry()? {
                    out.push(entry);
                }
                Ok(OrderedEntries(out))
            }
        }
        d.deserialize_map(Visitor)
    }
}

/// Index of the largest count; the earliest class wins ties. `None` when all
/// counts are zero.
pub(crate) fn argmax_first(counts: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, &n) in counts.iter().enumerate() {
        if n > 0 && best.is_none_or(|(_, b)| n > b) {
            best = Some((i, n));
        }
    }
    best.map(|(i, _)| i)
}

/// Class index for negation-stripped `text`: the first sentence decides when
/// it contains any synonym, otherwise the whole text votes. `None` means no
/// synonym occurs anywhere.
pub fn match_synonyms(text: &str, taxonomy: &Taxonomy) -> Option<usize> {
    argmax_first(&taxonomy.match_counts(first_sentence(text))).or_else(|| argmax_first(&taxonomy.match_counts(text)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn expr() -> Taxonomy {
        Taxonomy::builtin(EvalTask::Expression).unwrap()
    }

    fn name(t: &Taxonomy, i: Option<usize>) -> Option<&str> {
        i.map(|i| t.classes()[i].as_str())
    }

    #[test]
    fn builtin_shapes() {
        let e = expr();
        assert_eq!(
            e.classes(),
            ["happiness", "sadness", "neutral", "anger", "surprise", "disgust", "fear"]
        );
        let a = Taxonomy::builtin(EvalTask::Attribute).unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(a.classes()[0], "5_o_clock_shadow");
        assert_eq!(a.classes()[39], "young");
        let d = Taxonomy::builtin(EvalTask::Deepfake).unwrap();
        assert_eq!(d.classes(), ["real", "fake"]);
        for t in [&e, &a, &d] {
            for i in 0..t.len() {
                assert!(t.synonyms(i).len() >= 10, "{}", t.classes()[i]);
            }
        }
        assert!(Taxonomy::builtin(EvalTask::Au).is_err());
    }

    #[test]
    fn synonym_table_anchors() {
        let e = expr();
        let has = |class: &str, words: &[&str]| {
            let i = e.index_of(class).unwrap();
            for w in words {
                assert!(e.synonyms(i).iter().any(|p| p == w), "{class} lacks {w}");
            }
        };
        has("happiness", &["cheerful", "content", "joy", "smiling"]);
        has("sadness", &["crying", "distress", "melancholy", "sob"]);
        has("neutral", &["calm", "expressionless", "unemotional", "unmoving"]);
        has("anger", &["annoyed", "enraged", "incensed", "mad"]);
    }

    #[test]
    fn rejects_overlap_and_empties() {
        let dup = vec![("a".to_string(), vec!["x".to_string()]), ("b".to_string(), vec!["X".to_string()])];
        assert!(Taxonomy::new(EvalTask::Expression, dup).is_err());
        assert!(Taxonomy::new(EvalTask::Expression, vec![("a".into(), vec![])]).is_err());
        assert!(Taxonomy::new(EvalTask::Expression, vec![]).is_err());
        assert!(Taxonomy::from_json(EvalTask::Expression, r#"{"a": ["x"], "a": ["y"]}"#).is_err());
    }

    #[test]
    fn file_order_is_class_order() {
        let t = Taxonomy::from_json(EvalTask::Expression, r#"{"zeta": ["z"], "alpha": ["a"]}"#).unwrap();
        assert_eq!(t.classes(), ["zeta", "alpha"]);
        assert_eq!(name(&t, match_synonyms("a z", &t)), Some("zeta"));
    }

    #[test]
    fn matching_rules() {
        let e = expr();
        assert_eq!(name(&e, match_synonyms("The person appears cheerful and content.", &e)), Some("happiness"));
        assert_eq!(match_synonyms("", &e), None);
        assert_eq!(match_synonyms("A face in a photo.", &e), None);
        let text = "He looks mad. He is happy, joyful and smiling.";
        assert_eq!(name(&e, match_synonyms(text, &e)), Some("anger"));
        // no hit in the first sentence: whole-text vote
        let text = "A man sits. He is sad and crying, then furious.";
        assert_eq!(name(&e, match_synonyms(text, &e)), Some("sadness"));
        // first-sentence tie goes to the earlier class
        assert_eq!(name(&e, match_synonyms("Sad yet happy.", &e)), Some("happiness"));
        assert_eq!(name(&e, match_synonyms("Angry and afraid and scared.", &e)), Some("fear"));
    }

    #[test]
    fn multi_label_hits() {
        let a = Taxonomy::builtin(EvalTask::Attribute).unwrap();
        let hits: Vec<&str> = a
            .match_all("A young woman with wavy hair and earrings, wearing lipstick.")
            .into_iter()
            .map(|i| a.classes()[i].as_str())
            .collect();
        assert_eq!(hits, ["wavy_hair", "wearing_earrings", "wearing_lipstick", "young"]);
    }

    proptest! {
        #[test]
        fn case_invariant(words in prop::collection::vec(prop::sample::select(vec![
            "happy", "Sad", "calm", "MAD", "the", "Face.", "wide-eyed", "scared!", "grin",
        ]), 0..10)) {
            let e = expr();
            let text = words.join(" ");
            let r = match_synonyms(&text, &e);
            prop_assert_eq!(r, match_synonyms(&text.to_uppercase(), &e));
            prop_assert_eq!(r, match_synonyms(&text.to_lowercase(), &e));
        }
    }
}
