//! Sentence handling, negation removal and numeric extraction.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_CUES: &str = include_str!("../../resources/negation_cues.json");

/// Case-insensitive cues that mark a sentence as negated.
///
/// A cue edge that is a letter must sit on a word boundary, so `not` does not
/// fire inside "another" and `no ` does not fire inside "piano ". Cues with an
/// apostrophe (`n't`) are contraction suffixes and match at any start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NegationCues(Vec<String>);

impl NegationCues {
    pub fn new(cues: Vec<String>) -> Result<Self> {
        if cues.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::InvalidConfig("negation cues must be non-empty".into()));
        }
        Ok(Self(cues.into_iter().map(|c| c.to_lowercase()).collect()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn cues(&self) -> &[String] {
        &self.0
    }

    /// True when `lowered` (already lowercase) contains any cue.
    fn negates(&self, lowered: &str) -> bool {
        self.0.iter().any(|cue| {
            let left = cue.starts_with(char::is_alphabetic) && !cue.contains('\'');
            let right = cue.ends_with(char::is_alphabetic);
            count_bounded(lowered, cue, left, right) > 0
        })
    }
}

impl Default for NegationCues {
    fn default() -> Self {
        Self::from_json(DEFAULT_CUES).expect("bundled negation cues are valid")
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Occurrences of `needle` in `hay`, optionally requiring word boundaries on
/// the left and right. Overlapping occurrences are not counted twice.
fn count_bounded(hay: &str, needle: &str, left: bool, right: bool) -> usize {
    let mut count = 0;
    let mut from = 0;
    while let Some(pos) = hay[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = !left || !hay[..start].chars().next_back().is_some_and(is_word_char);
        let right_ok = !right || !hay[end..].chars().next().is_some_and(is_word_char);
        if left_ok && right_ok {
            count += 1;
            from = end;
        } else {
            from = start + needle.chars().next().map_or(1, char::len_utf8);
        }
    }
    count
}

/// Whole-word, whole-phrase occurrences of `phrase` in lowercase `text`.
pub(crate) fn count_phrase(text: &str, phrase: &str) -> usize {
    if phrase.is_empty() {
        return 0;
    }
    count_bounded(text, phrase, true, true)
}

/// Splits after every '.', '!' or '?'; the terminator stays with its
/// sentence and a trailing unterminated fragment is kept.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            out.push(&text[start..i + 1]);
            start = i + 1;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

pub fn strip_negatives(text: &str) -> String {
    strip_negatives_with(text, &NegationCues::default())
}

pub fn strip_negatives_with(text: &str, cues: &NegationCues) -> String {
    let kept: String = split_sentences(text)
        .into_iter()
        .filter(|s| !cues.negates(&s.to_lowercase()))
        .collect();
    kept.trim().to_string()
}

/// First sentence containing a letter or digit.
pub(crate) fn first_sentence(text: &str) -> &str {
    split_sentences(text)
        .into_iter()
        .find(|s| s.chars().any(char::is_alphanumeric))
        .unwrap_or("")
}

fn au_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bAU\s?(\d+)").expect("valid pattern"))
}

fn int_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").expect("valid pattern"))
}

pub fn parse_aus(text: &str) -> BTreeSet<u32> {
    parse_aus_with(text, &NegationCues::default())
}

pub fn parse_aus_with(text: &str, cues: &NegationCues) -> BTreeSet<u32> {
    let kept = strip_negatives_with(text, cues);
    au_pattern()
        .captures_iter(&kept)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

pub fn parse_age(text: &str) -> Option<i64> {
    parse_age_with(text, &NegationCues::default())
}

pub fn parse_age_with(text: &str, cues: &NegationCues) -> Option<i64> {
    let kept = strip_negatives_with(text, cues);
    int_pattern().find(&kept).and_then(|m| m.as_str().parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn removes_negated_sentences() {
        assert_eq!(strip_negatives("He smiles. He is not sad."), "He smiles.");
        assert_eq!(strip_negatives("She isn't happy! She is calm."), "She is calm.");
        assert_eq!(strip_negatives("No smile here. Calm face"), "Calm face");
        let plain = "A calm face. Eyes open!";
        assert_eq!(strip_negatives(plain), plain);
        assert_eq!(strip_negatives(""), "");
    }

    #[test]
    fn cues_respect_word_edges() {
        assert_eq!(strip_negatives("Another smile."), "Another smile.");
        assert_eq!(strip_negatives("A piano player."), "A piano player.");
        assert_eq!(strip_negatives("Nothing else."), "Nothing else.");
        assert_eq!(strip_negatives("He would NEVER frown."), "");
        assert_eq!(strip_negatives("Lacking joy."), "");
        assert_eq!(strip_negatives("With an absence of tears."), "");
    }

    #[test]
    fn sentence_split() {
        assert_eq!(split_sentences("a. b! c? d"), vec!["a.", " b!", " c?", " d"]);
        assert_eq!(split_sentences("x"), vec!["x"]);
        assert!(split_sentences("").is_empty());
        assert_eq!(first_sentence("  . Hi there. Bye"), " Hi there.");
    }

    #[test]
    fn phrase_counting() {
        assert_eq!(count_phrase("mad and mad", "mad"), 2);
        assert_eq!(count_phrase("nomad madness", "mad"), 0);
        assert_eq!(count_phrase("wide-eyed, stunned", "wide-eyed"), 1);
        assert_eq!(count_phrase("taken aback.", "taken aback"), 1);
        assert_eq!(count_phrase("x", ""), 0);
    }

    #[test]
    fn au_extraction() {
        let got = parse_aus("AU1, AU2, and AU12 are activated. AU4 is not present.");
        assert_eq!(got, BTreeSet::from([1, 2, 12]));
        assert!(parse_aus("no action units").is_empty());
        assert_eq!(parse_aus("au6 and AU 12"), BTreeSet::from([6, 12]));
        assert_eq!(parse_aus("AU6 then AU6 again"), BTreeSet::from([6]));
        assert!(parse_aus("A tableau 3 of faces").is_empty());
    }

    #[test]
    fn age_extraction() {
        assert_eq!(parse_age("25 years old. The skin shows fine lines."), Some(25));
        assert_eq!(parse_age("around thirty"), None);
        assert_eq!(parse_age("He is 42. Not 60."), Some(42));
        assert_eq!(parse_age("Not 60. Maybe 33"), Some(33));
    }

    #[test]
    fn custom_cues() {
        let cues = NegationCues::from_json(r#"["hardly"]"#).unwrap();
        assert_eq!(strip_negatives_with("Hardly sad. Not happy.", &cues), "Not happy.");
        assert!(NegationCues::new(vec![" ".into()]).is_err());
    }

    fn corpus_text() -> impl Strategy<Value = String> {
        let words = prop::sample::select(vec![
            "he", "is", "not", "sad", "happy", "never", "calm", "no", "smile", "n't", "don't", "AU4", "without",
            "a", "another", "piano", "25", "lacks", "joy",
        ]);
        let sentence = (prop::collection::vec(words, 1..6), prop::sample::select(vec![".", "!", "?", ""]))
            .prop_map(|(w, end)| format!("{}{}", w.join(" "), end));
        prop::collection::vec(sentence, 0..6).prop_map(|s| s.join(" "))
    }

    proptest! {
        #[test]
        fn strip_is_idempotent_and_shrinking(text in corpus_text()) {
            let once = strip_negatives(&text);
            prop_assert!(once.len() <= text.len());
            prop_assert_eq!(strip_negatives(&once), once);
        }

        #[test]
        fn au_order_invariant(mut aus in prop::collection::vec(0u32..50, 0..8)) {
            let forward: Vec<String> = aus.iter().map(|a| format!("AU{a}")).collect();
            aus.reverse();
            let backward: Vec<String> = aus.iter().map(|a| format!("AU{a}")).collect();
            prop_assert_eq!(parse_aus(&forward.join(", ")), parse_aus(&backward.join(", ")));
        }
    }
}
