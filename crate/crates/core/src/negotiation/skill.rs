//! Built-in provider skills. A skill is private to its provider: only its
//! outputs and the provider's quality claim leave the agent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkillKind {
    /// Word-by-word English to French over a small legal glossary.
    Translate,
    Echo,
    /// Always fails; exercises the abort path.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillProfile {
    pub skill: SkillKind,
    /// Quality the provider reports with each result.
    pub quality: f64,
    pub processing_ms: u64,
}

impl Default for SkillProfile {
    fn default() -> Self {
        SkillProfile { skill: SkillKind::Echo, quality: 1.0, processing_ms: 100 }
    }
}

const GLOSSARY: &[(&str, &str)] = &[
    ("agreement", "accord"),
    ("and", "et"),
    ("clause", "clause"),
    ("confidential", "confidentiel"),
    ("contract", "contrat"),
    ("deadline", "échéance"),
    ("document", "document"),
    ("legal", "juridique"),
    ("of", "de"),
    ("party", "partie"),
    ("payment", "paiement"),
    ("penalty", "pénalité"),
    ("the", "le"),
    ("this", "ce"),
    ("translation", "traduction"),
];

pub fn translate_word(word: &str) -> String {
    let lower = word.to_lowercase();
    GLOSSARY
        .binary_search_by(|(en, _)| en.cmp(&lower.as_str()))
        .map(|i| GLOSSARY[i].1.to_owned())
        .unwrap_or(lower)
}

pub fn run_skill(kind: SkillKind, input: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>, String> {
    match kind {
        SkillKind::Echo => Ok(input.clone()),
        SkillKind::Fail => Err("skill failed".into()),
        SkillKind::Translate => Ok(input
            .iter()
            .map(|(k, v)| (k.clone(), v.split_whitespace().map(translate_word).collect::<Vec<_>>().join(" ")))
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glossary_is_sorted() {
        assert!(GLOSSARY.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn translates_known_words_and_keeps_others() {
        let input = BTreeMap::from([("text".to_string(), "This confidential contract of Acme".to_string())]);
        let out = run_skill(SkillKind::Translate, &input).unwrap();
        assert_eq!(out["text"], "ce confidentiel contrat de acme");
    }

    #[test]
    fn fail_skill_fails() {
        assert!(run_skill(SkillKind::Fail, &BTreeMap::new()).is_err());
    }
}
