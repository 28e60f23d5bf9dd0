//! Dialogue data model and word-level tokenization.
//!
//! A [`DialogueRound`] bundles the flattened conversation history (the
//! utterance), the persona candidates and the knowledge candidates of one
//! turn, plus the gold labels: a boolean per persona entry and a single
//! knowledge index.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Separator placed between history turns when they are flattened into the
/// utterance entry.
pub const HISTORY_SEPARATOR: &str = " </s> ";

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Token {
    pub surface: String,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Role {
    Utterance,
    Persona,
    Knowledge,
}

/// Lowercases `text`, splits on whitespace and emits every punctuation or
/// symbol character as a token of its own.
///
/// A character counts as punctuation when it is neither alphanumeric nor
/// whitespace. Returns [`Error::EmptyEntry`] when no token results.
pub fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens: Vec<Token> = Vec::new();
    let mut current = String::new();

    fn flush(current: &mut String, tokens: &mut Vec<Token>) {
        if !current.is_empty() {
            let position = tokens.len();
            tokens.push(Token {
                surface: core::mem::take(current),
                position,
            });
        }
    }

    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            flush(&mut current, &mut tokens);
            current.extend(c.to_lowercase());
            flush(&mut current, &mut tokens);
        }
    }
    flush(&mut current, &mut tokens);

    if tokens.is_empty() {
        return Err(Error::EmptyEntry);
    }
    Ok(tokens)
}

/// One utterance, persona or knowledge text together with its tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TextEntry {
    pub id: String,
    pub role: Role,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl TextEntry {
    pub fn new(id: impl Into<String>, role: Role, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let tokens = tokenize(&text)?;
        Ok(Self {
            id: id.into(),
            role,
            text,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false for a constructed entry; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

/// One conversation turn with its candidates and gold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DialogueRound {
    pub dialog_id: String,
    pub round: u32,
    /// History turns as given; `utterance` is their flattened form.
    pub history: Vec<String>,
    pub utterance: TextEntry,
    pub personas: Vec<TextEntry>,
    pub knowledges: Vec<TextEntry>,
    pub persona_labels: Vec<bool>,
    pub knowledge_label: usize,
}

impl DialogueRound {
    /// Builds and validates a round from raw texts.
    ///
    /// Entry ids are `{dialog_id}/{round}/u`, `…/p{i}` and `…/k{j}`.
    pub fn from_texts(
        dialog_id: impl Into<String>,
        round: u32,
        history: Vec<String>,
        personas: &[impl AsRef<str>],
        knowledges: &[impl AsRef<str>],
        persona_labels: Vec<bool>,
        knowledge_label: usize,
    ) -> Result<Self> {
        let dialog_id = dialog_id.into();
        if history.is_empty() {
            return Err(Error::Schema(format!("{dialog_id}/{round}: history has no turns")));
        }
        let utterance_text = history.join(HISTORY_SEPARATOR);
        let prefix = format!("{dialog_id}/{round}");
        let utterance = TextEntry::new(format!("{prefix}/u"), Role::Utterance, utterance_text)
            .map_err(|e| entry_error(&prefix, "utterance", e))?;
        let personas = personas
            .iter()
            .enumerate()
            .map(|(i, t)| {
                TextEntry::new(format!("{prefix}/p{i}"), Role::Persona, t.as_ref())
                    .map_err(|e| entry_error(&prefix, "persona", e))
            })
            .collect::<Result<Vec<_>>>()?;
        let knowledges = knowledges
            .iter()
            .enumerate()
            .map(|(j, t)| {
                TextEntry::new(format!("{prefix}/k{j}"), Role::Knowledge, t.as_ref())
                    .map_err(|e| entry_error(&prefix, "knowledge", e))
            })
            .collect::<Result<Vec<_>>>()?;
        let round = Self {
            dialog_id,
            round,
            history,
            utterance,
            personas,
            knowledges,
            persona_labels,
            knowledge_label,
        };
        round.validate()?;
        Ok(round)
    }

    /// Checks the round-level invariants.
    pub fn validate(&self) -> Result<()> {
        let id = || format!("{}/{}", self.dialog_id, self.round);
        if self.personas.is_empty() {
            return Err(Error::Schema(format!("{}: no persona entries", id())));
        }
        if self.knowledges.is_empty() {
            return Err(Error::Schema(format!("{}: no knowledge entries", id())));
        }
        if self.persona_labels.len() != self.personas.len() {
            return Err(Error::Schema(format!(
                "{}: {} persona labels for {} personas",
                id(),
                self.persona_labels.len(),
                self.personas.len()
            )));
        }
        if self.knowledge_label >= self.knowledges.len() {
            return Err(Error::Schema(format!(
                "{}: knowledge label {} out of range for {} entries",
                id(),
                self.knowledge_label,
                self.knowledges.len()
            )));
        }
        Ok(())
    }

    /// Utterance, personas and knowledges, in that order.
    pub fn entries(&self) -> impl Iterator<Item = &TextEntry> + '_ {
        core::iter::once(&self.utterance)
            .chain(self.personas.iter())
            .chain(self.knowledges.iter())
    }

    pub fn n_personas(&self) -> usize {
        self.personas.len()
    }

    pub fn n_knowledges(&self) -> usize {
        self.knowledges.len()
    }
}

fn entry_error(prefix: &str, what: &str, e: Error) -> Error {
    match e {
        Error::EmptyEntry => Error::Schema(format!("{prefix}: empty {what} entry")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn surfaces(text: &str) -> Vec<String> {
        tokenize(text).unwrap().into_iter().map(|t| t.surface).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(surfaces("I hope to move"), ["i", "hope", "to", "move"]);
        assert_eq!(surfaces("a"), ["a"]);
        assert_eq!(
            surfaces("Where is this memorial ?"),
            ["where", "is", "this", "memorial", "?"]
        );
    }

    #[test]
    fn punctuation_attached_to_words_is_split() {
        assert_eq!(surfaces("Adelaide, South"), ["adelaide", ",", "south"]);
        assert_eq!(surfaces("don't"), ["don", "'", "t"]);
        assert_eq!(surfaces("a </s> b"), ["a", "<", "/", "s", ">", "b"]);
    }

    #[test]
    fn positions_are_contiguous() {
        let toks = tokenize("  Hello,\tworld!  ").unwrap();
        for (i, t) in toks.iter().enumerate() {
            assert_eq!(t.position, i);
            assert!(!t.surface.is_empty());
            assert!(!t.surface.chars().any(char::is_whitespace));
        }
    }

    #[test]
    fn empty_text_is_rejected() {
        assert_eq!(tokenize(""), Err(Error::EmptyEntry));
        assert_eq!(tokenize(" \t\n "), Err(Error::EmptyEntry));
    }

    fn round(labels: Vec<bool>, k_label: usize) -> Result<DialogueRound> {
        DialogueRound::from_texts(
            "d1",
            0,
            vec!["hi there".into(), "where is it ?".into()],
            &["p0", "p1", "p2", "p3", "p4"],
            &["k0", "k1", "k2", "k3", "k4", "k5", "k6", "k7", "k8", "k9"],
            labels,
            k_label,
        )
    }

    #[test]
    fn valid_round() {
        let r = round(vec![false; 5], 3).unwrap();
        assert_eq!(r.utterance.text, "hi there </s> where is it ?");
        assert_eq!(r.personas[1].id, "d1/0/p1");
        assert_eq!(r.knowledges[9].id, "d1/0/k9");
        assert_eq!(r.entries().count(), 16);
    }

    #[test]
    fn label_length_mismatch_is_schema_error() {
        assert!(matches!(round(vec![false; 4], 3), Err(Error::Schema(_))));
    }

    #[test]
    fn knowledge_label_out_of_range_is_schema_error() {
        assert!(matches!(round(vec![false; 5], 10), Err(Error::Schema(_))));
    }

    #[test]
    fn empty_persona_text_is_rejected() {
        let r = DialogueRound::from_texts("d", 0, vec!["u".into()], &["  "], &["k"], vec![false], 0);
        assert!(matches!(r, Err(Error::Schema(_))));
    }
}
