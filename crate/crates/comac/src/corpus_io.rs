//! JSON-lines corpus files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use comac_core::corpus::DialogueRound;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    pub dialog_id: String,
    pub round: u32,
    pub history: Vec<String>,
    pub personas: Vec<String>,
    pub knowledges: Vec<String>,
    pub persona_labels: Vec<bool>,
    pub knowledge_label: usize,
}

impl RoundRecord {
    pub fn into_round(self) -> comac_core::Result<DialogueRound> {
        DialogueRound::from_texts(
            self.dialog_id,
            self.round,
            self.history,
            &self.personas,
            &self.knowledges,
            self.persona_labels,
            self.knowledge_label,
        )
    }
}

impl From<&DialogueRound> for RoundRecord {
    fn from(r: &DialogueRound) -> Self {
        Self {
            dialog_id: r.dialog_id.clone(),
            round: r.round,
            history: r.history.clone(),
            personas: r.personas.iter().map(|e| e.text.clone()).collect(),
            knowledges: r.knowledges.iter().map(|e| e.text.clone()).collect(),
            persona_labels: r.persona_labels.clone(),
            knowledge_label: r.knowledge_label,
        }
    }
}

/// Parses a corpus from a reader. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<DialogueRound>> {
    let mut rounds = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RoundRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let round = record
            .into_round()
            .map_err(|source| Error::Schema { line: line_no, source })?;
        rounds.push(round);
    }
    Ok(rounds)
}

pub fn load_corpus(path: &Path) -> Result<Vec<DialogueRound>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

pub fn write_corpus<W: Write>(mut out: W, rounds: &[DialogueRound]) -> Result<()> {
    for r in rounds {
        let line = serde_json::to_string(&RoundRecord::from(r)).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(Path::new("<corpus>"), e))?;
    }
    Ok(())
}

pub fn save_corpus(path: &Path, rounds: &[DialogueRound]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_corpus(&mut out, rounds)?;
    out.flush().map_err(|e| Error::io(path, e))
}
