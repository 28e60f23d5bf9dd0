//! IDF tables as JSON: `{"doc_count": N, "idf": {token: value}}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use comac_core::saliency::IdfTable;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounds `x` to nine significant digits.
pub fn nine_digits(x: f64) -> f64 {
    format!("{x:.8e}").parse().unwrap_or(x)
}

#[derive(Serialize, Deserialize)]
struct IdfFile {
    doc_count: usize,
    idf: BTreeMap<String, f64>,
}

pub fn idf_to_json(table: &IdfTable) -> String {
    let file = IdfFile {
        doc_count: table.doc_count,
        idf: table.idf.iter().map(|(k, &v)| (k.clone(), nine_digits(v))).collect(),
    };
    serde_json::to_string_pretty(&file).expect("IDF tables serialize")
}

pub fn idf_from_json(text: &str) -> Result<IdfTable> {
    let file: IdfFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("IDF file: {e}")))?;
    if file.idf.values().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Format("IDF file: values must be finite and positive".into()));
    }
    Ok(IdfTable {
        doc_count: file.doc_count,
        idf: file.idf,
    })
}

pub fn save_idf(path: &Path, table: &IdfTable) -> Result<()> {
    let mut text = idf_to_json(table);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_idf(path: &Path) -> Result<IdfTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    idf_from_json(&text)
}
