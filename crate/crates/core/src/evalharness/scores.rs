use serde::{Deserialize, Serialize};

use crate::{Error, Label, Result};

/// One row of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub label: Label,
    pub score: f64,
}

/// CSV with header `sample_id,label,score`.
pub fn write_scores_csv(records: &[ScoreRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(["sample_id", "label", "score"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in records {
        if !r.score.is_finite() {
            return Err(Error::NonFinite(format!("score of {}", r.sample_id)));
        }
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_scores_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Format(e.to_string()))?;
    if headers != vec!["sample_id", "label", "score"] {
        return Err(Error::Format(format!(
            "unexpected score header {headers:?}"
        )));
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<ScoreRecord>().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("score row {}: {e}", i + 2)))?;
        if !row.score.is_finite() {
            return Err(Error::NonFinite(format!("score of {}", row.sample_id)));
        }
        out.push(row);
    }
    Ok(out)
}
