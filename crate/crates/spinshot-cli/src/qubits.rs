//! Qubit list for sequential readout: CSV with a header row
//! `name,measure_time,t1_relax[,weight]`, times in seconds.

use serde::Deserialize;
use spinshot::sequencer::Qubit;

use crate::error::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub struct QubitRow {
    pub name: String,
    pub qubit: Qubit,
    pub weight: Option<f64>,
}

#[derive(Deserialize)]
struct Raw {
    name: String,
    measure_time: f64,
    t1_relax: f64,
    #[serde(default)]
    weight: Option<f64>,
}

pub fn parse_qubits(text: &str) -> Result<Vec<QubitRow>, ParseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_err(&e))?.clone();
    for need in ["name", "measure_time", "t1_relax"] {
        if !headers.iter().any(|h| h == need) {
            return Err(ParseError::new(1, 1, format!("missing column '{need}'")));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let raw: Raw = rec
            .deserialize(Some(&headers))
            .map_err(|e| ParseError::new(line, field_col(&e, &rec), e.to_string()))?;
        let bad = |msg: &str| ParseError::new(line, 1, format!("qubit '{}': {msg}", raw.name));
        if !(raw.measure_time >= 0.0 && raw.measure_time.is_finite()) {
            return Err(bad("measure_time must be finite and >= 0"));
        }
        if !(raw.t1_relax > 0.0) {
            return Err(bad("t1_relax must be > 0"));
        }
        if raw.weight.is_some_and(|w| !(w >= 0.0 && w.is_finite())) {
            return Err(bad("weight must be finite and >= 0"));
        }
        out.push(QubitRow {
            name: raw.name,
            qubit: Qubit {
                measure_time: raw.measure_time,
                relax_time: raw.t1_relax,
            },
            weight: raw.weight,
        });
    }
    Ok(out)
}

fn csv_err(e: &csv::Error) -> ParseError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    ParseError::new(line, 1, e.to_string())
}

/// 1-based column where the offending field starts, or 1.
fn field_col(e: &csv::Error, rec: &csv::StringRecord) -> usize {
    let idx = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.field().map(|f| f as usize),
        _ => None,
    };
    match idx {
        Some(i) => 1 + rec.iter().take(i).map(|f| f.len() + 1).sum::<usize>(),
        None => 1,
    }
}
