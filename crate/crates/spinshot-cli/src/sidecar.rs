//! JSON sidecar written next to a raw trace dump.

use spinshot::montecarlo::{RawSidecar, RAW_FORMAT};

use crate::error::ParseError;

pub fn to_json(s: &RawSidecar) -> String {
    serde_json::to_string_pretty(s).expect("sidecar serialises")
}

/// Parse and check that the sidecar describes a dump we can read.
pub fn parse_sidecar(text: &str) -> Result<RawSidecar, ParseError> {
    let s: RawSidecar = serde_json::from_str(text).map_err(|e| ParseError::new(e.line(), e.column(), e.to_string()))?;
    if s.format != RAW_FORMAT {
        return Err(ParseError::new(1, 1, format!("unsupported format '{}'", s.format)));
    }
    if s.n_traces == 0 || s.samples_per_trace == 0 {
        return Err(ParseError::new(1, 1, "empty dump"));
    }
    if s.n_traces.checked_mul(s.samples_per_trace).and_then(|n| n.checked_mul(8)).is_none() {
        return Err(ParseError::new(1, 1, "dump size overflows"));
    }
    let models = s.tunnel.validate().and(s.detector.validate());
    models.map_err(|e| ParseError::new(1, 1, e.to_string()))?;
    Ok(s)
}

/// Expected byte length of the dump a sidecar describes.
pub fn dump_len(s: &RawSidecar) -> usize {
    8 * s.n_traces * s.samples_per_trace
}
