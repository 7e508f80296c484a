//! Experiment records: `[name]` sections of `key = value` lines.
//!
//! ```text
//! [broome_l]
//! label = Broome(L)
//! unit = mV
//! t_out0 = 0.61 !derived-via-fermi/b
//! ```
//!
//! Numeric values may carry a provenance flag after `!`, optionally with a
//! footnote tag after a slash. Whole-line `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use spinshot::fidelity::InputSigmas;
use spinshot::model::{zeeman_to_ratio, DetectorModel, PartialTunnelModel, ReadoutPlan, TunnelModel, ZeemanParams};
use spinshot::stc::{complete_tunnel_times, infer_detuning};

use crate::error::{CliError, CliResult, ParseError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Measured,
    Estimated(Option<String>),
    DerivedViaFermi(Option<String>),
}

impl Provenance {
    fn parse(s: &str) -> Option<Self> {
        let (kind, note) = match s.split_once('/') {
            Some((k, n)) => (k, Some(n)),
            None => (s, None),
        };
        if let Some(n) = note {
            if n.is_empty() || !n.chars().all(|c| c.is_ascii_alphanumeric()) {
                return None;
            }
        }
        let note = note.map(str::to_string);
        match (kind, note) {
            ("measured", None) => Some(Provenance::Measured),
            ("estimated", n) => Some(Provenance::Estimated(n)),
            ("derived-via-fermi", n) => Some(Provenance::DerivedViaFermi(n)),
            _ => None,
        }
    }

    fn emit(&self) -> Option<String> {
        let tag = |kind: &str, n: &Option<String>| match n {
            Some(n) => format!("{kind}/{n}"),
            None => kind.to_string(),
        };
        match self {
            Provenance::Measured => None,
            Provenance::Estimated(n) => Some(tag("estimated", n)),
            Provenance::DerivedViaFermi(n) => Some(tag("derived-via-fermi", n)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Field {
    pub value: f64,
    pub provenance: Provenance,
}

/// Numeric keys in emission order.
pub const NUMERIC_KEYS: &[&str] = &[
    "mu0",
    "mu1",
    "noise_psd",
    "sigma0",
    "sigma1",
    "filter_cutoff",
    "sample_rate",
    "filter_order",
    "t_in0",
    "t_out0",
    "t_in1",
    "t_out1",
    "t1_relax",
    "epsilon_sr",
    "b_field",
    "g_factor",
    "temperature",
    "t_rep",
    "t_rep_err",
    "x_rep",
    "x_rep_err",
    "t_out1_err",
    "t_out0_err",
    "t_in0_err",
    "t1_relax_err",
    "delta_mu_err",
];

const TEXT_KEYS: &[&str] = &["label", "unit"];

/// Keys describing the reported readout rather than the device.
const REPORTED_KEYS: &[&str] = &["t_rep", "t_rep_err", "x_rep", "x_rep_err"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub label: Option<String>,
    pub unit: Option<String>,
    pub values: BTreeMap<String, Field>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Syntax only; no validation or derived fields.
pub fn parse_records(text: &str) -> Result<Vec<ExperimentRecord>, ParseError> {
    let mut out: Vec<ExperimentRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let indent = raw.len() - raw.trim_start().len();
        let s = raw.trim();
        let col0 = indent + 1;
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ParseError::new(line, col0, "section header missing ']'"))?
                .trim();
            if !valid_name(name) {
                return Err(ParseError::new(line, col0 + 1, format!("bad section name '{name}'")));
            }
            if out.iter().any(|r| r.name == name) {
                return Err(ParseError::new(line, col0 + 1, format!("duplicate section '{name}'")));
            }
            out.push(ExperimentRecord {
                name: name.to_string(),
                label: None,
                unit: None,
                values: BTreeMap::new(),
            });
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| ParseError::new(line, col0, "expected 'key = value' or '[name]'"))?;
        let key = k.trim();
        let vcol = col0 + k.len() + 1 + (v.len() - v.trim_start().len());
        let v = v.trim();
        let rec = out
            .last_mut()
            .ok_or_else(|| ParseError::new(line, col0, "key before any [section]"))?;
        if TEXT_KEYS.contains(&key) {
            let slot = if key == "label" { &mut rec.label } else { &mut rec.unit };
            if slot.is_some() {
                return Err(ParseError::new(line, col0, format!("duplicate key '{key}'")));
            }
            *slot = Some(v.to_string());
            continue;
        }
        if !NUMERIC_KEYS.contains(&key) {
            return Err(ParseError::new(line, col0, format!("unknown key '{key}'")));
        }
        if rec.values.contains_key(key) {
            return Err(ParseError::new(line, col0, format!("duplicate key '{key}'")));
        }
        let (num, flag) = match v.split_once('!') {
            Some((n, f)) => (n.trim(), Some((f.trim(), vcol + n.len() + 1))),
            None => (v, None),
        };
        let value: f64 = num
            .parse()
            .map_err(|_| ParseError::new(line, vcol, format!("'{num}' is not a number")))?;
        if value.is_nan() {
            return Err(ParseError::new(line, vcol, "NaN is not allowed"));
        }
        if key == "filter_order" && (value.fract() != 0.0 || !(1.0..=32.0).contains(&value)) {
            return Err(ParseError::new(line, vcol, "filter_order must be an integer in 1..=32"));
        }
        let provenance = match flag {
            None => Provenance::Measured,
            Some((f, c)) => Provenance::parse(f).ok_or_else(|| ParseError::new(line, c, format!("unknown flag '{f}'")))?,
        };
        rec.values.insert(key.to_string(), Field { value, provenance });
    }
    Ok(out)
}

fn fmt_value(v: f64) -> String {
    // shortest representation that parses back to the same bits
    if v != 0.0 && v.is_finite() && (v.abs() < 1e-4 || v.abs() >= 1e15) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn emit_records(records: &[ExperimentRecord]) -> String {
    let mut s = String::new();
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        let _ = writeln!(s, "[{}]", r.name);
        if let Some(l) = &r.label {
            let _ = writeln!(s, "label = {l}");
        }
        if let Some(u) = &r.unit {
            let _ = writeln!(s, "unit = {u}");
        }
        for k in NUMERIC_KEYS {
            if let Some(f) = r.values.get(*k) {
                let _ = match f.provenance.emit() {
                    Some(p) => writeln!(s, "{k} = {} !{p}", fmt_value(f.value)),
                    None => writeln!(s, "{k} = {}", fmt_value(f.value)),
                };
            }
        }
    }
    s
}

impl ExperimentRecord {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).map(|f| f.value)
    }

    fn need(&self, key: &str) -> CliResult<f64> {
        self.get(key)
            .ok_or_else(|| CliError::Validation(format!("[{}] missing required key '{key}'", self.name)))
    }

    pub fn display_name(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }

    pub fn zeeman(&self) -> Option<ZeemanParams> {
        Some(ZeemanParams {
            b_field: self.get("b_field")?,
            g_factor: self.get("g_factor")?,
            temperature: self.get("temperature")?,
        })
    }

    pub fn ez_over_kbt(&self) -> CliResult<Option<f64>> {
        self.zeeman().map(|z| zeeman_to_ratio(&z)).transpose().map_err(Into::into)
    }

    pub fn tunnel_model(&self) -> CliResult<TunnelModel> {
        let mut m = TunnelModel::new(
            self.need("t_in0")?,
            self.need("t_out0")?,
            self.need("t_out1")?,
            self.need("t1_relax")?,
        )
        .map_err(|e| self.invalid(e))?;
        m.t_in1 = self.get("t_in1");
        m.ez_over_kbt = self.ez_over_kbt()?;
        m.validate().map_err(|e| self.invalid(e))?;
        Ok(m)
    }

    pub fn detector_model(&self) -> CliResult<DetectorModel> {
        let mut d = DetectorModel::new(
            self.get("mu0").unwrap_or(0.0),
            self.need("mu1")?,
            self.need("noise_psd")?,
            self.need("filter_cutoff")?,
            self.need("sample_rate")?,
        )
        .map_err(|e| self.invalid(e))?;
        if let Some(o) = self.get("filter_order") {
            d.filter_order = o as u32;
        }
        d.sigma_override = match (self.get("sigma0"), self.get("sigma1")) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(CliError::Validation(format!(
                    "[{}] sigma0 and sigma1 must be given together",
                    self.name
                )))
            }
        };
        d.validate().map_err(|e| self.invalid(e))?;
        Ok(d)
    }

    fn invalid(&self, e: spinshot::Error) -> CliError {
        CliError::Validation(format!("[{}] {e}", self.name))
    }

    /// The published (t, x), when both are present.
    pub fn reported_plan(&self) -> CliResult<Option<ReadoutPlan>> {
        match (self.get("t_rep"), self.get("x_rep")) {
            (Some(t), Some(x)) => Ok(Some(ReadoutPlan::new(t, x).map_err(|e| self.invalid(e))?)),
            _ => Ok(None),
        }
    }

    pub fn input_sigmas(&self) -> InputSigmas {
        InputSigmas {
            readout_time: self.get("t_rep_err"),
            threshold: self.get("x_rep_err"),
            t_out1: self.get("t_out1_err"),
            t_out0: self.get("t_out0_err"),
            t_in0: self.get("t_in0_err"),
            t1_relax: self.get("t1_relax_err"),
            delta_mu: self.get("delta_mu_err"),
        }
    }

    /// True when a device parameter carries a footnoted estimate.
    pub fn has_estimated_parameters(&self) -> bool {
        self.values.iter().any(|(k, f)| {
            !REPORTED_KEYS.contains(&k.as_str()) && matches!(&f.provenance, Provenance::Estimated(Some(_)))
        })
    }

    /// Fill missing tunnel times from Fermi statistics, flagging what was derived.
    fn complete(&mut self, warnings: &mut Vec<String>) -> CliResult<()> {
        let Some(ez) = self.ez_over_kbt()? else {
            return Ok(());
        };
        let missing: Vec<&str> = ["t_in0", "t_out0", "t_in1"]
            .into_iter()
            .filter(|k| !self.values.contains_key(*k))
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        let (Some(t_out1), Some(t1)) = (self.get("t_out1"), self.get("t1_relax")) else {
            return Ok(());
        };
        let eps = match (self.get("epsilon_sr"), self.get("t_in0")) {
            (Some(e), _) => e,
            (None, Some(t_in0)) => match infer_detuning(t_out1 / t_in0, ez) {
                Ok(e) => e,
                Err(e) => {
                    warnings.push(format!("[{}] cannot infer the detuning, leaving {missing:?} unset: {e}", self.name));
                    return Ok(());
                }
            },
            (None, None) => {
                warnings.push(format!("[{}] t_in0 and epsilon_sr both missing; cannot derive tunnel times", self.name));
                return Ok(());
            }
        };
        let partial = PartialTunnelModel {
            t_in0: self.get("t_in0"),
            t_out0: self.get("t_out0"),
            t_in1: self.get("t_in1"),
            t_out1: Some(t_out1),
            t1_relax: Some(t1),
        };
        let full = complete_tunnel_times(&partial, ez, eps).map_err(|e| self.invalid(e))?;
        for k in missing {
            let v = match k {
                "t_in0" => full.t_in0,
                "t_out0" => full.t_out0,
                _ => full.t_in1.expect("completed"),
            };
            self.values.insert(
                k.to_string(),
                Field {
                    value: v,
                    provenance: Provenance::DerivedViaFermi(None),
                },
            );
        }
        Ok(())
    }

    fn validate(&self) -> CliResult<()> {
        self.tunnel_model()?;
        self.detector_model()?;
        self.reported_plan()?;
        for (k, f) in &self.values {
            if k.ends_with("_err") && !(f.value >= 0.0 && f.value.is_finite()) {
                return Err(CliError::Validation(format!("[{}] {k} must be finite and >= 0", self.name)));
            }
        }
        if let Some(z) = self.zeeman() {
            zeeman_to_ratio(&z).map_err(|e| self.invalid(e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub records: Vec<ExperimentRecord>,
    pub warnings: Vec<String>,
}

/// Parse, complete derived tunnel times and validate.
pub fn load_experiments(text: &str, source_name: &str) -> CliResult<Loaded> {
    let mut records = parse_records(text).map_err(|err| CliError::Parse {
        source_name: source_name.to_string(),
        err,
    })?;
    let mut warnings = Vec::new();
    if records.is_empty() {
        warnings.push(format!("{source_name}: no experiment records"));
    }
    for r in &mut records {
        r.complete(&mut warnings)?;
        r.validate()?;
    }
    Ok(Loaded { records, warnings })
}

pub fn find<'a>(records: &'a [ExperimentRecord], name: &str) -> CliResult<&'a ExperimentRecord> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| CliError::UnknownExperiment(name.to_string()))
}
