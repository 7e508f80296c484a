//! Six-significant-digit output for CSV and JSON.

use serde_json::Value;

pub const SIG_DIGITS: usize = 6;

/// `x` with six significant digits, trailing zeros kept; `NA` if not finite.
pub fn sig(x: f64) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    // round first so the exponent reflects carries like 9.999995 -> 10.0000
    let r: f64 = format!("{:.*e}", SIG_DIGITS - 1, x).parse().expect("formatted float");
    let e = r.abs().log10().floor() as i32;
    if (-4..SIG_DIGITS as i32).contains(&e) {
        let decimals = (SIG_DIGITS as i32 - 1 - e).max(0) as usize;
        format!("{r:.decimals$}")
    } else {
        format!("{:.*e}", SIG_DIGITS - 1, r)
    }
}

pub fn sig_opt(x: Option<f64>) -> String {
    x.map(sig).unwrap_or_else(|| "NA".into())
}

/// Round to six significant digits as a number.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().expect("formatted float")
}

/// Round every non-integer number in a JSON tree.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}
