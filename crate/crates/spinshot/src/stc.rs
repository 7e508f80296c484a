//! State-to-charge conversion from the three-state rate equations.
//!
//! States: excited spin in the dot (psi1), ground spin in the dot (psi0), and
//! dot empty (N_off). psi1 leaves at 1/t_out1 + 1/T1; relaxation feeds psi0,
//! which leaves at 1/t_out0.

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::model::{PartialTunnelModel, TunnelModel};

/// t_out0 / t_out1 below this means the readout window is too short to separate the states.
pub const READOUT_LIMIT_RATIO: f64 = 800.0;
/// T1 / t_out1 below this means relaxation competes with tunnelling out.
pub const T1_LIMIT_RATIO: f64 = 100.0;

fn check_t(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(domain(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

/// (e^{-a t} - e^{-b t}) / (b - a), stable when a ~ b.
fn exp_diff(a: f64, b: f64, t: f64) -> f64 {
    let d = b - a;
    if (d * t).abs() < 1e-6 {
        // t e^{-at} (1 - d t/2 + d^2 t^2/6)
        let x = d * t;
        t * (-a * t).exp() * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        ((-a * t).exp() - (-b * t).exp()) / d
    }
}

/// Rate-equation populations at time `t` from initial (psi0(0), psi1(0)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Populations {
    pub psi0: f64,
    pub psi1: f64,
    pub n_off: f64,
}

pub fn populations(t: f64, m: &TunnelModel, psi0_init: f64, psi1_init: f64) -> Result<Populations> {
    check_t(t)?;
    let g = m.relax_rate();
    let a = 1.0 / m.t_out0;
    let k = 1.0 / m.t_out1 + g;
    let psi1 = psi1_init * (-k * t).exp();
    let psi0 = psi0_init * (-a * t).exp() + psi1_init * g * exp_diff(a, k, t);
    Ok(Populations {
        psi0,
        psi1,
        n_off: 1.0 - psi0 - psi1,
    })
}

/// Probability that |0> produces no blip within `t`.
pub fn f_stc0(t: f64, m: &TunnelModel) -> Result<f64> {
    check_t(t)?;
    Ok((-t / m.t_out0).exp())
}

/// Probability that |1> produces a blip within `t`, directly or after relaxing.
pub fn f_stc1(t: f64, m: &TunnelModel) -> Result<f64> {
    let p = populations(t, m, 0.0, 1.0)?;
    Ok(p.n_off.clamp(0.0, 1.0))
}

pub fn v_stc(t: f64, m: &TunnelModel) -> Result<f64> {
    Ok(f_stc0(t, m)? + f_stc1(t, m)? - 1.0)
}

/// Readout time maximising `v_stc`.
pub fn t_opt(m: &TunnelModel) -> Result<f64> {
    if !(m.t_out0 > m.t_out1) {
        return Err(Error::Degenerate(format!(
            "t_out0 ({}) must exceed t_out1 ({}) for an interior optimum",
            m.t_out0, m.t_out1
        )));
    }
    if !m.t_out0.is_finite() {
        return Err(Error::Degenerate("t_out0 infinite: visibility grows without bound in t".into()));
    }
    let k = 1.0 / m.t_out1 + m.relax_rate();
    let a = 1.0 / m.t_out0;
    Ok((k / a).ln() / (k - a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StcRegime {
    Optimal,
    ReadoutTimeLimited,
    T1Limited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StcFlags {
    pub readout_time_limited: bool,
    pub t1_limited: bool,
}

impl StcFlags {
    /// Dominant label; readout-time limitation wins when both trip.
    pub fn regime(&self) -> StcRegime {
        if self.readout_time_limited {
            StcRegime::ReadoutTimeLimited
        } else if self.t1_limited {
            StcRegime::T1Limited
        } else {
            StcRegime::Optimal
        }
    }
}

pub fn classify_stc_regime(m: &TunnelModel) -> StcFlags {
    StcFlags {
        readout_time_limited: m.t_out0 / m.t_out1 < READOUT_LIMIT_RATIO,
        t1_limited: m.t1_relax < T1_LIMIT_RATIO * m.t_out1,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StcCurves {
    pub times: Vec<f64>,
    pub f_stc0: Vec<f64>,
    pub f_stc1: Vec<f64>,
    pub v_stc: Vec<f64>,
    pub t_opt: f64,
    pub regime: StcRegime,
}

pub fn stc_curves(m: &TunnelModel, t_max: f64, points: usize) -> Result<StcCurves> {
    if points < 2 || !(t_max > 0.0) {
        return Err(domain("need t_max > 0 and at least 2 points"));
    }
    let times: Vec<f64> = (0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect();
    let mut f0 = Vec::with_capacity(points);
    let mut f1 = Vec::with_capacity(points);
    let mut v = Vec::with_capacity(points);
    for &t in &times {
        let a = f_stc0(t, m)?;
        let b = f_stc1(t, m)?;
        f0.push(a);
        f1.push(b);
        v.push(a + b - 1.0);
    }
    Ok(StcCurves {
        times,
        f_stc0: f0,
        f_stc1: f1,
        v_stc: v,
        t_opt: t_opt(m)?,
        regime: classify_stc_regime(m).regime(),
    })
}

/// Fermi-Dirac factor in the sign convention used for the rate ratios.
fn fermi(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// t_out1 / t_in0 at detuning `eps` (units of k_B T).
pub fn ratio_rt(eps: f64, ez_over_kbt: f64) -> f64 {
    let h = 0.5 * ez_over_kbt;
    // (1 + e^{h - eps}) / (1 + e^{h + eps}), evaluated without overflow
    let ln_num = ln1p_exp(h - eps);
    let ln_den = ln1p_exp(h + eps);
    (ln_num - ln_den).exp()
}

fn ln1p_exp(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Detuning of the readout level from the reservoir, in units of k_B T.
pub fn infer_detuning(r_t: f64, ez_over_kbt: f64) -> Result<f64> {
    if !(r_t > 0.0) || !r_t.is_finite() {
        return Err(domain(format!("r_t must be > 0, got {r_t}")));
    }
    if !(ez_over_kbt >= 0.0) {
        return Err(domain(format!("ez_over_kbt must be >= 0, got {ez_over_kbt}")));
    }
    let e = ez_over_kbt;
    let one_m = 1.0 - r_t;
    // (1-R) + sqrt((1-R)^2 + 4R e^E); rationalised when 1-R < 0 to avoid cancellation.
    // Work with e^{-E/2} factored in so large E stays finite.
    let eps = if e < 600.0 {
        let q = 4.0 * r_t * e.exp();
        let root = (one_m * one_m + q).sqrt();
        let s = if one_m >= 0.0 { one_m + root } else { q / (root - one_m) };
        (s / (2.0 * r_t)).ln() - 0.5 * e
    } else {
        f64::NAN
    };
    if eps.is_finite() {
        return Ok(eps);
    }
    bisect_detuning(r_t, e)
}

fn bisect_detuning(r_t: f64, e: f64) -> Result<f64> {
    // ratio_rt is strictly decreasing in eps.
    let (mut lo, mut hi) = (-e - 800.0, e + 800.0);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if ratio_rt(mid, e) > r_t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = 0.5 * (lo + hi);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Solver("detuning bisection failed".into()))
    }
}

/// Fill missing tunnel times from Fermi statistics at detuning `epsilon_sr`.
///
/// Needs t_out1 and T1. When t_in0 is measured the detuning should come from
/// `infer_detuning`; when it is missing it is derived from `epsilon_sr`.
pub fn complete_tunnel_times(partial: &PartialTunnelModel, ez_over_kbt: f64, epsilon_sr: f64) -> Result<TunnelModel> {
    let t_out1 = partial
        .t_out1
        .ok_or_else(|| Error::InsufficientData("t_out1 is required".into()))?;
    let t1_relax = partial
        .t1_relax
        .ok_or_else(|| Error::InsufficientData("t1_relax is required".into()))?;
    if !(ez_over_kbt >= 0.0) {
        return Err(domain(format!("ez_over_kbt must be >= 0, got {ez_over_kbt}")));
    }
    let e = ez_over_kbt;
    let eps = epsilon_sr;
    let t_out0 = partial.t_out0.unwrap_or_else(|| {
        (1.0 - fermi(eps - 0.5 * e)) / (1.0 - fermi(eps + 0.5 * e)) * t_out1
    });
    let t_in0 = partial.t_in0.unwrap_or_else(|| t_out1 / ratio_rt(eps, e));
    let t_in1 = partial.t_in1.or(Some(t_out1 * (eps + 0.5 * e).exp()));
    let m = TunnelModel {
        t_in0,
        t_out0,
        t_in1,
        t_out1,
        t1_relax,
        ez_over_kbt: Some(e),
    };
    m.validate()?;
    Ok(m)
}
