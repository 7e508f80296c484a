//! Initialisation: loading an electron into the emptied dot.
//!
//! States are the empty dot (z), ground spin (0) and excited spin (1). The
//! closed form ignores tunnelling back out; the full model keeps all six
//! rates and is solved with a 3x3 matrix exponential.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::model::TunnelModel;

/// Multiplier from t_i to the conservative initialisation time.
pub const CONSERVATIVE_INIT_FACTOR: f64 = 2.506_628_274_631_000_2; // sqrt(2 pi)

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitState {
    pub psi_z: f64,
    pub psi_0: f64,
    pub psi_1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InitCurves {
    pub times: Vec<f64>,
    pub psi_z: Vec<f64>,
    pub psi_0: Vec<f64>,
    pub psi_1: Vec<f64>,
    pub t_i: Option<f64>,
    pub t_i_conservative: Option<f64>,
    pub f_i_at_t_i: Option<f64>,
    pub f_i_at_conservative: Option<f64>,
}

fn t_in1(tm: &TunnelModel) -> Result<f64> {
    let t = tm
        .t_in1
        .ok_or_else(|| Error::InsufficientData("t_in1 is required for initialisation".into()))?;
    if !(t > 0.0) {
        return Err(domain(format!("t_in1 must be > 0, got {t}")));
    }
    Ok(t)
}

/// Combined loading time T_IN = 1/(1/t_in0 + 1/t_in1), and T_IN^2 = T1 (t_in1 + t_in0) - t_in0 t_in1.
fn load_times(tm: &TunnelModel) -> Result<(f64, f64)> {
    let (a, b) = (tm.t_in0, t_in1(tm)?);
    let t_load = a * b / (a + b);
    let t2 = if tm.t1_relax.is_finite() {
        tm.t1_relax * (a + b) - a * b
    } else {
        f64::INFINITY
    };
    if !(t2 > 0.0) {
        return Err(Error::Degenerate(format!("T_IN^2 = {t2:e} must be positive")));
    }
    Ok((t_load, t2))
}

/// Closed-form populations at `t` with no tunnelling out.
pub fn init_state(tm: &TunnelModel, t: f64) -> Result<InitState> {
    if !(t >= 0.0) {
        return Err(domain(format!("time must be >= 0, got {t}")));
    }
    let (t_load, _) = load_times(tm)?;
    let t1in = t_in1(tm)?;
    let psi_z = (-t / t_load).exp();
    let g = tm.relax_rate();
    let k = 1.0 / t_load;
    // psi_1' = psi_z / t_in1 - g psi_1
    let psi_1 = if ((k - g) * t).abs() < 1e-8 {
        t * (-k * t).exp() / t1in
    } else {
        ((-g * t).exp() - (-k * t).exp()) / ((k - g) * t1in)
    };
    let psi_1 = psi_1.max(0.0);
    Ok(InitState {
        psi_z,
        psi_0: (1.0 - psi_z - psi_1).max(0.0),
        psi_1,
    })
}

/// Time of the excited-state maximum and the conservative multiple of it.
pub fn t_init(tm: &TunnelModel) -> Result<(f64, f64)> {
    let (t_load, t2) = load_times(tm)?;
    if !tm.t1_relax.is_finite() {
        return Err(Error::Degenerate("no relaxation: excited population never peaks".into()));
    }
    let t1 = tm.t1_relax;
    let t1in = t_in1(tm)?;
    let t_i = t1in * tm.t_in0 * t1 / t2 * (t1 / t_load).ln();
    if !(t_i > 0.0) {
        return Err(Error::Degenerate(format!("T1 ({t1}) must exceed the loading time ({t_load})")));
    }
    Ok((t_i, CONSERVATIVE_INIT_FACTOR * t_i))
}

fn grid(t_max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(t_max > 0.0) || !t_max.is_finite() {
        return Err(domain("need finite t_max > 0 and at least 2 points"));
    }
    Ok((0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect())
}

fn assemble(times: Vec<f64>, states: Vec<InitState>, at: impl Fn(f64) -> Result<f64>, tm: &TunnelModel) -> Result<InitCurves> {
    let ti = t_init(tm).ok();
    let f_i_at_t_i = ti.map(|(t, _)| at(t)).transpose()?;
    let f_i_at_conservative = ti.map(|(_, t)| at(t)).transpose()?;
    Ok(InitCurves {
        times,
        psi_z: states.iter().map(|s| s.psi_z).collect(),
        psi_0: states.iter().map(|s| s.psi_0).collect(),
        psi_1: states.iter().map(|s| s.psi_1).collect(),
        t_i: ti.map(|v| v.0),
        t_i_conservative: ti.map(|v| v.1),
        f_i_at_t_i,
        f_i_at_conservative,
    })
}

/// Closed-form curves on `points` times in [0, t_max]. F_I(t) is psi_0(t).
pub fn init_curves(tm: &TunnelModel, t_max: f64, points: usize) -> Result<InitCurves> {
    let times = grid(t_max, points)?;
    let states = times.iter().map(|&t| init_state(tm, t)).collect::<Result<Vec<_>>>()?;
    assemble(times, states, |t| Ok(init_state(tm, t)?.psi_0), tm)
}

/// Generator of the full model, d/dt (z, 0, 1) = Q (z, 0, 1).
pub fn rate_matrix(tm: &TunnelModel) -> Result<Matrix3<f64>> {
    let r_in0 = 1.0 / tm.t_in0;
    let r_in1 = 1.0 / t_in1(tm)?;
    let r_out0 = 1.0 / tm.t_out0;
    let r_out1 = 1.0 / tm.t_out1;
    let g = tm.relax_rate();
    #[rustfmt::skip]
    let q = Matrix3::new(
        -(r_in0 + r_in1), r_out0, r_out1,
        r_in0, -r_out0, g,
        r_in1, 0.0, -(r_out1 + g),
    );
    Ok(q)
}

/// Full-model populations from the empty dot at `t`.
pub fn init_state_full(tm: &TunnelModel, t: f64) -> Result<InitState> {
    if !(t >= 0.0) {
        return Err(domain(format!("time must be >= 0, got {t}")));
    }
    let q = rate_matrix(tm)?;
    let p = (q * t).exp() * Vector3::new(1.0, 0.0, 0.0);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("matrix exponential overflowed".into()));
    }
    let s = p.sum();
    if (s - 1.0).abs() > 1e-8 {
        return Err(Error::Solver(format!("probability drifted to {s}")));
    }
    Ok(InitState {
        psi_z: p[0].max(0.0),
        psi_0: p[1].max(0.0),
        psi_1: p[2].max(0.0),
    })
}

pub fn init_curves_full(tm: &TunnelModel, t_max: f64, points: usize) -> Result<InitCurves> {
    let times = grid(t_max, points)?;
    let states = times.iter().map(|&t| init_state_full(tm, t)).collect::<Result<Vec<_>>>()?;
    assemble(times, states, |t| Ok(init_state_full(tm, t)?.psi_0), tm)
}
