//! End-to-end fidelity: evaluation at a plan, joint (t, x) optimisation,
//! sample-rate/cut-off sweeps and the tunnel-rate design curve.

use rayon::prelude::*;
use serde::Serialize;

use crate::electrical::Electrical;
use crate::error::{domain, Error, Result};
use crate::model::{DetectorModel, FidelityReport, ReadoutPlan, TunnelModel};
use crate::quad::golden_max;
use crate::stc;

/// Which window length the electrical CDFs are computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ElectricalWindow {
    /// The plan's readout time.
    ReadoutTime,
    /// The STC optimum, independent of the plan. This is what the
    /// comparison tables use; falls back to the readout time when no
    /// interior optimum exists.
    StcOptimum,
}

fn window_for(tm: &TunnelModel, plan: &ReadoutPlan, mode: ElectricalWindow) -> f64 {
    match mode {
        ElectricalWindow::ReadoutTime => plan.readout_time,
        ElectricalWindow::StcOptimum => stc::t_opt(tm).unwrap_or(plan.readout_time),
    }
}

/// Report at `plan` with the electrical window at the STC optimum.
pub fn evaluate(tm: &TunnelModel, det: &DetectorModel, plan: &ReadoutPlan) -> Result<FidelityReport> {
    evaluate_with(tm, det, plan, ElectricalWindow::StcOptimum)
}

pub fn evaluate_with(
    tm: &TunnelModel,
    det: &DetectorModel,
    plan: &ReadoutPlan,
    mode: ElectricalWindow,
) -> Result<FidelityReport> {
    plan.validate_for(det)?;
    let e = Electrical::new(det, tm, window_for(tm, plan, mode))?;
    report_at(tm, &e, plan.readout_time, plan.threshold)
}

fn report_at(tm: &TunnelModel, e: &Electrical, t: f64, x: f64) -> Result<FidelityReport> {
    let stc = (stc::f_stc0(t, tm)?, stc::f_stc1(t, tm)?);
    let el = (e.f_e0(x), e.f_e1(x));
    let t_opt = stc::t_opt(tm).unwrap_or(f64::NAN);
    let x_opt = e.x_opt().map(|v| v.0).unwrap_or(f64::NAN);
    FidelityReport::from_components(stc, el, e.p_miss, t_opt, x_opt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Optimum {
    /// Closed-form STC optimum.
    pub t_stc: f64,
    /// Readout time after the bracketed refinement (equal to `t_stc` without it).
    pub t_opt: f64,
    pub x_opt: f64,
    pub report: FidelityReport,
}

/// Bracket searched around the STC optimum when refining t.
pub const REFINE_BRACKET: f64 = 0.2;

/// Threshold-optimised report at readout time `t` with the window equal to `t`.
pub fn best_at(tm: &TunnelModel, det: &DetectorModel, t: f64) -> Result<FidelityReport> {
    let e = Electrical::new(det, tm, t)?;
    let (x, _) = e.x_opt()?;
    let mut r = report_at(tm, &e, t, x)?;
    r.x_opt = x;
    Ok(r)
}

/// t from the STC optimum, x maximising V_E there. With `refine`, t is
/// then re-searched within +-20% with x re-optimised at every step, since
/// the window length feeds back into V_E through the sample count.
pub fn optimize(tm: &TunnelModel, det: &DetectorModel, refine: bool) -> Result<Optimum> {
    let t_stc = stc::t_opt(tm)?;
    let base = best_at(tm, det, t_stc)?;
    let mut out = Optimum {
        t_stc,
        t_opt: t_stc,
        x_opt: base.x_opt,
        report: FidelityReport { t_opt: t_stc, ..base },
    };
    if refine {
        let score = |t: f64| best_at(tm, det, t).map(|r| r.f_m).unwrap_or(f64::MIN);
        let (lo, hi) = ((1.0 - REFINE_BRACKET) * t_stc, (1.0 + REFINE_BRACKET) * t_stc);
        let (t, fm) = golden_max(score, lo, hi, 1e-4 * t_stc);
        if fm > out.report.f_m {
            let r = best_at(tm, det, t)?;
            out.t_opt = t;
            out.x_opt = r.x_opt;
            out.report = FidelityReport { t_opt: t, ..r };
        }
    }
    Ok(out)
}

/// Standard deviations of uncertain inputs; `None` entries are treated as exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct InputSigmas {
    pub readout_time: Option<f64>,
    pub threshold: Option<f64>,
    pub t_out1: Option<f64>,
    pub t_out0: Option<f64>,
    pub t_in0: Option<f64>,
    pub t1_relax: Option<f64>,
    pub delta_mu: Option<f64>,
}

/// Linear propagation of input uncertainties to F_M by central differences
/// of one sigma each side, summed in quadrature.
pub fn fm_uncertainty(
    tm: &TunnelModel,
    det: &DetectorModel,
    plan: &ReadoutPlan,
    sig: &InputSigmas,
    mode: ElectricalWindow,
) -> Result<f64> {
    let f = |tm: &TunnelModel, det: &DetectorModel, plan: &ReadoutPlan| -> Result<f64> {
        Ok(evaluate_with(tm, det, plan, mode)?.f_m)
    };
    let mut var = 0.0;
    let mut add = |plus: Result<f64>, minus: Result<f64>| -> Result<()> {
        let d = 0.5 * (plus? - minus?);
        var += d * d;
        Ok(())
    };
    if let Some(s) = sig.readout_time {
        let p = ReadoutPlan { readout_time: plan.readout_time + s, ..*plan };
        let m = ReadoutPlan { readout_time: (plan.readout_time - s).max(0.5 * plan.readout_time), ..*plan };
        add(f(tm, det, &p), f(tm, det, &m))?;
    }
    if let Some(s) = sig.threshold {
        let p = ReadoutPlan { threshold: plan.threshold + s, ..*plan };
        let m = ReadoutPlan { threshold: plan.threshold - s, ..*plan };
        add(f(tm, det, &p), f(tm, det, &m))?;
    }
    let tweak = |set: &dyn Fn(&mut TunnelModel, f64), s: f64| -> (Result<f64>, Result<f64>) {
        let (mut p, mut m) = (*tm, *tm);
        set(&mut p, s);
        set(&mut m, -s);
        (f(&p, det, plan), f(&m, det, plan))
    };
    if let Some(s) = sig.t_out1 {
        let (p, m) = tweak(&|t, d| t.t_out1 += d, s);
        add(p, m)?;
    }
    if let Some(s) = sig.t_out0 {
        let (p, m) = tweak(&|t, d| t.t_out0 += d, s);
        add(p, m)?;
    }
    if let Some(s) = sig.t_in0 {
        let (p, m) = tweak(&|t, d| t.t_in0 += d, s);
        add(p, m)?;
    }
    if let Some(s) = sig.t1_relax {
        if tm.t1_relax.is_finite() {
            let (p, m) = tweak(&|t, d| t.t1_relax += d, s);
            add(p, m)?;
        }
    }
    if let Some(s) = sig.delta_mu {
        let (mut p, mut m) = (*det, *det);
        p.mu1 += s;
        m.mu1 -= s;
        add(f(tm, &p, plan), f(tm, &m, plan))?;
    }
    Ok(var.sqrt())
}

/// Optimised F_M over a Gamma_s x f_c grid, row-major by sample rate.
#[derive(Debug, Clone, Serialize)]
pub struct SweepGrid {
    pub gamma_s: Vec<f64>,
    pub f_c: Vec<f64>,
    /// `f_m[i * f_c.len() + j]` for (gamma_s[i], f_c[j]); `None` where the cell failed.
    pub f_m: Vec<Option<f64>>,
    pub argmax: Option<(usize, usize)>,
    /// Cells with Gamma_s below 2 f_c, under the usual Nyquist rule.
    pub below_nyquist: Vec<bool>,
}

impl SweepGrid {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.f_m[i * self.f_c.len() + j]
    }

    pub fn max(&self) -> Option<f64> {
        self.argmax.and_then(|(i, j)| self.get(i, j))
    }
}

/// `n` evenly spaced values from `lo` to `hi`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// F_M at the STC optimum and best threshold for one (Gamma_s, f_c) pair.
pub fn cell_fidelity(tm: &TunnelModel, det: &DetectorModel, gamma_s: f64, f_c: f64) -> Result<f64> {
    let d = det.with_rates(gamma_s, f_c);
    Ok(optimize(tm, &d, false)?.report.f_m)
}

pub fn phase_diagram(tm: &TunnelModel, det: &DetectorModel, gamma_s: &[f64], f_c: &[f64]) -> Result<SweepGrid> {
    if gamma_s.len() < 8 || f_c.len() < 8 {
        return Err(domain("phase diagram needs at least 8 x 8 cells"));
    }
    if gamma_s.iter().chain(f_c).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(domain("sample rates and cut-offs must be positive"));
    }
    let cells: Vec<(f64, f64)> = gamma_s.iter().flat_map(|&g| f_c.iter().map(move |&f| (g, f))).collect();
    let f_m: Vec<Option<f64>> = cells
        .par_iter()
        .map(|&(g, f)| cell_fidelity(tm, det, g, f).ok())
        .collect();
    let mut argmax: Option<(usize, usize)> = None;
    let mut best = f64::MIN;
    for (k, v) in f_m.iter().enumerate() {
        if let Some(v) = v {
            if *v > best {
                best = *v;
                argmax = Some((k / f_c.len(), k % f_c.len()));
            }
        }
    }
    let below_nyquist = cells.iter().map(|&(g, f)| g < 2.0 * f).collect();
    Ok(SweepGrid {
        gamma_s: gamma_s.to_vec(),
        f_c: f_c.to_vec(),
        f_m,
        argmax,
        below_nyquist,
    })
}

/// Fastest tunnelling compatible with a fidelity target, against D'.
#[derive(Debug, Clone, Serialize)]
pub struct DesignCurve {
    pub ez_over_kbt: f64,
    pub target_fm: f64,
    pub d_prime: Vec<f64>,
    /// Minimum t_out1 * f_c reaching the target; `None` where unreachable.
    pub min_t_out1_fc: Vec<Option<f64>>,
    /// 1/(D'^2 * min_t_out1_fc), scaled to peak at 1.
    pub normalized_rate: Vec<Option<f64>>,
    /// D' beyond which the boundary changes by less than 5% over the rest of the range.
    pub plateau_from: Option<f64>,
}

/// Relative tolerance of the design-curve bisection.
pub const DESIGN_REL_TOL: f64 = 5e-3;
const DESIGN_TAU_MAX: f64 = 1e5;
const DESIGN_TAU_MIN: f64 = 1e-2;

/// The design-curve setting at tau = t_out1 * f_c with f_c = 1 and unit level spacing:
/// t_in0 = t_out1, t_out0 = e^{E/2} t_out1, no relaxation, Gamma_s = 2 f_c.
pub fn design_models(ez_over_kbt: f64, d_prime: f64, tau: f64) -> Result<(TunnelModel, DetectorModel)> {
    let tm = TunnelModel::new(tau, (0.5 * ez_over_kbt).exp() * tau, tau, f64::INFINITY)?;
    // sigma = A_n sqrt(2 f_c) = 1/D'
    let det = DetectorModel::new(0.0, 1.0, 1.0 / (d_prime * 2f64.sqrt()), 1.0, 2.0)?;
    Ok((tm, det))
}

fn design_fm(ez: f64, d_prime: f64, tau: f64) -> f64 {
    design_models(ez, d_prime, tau)
        .and_then(|(tm, det)| optimize(&tm, &det, false))
        .map(|o| o.report.f_m)
        .unwrap_or(0.0)
}

/// Smallest tau with F_M >= target, by bisection in log tau.
pub fn min_tau(ez_over_kbt: f64, d_prime: f64, target_fm: f64) -> Result<f64> {
    let ok = |tau: f64| design_fm(ez_over_kbt, d_prime, tau) >= target_fm;
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 4.0;
        if hi > DESIGN_TAU_MAX {
            return Err(Error::Infeasible(format!(
                "F_M {target_fm} unreachable at D'={d_prime}, E_Z/k_BT={ez_over_kbt}"
            )));
        }
    }
    let mut lo = hi / 4.0;
    while ok(lo) {
        hi = lo;
        lo /= 4.0;
        if lo < DESIGN_TAU_MIN {
            return Ok(hi);
        }
    }
    while hi / lo - 1.0 > DESIGN_REL_TOL {
        let mid = (lo * hi).sqrt();
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn design_curve(ez_over_kbt: f64, target_fm: f64, d_prime: &[f64]) -> Result<DesignCurve> {
    if !(target_fm > 0.5 && target_fm < 1.0) {
        return Err(domain(format!("target F_M must lie in (0.5, 1), got {target_fm}")));
    }
    if d_prime.iter().any(|d| !(*d > 0.0)) {
        return Err(domain("D' values must be positive"));
    }
    let b: Vec<Option<f64>> = d_prime
        .par_iter()
        .map(|&d| min_tau(ez_over_kbt, d, target_fm).ok())
        .collect();
    let raw: Vec<Option<f64>> = d_prime.iter().zip(&b).map(|(d, b)| b.map(|b| 1.0 / (d * d * b))).collect();
    let peak = raw.iter().flatten().copied().fold(0.0, f64::max);
    let normalized_rate = raw.iter().map(|r| r.map(|r| r / peak)).collect();
    let plateau_from = (0..d_prime.len()).find_map(|i| {
        let bi = b[i]?;
        let rest = &b[i..];
        (rest.len() >= 2 && rest.iter().all(|v| v.is_some_and(|v| (v / bi - 1.0).abs() < 0.05))).then_some(d_prime[i])
    });
    Ok(DesignCurve {
        ez_over_kbt,
        target_fm,
        d_prime: d_prime.to_vec(),
        min_t_out1_fc: b,
        normalized_rate,
        plateau_from,
    })
}
