//! Electrical detection under white Gaussian noise.
//!
//! The detector records the maximum of `n_r` samples. Without a blip the
//! maximum follows P0(x)^n_r. With a blip, the wait before it (mean
//! t_out1) and its length (mean t_in0) are integrated over, and each blip
//! length n mixes the raised level into the trace in proportion n/n_r.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{domain, Error, Result};
use crate::filter::{correlation_factor, FilterModel};
use crate::model::{DetectorModel, TunnelModel};
use crate::quad;

const REL_TOL: f64 = 1e-6;
const ABS_TOL: f64 = 1e-9;
const GRID_POINTS: usize = 2001;

/// expm1(x)/x, equal to 1 at x = 0.
fn phi(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 + 0.5 * x + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

/// Miss probability from the scaled ratios R1 = t_s/t_out1, R0 = t_s/t_in0.
///
/// Equivalent to the chance that a blip starting in a half-sample slot
/// (start truncated-exponential with R1) also ends inside it.
pub fn p_miss_from_ratios(r1: f64, r0: f64) -> Result<f64> {
    if !(r1 > 0.0 && r0 > 0.0) || !r1.is_finite() || !r0.is_finite() {
        return Err(domain(format!("R values must be positive, got R1={r1} R0={r0}")));
    }
    Ok((1.0 - phi(0.5 * (r1 - r0)) / phi(0.5 * r1)).clamp(0.0, 1.0))
}

pub fn p_miss(t_s: f64, t_out1: f64, t_in0: f64) -> Result<f64> {
    if !(t_s > 0.0 && t_out1 > 0.0 && t_in0 > 0.0) {
        return Err(domain("p_miss needs positive times"));
    }
    p_miss_from_ratios(t_s / t_out1, t_s / t_in0)
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn pow_cdf(p: f64, n: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        (n * p.ln()).exp()
    }
}

/// Everything the CDFs need, derived once from the models.
#[derive(Debug, Clone)]
pub struct Electrical {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    /// Correlation-corrected sample count in the window.
    pub n_r: f64,
    /// Mean wait before the blip, in samples.
    pub n_wait: f64,
    /// Mean blip length, in samples.
    pub n_blip: f64,
    /// Correlation-corrected f_c / Gamma_s used by the attenuation rule.
    pub m_c: f64,
    pub kappa: f64,
    pub p_miss: f64,
    filter: FilterModel,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    weight: f64,
    frac: f64,
    mu1: f64,
}

impl Electrical {
    /// Set up for a detection window of `window` seconds.
    pub fn new(det: &DetectorModel, tm: &TunnelModel, window: f64) -> Result<Self> {
        det.validate()?;
        tm.validate()?;
        if !(window > 0.0) {
            return Err(domain(format!("window must be > 0, got {window}")));
        }
        let ts = det.sample_time();
        let f_s = 2.0 * det.filter_cutoff / det.sample_rate;
        let kappa = correlation_factor(f_s);
        let n_r = kappa * window / ts;
        if !(n_r > 2.0) {
            return Err(domain(format!("effective sample count {n_r:.3} must exceed 2")));
        }
        let (sigma0, sigma1) = det.sigmas();
        let filter = FilterModel::new(det.filter_order, det.filter_cutoff)?;
        let p_miss = p_miss_from_ratios(kappa * ts / tm.t_out1, kappa * ts / tm.t_in0)?;
        let mut e = Electrical {
            mu0: det.mu0,
            mu1: det.mu1,
            sigma0,
            sigma1,
            n_r,
            n_wait: tm.t_out1 / ts,
            n_blip: tm.t_in0 / ts,
            m_c: kappa * det.filter_cutoff / det.sample_rate,
            kappa,
            p_miss,
            filter,
            nodes: Vec::new(),
        };
        e.nodes = e.build_nodes();
        Ok(e)
    }

    fn upper(&self) -> f64 {
        self.n_r - 1.0
    }

    /// Raised level reached by a blip of `n` samples.
    pub fn blip_level(&self, n: f64) -> f64 {
        self.mu0 + self.filter.blip_attenuation(n, self.m_c) * (self.mu1 - self.mu0)
    }

    fn wait_norm(&self) -> f64 {
        -((2.0 - self.n_r) / self.n_wait).exp_m1()
    }

    /// Density of the wait, s in [1, n_r - 1].
    fn wait_density(&self, s: f64) -> f64 {
        ((1.0 - s) / self.n_wait).exp() / (self.n_wait * self.wait_norm())
    }

    /// Integral of the wait density from 1 to u.
    fn wait_cdf(&self, u: f64) -> f64 {
        (-((1.0 - u) / self.n_wait).exp_m1() / self.wait_norm()).clamp(0.0, 1.0)
    }

    /// Weight of blip length n after folding in the wait: blips shorter than
    /// the remaining window plus those truncated by the window end.
    fn weight(&self, n: f64) -> f64 {
        let tail = ((1.0 - n) / self.n_blip).exp();
        tail / self.n_blip * self.wait_cdf(self.n_r - n) + tail * self.wait_density(self.n_r - n)
    }

    fn breaks(&self) -> Vec<f64> {
        let (lo, hi) = (1.0, self.upper());
        let mut b = vec![lo, hi];
        let mut k = 0.125;
        while k < 64.0 {
            b.push(lo + k * self.n_blip);
            b.push(hi - k * self.n_wait);
            if self.m_c > 0.0 {
                b.push(k / self.m_c);
            }
            k *= 2.0;
        }
        let uniform = 16;
        for i in 1..uniform {
            b.push(lo + (hi - lo) * i as f64 / uniform as f64);
        }
        b.retain(|v| *v >= lo && *v <= hi && v.is_finite());
        b.sort_by(f64::total_cmp);
        b.dedup_by(|a, c| (*a - *c).abs() <= 1e-12 * hi);
        b
    }

    fn build_nodes(&self) -> Vec<Node> {
        quad::composite_nodes(&self.breaks(), 12)
            .into_iter()
            .map(|(n, w)| Node {
                weight: w * self.weight(n),
                frac: n / self.n_r,
                mu1: self.blip_level(n),
            })
            .collect()
    }

    fn p0(&self, x: f64) -> f64 {
        norm_cdf((x - self.mu0) / self.sigma0)
    }

    /// CDF of the trace maximum with no blip.
    pub fn c0(&self, x: f64) -> f64 {
        pow_cdf(self.p0(x), self.n_r)
    }

    fn s_n(&self, x: f64, p0: f64, frac: f64, mu1: f64) -> f64 {
        let p1 = norm_cdf((x - mu1) / self.sigma1);
        pow_cdf(frac * p1 + (1.0 - frac) * p0, self.n_r)
    }

    /// CDF of the trace maximum given a blip, on the fixed composite rule.
    pub fn c1(&self, x: f64) -> f64 {
        let p0 = self.p0(x);
        let v: f64 = self
            .nodes
            .iter()
            .map(|nd| nd.weight * self.s_n(x, p0, nd.frac, nd.mu1))
            .sum();
        v.clamp(0.0, 1.0)
    }

    /// `c1` by adaptive quadrature to the module tolerances.
    pub fn c1_adaptive(&self, x: f64) -> Result<f64> {
        let p0 = self.p0(x);
        let v = quad::integrate(
            |n| self.weight(n) * self.s_n(x, p0, n / self.n_r, self.blip_level(n)),
            &self.breaks(),
            REL_TOL,
            ABS_TOL,
        )?;
        Ok(v.clamp(0.0, 1.0))
    }

    /// The same integral as nested quadratures over wait and blip length.
    pub fn c1_nested(&self, x: f64, order: usize) -> f64 {
        let p0 = self.p0(x);
        let outer_breaks = self.breaks();
        let mut total = 0.0;
        for (s, ws) in quad::composite_nodes(&outer_breaks, order) {
            let l = self.n_r - s;
            let mut inner_breaks: Vec<f64> = outer_breaks.iter().copied().filter(|v| *v < l).collect();
            inner_breaks.push(l);
            let inner: f64 = quad::composite_nodes(&inner_breaks, order)
                .into_iter()
                .map(|(n, wn)| {
                    wn * ((1.0 - n) / self.n_blip).exp() / self.n_blip * self.s_n(x, p0, n / self.n_r, self.blip_level(n))
                })
                .sum();
            let truncated = ((1.0 - l) / self.n_blip).exp() * self.s_n(x, p0, l / self.n_r, self.blip_level(l));
            total += ws * self.wait_density(s) * (inner + truncated);
        }
        total
    }

    pub fn f_e0(&self, x: f64) -> f64 {
        self.c0(x)
    }

    pub fn f_e1(&self, x: f64) -> f64 {
        (1.0 - self.p_miss) * (1.0 - self.c1(x)) + self.p_miss * (1.0 - self.c0(x))
    }

    pub fn v_e(&self, x: f64) -> f64 {
        (1.0 - self.p_miss) * (self.c0(x) - self.c1(x))
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.mu0 - 6.0 * self.sigma0, self.mu1 + 6.0 * self.sigma1)
    }

    /// Threshold maximising `v_e`: grid scan then golden-section refinement.
    pub fn x_opt(&self) -> Result<(f64, f64)> {
        let (lo, hi) = self.x_range();
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let mut best = (lo, f64::MIN);
        for i in 0..GRID_POINTS {
            let x = lo + step * i as f64;
            let v = self.v_e(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        if best.1 < 1e-3 {
            return Err(Error::Infeasible(format!(
                "flat visibility: max v_e = {:.3e}, states indistinguishable",
                best.1
            )));
        }
        let a = (best.0 - step).max(lo);
        let b = (best.0 + step).min(hi);
        let (x, v) = quad::golden_max(|x| self.v_e(x), a, b, 1e-9 * (hi - lo));
        Ok(if v >= best.1 { (x, v) } else { best })
    }

    pub fn curves(&self, points: usize) -> Result<ElectricalCurves> {
        if points < 3 {
            return Err(domain("need at least 3 grid points"));
        }
        let (lo, hi) = self.x_range();
        let h = (hi - lo) / (points - 1) as f64;
        let x_grid: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        let c0: Vec<f64> = x_grid.iter().map(|&x| self.c0(x)).collect();
        let c1: Vec<f64> = x_grid.iter().map(|&x| self.c1(x)).collect();
        let pm = self.p_miss;
        let f_e0 = c0.clone();
        let f_e1: Vec<f64> = c0
            .iter()
            .zip(&c1)
            .map(|(a, b)| (1.0 - pm) * (1.0 - b) + pm * (1.0 - a))
            .collect();
        let v_e: Vec<f64> = c0.iter().zip(&c1).map(|(a, b)| (1.0 - pm) * (a - b)).collect();
        let deriv = |v: &[f64]| -> Vec<f64> {
            (0..v.len())
                .map(|i| {
                    let (a, b) = (i.saturating_sub(1), (i + 1).min(v.len() - 1));
                    ((v[b] - v[a]) / (x_grid[b] - x_grid[a])).abs()
                })
                .collect()
        };
        let p_e0 = deriv(&f_e0);
        let p_e1 = deriv(&f_e1);
        let (x_opt, _) = self.x_opt()?;
        let mut out = ElectricalCurves {
            x_grid,
            c0,
            c1,
            f_e0,
            f_e1,
            v_e,
            p_e0,
            p_e1,
            x_opt,
            p_miss: pm,
            regime: ElectricalRegime::Optimal,
        };
        out.regime = classify_electrical_regime(&out);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ElectricalRegime {
    Optimal,
    SampleRateLimited,
    NoiseLimited,
    FilterLimited,
}

#[derive(Debug, Clone, Serialize)]
pub struct ElectricalCurves {
    pub x_grid: Vec<f64>,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub f_e0: Vec<f64>,
    pub f_e1: Vec<f64>,
    pub v_e: Vec<f64>,
    pub p_e0: Vec<f64>,
    pub p_e1: Vec<f64>,
    pub x_opt: f64,
    pub p_miss: f64,
    pub regime: ElectricalRegime,
}

/// Miss probability worth flagging.
pub const P_MISS_FLAG: f64 = 0.01;
/// Share of the visibility loss due to missed blips that marks the sample rate as limiting.
pub const MISS_SHARE_FLAG: f64 = 1.0 / 3.0;
/// Overlap of the two readout densities above which noise dominates.
pub const OVERLAP_FLAG: f64 = 0.1;
/// Quantile skewness of the blip-present density below which the filter dominates.
pub const SKEW_FLAG: f64 = -0.5;

fn trapz(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(a, b)| 0.5 * (b[0] + b[1]) * (a[1] - a[0])).sum()
}

/// Bowley skewness (q90 + q10 - 2 q50) / (q90 - q10) of a gridded density.
fn quantile_skew(x: &[f64], p: &[f64]) -> f64 {
    let mut cum = vec![0.0; x.len()];
    for i in 1..x.len() {
        cum[i] = cum[i - 1] + 0.5 * (p[i] + p[i - 1]) * (x[i] - x[i - 1]);
    }
    let total = cum[cum.len() - 1];
    if !(total > 0.0) {
        return 0.0;
    }
    let q = |f: f64| {
        let target = f * total;
        let i = cum.partition_point(|&c| c < target).clamp(1, x.len() - 1);
        let (c0, c1) = (cum[i - 1], cum[i]);
        let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        x[i - 1] + t * (x[i] - x[i - 1])
    };
    let (lo, mid, hi) = (q(0.1), q(0.5), q(0.9));
    if hi > lo {
        (hi + lo - 2.0 * mid) / (hi - lo)
    } else {
        0.0
    }
}

/// (v_e max, skewness of the blip-present density, density overlap).
pub fn regime_metrics(c: &ElectricalCurves) -> (f64, f64, f64) {
    let vmax = c.v_e.iter().copied().fold(f64::MIN, f64::max);
    // density of the maximum when a blip was captured: dC1/dx
    let dc1: Vec<f64> = (0..c.x_grid.len())
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(c.x_grid.len() - 1));
            ((c.c1[b] - c.c1[a]) / (c.x_grid[b] - c.x_grid[a])).max(0.0)
        })
        .collect();
    let skew = quantile_skew(&c.x_grid, &dc1);
    let overlap = trapz(
        &c.x_grid,
        &c.p_e0.iter().zip(&c.p_e1).map(|(a, b)| a.min(*b)).collect::<Vec<_>>(),
    );
    (vmax, skew, overlap)
}

/// Label the limiting factor from the shape of the curves.
pub fn classify_electrical_regime(c: &ElectricalCurves) -> ElectricalRegime {
    let (vmax, skew, overlap) = regime_metrics(c);
    // v_e tops out near 1 - p_miss: missed blips carry a good share of the loss
    if c.p_miss > P_MISS_FLAG && c.p_miss >= MISS_SHARE_FLAG * (1.0 - vmax) {
        return ElectricalRegime::SampleRateLimited;
    }
    if skew < SKEW_FLAG {
        return ElectricalRegime::FilterLimited;
    }
    if overlap > OVERLAP_FLAG {
        return ElectricalRegime::NoiseLimited;
    }
    ElectricalRegime::Optimal
}
