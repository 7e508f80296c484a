//! Monte-Carlo readout traces: exponential tunnel events, white Gaussian
//! noise and the discretised Bessel filter.
//!
//! Every trace draws from its own ChaCha8 stream keyed by (seed, index), so
//! ensembles are bit-identical whatever the thread count.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::electrical::Electrical;
use crate::error::{domain, Result};
use crate::filter::{correlation_factor, DiscreteBessel, FilterModel};
use crate::model::{DetectorModel, ReadoutPlan, TunnelModel};

pub const DEFAULT_BINS: usize = 1000;
/// Histogram range is [mu0 - k sigma0, mu1 + k sigma1].
pub const RANGE_SIGMAS: f64 = 5.0;
/// Filter settling before the window, in units of 1/f_c.
const WARMUP_CUTOFF_PERIODS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpinState {
    Zero,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Fine steps per detector sample for the filter.
    pub oversample: usize,
    /// Off: raw per-sample occupancy plus noise.
    pub filter: bool,
    /// Multiplies the noise; 0 gives noiseless traces.
    pub noise_scale: f64,
    pub bins: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            oversample: 8,
            filter: true,
            noise_scale: 1.0,
            bins: DEFAULT_BINS,
        }
    }
}

/// Equal-width histogram; out-of-range values land in the end bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(domain(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        Ok(Histogram {
            lo,
            hi,
            counts: vec![0; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins()).map(|i| self.lo + self.width() * i as f64).collect()
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let k = ((x - self.lo) / self.width()).floor();
        if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins() - 1)
        }
    }

    pub fn add(&mut self, x: f64) {
        let k = self.bin_of(x);
        self.counts[k] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.lo != other.lo || self.hi != other.hi || self.bins() != other.bins() {
            return Err(domain("histograms have different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Empirical CDF at the upper edge of each bin.
    pub fn cdf(&self) -> Vec<f64> {
        let n = self.total().max(1) as f64;
        let mut acc = 0u64;
        self.counts
            .iter()
            .map(|c| {
                acc += c;
                acc as f64 / n
            })
            .collect()
    }
}

/// Default histogram for a detector: [mu0 - 5 sigma0, mu1 + 5 sigma1].
pub fn default_histogram(det: &DetectorModel, bins: usize) -> Result<Histogram> {
    let (s0, s1) = det.sigmas();
    Histogram::new(det.mu0 - RANGE_SIGMAS * s0, det.mu1 + RANGE_SIGMAS * s1, bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEnsemble {
    pub state: SpinState,
    pub n_traces: usize,
    pub seed: u64,
    pub maxima: Vec<f64>,
    pub histogram: Histogram,
    /// Blips that start and end inside one slot of length kappa*t_s/2, the
    /// geometry behind the analytic miss probability.
    pub missed_slot: u64,
    /// Blips covering no whole detector sample.
    pub missed_sample: u64,
}

/// Simulation constants shared by every trace.
struct Setup {
    window: f64,
    ts: f64,
    samples: usize,
    fine: usize,
    warmup: usize,
    mu0: f64,
    dmu: f64,
    sig0: f64,
    sig1: f64,
    t_out1: f64,
    t_in0: f64,
    slot: f64,
    filter: Option<DiscreteBessel>,
}

impl Setup {
    fn new(tm: &TunnelModel, det: &DetectorModel, plan: &ReadoutPlan, opt: &SimOptions) -> Result<Self> {
        tm.validate()?;
        det.validate()?;
        plan.validate_for(det)?;
        if !(opt.noise_scale >= 0.0) || !opt.noise_scale.is_finite() {
            return Err(domain("noise_scale must be finite and >= 0"));
        }
        let ts = det.sample_time();
        let samples = (plan.readout_time / ts).floor() as usize;
        let fine = if opt.filter { opt.oversample.max(1) } else { 1 };
        let (s0, s1) = det.sigmas();
        let (filter, gain, warmup) = if opt.filter {
            let fm = FilterModel::new(det.filter_order, det.filter_cutoff)?;
            let f = DiscreteBessel::new(&fm, det.sample_rate * fine as f64)?;
            let g = f.noise_gain();
            let w = (WARMUP_CUTOFF_PERIODS * fine as f64 * det.sample_rate / det.filter_cutoff).ceil() as usize;
            (Some(f), g, w)
        } else {
            (None, 1.0, 0)
        };
        let kappa = correlation_factor(2.0 * det.filter_cutoff / det.sample_rate);
        Ok(Setup {
            window: plan.readout_time,
            ts,
            samples,
            fine,
            warmup,
            mu0: det.mu0,
            dmu: det.delta_mu(),
            sig0: opt.noise_scale * s0 / gain,
            sig1: opt.noise_scale * s1 / gain,
            t_out1: tm.t_out1,
            t_in0: tm.t_in0,
            slot: 0.5 * kappa * ts,
            filter,
        })
    }

    fn rng(seed: u64, index: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(index);
        r
    }

    /// Blip (start, end) for state 1, start conditioned inside the window.
    fn blip(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let u: f64 = rng.random();
        let w = -self.t_out1 * (-u * (-(-self.window / self.t_out1).exp_m1())).ln_1p();
        let v: f64 = rng.random();
        let d = -self.t_in0 * (-v).ln_1p();
        (w.min(self.window), w + d)
    }

    /// One trace; `out` receives the sample sequence when given.
    fn run(&self, state: SpinState, rng: &mut ChaCha8Rng, mut out: Option<&mut Vec<f64>>) -> (f64, Option<(f64, f64)>) {
        let blip = match state {
            SpinState::Zero => None,
            SpinState::One => Some(self.blip(rng)),
        };
        let dt = self.ts / self.fine as f64;
        let mut fst = self.filter.as_ref().map(|f| f.state_at(self.mu0));
        let mut step = |x: f64| match (&self.filter, fst.as_mut()) {
            (Some(f), Some(st)) => f.step(st, x),
            _ => x,
        };
        for _ in 0..self.warmup {
            let z: f64 = rng.sample(StandardNormal);
            step(self.mu0 + self.sig0 * z);
        }
        let mut max = f64::NEG_INFINITY;
        for j in 0..self.samples * self.fine {
            let occ = match blip {
                Some((a, b)) => {
                    let lo = j as f64 * dt;
                    ((b.min(lo + dt) - a.max(lo)) / dt).clamp(0.0, 1.0)
                }
                None => 0.0,
            };
            let z: f64 = rng.sample(StandardNormal);
            let sig = self.sig0 + occ * (self.sig1 - self.sig0);
            let y = step(self.mu0 + occ * self.dmu + sig * z);
            if (j + 1) % self.fine == 0 {
                max = max.max(y);
                if let Some(o) = out.as_deref_mut() {
                    o.push(y);
                }
            }
        }
        (max, blip)
    }

    fn missed(&self, (a, b): (f64, f64)) -> (bool, bool) {
        if b >= self.window {
            return (false, false);
        }
        let slot = (a / self.slot).floor() == (b / self.slot).floor();
        let sample = (b / self.ts).floor() - (a / self.ts).ceil() < 1.0;
        (slot, sample)
    }
}

pub fn simulate_traces(
    tm: &TunnelModel,
    det: &DetectorModel,
    plan: &ReadoutPlan,
    state: SpinState,
    n_traces: usize,
    seed: u64,
) -> Result<TraceEnsemble> {
    simulate_with(tm, det, plan, state, n_traces, seed, &SimOptions::default())
}

pub fn simulate_with(
    tm: &TunnelModel,
    det: &DetectorModel,
    plan: &ReadoutPlan,
    state: SpinState,
    n_traces: usize,
    seed: u64,
    opt: &SimOptions,
) -> Result<TraceEnsemble> {
    if n_traces == 0 {
        return Err(domain("n_traces must be >= 1"));
    }
    let setup = Setup::new(tm, det, plan, opt)?;
    let mut histogram = default_histogram(det, opt.bins)?;
    let runs: Vec<(f64, (bool, bool))> = (0..n_traces as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = Setup::rng(seed, i);
            let (m, blip) = setup.run(state, &mut rng, None);
            (m, blip.map(|b| setup.missed(b)).unwrap_or((false, false)))
        })
        .collect();
    let mut maxima = Vec::with_capacity(n_traces);
    let (mut missed_slot, mut missed_sample) = (0, 0);
    for (m, (a, b)) in runs {
        histogram.add(m);
        maxima.push(m);
        missed_slot += a as u64;
        missed_sample += b as u64;
    }
    Ok(TraceEnsemble {
        state,
        n_traces,
        seed,
        maxima,
        histogram,
        missed_slot,
        missed_sample,
    })
}

/// Full sample sequences, row-major [trace][sample].
pub fn simulate_raw(
    tm: &TunnelModel,
    det: &DetectorModel,
    plan: &ReadoutPlan,
    state: SpinState,
    n_traces: usize,
    seed: u64,
    opt: &SimOptions,
) -> Result<Vec<Vec<f64>>> {
    if n_traces == 0 {
        return Err(domain("n_traces must be >= 1"));
    }
    let setup = Setup::new(tm, det, plan, opt)?;
    Ok((0..n_traces as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = Setup::rng(seed, i);
            let mut v = Vec::with_capacity(setup.samples);
            setup.run(state, &mut rng, Some(&mut v));
            v
        })
        .collect())
}

/// Parameters stored next to a raw dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub format: String,
    pub n_traces: usize,
    pub samples_per_trace: usize,
    pub state: SpinState,
    pub seed: u64,
    pub tunnel: TunnelModel,
    pub detector: DetectorModel,
    pub plan: ReadoutPlan,
    pub options: SimOptions,
}

pub const RAW_FORMAT: &str = "f64-le-row-major";

/// Write traces as little-endian f64, row-major.
pub fn write_raw<W: Write>(mut w: W, traces: &[Vec<f64>]) -> std::io::Result<()> {
    for t in traces {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Inverse of `write_raw` given the row length.
pub fn read_raw(bytes: &[u8], samples_per_trace: usize) -> Result<Vec<Vec<f64>>> {
    if samples_per_trace == 0 || !bytes.len().is_multiple_of(8 * samples_per_trace) {
        return Err(domain(format!(
            "{} bytes is not a whole number of {samples_per_trace}-sample rows",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8 * samples_per_trace)
        .map(|row| row.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalFidelity {
    pub threshold: f64,
    pub f_e0: f64,
    pub f_e1: f64,
    pub v_e: f64,
    pub se_f0: f64,
    pub se_f1: f64,
    pub se_v: f64,
}

fn binomial(k: usize, n: usize) -> (f64, f64) {
    let p = k as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

fn check_pair(e0: &TraceEnsemble, e1: &TraceEnsemble) -> Result<()> {
    if e0.state != SpinState::Zero || e1.state != SpinState::One {
        return Err(domain("need a state-0 ensemble and a state-1 ensemble, in that order"));
    }
    Ok(())
}

/// Counting estimator: a trace reads as 1 when its maximum exceeds the threshold.
pub fn empirical_fidelity(e0: &TraceEnsemble, e1: &TraceEnsemble, threshold: f64) -> Result<EmpiricalFidelity> {
    check_pair(e0, e1)?;
    let k0 = e0.maxima.iter().filter(|&&m| m <= threshold).count();
    let k1 = e1.maxima.iter().filter(|&&m| m > threshold).count();
    let (f_e0, se_f0) = binomial(k0, e0.n_traces);
    let (f_e1, se_f1) = binomial(k1, e1.n_traces);
    Ok(EmpiricalFidelity {
        threshold,
        f_e0,
        f_e1,
        v_e: f_e0 + f_e1 - 1.0,
        se_f0,
        se_f1,
        se_v: se_f0.hypot(se_f1),
    })
}

/// Threshold maximising the empirical visibility, scanning every maximum.
pub fn empirical_x_opt(e0: &TraceEnsemble, e1: &TraceEnsemble) -> Result<(f64, f64)> {
    check_pair(e0, e1)?;
    let mut all: Vec<(f64, bool)> = e0
        .maxima
        .iter()
        .map(|&m| (m, false))
        .chain(e1.maxima.iter().map(|&m| (m, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (n0, n1) = (e0.n_traces as f64, e1.n_traces as f64);
    let (mut c0, mut c1) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (i, &(m, one)) in all.iter().enumerate() {
        if one {
            c1 += 1.0;
        } else {
            c0 += 1.0;
        }
        // only between distinct values
        if all.get(i + 1).is_some_and(|nx| nx.0 == m) {
            continue;
        }
        let v = c0 / n0 - c1 / n1;
        if v > best.1 {
            best = (m, v);
        }
    }
    Ok(best)
}

/// Visibility from two histograms, maximised over bin edges.
pub fn histogram_visibility(h0: &Histogram, h1: &Histogram) -> Result<(f64, f64)> {
    if h0.lo != h1.lo || h0.hi != h1.hi || h0.bins() != h1.bins() {
        return Err(domain("histograms have different binning"));
    }
    let (c0, c1) = (h0.cdf(), h1.cdf());
    let w = h0.width();
    let mut best = (h0.lo, f64::NEG_INFINITY);
    for k in 0..h0.bins() {
        let v = c0[k] - c1[k];
        if v > best.1 {
            best = (h0.lo + w * (k + 1) as f64, v);
        }
    }
    Ok(best)
}

/// Kolmogorov-Smirnov distance between samples and a CDF.
pub fn ks_distance<F: Fn(f64) -> f64 + Sync>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            ((i + 1) as f64 / n - c).max(c - i as f64 / n)
        })
        .reduce(|| 0.0, f64::max)
}

/// Simulation next to the analytic model for one parameter set.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub n_traces: usize,
    pub seed: u64,
    pub ks0: f64,
    pub ks1: f64,
    pub analytic_x_opt: f64,
    pub analytic_v_e: f64,
    pub at_analytic_x_opt: EmpiricalFidelity,
    pub empirical_x_opt: f64,
    pub empirical_v_e: f64,
    pub analytic_p_miss: f64,
    pub empirical_p_miss: f64,
    pub se_p_miss: f64,
    /// Miss rate with whole detector samples as the criterion.
    pub empirical_p_miss_sample: f64,
}

/// Both ensembles (state 1 on stream seed+1) and their comparison.
pub fn compare(
    tm: &TunnelModel,
    det: &DetectorModel,
    plan: &ReadoutPlan,
    n_traces: usize,
    seed: u64,
    opt: &SimOptions,
) -> Result<(Comparison, TraceEnsemble, TraceEnsemble)> {
    let el = Electrical::new(det, tm, plan.readout_time)?;
    let e0 = simulate_with(tm, det, plan, SpinState::Zero, n_traces, seed, opt)?;
    let e1 = simulate_with(tm, det, plan, SpinState::One, n_traces, seed.wrapping_add(1), opt)?;
    let pm = el.p_miss;
    let ks0 = ks_distance(&e0.maxima, |x| el.c0(x));
    let ks1 = ks_distance(&e1.maxima, |x| (1.0 - pm) * el.c1(x) + pm * el.c0(x));
    let (ax, av) = el.x_opt()?;
    let (ex, ev) = empirical_x_opt(&e0, &e1)?;
    let (p, se) = binomial(e1.missed_slot as usize, n_traces);
    let c = Comparison {
        n_traces,
        seed,
        ks0,
        ks1,
        analytic_x_opt: ax,
        analytic_v_e: av,
        at_analytic_x_opt: empirical_fidelity(&e0, &e1, ax)?,
        empirical_x_opt: ex,
        empirical_v_e: ev,
        analytic_p_miss: pm,
        empirical_p_miss: p,
        se_p_miss: se,
        empirical_p_miss_sample: e1.missed_sample as f64 / n_traces as f64,
    };
    Ok((c, e0, e1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaximaSource {
    /// Inverse-CDF draws from the analytic maximum distributions.
    Analytic,
    /// Full trace simulation.
    Traces,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceParams {
    pub counts: Vec<usize>,
    pub repeats: usize,
    pub bins: usize,
    pub seed: u64,
    pub source: MaximaSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub count: usize,
    pub mean_v_e: f64,
    pub std_v_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub params: ConvergenceParams,
    pub points: Vec<ConvergencePoint>,
    pub analytic_v_e: f64,
}

/// Tabulated monotone CDF with linear inverse.
struct Tabulated {
    x: Vec<f64>,
    c: Vec<f64>,
}

impl Tabulated {
    fn new(lo: f64, hi: f64, points: usize, f: impl Fn(f64) -> f64 + Sync) -> Self {
        let h = (hi - lo) / (points - 1) as f64;
        let x: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        let mut c: Vec<f64> = x.par_iter().map(|&v| f(v)).collect();
        c[0] = 0.0;
        *c.last_mut().expect("points > 1") = 1.0;
        for i in 1..c.len() {
            c[i] = c[i].max(c[i - 1]);
        }
        Tabulated { x, c }
    }

    fn inverse(&self, u: f64) -> f64 {
        let k = self.c.partition_point(|&v| v < u).clamp(1, self.c.len() - 1);
        let (c0, c1) = (self.c[k - 1], self.c[k]);
        let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.x[k - 1] + f * (self.x[k] - self.x[k - 1])
    }
}

const TABLE_POINTS: usize = 20001;

/// Spread of the histogram visibility estimator over repeated ensembles.
pub fn convergence_study(
    tm: &TunnelModel,
    det: &DetectorModel,
    plan: &ReadoutPlan,
    params: &ConvergenceParams,
) -> Result<ConvergenceStudy> {
    if params.counts.is_empty() || params.counts.windows(2).any(|w| w[1] < w[0]) || params.counts[0] == 0 {
        return Err(domain("counts must be non-empty, positive and ascending"));
    }
    if params.repeats < 2 {
        return Err(domain("need at least 2 repeats for a spread"));
    }
    let el = Electrical::new(det, tm, plan.readout_time)?;
    let analytic_v_e = el.x_opt()?.1;
    let (lo, hi) = el.x_range();
    let pm = el.p_miss;
    let tables = match params.source {
        MaximaSource::Analytic => Some((
            Tabulated::new(lo, hi, TABLE_POINTS, |x| el.c0(x)),
            Tabulated::new(lo, hi, TABLE_POINTS, |x| (1.0 - pm) * el.c1(x) + pm * el.c0(x)),
        )),
        MaximaSource::Traces => None,
    };
    let opt = SimOptions {
        bins: params.bins,
        ..SimOptions::default()
    };
    let mut points = Vec::with_capacity(params.counts.len());
    for (ci, &count) in params.counts.iter().enumerate() {
        let vs: Vec<f64> = (0..params.repeats)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let key = params.seed ^ ((ci as u64 + 1) << 40) ^ ((r as u64) << 8);
                let (h0, h1) = match &tables {
                    Some((t0, t1)) => {
                        let mut h0 = default_histogram(det, params.bins)?;
                        let mut h1 = h0.clone();
                        let mut r0 = Setup::rng(key, 0);
                        let mut r1 = Setup::rng(key, 1);
                        for _ in 0..count {
                            h0.add(t0.inverse(r0.random()));
                            h1.add(t1.inverse(r1.random()));
                        }
                        (h0, h1)
                    }
                    None => {
                        let e0 = simulate_with(tm, det, plan, SpinState::Zero, count, key, &opt)?;
                        let e1 = simulate_with(tm, det, plan, SpinState::One, count, key ^ 1, &opt)?;
                        (e0.histogram, e1.histogram)
                    }
                };
                Ok(histogram_visibility(&h0, &h1)?.1)
            })
            .collect::<Result<_>>()?;
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        points.push(ConvergencePoint {
            count,
            mean_v_e: mean,
            std_v_e: var.sqrt(),
        });
    }
    Ok(ConvergenceStudy {
        params: params.clone(),
        points,
        analytic_v_e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (TunnelModel, DetectorModel, ReadoutPlan) {
        // fast-ish toy: 200 samples, well separated levels
        let tm = TunnelModel::new(2e-4, 1.0, 1e-3, f64::INFINITY).unwrap();
        let det = DetectorModel::new(0.0, 1.0, 0.1 / (2.0 * 20e3f64).sqrt(), 20e3, 100e3).unwrap();
        (tm, det, ReadoutPlan::new(2e-3, 0.5).unwrap())
    }

    #[test]
    fn noiseless_state0_sits_at_mu0() {
        let (tm, det, plan) = setup();
        let opt = SimOptions {
            noise_scale: 0.0,
            ..SimOptions::default()
        };
        let e = simulate_with(&tm, &det, &plan, SpinState::Zero, 50, 3, &opt).unwrap();
        assert!(e.maxima.iter().all(|&m| (m - det.mu0).abs() < 1e-12));
        assert_eq!(e.histogram.total(), 50);
    }

    #[test]
    fn noiseless_unfiltered_blip_reaches_mu1() {
        let (tm, det, plan) = setup();
        let tm = TunnelModel { t_in0: 1.0, ..tm };
        let opt = SimOptions {
            noise_scale: 0.0,
            filter: false,
            ..SimOptions::default()
        };
        let e = simulate_with(&tm, &det, &plan, SpinState::One, 200, 9, &opt).unwrap();
        // a slow blip runs to the window end; only a start in the last sample misses
        let full = e.maxima.iter().filter(|&&m| (m - det.mu1).abs() < 1e-12).count();
        assert!(full >= 195, "{full}");
        assert!(e.maxima.iter().all(|&m| m <= det.mu1 + 1e-12));
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let (tm, det, plan) = setup();
        let a = simulate_traces(&tm, &det, &plan, SpinState::One, 64, 5).unwrap();
        let b = simulate_traces(&tm, &det, &plan, SpinState::One, 64, 5).unwrap();
        let c = simulate_traces(&tm, &det, &plan, SpinState::One, 64, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.maxima, c.maxima);
        // prefix of a longer run is the same traces
        let d = simulate_traces(&tm, &det, &plan, SpinState::One, 80, 5).unwrap();
        assert_eq!(a.maxima[..], d.maxima[..64]);
    }

    #[test]
    fn single_thread_matches_pool() {
        let (tm, det, plan) = setup();
        let a = simulate_traces(&tm, &det, &plan, SpinState::One, 100, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_traces(&tm, &det, &plan, SpinState::One, 100, 11).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn output_noise_matches_sigma() {
        let (tm, det, plan) = setup();
        let raw = simulate_raw(&tm, &det, &plan, SpinState::Zero, 40, 1, &SimOptions::default()).unwrap();
        let v: Vec<f64> = raw.into_iter().flatten().collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        let want = det.sigmas().0;
        assert!((s / want - 1.0).abs() < 0.03, "{s} vs {want}");
    }

    #[test]
    fn thresholds_at_extremes() {
        let (tm, det, plan) = setup();
        let e0 = simulate_traces(&tm, &det, &plan, SpinState::Zero, 100, 1).unwrap();
        let e1 = simulate_traces(&tm, &det, &plan, SpinState::One, 100, 2).unwrap();
        let lo = empirical_fidelity(&e0, &e1, -1e9).unwrap();
        assert_eq!((lo.f_e0, lo.f_e1), (0.0, 1.0));
        let hi = empirical_fidelity(&e0, &e1, 1e9).unwrap();
        assert_eq!((hi.f_e0, hi.f_e1), (1.0, 0.0));
        assert!(empirical_fidelity(&e1, &e0, 0.5).is_err());
    }

    #[test]
    fn empirical_x_opt_beats_any_threshold() {
        let (tm, det, plan) = setup();
        let e0 = simulate_traces(&tm, &det, &plan, SpinState::Zero, 500, 1).unwrap();
        let e1 = simulate_traces(&tm, &det, &plan, SpinState::One, 500, 2).unwrap();
        let (x, v) = empirical_x_opt(&e0, &e1).unwrap();
        assert!((empirical_fidelity(&e0, &e1, x).unwrap().v_e - v).abs() < 1e-12);
        for k in 0..50 {
            let t = -0.2 + 1.4 * k as f64 / 49.0;
            assert!(empirical_fidelity(&e0, &e1, t).unwrap().v_e <= v + 1e-12);
        }
    }

    #[test]
    fn state0_maxima_follow_c0_unfiltered() {
        // without the filter samples are independent, so P0^n holds exactly
        let tm = TunnelModel::new(2e-4, 1.0, 1e-3, f64::INFINITY).unwrap();
        let det = DetectorModel::new(0.0, 1.0, 0.1 / (2.0 * 60e3f64).sqrt(), 60e3, 100e3).unwrap();
        let plan = ReadoutPlan::new(2e-3, 0.5).unwrap();
        let opt = SimOptions {
            filter: false,
            ..SimOptions::default()
        };
        let e = simulate_with(&tm, &det, &plan, SpinState::Zero, 20_000, 4, &opt).unwrap();
        let el = Electrical::new(&det, &tm, plan.readout_time).unwrap();
        assert_eq!(el.kappa, 1.0);
        let ks = ks_distance(&e.maxima, |x| el.c0(x));
        assert!(ks < 0.015, "ks {ks}");
    }

    #[test]
    fn miss_rate_matches_analytic() {
        // short blips so misses are common
        let tm = TunnelModel::new(4e-6, 1.0, 1e-3, f64::INFINITY).unwrap();
        let det = DetectorModel::new(0.0, 1.0, 0.1 / (2.0 * 60e3f64).sqrt(), 60e3, 100e3).unwrap();
        let plan = ReadoutPlan::new(2e-3, 0.5).unwrap();
        let n = 20_000;
        let opt = SimOptions {
            filter: false,
            ..SimOptions::default()
        };
        let e = simulate_with(&tm, &det, &plan, SpinState::One, n, 8, &opt).unwrap();
        let el = Electrical::new(&det, &tm, plan.readout_time).unwrap();
        let (p, se) = binomial(e.missed_slot as usize, n);
        assert!((p - el.p_miss).abs() < 4.0 * se, "{p} vs {} ({se})", el.p_miss);
        assert!(e.missed_sample >= e.missed_slot);
    }

    #[test]
    fn histogram_merge_and_edges() {
        let mut a = Histogram::new(0.0, 1.0, 4).unwrap();
        let mut b = a.clone();
        for x in [-1.0, 0.1, 0.3, 0.99, 2.0] {
            a.add(x);
        }
        b.add(0.6);
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.counts, vec![2, 1, 1, 2]);
        assert_eq!(ab.edges().len(), 5);
        assert!(ab.merge(&Histogram::new(0.0, 2.0, 4).unwrap()).is_err());
    }

    #[test]
    fn raw_round_trip() {
        let t = vec![vec![1.0, -2.5, f64::MIN_POSITIVE], vec![0.0, 3.0, 1e300]];
        let mut buf = Vec::new();
        write_raw(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 48);
        assert_eq!(read_raw(&buf, 3).unwrap(), t);
        assert!(read_raw(&buf, 5).is_err());
    }

    #[test]
    fn tabulated_inverse() {
        let t = Tabulated::new(-6.0, 6.0, 4001, crate::electrical::norm_cdf);
        assert!((t.inverse(0.5)).abs() < 1e-3);
        assert!((t.inverse(crate::electrical::norm_cdf(1.3)) - 1.3).abs() < 1e-3);
    }

    #[test]
    fn convergence_spread_shrinks() {
        let (tm, det, plan) = setup();
        let p = ConvergenceParams {
            counts: vec![1_000, 100_000],
            repeats: 24,
            bins: 200,
            seed: 1,
            source: MaximaSource::Analytic,
        };
        let s = convergence_study(&tm, &det, &plan, &p).unwrap();
        let (a, b) = (s.points[0].std_v_e, s.points[1].std_v_e);
        // 1/sqrt(n) over two decades is a factor 10; allow 2x either way
        let ratio = a / b;
        assert!(ratio > 5.0 && ratio < 20.0, "ratio {ratio}");
        assert!((s.points[1].mean_v_e - s.analytic_v_e).abs() < 0.01);
        let bad = ConvergenceParams {
            counts: vec![10, 5],
            ..p
        };
        assert!(convergence_study(&tm, &det, &plan, &bad).is_err());
    }
}
