//! Low-pass Bessel filter: gain, pulse attenuation, noise and sample correlation.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{domain, Result};

/// Overshoot quoted for the 8th-order filter; `FilterModel::overshoot` recomputes it.
pub const OVERSHOOT_Q8: f64 = 1.00344;

const MINUS_3DB: f64 = std::f64::consts::FRAC_1_SQRT_2; // half power

/// Reverse Bessel polynomial coefficients, lowest power first.
pub fn reverse_bessel(order: u32) -> Vec<f64> {
    // theta_n = (2n-1) theta_{n-1} + s^2 theta_{n-2}
    let mut prev = vec![1.0];
    if order == 0 {
        return prev;
    }
    let mut cur = vec![1.0, 1.0];
    for n in 2..=order as usize {
        let mut next = vec![0.0; n + 1];
        for (k, c) in cur.iter().enumerate() {
            next[k] += (2 * n - 1) as f64 * c;
        }
        for (k, c) in prev.iter().enumerate() {
            next[k + 2] += c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

fn poly_eval(c: &[f64], s: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * s + a)
}

#[derive(Debug, Clone)]
pub struct FilterModel {
    pub order: u32,
    pub cutoff: f64,
    pub coeffs: Vec<f64>,
    /// Angular frequency (prototype units) where the raw polynomial gain is -3 dB.
    pub omega_3db: f64,
    pub overshoot: f64,
}

impl FilterModel {
    pub fn new(order: u32, cutoff: f64) -> Result<Self> {
        if order == 0 {
            return Err(domain("filter order must be >= 1"));
        }
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(domain(format!("cutoff must be > 0, got {cutoff}")));
        }
        let coeffs = reverse_bessel(order);
        let omega_3db = find_3db(&coeffs);
        let overshoot = overshoot_for(order, &coeffs);
        Ok(FilterModel {
            order,
            cutoff,
            coeffs,
            omega_3db,
            overshoot,
        })
    }

    pub fn eighth(cutoff: f64) -> Self {
        FilterModel::new(8, cutoff).expect("valid cutoff")
    }

    /// |theta(0)/theta(i w)| with no frequency normalisation.
    pub fn prototype_gain(&self, w: f64) -> f64 {
        prototype_gain(&self.coeffs, w)
    }

    /// Magnitude response with `cutoff` as the -3 dB frequency.
    pub fn gain(&self, f: f64) -> f64 {
        self.prototype_gain(self.omega_3db * f / self.cutoff)
    }

    /// Peak of the filtered blip relative to the level step, for a blip of
    /// `n` samples with m_c = f_c / Gamma_s.
    ///
    /// Uses the overshoot-scaled prototype gain at the ratio of blip
    /// frequency 1/n to m_c. Callers apply any correlation scaling to m_c.
    pub fn blip_attenuation(&self, n: f64, m_c: f64) -> f64 {
        if !(n > 0.0) || !(m_c > 0.0) {
            return 0.0;
        }
        (self.overshoot * self.prototype_gain(1.0 / (n * m_c))).clamp(0.0, self.overshoot)
    }

    /// Analog poles scaled so the -3 dB point sits at `cutoff` (rad/s).
    pub fn analog_poles(&self) -> Vec<Complex64> {
        let scale = 2.0 * std::f64::consts::PI * self.cutoff / self.omega_3db;
        prototype_poles(&self.coeffs).into_iter().map(|p| p * scale).collect()
    }
}

fn prototype_gain(c: &[f64], w: f64) -> f64 {
    let h = Complex64::new(c[0], 0.0) / poly_eval(c, Complex64::new(0.0, w));
    h.norm()
}

fn find_3db(c: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while prototype_gain(c, hi) > MINUS_3DB {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if prototype_gain(c, mid) > MINUS_3DB {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn prototype_poles(c: &[f64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    let lead = c[n];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        m[(i, n - 1)] = -c[i] / lead;
    }
    m.complex_eigenvalues().iter().copied().collect()
}

const CACHED_ORDERS: usize = 16;

/// `step_overshoot` depends on the order only; memoised for common orders.
fn overshoot_for(order: u32, c: &[f64]) -> f64 {
    static CACHE: [OnceLock<f64>; CACHED_ORDERS] = [const { OnceLock::new() }; CACHED_ORDERS];
    match CACHE.get(order as usize - 1) {
        Some(cell) => *cell.get_or_init(|| step_overshoot(c)),
        None => step_overshoot(c),
    }
}

/// Maximum of the unit-step response, by RK4 on the companion-form state space.
fn step_overshoot(c: &[f64]) -> f64 {
    let n = c.len() - 1;
    let a: Vec<f64> = c.iter().map(|v| v / c[n]).collect();
    // x' = A x + B u, y = a0 x_0 with A the companion matrix of the monic polynomial.
    let deriv = |x: &[f64], out: &mut [f64]| {
        out[..n - 1].copy_from_slice(&x[1..]);
        let mut s = 1.0;
        for i in 0..n {
            s -= a[i] * x[i];
        }
        out[n - 1] = s;
    };
    let h = 1e-3;
    let steps = (40.0 * n as f64 / h) as usize;
    let mut x = vec![0.0; n];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut peak: f64 = 0.0;
    for _ in 0..steps {
        deriv(&x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        deriv(&tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        peak = peak.max(a[0] * x[0]);
    }
    peak
}

/// Sigma of white noise after the filter: A_n * sqrt(2 f_c).
pub fn noise_sigma(fm: &FilterModel, a_n: f64) -> Result<f64> {
    if !(a_n > 0.0) {
        return Err(domain(format!("a_n must be > 0, got {a_n}")));
    }
    Ok(a_n * (2.0 * fm.cutoff).sqrt())
}

/// Scale factor for sample counts when the filter correlates neighbouring samples.
pub fn correlation_factor(f_s: f64) -> f64 {
    if f_s < 1.0 {
        2.0 * f_s / (f_s + 1.0)
    } else {
        1.0
    }
}

/// (n_r, R_s) after the correlation correction with f_s = 2 f_c / Gamma_s.
pub fn correlation_correct(n_r: f64, r_s: f64, f_s: f64) -> Result<(f64, f64)> {
    if !(f_s > 0.0) {
        return Err(domain(format!("f_s must be > 0, got {f_s}")));
    }
    let k = correlation_factor(f_s);
    Ok((k * n_r, k * r_s))
}

/// One second-order section, direct form II transposed.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

/// Bilinear-transform discretisation of the Bessel filter, as cascaded sections.
#[derive(Debug, Clone)]
pub struct DiscreteBessel {
    sections: Vec<Biquad>,
    /// Trailing first-order section for odd orders: (b0, b1, a1).
    first: Option<(f64, f64, f64)>,
}

/// Filter state for one trace.
#[derive(Debug, Clone)]
pub struct FilterState {
    s: Vec<[f64; 2]>,
    f: f64,
}

impl DiscreteBessel {
    /// Discretise at `fs` Hz with the -3 dB point pre-warped to `fm.cutoff`.
    pub fn new(fm: &FilterModel, fs: f64) -> Result<Self> {
        let t = 1.0 / fs;
        if !(fm.cutoff < 0.5 * fs) {
            return Err(domain(format!(
                "cutoff {} Hz must be below Nyquist {} Hz for the bilinear map",
                fm.cutoff,
                0.5 * fs
            )));
        }
        let wc = 2.0 * std::f64::consts::PI * fm.cutoff;
        let warp = (2.0 / t) * (0.5 * wc * t).tan() / wc;
        let poles: Vec<Complex64> = fm.analog_poles().into_iter().map(|p| p * warp).collect();
        let k = 2.0 / t;
        let map = |p: Complex64| (k + p) / (k - p);
        let mut sections = Vec::new();
        let mut first = None;
        let mut used = vec![false; poles.len()];
        for i in 0..poles.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            let p = poles[i];
            if p.im.abs() < 1e-9 * p.norm() {
                let z = map(p).re;
                // (1 + z^-1) / (1 - z z^-1), unit DC gain
                let g = (1.0 - z) / 2.0;
                first = Some((g, g, -z));
                continue;
            }
            let j = (i + 1..poles.len())
                .filter(|&j| !used[j])
                .min_by(|&x, &y| (poles[x] - p.conj()).norm().total_cmp(&(poles[y] - p.conj()).norm()))
                .ok_or_else(|| domain("unpaired complex pole"))?;
            used[j] = true;
            let z = map(p);
            let a1 = -2.0 * z.re;
            let a2 = z.norm_sqr();
            let g = (1.0 + a1 + a2) / 4.0;
            sections.push(Biquad {
                b: [g, 2.0 * g, g],
                a: [a1, a2],
            });
        }
        Ok(DiscreteBessel { sections, first })
    }

    pub fn state(&self) -> FilterState {
        FilterState {
            s: vec![[0.0; 2]; self.sections.len()],
            f: 0.0,
        }
    }

    /// State at rest with constant input `level`.
    pub fn state_at(&self, level: f64) -> FilterState {
        let mut st = self.state();
        if level != 0.0 {
            // steady state of DF2T with unit DC gain
            for (q, s) in self.sections.iter().zip(st.s.iter_mut()) {
                s[1] = (q.b[2] - q.a[1]) * level;
                s[0] = (q.b[1] - q.a[0]) * level + s[1];
            }
            if let Some((b0, b1, a1)) = self.first {
                let _ = b0;
                st.f = (b1 - a1) * level;
            }
        }
        st
    }

    #[inline]
    pub fn step(&self, st: &mut FilterState, x: f64) -> f64 {
        let mut v = x;
        for (q, s) in self.sections.iter().zip(st.s.iter_mut()) {
            let y = q.b[0] * v + s[0];
            s[0] = q.b[1] * v - q.a[0] * y + s[1];
            s[1] = q.b[2] * v - q.a[1] * y;
            v = y;
        }
        if let Some((b0, b1, a1)) = self.first {
            let y = b0 * v + st.f;
            st.f = b1 * v - a1 * y;
            v = y;
        }
        v
    }

    /// Impulse response, `len` samples.
    pub fn impulse(&self, len: usize) -> Vec<f64> {
        let mut st = self.state();
        (0..len).map(|i| self.step(&mut st, if i == 0 { 1.0 } else { 0.0 })).collect()
    }

    /// sqrt(sum h^2): output sigma for unit-variance white input.
    pub fn noise_gain(&self) -> f64 {
        let mut st = self.state();
        let mut acc = 0.0;
        let mut quiet = 0;
        let mut i = 0usize;
        while quiet < 64 && i < 10_000_000 {
            let y = self.step(&mut st, if i == 0 { 1.0 } else { 0.0 });
            acc += y * y;
            if y * y < 1e-20 * acc {
                quiet += 1;
            } else {
                quiet = 0;
            }
            i += 1;
        }
        acc.sqrt()
    }
}
