//! Shared domain types and the top-level fidelity composition.
//!
//! Times are seconds, rates Hz. Detector levels are in whatever unit the
//! caller declares (pA, mV, ...); nothing here depends on the choice.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Bohr magneton over Boltzmann constant, K/T (CODATA 2018).
pub const MU_B_OVER_K_B: f64 = 0.671_713_815_63;

fn check_time(name: &str, v: f64) -> Result<()> {
    // T1 may be infinite; everything else must be finite.
    if !(v > 0.0) || v.is_nan() {
        return Err(domain(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

fn check_finite_time(name: &str, v: f64) -> Result<()> {
    check_time(name, v)?;
    if !v.is_finite() {
        return Err(domain(format!("{name} must be finite, got {v}")));
    }
    Ok(())
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Tunnel times and relaxation of a single qubit.
///
/// `t1_relax` may be `f64::INFINITY` for the no-relaxation limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunnelModel {
    pub t_in0: f64,
    pub t_out0: f64,
    pub t_in1: Option<f64>,
    pub t_out1: f64,
    /// JSON has no infinity, so the no-relaxation limit is written as null.
    #[serde(with = "infinite_as_null")]
    pub t1_relax: f64,
    pub ez_over_kbt: Option<f64>,
}

impl TunnelModel {
    pub fn new(t_in0: f64, t_out0: f64, t_out1: f64, t1_relax: f64) -> Result<Self> {
        let m = TunnelModel {
            t_in0,
            t_out0,
            t_in1: None,
            t_out1,
            t1_relax,
            ez_over_kbt: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        check_finite_time("t_in0", self.t_in0)?;
        // t_out0 is allowed to be infinite: a ground state that never leaves.
        check_time("t_out0", self.t_out0)?;
        check_finite_time("t_out1", self.t_out1)?;
        check_time("t1_relax", self.t1_relax)?;
        if let Some(t) = self.t_in1 {
            check_finite_time("t_in1", t)?;
        }
        if let Some(e) = self.ez_over_kbt {
            if !(e >= 0.0) || !e.is_finite() {
                return Err(domain(format!("ez_over_kbt must be >= 0, got {e}")));
            }
        }
        Ok(())
    }

    /// Relaxation rate 1/T1, zero when T1 is infinite.
    pub fn relax_rate(&self) -> f64 {
        if self.t1_relax.is_finite() {
            1.0 / self.t1_relax
        } else {
            0.0
        }
    }

    /// Copy with every time multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        TunnelModel {
            t_in0: self.t_in0 * k,
            t_out0: self.t_out0 * k,
            t_in1: self.t_in1.map(|t| t * k),
            t_out1: self.t_out1 * k,
            t1_relax: self.t1_relax * k,
            ez_over_kbt: self.ez_over_kbt,
        }
    }
}

/// Tunnel model with some times unknown, to be completed from Fermi statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialTunnelModel {
    pub t_in0: Option<f64>,
    pub t_out0: Option<f64>,
    pub t_in1: Option<f64>,
    pub t_out1: Option<f64>,
    pub t1_relax: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeemanParams {
    pub b_field: f64,
    pub g_factor: f64,
    pub temperature: f64,
}

/// E_Z / k_B T for the given field, g-factor and temperature.
pub fn zeeman_to_ratio(z: &ZeemanParams) -> Result<f64> {
    if !(z.temperature > 0.0) {
        return Err(domain(format!("temperature must be > 0, got {}", z.temperature)));
    }
    if !(z.b_field >= 0.0) {
        return Err(domain(format!("b_field must be >= 0, got {}", z.b_field)));
    }
    Ok(z.g_factor.abs() * MU_B_OVER_K_B * z.b_field / z.temperature)
}

/// Charge-sensor levels, noise and acquisition settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub mu0: f64,
    pub mu1: f64,
    /// Noise amplitude spectral density A_n, detector-units/sqrt(Hz).
    pub noise_psd: f64,
    pub filter_cutoff: f64,
    pub sample_rate: f64,
    pub filter_order: u32,
    /// Per-state noise overrides (sigma0, sigma1). Defaults to A_n*sqrt(2 f_c) for both.
    pub sigma_override: Option<(f64, f64)>,
}

impl DetectorModel {
    pub fn new(mu0: f64, mu1: f64, noise_psd: f64, filter_cutoff: f64, sample_rate: f64) -> Result<Self> {
        let d = DetectorModel {
            mu0,
            mu1,
            noise_psd,
            filter_cutoff,
            sample_rate,
            filter_order: 8,
            sigma_override: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu1 > self.mu0) || !self.mu0.is_finite() || !self.mu1.is_finite() {
            return Err(domain(format!("need mu1 > mu0, got mu0={} mu1={}", self.mu0, self.mu1)));
        }
        for (name, v) in [
            ("noise_psd", self.noise_psd),
            ("filter_cutoff", self.filter_cutoff),
            ("sample_rate", self.sample_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.filter_order == 0 {
            return Err(domain("filter_order must be >= 1"));
        }
        if let Some((s0, s1)) = self.sigma_override {
            if !(s0 > 0.0 && s1 > 0.0) {
                return Err(domain("sigma overrides must be > 0"));
            }
        }
        Ok(())
    }

    pub fn sample_time(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn delta_mu(&self) -> f64 {
        self.mu1 - self.mu0
    }

    /// Noise standard deviations (sigma0, sigma1) after the filter.
    pub fn sigmas(&self) -> (f64, f64) {
        match self.sigma_override {
            Some(s) => s,
            None => {
                let s = self.noise_psd * (2.0 * self.filter_cutoff).sqrt();
                (s, s)
            }
        }
    }

    /// Sensitivity index D' = (mu1 - mu0) / sqrt((sigma0^2 + sigma1^2)/2).
    pub fn d_prime(&self) -> f64 {
        let (s0, s1) = self.sigmas();
        self.delta_mu() / (0.5 * (s0 * s0 + s1 * s1)).sqrt()
    }

    /// Number of samples in a window of length `t`.
    pub fn samples_in(&self, t: f64) -> f64 {
        t * self.sample_rate
    }

    pub fn with_rates(&self, sample_rate: f64, filter_cutoff: f64) -> Self {
        DetectorModel {
            sample_rate,
            filter_cutoff,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutPlan {
    pub readout_time: f64,
    pub threshold: f64,
}

impl ReadoutPlan {
    pub fn new(readout_time: f64, threshold: f64) -> Result<Self> {
        if !(readout_time > 0.0) || !readout_time.is_finite() {
            return Err(domain(format!("readout_time must be > 0, got {readout_time}")));
        }
        if !threshold.is_finite() {
            return Err(domain("threshold must be finite"));
        }
        Ok(ReadoutPlan {
            readout_time,
            threshold,
        })
    }

    pub fn validate_for(&self, det: &DetectorModel) -> Result<()> {
        let n = det.samples_in(self.readout_time);
        if n < 2.0 {
            return Err(domain(format!("readout window holds {n:.3} samples, need >= 2")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub f_stc0: f64,
    pub f_stc1: f64,
    pub v_stc: f64,
    pub f_e0: f64,
    pub f_e1: f64,
    pub v_e: f64,
    pub f0: f64,
    pub f1: f64,
    pub f_m: f64,
    pub p_miss: f64,
    pub t_opt: f64,
    pub x_opt: f64,
    pub error_fm: Option<f64>,
}

impl FidelityReport {
    pub fn from_components(stc: (f64, f64), electrical: (f64, f64), p_miss: f64, t_opt: f64, x_opt: f64) -> Result<Self> {
        let (f0, f1, f_m) = compose_fidelity(stc, electrical)?;
        Ok(FidelityReport {
            f_stc0: stc.0,
            f_stc1: stc.1,
            v_stc: stc.0 + stc.1 - 1.0,
            f_e0: electrical.0,
            f_e1: electrical.1,
            v_e: electrical.0 + electrical.1 - 1.0,
            f0,
            f1,
            f_m,
            p_miss,
            t_opt,
            x_opt,
            error_fm: None,
        })
    }
}

/// Combine state-to-charge and electrical fidelities into (F0, F1, F_M).
///
/// A readout is also correct when both stages err, which is where the
/// cross terms come from.
pub fn compose_fidelity(stc: (f64, f64), electrical: (f64, f64)) -> Result<(f64, f64, f64)> {
    let (a, b) = stc;
    let (c, d) = electrical;
    for (name, v) in [("f_stc0", a), ("f_stc1", b), ("f_e0", c), ("f_e1", d)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(domain(format!("{name} = {v} outside [0,1]")));
        }
    }
    let f0 = a * c + (1.0 - a) * (1.0 - d);
    let f1 = b * d + (1.0 - b) * (1.0 - c);
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let (f0, f1) = (clamp(f0), clamp(f1));
    Ok((f0, f1, 0.5 * (f0 + f1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn compose_fixed_points() {
        assert_eq!(compose_fidelity((1.0, 1.0), (1.0, 1.0)).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(compose_fidelity((0.5, 0.5), (0.5, 0.5)).unwrap(), (0.5, 0.5, 0.5));
        assert!(compose_fidelity((1.1, 1.0), (1.0, 1.0)).is_err());
    }

    #[test]
    fn fm_is_half_one_plus_visibility_product() {
        let (_, _, fm) = compose_fidelity((0.97, 0.99), (0.95, 0.93)).unwrap();
        let vs = 0.97 + 0.99 - 1.0;
        let ve = 0.95 + 0.93 - 1.0;
        assert_abs_diff_eq!(fm, 0.5 * (1.0 + vs * ve), epsilon = 1e-15);
    }

    #[test]
    fn zeeman_ratio() {
        let z = |b, t| ZeemanParams {
            b_field: b,
            g_factor: 2.0,
            temperature: t,
        };
        assert_eq!(zeeman_to_ratio(&z(0.0, 0.2)).unwrap(), 0.0);
        assert_abs_diff_eq!(zeeman_to_ratio(&z(1.0, 1.343)).unwrap(), 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(zeeman_to_ratio(&z(2.5, 0.2)).unwrap(), 16.79, epsilon = 0.01);
        assert!(zeeman_to_ratio(&z(1.0, 0.0)).is_err());
    }

    #[test]
    fn detector_sigma_and_dprime() {
        let d = DetectorModel::new(0.0, 50.0, 0.133, 1e3, 5e3).unwrap();
        let (s0, s1) = d.sigmas();
        assert_abs_diff_eq!(s0, 5.948, epsilon = 1e-3);
        assert_eq!(s0, s1);
        assert_abs_diff_eq!(d.d_prime(), 50.0 / s0, epsilon = 1e-12);
        assert!(DetectorModel::new(1.0, 0.0, 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn plan_needs_two_samples() {
        let d = DetectorModel::new(0.0, 1.0, 0.1, 1e3, 5e3).unwrap();
        assert!(ReadoutPlan::new(1e-4, 0.5).unwrap().validate_for(&d).is_err());
        assert!(ReadoutPlan::new(1e-3, 0.5).unwrap().validate_for(&d).is_ok());
        assert!(ReadoutPlan::new(-1.0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn compose_stays_in_unit_interval(a in 0.0..=1.0f64, b in 0.0..=1.0f64, c in 0.0..=1.0f64, d in 0.0..=1.0f64) {
            let (f0, f1, fm) = compose_fidelity((a, b), (c, d)).unwrap();
            prop_assert!((0.0..=1.0).contains(&f0));
            prop_assert!((0.0..=1.0).contains(&f1));
            prop_assert!((fm - 0.5 * (f0 + f1)).abs() < 1e-15);
        }

        #[test]
        fn compose_label_swap(a in 0.0..=1.0f64, b in 0.0..=1.0f64, c in 0.0..=1.0f64, d in 0.0..=1.0f64) {
            let (f0, f1, fm) = compose_fidelity((a, b), (c, d)).unwrap();
            let (g0, g1, gm) = compose_fidelity((b, a), (d, c)).unwrap();
            prop_assert!((f0 - g1).abs() < 1e-14);
            prop_assert!((f1 - g0).abs() < 1e-14);
            prop_assert!((fm - gm).abs() < 1e-14);
        }

        #[test]
        fn compose_monotone_above_half(a in 0.5..=1.0f64, b in 0.5..=1.0f64, c in 0.5..=1.0f64, d in 0.5..=1.0f64, h in 0.0..0.1f64) {
            let (_, _, fm) = compose_fidelity((a, b), (c, d)).unwrap();
            let bump = |v: f64| (v + h).min(1.0);
            for k in 0..4 {
                let mut v = [a, b, c, d];
                v[k] = bump(v[k]);
                let (_, _, g) = compose_fidelity((v[0], v[1]), (v[2], v[3])).unwrap();
                prop_assert!(g >= fm - 1e-14);
            }
        }
    }
}
