//! Sequential readout of several qubits sharing one detector.
//!
//! A qubit waiting for its turn relaxes, scaling its F_STC1 by
//! exp(-t_w / T1) where t_w is the summed measurement time of everything
//! read before it. Unmeasured qubits are assumed not to tunnel while they wait.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::fidelity::optimize;
use crate::model::{DetectorModel, FidelityReport, TunnelModel};

/// Exhaustive search up to this many qubits.
pub const EXHAUSTIVE_MAX: usize = 10;
/// All orders are listed when exhaustive and at most this many qubits.
pub const LIST_ALL_MAX: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Qubit {
    pub measure_time: f64,
    pub relax_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Objective {
    Mean,
    /// Weighted mean with one non-negative weight per qubit.
    Weighted(Vec<f64>),
    /// The worst qubit's penalty.
    MinQubit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QubitSchedule {
    /// Qubit indices in measurement order.
    pub order: Vec<usize>,
    /// Penalty of the qubit measured at each position.
    pub lambdas: Vec<f64>,
    pub score: f64,
}

fn check(qubits: &[Qubit]) -> Result<()> {
    if qubits.is_empty() {
        return Err(domain("need at least one qubit"));
    }
    for (i, q) in qubits.iter().enumerate() {
        if !(q.measure_time >= 0.0) || !q.measure_time.is_finite() {
            return Err(domain(format!("qubit {i}: measure time must be finite and >= 0")));
        }
        if !(q.relax_time > 0.0) {
            return Err(domain(format!("qubit {i}: T1 must be > 0")));
        }
    }
    Ok(())
}

fn check_order(n: usize, order: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(domain(format!("order has {} entries for {n} qubits", order.len())));
    }
    for &i in order {
        if i >= n || seen[i] {
            return Err(domain(format!("order {order:?} is not a permutation of 0..{n}")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Per-position penalties for `order`.
pub fn lambdas(qubits: &[Qubit], order: &[usize]) -> Result<Vec<f64>> {
    check(qubits)?;
    check_order(qubits.len(), order)?;
    Ok(lambdas_unchecked(qubits, order))
}

fn lambdas_unchecked(qubits: &[Qubit], order: &[usize]) -> Vec<f64> {
    let mut waited = 0.0;
    order
        .iter()
        .map(|&i| {
            let l = (-waited / qubits[i].relax_time).exp();
            waited += qubits[i].measure_time;
            l
        })
        .collect()
}

fn score(order: &[usize], lam: &[f64], objective: &Objective) -> f64 {
    match objective {
        Objective::Mean => lam.iter().sum::<f64>() / lam.len() as f64,
        Objective::Weighted(w) => {
            let total: f64 = w.iter().sum();
            order.iter().zip(lam).map(|(&q, l)| w[q] * l).sum::<f64>() / total
        }
        Objective::MinQubit => lam.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

pub fn schedule(qubits: &[Qubit], order: &[usize], objective: &Objective) -> Result<QubitSchedule> {
    check_objective(qubits.len(), objective)?;
    let lam = lambdas(qubits, order)?;
    Ok(QubitSchedule {
        order: order.to_vec(),
        score: score(order, &lam, objective),
        lambdas: lam,
    })
}

fn check_objective(n: usize, objective: &Objective) -> Result<()> {
    if let Objective::Weighted(w) = objective {
        if w.len() != n || w.iter().any(|v| !(*v >= 0.0)) || !(w.iter().sum::<f64>() > 0.0) {
            return Err(domain("weights must be one non-negative value per qubit, not all zero"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestOrder {
    pub best: QubitSchedule,
    pub exhaustive: bool,
    /// Every order in lexicographic order, for small exhaustive searches.
    pub all: Option<Vec<QubitSchedule>>,
}

/// Next lexicographic permutation in place; false after the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Best of a and b, ties to the lexicographically smaller order.
fn better(a: (f64, Vec<usize>), b: (f64, Vec<usize>)) -> (f64, Vec<usize>) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

fn exhaustive(qubits: &[Qubit], objective: &Objective) -> (f64, Vec<usize>) {
    let n = qubits.len();
    // one lexicographic run per leading qubit, reduced in a fixed order
    (0..n)
        .into_par_iter()
        .map(|first| {
            let mut rest: Vec<usize> = (0..n).filter(|&i| i != first).collect();
            let mut best = (f64::MIN, Vec::new());
            let mut order = Vec::with_capacity(n);
            loop {
                order.clear();
                order.push(first);
                order.extend_from_slice(&rest);
                let s = score(&order, &lambdas_unchecked(qubits, &order), objective);
                if s > best.0 {
                    best = (s, order.clone());
                }
                if !next_permutation(&mut rest) {
                    break;
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((f64::MIN, Vec::new()), better)
}

/// Greedy insertion by ascending measure time, then swaps and moves until neither helps.
fn heuristic(qubits: &[Qubit], objective: &Objective) -> (f64, Vec<usize>) {
    let eval = |o: &[usize]| score(o, &lambdas_unchecked(qubits, o), objective);
    let n = qubits.len();
    // partial orders are scored on the qubits placed so far
    let partial = |o: &[usize]| -> f64 {
        let lam = lambdas_unchecked(qubits, o);
        match objective {
            Objective::Mean => lam.iter().sum::<f64>() / lam.len() as f64,
            Objective::Weighted(w) => {
                let tot: f64 = o.iter().map(|&q| w[q]).sum();
                if tot > 0.0 {
                    o.iter().zip(&lam).map(|(&q, l)| w[q] * l).sum::<f64>() / tot
                } else {
                    0.0
                }
            }
            Objective::MinQubit => lam.iter().copied().fold(f64::INFINITY, f64::min),
        }
    };
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| qubits[a].measure_time.total_cmp(&qubits[b].measure_time));
    for q in by_time {
        let mut best = (f64::MIN, 0);
        for pos in 0..=order.len() {
            let mut cand = order.clone();
            cand.insert(pos, q);
            let s = partial(&cand);
            if s > best.0 {
                best = (s, pos);
            }
        }
        order.insert(best.1, q);
    }
    let mut cur = eval(&order);
    loop {
        let mut improved = false;
        for i in 0..n {
            for j in i + 1..n {
                order.swap(i, j);
                let s = eval(&order);
                if s > cur + 1e-15 {
                    cur = s;
                    improved = true;
                } else {
                    order.swap(i, j);
                }
            }
        }
        // single-qubit moves catch what swaps miss
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut cand = order.clone();
                let q = cand.remove(i);
                cand.insert(j, q);
                let s = eval(&cand);
                if s > cur + 1e-15 {
                    cur = s;
                    order = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (cur, order)
}

pub fn best_order(qubits: &[Qubit], objective: &Objective) -> Result<BestOrder> {
    check(qubits)?;
    check_objective(qubits.len(), objective)?;
    let n = qubits.len();
    let ex = n <= EXHAUSTIVE_MAX;
    let (_, order) = if ex { exhaustive(qubits, objective) } else { heuristic(qubits, objective) };
    let all = (ex && n <= LIST_ALL_MAX).then(|| {
        let mut p: Vec<usize> = (0..n).collect();
        let mut out = Vec::new();
        loop {
            out.push(schedule(qubits, &p, objective).expect("valid permutation"));
            if !next_permutation(&mut p) {
                break;
            }
        }
        out
    });
    Ok(BestOrder {
        best: schedule(qubits, &order, objective)?,
        exhaustive: ex,
        all,
    })
}

/// Reports at each qubit's own optimum, with F_STC1 scaled by its penalty.
///
/// `models[i]` belongs to qubit i; the result follows the schedule order.
pub fn sequential_fidelity(models: &[(TunnelModel, DetectorModel)], sched: &QubitSchedule) -> Result<Vec<FidelityReport>> {
    check_order(models.len(), &sched.order)?;
    sched
        .order
        .iter()
        .zip(&sched.lambdas)
        .map(|(&q, &lam)| {
            let (tm, det) = &models[q];
            let r = optimize(tm, det, false)?.report;
            let mut out = FidelityReport::from_components(
                (r.f_stc0, lam * r.f_stc1),
                (r.f_e0, r.f_e1),
                r.p_miss,
                r.t_opt,
                r.x_opt,
            )?;
            out.error_fm = r.error_fm;
            Ok(out)
        })
        .collect()
}
