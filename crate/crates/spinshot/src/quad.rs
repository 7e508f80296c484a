//! Adaptive Gauss-Legendre quadrature and a golden-section maximiser.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

const ORDER: usize = 16;

/// Nodes and weights on [-1, 1].
pub(crate) fn rule(order: usize) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(NonZeroUsize::new(order).expect("order > 0"));
    gl.into_iter().collect()
}

fn rule16() -> &'static [(f64, f64)] {
    static R: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    R.get_or_init(|| rule(ORDER))
}

fn panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule16().iter().map(|&(x, w)| w * f(m + h * x)).sum::<f64>() * h
}

/// Integrate `f` over the panels delimited by `breaks` (sorted) to
/// |err| <= max(abs_tol, rel_tol * |I|).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], rel_tol: f64, abs_tol: f64) -> Result<f64> {
    let mut stack: Vec<(f64, f64, f64, u32)> = Vec::new();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let v = panel(&mut f, w[0], w[1]);
            total += v;
            stack.push((w[0], w[1], v, 0));
        }
    }
    let span = breaks.last().copied().unwrap_or(0.0) - breaks.first().copied().unwrap_or(0.0);
    if span <= 0.0 {
        return Ok(0.0);
    }
    let mut result = 0.0;
    let scale = total.abs();
    while let Some((a, b, whole, depth)) = stack.pop() {
        let m = 0.5 * (a + b);
        let left = panel(&mut f, a, m);
        let right = panel(&mut f, m, b);
        let err = (left + right - whole).abs();
        let budget = (abs_tol.max(rel_tol * scale)) * (b - a) / span;
        if err <= budget || (b - a) <= 1e-13 * span.max(1.0) {
            result += left + right;
        } else if depth >= 40 {
            return Err(Error::Quadrature(format!("no convergence on [{a}, {b}], err {err:e}")));
        } else {
            stack.push((a, m, left, depth + 1));
            stack.push((m, b, right, depth + 1));
        }
    }
    Ok(result)
}

/// Fixed composite rule over `breaks`, `per_panel` nodes each.
pub fn composite_nodes(breaks: &[f64], per_panel: usize) -> Vec<(f64, f64)> {
    let r = rule(per_panel);
    let mut out = Vec::with_capacity(breaks.len() * per_panel);
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (m, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            out.extend(r.iter().map(|&(x, wt)| (m + h * x, wt * h)));
        }
    }
    out
}

/// Golden-section search for the maximum of a unimodal `f` on [a, b].
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
