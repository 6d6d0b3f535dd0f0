//! Continuous solver for a fixed transmission order.
//!
//! For a fixed order the cost `Σ 2^(B_i - B̂_i) + a_i·t_i` is jointly convex in
//! `(E_i, t_i)`, so any stationary point of the constrained problem is the
//! global optimum. We minimise it with projected gradient descent in a diagonal
//! metric taken from the Hessian diagonal: Barzilai-Borwein trial steps, Armijo
//! backtracking along the projection arc, and termination on the Euclidean
//! projected-gradient residual `‖x - P(x - ∇U)‖`.
//!
//! The feasible set is `{E ≥ 0, ΣE ≤ E_total} × {t ≥ t_min}`. The energy block is
//! projected exactly (sort-based simplex projection), the time block by clamping.
//! Near `t = t_min` the curvature in `E` is many orders of magnitude above its
//! value elsewhere, which is what the metric compensates for.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, delay_coefficients, evaluate_cost, rate_bits, ContinuousAllocation, CostBreakdown, Instance, Order, T_MIN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Tolerance on the projected-gradient residual.
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub init_step: f64,
    pub t_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 200_000,
            grad_tol: 1e-8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            init_step: 1.0,
            t_min: T_MIN,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.grad_tol > 0.0) {
            return bad(format!("grad_tol must be positive, got {}", self.grad_tol));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad(format!("armijo_c must lie in (0,1), got {}", self.armijo_c));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad(format!(
                "backtrack_factor must lie in (0,1), got {}",
                self.backtrack_factor
            ));
        }
        if !(self.init_step > 0.0 && self.init_step.is_finite()) {
            return bad(format!("init_step must be positive, got {}", self.init_step));
        }
        if !(self.t_min >= T_MIN && self.t_min.is_finite()) {
            return bad(format!("t_min must be at least {T_MIN}, got {}", self.t_min));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub alloc: ContinuousAllocation,
    pub cost: CostBreakdown,
    pub iterations: usize,
    pub final_pg_norm: f64,
    pub converged: bool,
    /// `E - Σ E_i`.
    pub energy_slack: f64,
    /// Weight `a_i` of each `t_i` in the total cost under the chosen order.
    pub delay_coefficients: Vec<f64>,
    /// 1-based packets for which the optimum delivers more bits than the packet holds.
    pub bhat_exceeds_bits: Vec<usize>,
}

fn check_point(inst: &Instance, alloc: &ContinuousAllocation) -> Result<()> {
    alloc.check_shape(inst.n())?;
    for (i, (&e, &t)) in alloc.energies.iter().zip(&alloc.times).enumerate() {
        if !(t >= T_MIN) || !(e >= 0.0) {
            return Err(Error::Domain(format!(
                "packet {}: (E, t) = ({e}, {t}) outside E >= 0, t >= {T_MIN}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Partial derivatives of one packet's term `2^(B - B̂) + a·t` with respect to `(E, t)`.
#[inline]
fn packet_grad(bits: f64, a: f64, e: f64, t: f64) -> (f64, f64) {
    let d = (bits - rate_bits(e, t)).exp2();
    let share = t / (t + e);
    let de = -d * share;
    let dt = -d * ((e / t).ln_1p() - e / (t + e)) + a;
    (de, dt)
}

/// Diagonal of the packet's Hessian block, `(∂²/∂E², ∂²/∂t²)`.
#[inline]
fn packet_curvature(bits: f64, e: f64, t: f64) -> (f64, f64) {
    let d = (bits - rate_bits(e, t)).exp2();
    let s = t + e;
    let phi = (e / t).ln_1p() - e / s;
    (d * t * (t + 1.0) / (s * s), d * (phi * phi + e * e / (t * s * s)))
}

/// Diagonal metric for the scaled step; tiny curvatures are floored relative to the largest.
fn metric_into(bits: &[f64], x: &[f64], out: &mut [f64]) {
    for (i, (et, w)) in x.chunks_exact(2).zip(out.chunks_exact_mut(2)).enumerate() {
        let (he, ht) = packet_curvature(bits[i], et[0], et[1]);
        w[0] = he;
        w[1] = ht;
    }
    let top = out.iter().copied().fold(0.0, f64::max);
    let floor = if top > 0.0 && top.is_finite() { 1e-10 * top } else { 1.0 };
    for w in out.iter_mut() {
        *w = if w.is_finite() { w.max(floor) } else { floor };
    }
}

fn grad_into(bits: &[f64], coeffs: &[f64], x: &[f64], out: &mut [f64]) {
    for (i, (et, g)) in x.chunks_exact(2).zip(out.chunks_exact_mut(2)).enumerate() {
        let (de, dt) = packet_grad(bits[i], coeffs[i], et[0], et[1]);
        g[0] = de;
        g[1] = dt;
    }
}

pub(crate) fn interleave(alloc: &ContinuousAllocation) -> Vec<f64> {
    alloc
        .energies
        .iter()
        .zip(&alloc.times)
        .flat_map(|(&e, &t)| [e, t])
        .collect()
}

/// Gradient of the total cost, laid out as `(∂U/∂E_1, ∂U/∂t_1, ∂U/∂E_2, …)`.
pub fn gradient(inst: &Instance, alloc: &ContinuousAllocation) -> Result<Vec<f64>> {
    check_point(inst, alloc)?;
    let coeffs = delay_coefficients(&alloc.order);
    let x = interleave(alloc);
    let mut g = vec![0.0; x.len()];
    grad_into(inst.bits(), &coeffs, &x, &mut g);
    Ok(g)
}

/// The 2×2 Hessian block of packet `packet` at `(e, t)`, obtained by central
/// differences of the analytic gradient. `a` is the packet's delay coefficient;
/// it enters the gradient linearly and drops out of the block.
pub fn hessian_block(inst: &Instance, packet: usize, e: f64, t: f64, a: f64) -> Result<[[f64; 2]; 2]> {
    if packet >= inst.n() {
        return Err(Error::InvalidInstance(format!("no packet {}", packet + 1)));
    }
    if !(t >= T_MIN) || !(e >= 0.0) || !e.is_finite() || !t.is_finite() {
        return Err(Error::Domain(format!("(E, t) = ({e}, {t}) outside the clamped domain")));
    }
    let b = inst.bits()[packet];
    // The analytic gradient is smooth for E > -t, so stepping E slightly below 0 is safe.
    let he = 1e-5 * e.abs().max(1.0);
    let ht = (1e-5 * t.max(1.0)).min(0.5 * t);

    let (ge_p, gt_p) = packet_grad(b, a, e + he, t);
    let (ge_m, gt_m) = packet_grad(b, a, e - he, t);
    let (ge_tp, gt_tp) = packet_grad(b, a, e, t + ht);
    let (ge_tm, gt_tm) = packet_grad(b, a, e, t - ht);

    let hee = (ge_p - ge_m) / (2.0 * he);
    let htt = (gt_tp - gt_tm) / (2.0 * ht);
    let het = 0.5 * ((ge_tp - ge_tm) / (2.0 * ht) + (gt_p - gt_m) / (2.0 * he));
    Ok([[hee, het], [het, htt]])
}

/// Closed-form block determinant `P²·t/(t+e)²·log2²(t/(t+e))` with
/// `P = 2^B·((e+t)/t)^(-t)`.
///
/// This expression carries the logarithm in base 2 but treats the derivative
/// of `2^x` as `2^x`; it is therefore proportional, not equal, to the true
/// determinant (the factor is `ln²2`). Used for sign and shape checks.
pub fn closed_form_block_determinant(bits: f64, e: f64, t: f64) -> f64 {
    let p = (bits - rate_bits(e, t)).exp2();
    let r = t / (t + e);
    let l2 = r.log2();
    p * p * t / ((t + e) * (t + e)) * l2 * l2
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σx ≤ budget}`.
pub fn project_capped_simplex(v: &[f64], budget: f64) -> Vec<f64> {
    project_weighted_simplex(v, &vec![1.0; v.len()], budget)
}

/// Projection of `v` onto `{x ≥ 0, Σx ≤ budget}` in the norm `Σ w_i·(x_i - v_i)²`.
///
/// The solution is `x_i = max(v_i - θ/w_i, 0)`; `θ` is found by sorting the
/// breakpoints `w_i·v_i`.
pub fn project_weighted_simplex(v: &[f64], w: &[f64], budget: f64) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clamped.iter().sum::<f64>() <= budget {
        return clamped;
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| (w[b] * v[b]).total_cmp(&(w[a] * v[a])));
    let (mut cum_v, mut cum_inv) = (0.0, 0.0);
    let mut theta = 0.0;
    for &k in &idx {
        cum_v += v[k];
        cum_inv += 1.0 / w[k];
        let cand = (cum_v - budget) / cum_inv;
        if w[k] * v[k] - cand > 0.0 {
            theta = cand;
        } else {
            break;
        }
    }
    let mut out: Vec<f64> = v.iter().zip(w).map(|(&x, &wi)| (x - theta / wi).max(0.0)).collect();
    // θ inherits the rounding error of the largest |v_i|; redistribute the
    // residual over the support so ΣE lands on the budget.
    for _ in 0..4 {
        let inv: f64 = out
            .iter()
            .zip(w)
            .filter(|(y, _)| **y > 0.0)
            .map(|(_, wi)| 1.0 / wi)
            .sum();
        let residual = budget - out.iter().sum::<f64>();
        if inv == 0.0 || residual.abs() <= 4.0 * f64::EPSILON * budget {
            break;
        }
        for (y, wi) in out.iter_mut().zip(w) {
            if *y > 0.0 {
                *y = (*y + residual / (wi * inv)).max(0.0);
            }
        }
    }
    out
}

fn project(x: &[f64], w: &[f64], budget: f64, t_min: f64) -> Vec<f64> {
    let energies: Vec<f64> = x.iter().step_by(2).copied().collect();
    let we: Vec<f64> = w.iter().step_by(2).copied().collect();
    let pe = project_weighted_simplex(&energies, &we, budget);
    let mut out = Vec::with_capacity(x.len());
    for (e, t) in pe.into_iter().zip(x.iter().skip(1).step_by(2)) {
        out.push(e);
        out.push(t.max(t_min));
    }
    out
}

fn pg_residual(x: &[f64], g: &[f64], budget: f64, t_min: f64) -> f64 {
    let trial: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - gi).collect();
    let p = project(&trial, &vec![1.0; x.len()], budget, t_min);
    x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `U(to) - U(from)` evaluated without subtracting two nearly equal totals.
///
/// With `L = ln(1 + E/t)` the change in delivered bits is
/// `(Δt·L' + t·(L' - L)) / ln 2`, and `L' - L = ln1p((t·ΔE - E·Δt) / (t'(t + E)))`.
fn cost_delta(bits: &[f64], coeffs: &[f64], from: &[f64], to: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, (p, q)) in from.chunks_exact(2).zip(to.chunks_exact(2)).enumerate() {
        let (e, t, e2, t2) = (p[0], p[1], q[0], q[1]);
        let de = e2 - e;
        let dt = t2 - t;
        let l2 = (e2 / t2).ln_1p();
        let dl = ((t * de - e * dt) / (t2 * (t + e))).ln_1p();
        let dbits_nat = dt * l2 + t * dl;
        let d = (bits[i] - rate_bits(e, t)).exp2();
        total += d * (-dbits_nat).exp_m1() + coeffs[i] * dt;
    }
    total
}

fn dot_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).abs()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Feasible starting point: energy proportional to packet size, `t_i = B_i / 2`.
pub fn initial_point(inst: &Instance, order: &Order, t_min: f64) -> ContinuousAllocation {
    let total_bits: f64 = inst.bits().iter().sum();
    ContinuousAllocation {
        energies: inst.bits().iter().map(|b| inst.energy() * b / total_bits).collect(),
        times: inst.bits().iter().map(|b| (b / 2.0).max(t_min)).collect(),
        order: order.clone(),
    }
}

/// Minimises the total cost for a fixed order.
///
/// Non-convergence is reported through [`SolveReport::converged`]; only invalid
/// inputs produce an error.
pub fn solve_fixed_order(inst: &Instance, order: &Order, cfg: &SolverConfig) -> Result<SolveReport> {
    run(inst, order, cfg, None)
}

/// As [`solve_fixed_order`], also returning the cost after every accepted step
/// (starting with the initial point).
pub fn solve_with_history(inst: &Instance, order: &Order, cfg: &SolverConfig) -> Result<(SolveReport, Vec<f64>)> {
    let mut hist = Vec::new();
    let rep = run(inst, order, cfg, Some(&mut hist))?;
    Ok((rep, hist))
}

fn run(inst: &Instance, order: &Order, cfg: &SolverConfig, mut history: Option<&mut Vec<f64>>) -> Result<SolveReport> {
    cfg.validate()?;
    if order.len() != inst.n() {
        return Err(Error::InvalidOrder(format!(
            "order has {} packets, instance has {}",
            order.len(),
            inst.n()
        )));
    }
    let bits = inst.bits();
    let budget = inst.energy();
    let coeffs = delay_coefficients(order);

    let ones = vec![1.0; 2 * inst.n()];
    let mut x = project(
        &interleave(&initial_point(inst, order, cfg.t_min)),
        &ones,
        budget,
        cfg.t_min,
    );
    let mut g = vec![0.0; x.len()];
    grad_into(bits, &coeffs, &x, &mut g);
    let mut w = vec![0.0; x.len()];
    metric_into(bits, &x, &mut w);
    if let Some(h) = history.as_deref_mut() {
        h.push(model::separable_cost(bits, &coeffs, &x));
    }

    let mut step = cfg.init_step;
    let mut iterations = 0;
    let mut residual = pg_residual(&x, &g, budget, cfg.t_min);
    let mut g_next = vec![0.0; x.len()];

    while residual > cfg.grad_tol && iterations < cfg.max_iters {
        // The projection reproduces ΣE_i only to within a few ulps, which moves
        // the cost by about |∂U/∂E|·ulp. Armijo cannot resolve decreases below that.
        let noise = 8.0 * f64::EPSILON * dot_abs(&g, &x);
        let mut alpha = step;
        let accepted = loop {
            let trial: Vec<f64> = x
                .iter()
                .zip(&g)
                .zip(&w)
                .map(|((xi, gi), wi)| xi - alpha * gi / wi)
                .collect();
            let xn = project(&trial, &w, budget, cfg.t_min);
            let dir: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &dir);
            let du = cost_delta(bits, &coeffs, &x, &xn);
            if du.is_finite() && du <= cfg.armijo_c * decrease + noise {
                break Some(xn);
            }
            alpha *= cfg.backtrack_factor;
            if alpha < 1e-30 {
                break None;
            }
        };
        let Some(xn) = accepted else {
            // No Armijo step exists at floating-point resolution.
            break;
        };
        iterations += 1;

        grad_into(bits, &coeffs, &xn, &mut g_next);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let sws: f64 = s.iter().zip(&w).map(|(si, wi)| si * si * wi).sum();
        step = if sy > 0.0 {
            (sws / sy).clamp(1e-12, 1e12)
        } else {
            (alpha * 2.0).min(1e12)
        };

        x = xn;
        std::mem::swap(&mut g, &mut g_next);
        metric_into(bits, &x, &mut w);
        residual = pg_residual(&x, &g, budget, cfg.t_min);
        if let Some(h) = history.as_deref_mut() {
            h.push(model::separable_cost(bits, &coeffs, &x));
        }
    }

    let alloc = ContinuousAllocation {
        energies: x.iter().step_by(2).copied().collect(),
        times: x.iter().skip(1).step_by(2).copied().collect(),
        order: order.clone(),
    };
    let cost = evaluate_cost(inst, &alloc)?;
    let bhat_exceeds_bits = cost
        .bhat
        .iter()
        .zip(bits)
        .enumerate()
        .filter(|(_, (bh, b))| bh > b)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(SolveReport {
        energy_slack: budget - alloc.energy_used(),
        alloc,
        cost,
        iterations,
        final_pg_norm: residual,
        converged: residual <= cfg.grad_tol,
        delay_coefficients: coeffs,
        bhat_exceeds_bits,
    })
}
