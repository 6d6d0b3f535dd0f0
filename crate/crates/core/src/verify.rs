//! Property checkers for the structural claims the algorithms rely on.
//!
//! Set functions are evaluated on subsets of a ground set of at most
//! [`MAX_GROUND`] elements, encoded as bitmasks. "Monotone" follows the cost
//! convention: adding elements never increases the value, `f(S ∪ {x}) ≤ f(S)`.
//! Super-modularity is checked in its pairwise form
//! `f(S ∪ {i}) + f(S ∪ {j}) ≤ f(S) + f(S ∪ {i, j})`.
//!
//! Checkers report violations; they never panic on a failed property.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::csolve::hessian_block;
use crate::discrete::DiscreteProblem;
use crate::error::{Error, Result};
use crate::model::{delay_coefficients, separable_cost, Instance, Order, T_MIN};

pub const MAX_GROUND: usize = 20;
/// Ground sets up to this size are enumerated under [`CheckMode::Auto`].
pub const AUTO_EXHAUSTIVE: usize = 10;
pub const SET_TOL: f64 = 1e-9;

pub trait SetFunction {
    fn ground_size(&self) -> usize;
    fn eval(&self, set: u32) -> f64;
    /// Whether `set` belongs to the family being checked. Triples touching an
    /// inadmissible set are skipped.
    fn admits(&self, _set: u32) -> bool {
        true
    }
}

/// A closure over bitmasks as a [`SetFunction`].
pub struct FnSet<F> {
    size: usize,
    f: F,
}

pub fn from_fn<F: Fn(u32) -> f64>(size: usize, f: F) -> FnSet<F> {
    FnSet { size, f }
}

impl<F: Fn(u32) -> f64> SetFunction for FnSet<F> {
    fn ground_size(&self) -> usize {
        self.size
    }
    fn eval(&self, set: u32) -> f64 {
        (self.f)(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckMode {
    /// Exhaustive up to [`AUTO_EXHAUSTIVE`] elements, sampled above.
    Auto,
    Exhaustive,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: usize,
    pub violations: usize,
    /// Input of the most negative slack among the violations.
    pub worst_witness: Option<Value>,
    /// Smallest slack observed; `None` when nothing was checked.
    pub margin: Option<f64>,
}

struct Tally {
    report: PropertyReport,
    worst: f64,
}

impl Tally {
    fn new(property: impl Into<String>) -> Self {
        Tally {
            report: PropertyReport {
                property: property.into(),
                trials: 0,
                violations: 0,
                worst_witness: None,
                margin: None,
            },
            worst: f64::INFINITY,
        }
    }

    fn record(&mut self, slack: f64, tol: f64, witness: impl FnOnce() -> Value) {
        let r = &mut self.report;
        r.trials += 1;
        r.margin = Some(r.margin.map_or(slack, |m| m.min(slack)));
        // NaN slack is a violation too
        if !(slack >= -tol) {
            r.violations += 1;
            if !(slack >= self.worst) {
                self.worst = slack;
                r.worst_witness = Some(witness());
            }
        }
    }
}

fn members(set: u32, size: usize) -> Vec<usize> {
    (0..size).filter(|&k| set >> k & 1 == 1).collect()
}

fn check_ground(size: usize) -> Result<()> {
    if size > MAX_GROUND {
        return Err(Error::Size {
            what: "set-function ground set",
            actual: size,
            limit: MAX_GROUND,
        });
    }
    Ok(())
}

fn exhaustive(size: usize, mode: CheckMode) -> bool {
    match mode {
        CheckMode::Auto => size <= AUTO_EXHAUSTIVE,
        CheckMode::Exhaustive => true,
        CheckMode::Sampled => false,
    }
}

/// Random subset of the elements outside `exclude`.
fn random_subset<R: Rng>(rng: &mut R, size: usize, exclude: u32) -> u32 {
    let mut s = 0u32;
    for k in 0..size {
        if exclude >> k & 1 == 0 && rng.gen_bool(0.5) {
            s |= 1 << k;
        }
    }
    s
}

/// Pairwise super-modularity. In sampled mode `trials` triples are drawn; in
/// exhaustive mode every `(S, i < j)` is visited and `trials` is ignored.
pub fn check_supermodular<F: SetFunction + ?Sized>(
    f: &F,
    trials: usize,
    seed: u64,
    mode: CheckMode,
) -> Result<PropertyReport> {
    let size = f.ground_size();
    check_ground(size)?;
    let mut tally = Tally::new("supermodular");
    let mut visit = |s: u32, i: usize, j: usize| {
        let (si, sj, sij) = (s | 1 << i, s | 1 << j, s | 1 << i | 1 << j);
        if ![s, si, sj, sij].iter().all(|&x| f.admits(x)) {
            return;
        }
        let (a, b, c, d) = (f.eval(s), f.eval(si), f.eval(sj), f.eval(sij));
        let slack = (a + d) - (b + c);
        tally.record(slack, SET_TOL, || {
            json!({"set": members(s, size), "i": i, "j": j,
                   "f_s": a, "f_si": b, "f_sj": c, "f_sij": d})
        });
    };
    if size >= 2 {
        if exhaustive(size, mode) {
            for s in 0..(1u32 << size) {
                for i in 0..size {
                    for j in i + 1..size {
                        if s >> i & 1 == 0 && s >> j & 1 == 0 {
                            visit(s, i, j);
                        }
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..trials {
                let i = rng.gen_range(0..size);
                let mut j = rng.gen_range(0..size - 1);
                if j >= i {
                    j += 1;
                }
                let s = random_subset(&mut rng, size, 1 << i | 1 << j);
                visit(s, i.min(j), i.max(j));
            }
        }
    }
    Ok(tally.report)
}

/// Cost-convention monotonicity: `f(S ∪ {x}) ≤ f(S) + 1e-9`.
pub fn check_monotone<F: SetFunction + ?Sized>(
    f: &F,
    trials: usize,
    seed: u64,
    mode: CheckMode,
) -> Result<PropertyReport> {
    let size = f.ground_size();
    check_ground(size)?;
    let mut tally = Tally::new("monotone");
    let mut visit = |s: u32, x: usize| {
        let sx = s | 1 << x;
        if !(f.admits(s) && f.admits(sx)) {
            return;
        }
        let (a, b) = (f.eval(s), f.eval(sx));
        tally.record(
            a - b,
            SET_TOL,
            || json!({"set": members(s, size), "x": x, "f_s": a, "f_sx": b}),
        );
    };
    if size >= 1 {
        if exhaustive(size, mode) {
            for s in 0..(1u32 << size) {
                for x in (0..size).filter(|&x| s >> x & 1 == 0) {
                    visit(s, x);
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..trials {
                let x = rng.gen_range(0..size);
                let s = random_subset(&mut rng, size, 1 << x);
                visit(s, x);
            }
        }
    }
    Ok(tally.report)
}

/// `D_i` of one packet as a set function over resource-block cells.
///
/// Cell `c` is level `c % levels` of slot `c / levels` (both 0-based); a set
/// `S` gives slot `j` as many quanta as it has cells in `S`. Only slots owned
/// by the packet deliver bits, and the delay is `ℓ` times the last owned slot
/// with at least one quantum (0 if none).
#[derive(Debug, Clone)]
pub struct DiSetFunction<'a> {
    problem: &'a DiscreteProblem,
    packet: usize,
    owned: Vec<bool>,
    levels: usize,
    size: usize,
    include_delay: bool,
    greedy_reachable: bool,
}

impl<'a> DiSetFunction<'a> {
    /// `ownership[j]` is the 0-based owner of slot `j`, if any.
    pub fn new(
        problem: &'a DiscreteProblem,
        packet: usize,
        ownership: &[Option<usize>],
        levels: usize,
    ) -> Result<Self> {
        if packet >= problem.n() {
            return Err(Error::InvalidInstance(format!("no packet {}", packet + 1)));
        }
        if levels == 0 {
            return Err(Error::InvalidInstance("at least one level per slot is required".into()));
        }
        let size = ownership.len() * levels;
        check_ground(size)?;
        Ok(DiSetFunction {
            problem,
            packet,
            owned: ownership.iter().map(|o| *o == Some(packet)).collect(),
            levels,
            size,
            include_delay: true,
            greedy_reachable: false,
        })
    }

    /// Keeps only the first `cells` cells of the ground set.
    pub fn truncate(mut self, cells: usize) -> Self {
        self.size = self.size.min(cells);
        self
    }

    /// Drops the `ℓ·i_max` term.
    pub fn distortion_only(mut self) -> Self {
        self.include_delay = false;
        self
    }

    /// Restricts to sets GREEDY can produce: levels of a slot fill from the
    /// bottom and occupied slots form a prefix.
    pub fn greedy_reachable(mut self) -> Self {
        self.greedy_reachable = true;
        self
    }

    fn quanta(&self, set: u32) -> Vec<u32> {
        let slots = self.size.div_ceil(self.levels);
        let mut r = vec![0u32; slots];
        for c in members(set, self.size) {
            r[c / self.levels] += 1;
        }
        r
    }
}

impl SetFunction for DiSetFunction<'_> {
    fn ground_size(&self) -> usize {
        self.size
    }

    fn eval(&self, set: u32) -> f64 {
        let p = self.problem.params();
        let mut sent = 0.0;
        let mut last = 0;
        for (j, &r) in self.quanta(set).iter().enumerate() {
            if self.owned[j] && r > 0 {
                sent += p.slot_bits(r);
                last = j + 1;
            }
        }
        let sent_cost = self.problem.packet_cost(self.packet, sent, 0);
        if self.include_delay {
            sent_cost + p.slot_len * last as f64
        } else {
            sent_cost
        }
    }

    fn admits(&self, set: u32) -> bool {
        if !self.greedy_reachable {
            return true;
        }
        for c in members(set, self.size) {
            if c % self.levels > 0 && set >> (c - 1) & 1 == 0 {
                return false;
            }
        }
        let r = self.quanta(set);
        let occupied = r.iter().take_while(|&&q| q > 0).count();
        r[occupied..].iter().all(|&q| q == 0)
    }
}

/// Midpoint convexity of the total cost on random feasible pairs, plus
/// positive-definiteness (det > 0, trace > 0) of every 2×2 Hessian block at
/// random interior points `(E, t) ∈ [0.1, 50] × [0.1, 10]`.
///
/// The midpoint tolerance is `1e-9` scaled by `max(1, |U(x)| + |U(y)|)` so that
/// it tracks the rounding error of the cost itself.
pub fn check_convexity(inst: &Instance, order: &Order, trials: usize, seed: u64) -> Result<PropertyReport> {
    if order.len() != inst.n() {
        return Err(Error::InvalidOrder("order does not match instance".into()));
    }
    let bits = inst.bits();
    let coeffs = delay_coefficients(order);
    let n = inst.n();
    let t_hi = 2.0 * bits.iter().cloned().fold(1.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("joint-convexity");

    let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let wsum: f64 = w.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let spend = inst.energy() * rng.gen_range(0.0..=1.0);
        w.iter()
            .flat_map(|wi| [spend * wi / wsum, rng.gen_range(T_MIN..t_hi)])
            .collect::<Vec<_>>()
    };

    for _ in 0..trials {
        let x = sample(&mut rng);
        let y = sample(&mut rng);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let (ux, uy, um) = (
            separable_cost(bits, &coeffs, &x),
            separable_cost(bits, &coeffs, &y),
            separable_cost(bits, &coeffs, &mid),
        );
        let slack = 0.5 * (ux + uy) - um;
        let tol = SET_TOL * (ux.abs() + uy.abs()).max(1.0);
        tally.record(
            slack,
            tol,
            || json!({"kind": "midpoint", "x": x, "y": y, "slack": slack}),
        );

        for (i, &a) in coeffs.iter().enumerate() {
            let e = rng.gen_range(0.1..=50.0);
            let t = rng.gen_range(0.1..=10.0);
            let h = hessian_block(inst, i, e, t, a)?;
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            let trace = h[0][0] + h[1][1];
            // scale-free: det relative to the diagonal product, capped by the sign of the trace
            let slack = (det / (h[0][0] * h[1][1]).abs().max(f64::MIN_POSITIVE)).min(trace.signum());
            // strict: a zero determinant is a violation
            tally.record(
                slack,
                -f64::MIN_POSITIVE,
                || json!({"kind": "hessian", "packet": i + 1, "e": e, "t": t, "det": det, "trace": trace}),
            );
        }
    }
    Ok(tally.report)
}
