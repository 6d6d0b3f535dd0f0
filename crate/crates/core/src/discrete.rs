//! Slotted resource-block allocation.
//!
//! Time is cut into slots of length `ℓ` and energy into quanta of size `e`. A
//! slot belongs to at most one packet and carries `R_j ≥ 1` quanta, delivering
//! `ℓ·log2(1 + e·R_j/ℓ)` bits. Packet `i` pays
//!
//! ```text
//! D_i = 2^(B_i - Σ_{j ∈ P_i} b_j) + ℓ·i_max
//! ```
//!
//! where `i_max` is the last slot it owns (no delay if it owns none).
//! Occupied slots always form a prefix `1..=last`: the greedy only ever opens
//! slot `last + 1`, and the oracle searches the same family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rate_bits, validate_bits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParams {
    pub slot_len: f64,
    pub quantum: f64,
    /// `⌊E / e⌋`.
    pub budget_quanta: usize,
    pub max_slots: usize,
}

impl DiscreteParams {
    /// `max_slots = None` leaves the slot count limited only by the budget.
    pub fn from_energy(energy: f64, slot_len: f64, quantum: f64, max_slots: Option<usize>) -> Result<Self> {
        if !(energy >= 0.0 && energy.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "energy must be non-negative, got {energy}"
            )));
        }
        if !(quantum > 0.0 && quantum.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "quantum must be positive, got {quantum}"
            )));
        }
        // absorb representation error, e.g. 0.3 / 0.1
        let budget_quanta = (energy / quantum * (1.0 + 1e-12)).floor() as usize;
        let p = DiscreteParams {
            slot_len,
            quantum,
            budget_quanta,
            max_slots: max_slots.unwrap_or(budget_quanta),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slot_len > 0.0 && self.slot_len.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "slot length must be positive, got {}",
                self.slot_len
            )));
        }
        if !(self.quantum > 0.0 && self.quantum.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "quantum must be positive, got {}",
                self.quantum
            )));
        }
        Ok(())
    }

    /// Bits carried by a slot holding `quanta` resource blocks.
    pub fn slot_bits(&self, quanta: u32) -> f64 {
        rate_bits(self.quantum * quanta as f64, self.slot_len)
    }
}

/// Packet sizes together with the discretisation. The energy budget may be zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteProblem {
    bits: Vec<f64>,
    params: DiscreteParams,
}

impl DiscreteProblem {
    pub fn new(bits: Vec<f64>, params: DiscreteParams) -> Result<Self> {
        validate_bits(&bits)?;
        params.validate()?;
        Ok(DiscreteProblem { bits, params })
    }

    pub fn bits(&self) -> &[f64] {
        &self.bits
    }

    pub fn params(&self) -> &DiscreteParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.bits.len()
    }

    /// `D_i` for a packet that has received `sent` bits and whose last slot is
    /// `last_slot` (1-based, 0 for none).
    pub fn packet_cost(&self, packet: usize, sent: f64, last_slot: usize) -> f64 {
        (self.bits[packet] - sent).exp2() + self.params.slot_len * last_slot as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotAssignment {
    /// 0-based packet index.
    pub owner: usize,
    pub quanta: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotWire {
    owner: usize,
    quanta: u32,
}

impl Serialize for SlotAssignment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SlotWire {
            owner: self.owner + 1,
            quanta: self.quanta,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SlotAssignment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = SlotWire::deserialize(d)?;
        if w.owner == 0 {
            return Err(serde::de::Error::custom("slot owners are 1-based packet labels"));
        }
        Ok(SlotAssignment {
            owner: w.owner - 1,
            quanta: w.quanta,
        })
    }
}

/// Occupied slots `1..=slots.len()`; JSON form `{"slots":[{"owner":i,"quanta":R}]}`
/// with 1-based owners.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteAllocation {
    pub slots: Vec<SlotAssignment>,
}

impl DiscreteAllocation {
    pub fn quanta_used(&self) -> usize {
        self.slots.iter().map(|s| s.quanta as usize).sum()
    }

    /// Checks the allocation against `problem`: known owners, `R_j ≥ 1`, budget.
    pub fn validate(&self, problem: &DiscreteProblem) -> Result<()> {
        for (j, s) in self.slots.iter().enumerate() {
            if s.owner >= problem.n() {
                return Err(Error::Invariant(format!(
                    "slot {} owned by unknown packet {}",
                    j + 1,
                    s.owner + 1
                )));
            }
            if s.quanta == 0 {
                return Err(Error::Invariant(format!(
                    "slot {} is owned but carries no quanta",
                    j + 1
                )));
            }
        }
        let used = self.quanta_used();
        if used > problem.params.budget_quanta {
            return Err(Error::Invariant(format!(
                "{used} quanta used, budget is {}",
                problem.params.budget_quanta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCost {
    pub per_packet: Vec<f64>,
    pub total: f64,
}

/// Per-packet `(bits sent, last owned slot)` for an allocation.
fn packet_state(problem: &DiscreteProblem, alloc: &DiscreteAllocation) -> (Vec<f64>, Vec<usize>) {
    let mut sent = vec![0.0; problem.n()];
    let mut last = vec![0; problem.n()];
    for (j, s) in alloc.slots.iter().enumerate() {
        sent[s.owner] += problem.params.slot_bits(s.quanta);
        last[s.owner] = j + 1;
    }
    (sent, last)
}

fn cost_from_state(problem: &DiscreteProblem, sent: &[f64], last: &[usize]) -> DiscreteCost {
    let per_packet: Vec<f64> = (0..problem.n())
        .map(|i| problem.packet_cost(i, sent[i], last[i]))
        .collect();
    DiscreteCost {
        total: per_packet.iter().sum(),
        per_packet,
    }
}

pub fn discrete_cost(problem: &DiscreteProblem, alloc: &DiscreteAllocation) -> Result<DiscreteCost> {
    alloc.validate(problem)?;
    let (sent, last) = packet_state(problem, alloc);
    Ok(cost_from_state(problem, &sent, &last))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreedyAction {
    /// One more quantum in an occupied slot.
    Increment,
    /// Slot `last + 1` opened with a single quantum.
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub action: GreedyAction,
    /// 1-based.
    pub slot: usize,
    /// 1-based.
    pub packet: usize,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyResult {
    pub allocation: DiscreteAllocation,
    pub cost: DiscreteCost,
    pub trace: Vec<TraceStep>,
}

/// Renders a greedy trace as CSV (`iteration,action,slot,packet,total_cost`).
pub fn trace_csv(trace: &[TraceStep]) -> String {
    let mut out = String::from("iteration,action,slot,packet,total_cost\n");
    for t in trace {
        let action = match t.action {
            GreedyAction::Increment => "increment",
            GreedyAction::Open => "open",
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.iteration, action, t.slot, t.packet, t.total_cost
        ));
    }
    out
}

/// Sum of `per_packet` with entry `i` replaced by `value`, in index order.
fn substituted_total(per_packet: &[f64], i: usize, value: f64) -> f64 {
    per_packet
        .iter()
        .enumerate()
        .map(|(k, &d)| if k == i { value } else { d })
        .sum()
}

/// `(total, action, slot index 0-based, packet, new D, new sent)`.
type Candidate = (f64, GreedyAction, usize, usize, f64, f64);

/// Greedy resource-block allocation.
///
/// Each round prices every "one more quantum in occupied slot `j`" move and every
/// "open slot `last + 1` for packet `i`" move, and commits the cheapest (ties:
/// smaller slot, then smaller packet). Only the affected packet's `D_i` is
/// recomputed per candidate. Stops when the budget is spent or, unless
/// `spend_all` is set, when no move strictly lowers the total.
pub fn greedy_allocate(problem: &DiscreteProblem, spend_all: bool) -> GreedyResult {
    let p = problem.params;
    let n = problem.n();
    let mut alloc = DiscreteAllocation::default();
    let mut sent = vec![0.0; n];
    let mut last = vec![0usize; n];
    let mut cost = cost_from_state(problem, &sent, &last);
    let mut trace = Vec::new();
    let mut used = 0;

    while used < p.budget_quanta {
        let mut best: Option<Candidate> = None;
        let mut consider = |cand: Candidate| {
            if best.as_ref().is_none_or(|b| cand.0 < b.0) {
                best = Some(cand);
            }
        };
        for (j, s) in alloc.slots.iter().enumerate() {
            let i = s.owner;
            let new_sent = sent[i] - p.slot_bits(s.quanta) + p.slot_bits(s.quanta + 1);
            let d = problem.packet_cost(i, new_sent, last[i]);
            consider((
                substituted_total(&cost.per_packet, i, d),
                GreedyAction::Increment,
                j,
                i,
                d,
                new_sent,
            ));
        }
        let next = alloc.slots.len();
        if next < p.max_slots {
            for (i, &had) in sent.iter().enumerate() {
                let new_sent = had + p.slot_bits(1);
                let d = problem.packet_cost(i, new_sent, next + 1);
                consider((
                    substituted_total(&cost.per_packet, i, d),
                    GreedyAction::Open,
                    next,
                    i,
                    d,
                    new_sent,
                ));
            }
        }
        let Some((total, action, j, i, d, new_sent)) = best else {
            break;
        };
        if !spend_all && !(total < cost.total) {
            break;
        }
        match action {
            GreedyAction::Increment => alloc.slots[j].quanta += 1,
            GreedyAction::Open => {
                alloc.slots.push(SlotAssignment { owner: i, quanta: 1 });
                last[i] = j + 1;
            }
        }
        sent[i] = new_sent;
        cost.per_packet[i] = d;
        cost.total = cost.per_packet.iter().sum();
        used += 1;
        trace.push(TraceStep {
            iteration: trace.len() + 1,
            action,
            slot: j + 1,
            packet: i + 1,
            total_cost: cost.total,
        });
    }

    GreedyResult {
        allocation: alloc,
        cost,
        trace,
    }
}

/// Limits for [`oracle_allocate`]; enumeration is exponential in all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleBounds {
    pub max_packets: usize,
    pub max_quanta: usize,
    pub max_slots: usize,
}

impl Default for OracleBounds {
    fn default() -> Self {
        OracleBounds {
            max_packets: 3,
            max_quanta: 6,
            max_slots: 6,
        }
    }
}

/// Exhaustive minimum over contiguous allocations with at most
/// `params.max_slots` slots and at most `budget_quanta` quanta.
///
/// Candidates are visited by slot count, then owner tuple, then quanta tuple
/// (each lexicographic); the first minimum found is kept.
pub fn oracle_allocate(problem: &DiscreteProblem, bounds: &OracleBounds) -> Result<(DiscreteAllocation, DiscreteCost)> {
    let p = problem.params;
    for (what, actual, limit) in [
        ("packet count", problem.n(), bounds.max_packets),
        ("budget quanta", p.budget_quanta, bounds.max_quanta),
        ("slot cap", p.max_slots, bounds.max_slots),
    ] {
        if actual > limit {
            return Err(Error::Size { what, actual, limit });
        }
    }

    let n = problem.n();
    let empty = DiscreteAllocation::default();
    let mut best = (empty.clone(), discrete_cost(problem, &empty)?);
    let max_j = p.max_slots.min(p.budget_quanta);
    for j in 1..=max_j {
        let mut owners = vec![0usize; j];
        loop {
            let mut quanta = vec![1u32; j];
            loop {
                let alloc = DiscreteAllocation {
                    slots: owners
                        .iter()
                        .zip(&quanta)
                        .map(|(&owner, &quanta)| SlotAssignment { owner, quanta })
                        .collect(),
                };
                let (sent, last) = packet_state(problem, &alloc);
                let c = cost_from_state(problem, &sent, &last);
                if c.total < best.1.total - 1e-12 * best.1.total.abs() {
                    best = (alloc, c);
                }
                if !next_composition(&mut quanta, p.budget_quanta) {
                    break;
                }
            }
            if !next_tuple(&mut owners, n) {
                break;
            }
        }
    }
    Ok(best)
}

/// The full certificate grid: `n ∈ {1, 2, 3}`, every `B_i ∈ {1, 2, 3}`,
/// `ℓ, e ∈ {0.5, 1}` and `Q ∈ 1..=6` quanta (energy `Q·e`). 936 problems,
/// all within the default [`OracleBounds`].
pub fn certificate_grid() -> Vec<DiscreteProblem> {
    let mut out = Vec::new();
    for n in 1..=3usize {
        let mut digits = vec![0usize; n];
        loop {
            let bits: Vec<f64> = digits.iter().map(|&d| (d + 1) as f64).collect();
            for slot_len in [0.5, 1.0] {
                for quantum in [0.5, 1.0] {
                    for q in 1..=6usize {
                        let params = DiscreteParams {
                            slot_len,
                            quantum,
                            budget_quanta: q,
                            max_slots: q,
                        };
                        out.push(DiscreteProblem::new(bits.clone(), params).expect("grid problem is valid"));
                    }
                }
            }
            if !next_tuple(&mut digits, 3) {
                break;
            }
        }
    }
    out
}

/// Advances `digits` (base `radix`) lexicographically; false after the last tuple.
fn next_tuple(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

/// Next vector of positive parts with sum `≤ cap`, in lexicographic order.
fn next_composition(parts: &mut [u32], cap: usize) -> bool {
    let sum: usize = parts.iter().map(|&r| r as usize).sum();
    if sum < cap {
        *parts.last_mut().expect("non-empty") += 1;
        return true;
    }
    // carry: reset the trailing part and bump an earlier one
    for k in (0..parts.len() - 1).rev() {
        let tail = parts.len() - k - 1;
        let prefix: usize = parts[..k].iter().map(|&r| r as usize).sum();
        if prefix + parts[k] as usize + 1 + tail <= cap {
            parts[k] += 1;
            for r in &mut parts[k + 1..] {
                *r = 1;
            }
            return true;
        }
    }
    false
}

/// Item-by-item greedy multi-partitioning.
///
/// Items `0..items` are taken in order; each joins the part `j` with the
/// smallest increase `f_j(S_j ∪ {item}) - f_j(S_j)`, i.e. the placement that
/// minimises the partition's total cost after the step. Ties go to the smallest
/// `j`. Parts are returned as sorted item lists, one per cost function.
pub fn greedy_multipartition<F>(items: usize, cost_fns: &[F]) -> Vec<Vec<usize>>
where
    F: Fn(&[usize]) -> f64,
{
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); cost_fns.len()];
    if cost_fns.is_empty() {
        return parts;
    }
    for item in 0..items {
        let mut best: Option<(usize, f64)> = None;
        for (j, f) in cost_fns.iter().enumerate() {
            let base = f(&parts[j]);
            parts[j].push(item);
            let c = f(&parts[j]) - base;
            parts[j].pop();
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((j, c));
            }
        }
        let (j, _) = best.expect("at least one part");
        parts[j].push(item);
    }
    parts
}
