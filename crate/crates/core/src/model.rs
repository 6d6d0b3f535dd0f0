//! Problem instance, transmission order, the Shannon rate and the continuous cost.
//!
//! Conventions used throughout the crate:
//!
//! * packets are indexed from 0 internally; every serialized or user-facing
//!   form (JSON, CSV, CLI flags) is 1-based;
//! * logarithms are base 2, so `B̂` is measured in bits;
//! * the delay of packet `i` is its completion time, i.e. the sum of the
//!   transmission times of every packet sent no later than `i`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible transmission time (seconds).
///
/// The rate `t·log2(1 + E/t)` has a removable singularity at `t = 0` where its
/// gradient blows up, so every solver works on `t >= T_MIN`.
pub const T_MIN: f64 = 1e-6;

/// Relative slack allowed on the energy budget before an allocation is
/// declared infeasible.
pub const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceWire", into = "InstanceWire")]
pub struct Instance {
    bits: Vec<f64>,
    energy: f64,
    slot_len: Option<f64>,
    quantum: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceWire {
    bits: Vec<f64>,
    energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slot_len: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantum: Option<f64>,
}

impl TryFrom<InstanceWire> for Instance {
    type Error = Error;

    fn try_from(w: InstanceWire) -> Result<Self> {
        Instance::new(w.bits, w.energy)?.with_discretization(w.slot_len, w.quantum)
    }
}

impl From<Instance> for InstanceWire {
    fn from(i: Instance) -> Self {
        InstanceWire {
            bits: i.bits,
            energy: i.energy,
            slot_len: i.slot_len,
            quantum: i.quantum,
        }
    }
}

pub(crate) fn validate_bits(bits: &[f64]) -> Result<()> {
    if bits.is_empty() {
        return Err(Error::InvalidInstance("at least one packet is required".into()));
    }
    if let Some((i, b)) = bits.iter().enumerate().find(|(_, b)| !(b.is_finite() && **b > 0.0)) {
        return Err(Error::InvalidInstance(format!(
            "packet {} has size {b}; sizes must be positive",
            i + 1
        )));
    }
    Ok(())
}

impl Instance {
    pub fn new(bits: Vec<f64>, energy: f64) -> Result<Self> {
        validate_bits(&bits)?;
        if !(energy.is_finite() && energy > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "energy budget must be positive, got {energy}"
            )));
        }
        Ok(Instance {
            bits,
            energy,
            slot_len: None,
            quantum: None,
        })
    }

    /// Attaches the slot length and energy quantum used by the discrete model.
    pub fn with_discretization(mut self, slot_len: Option<f64>, quantum: Option<f64>) -> Result<Self> {
        for (name, v) in [("slot_len", slot_len), ("quantum", quantum)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidInstance(format!("{name} must be positive, got {v}")));
                }
            }
        }
        self.slot_len = slot_len;
        self.quantum = quantum;
        Ok(self)
    }

    pub fn bits(&self) -> &[f64] {
        &self.bits
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn n(&self) -> usize {
        self.bits.len()
    }

    pub fn slot_len(&self) -> Option<f64> {
        self.slot_len
    }

    pub fn quantum(&self) -> Option<f64> {
        self.quantum
    }
}

/// Transmission order.
///
/// `position(i)` is the (0-based) slot in the transmission sequence taken by
/// packet `i`. Serialized as the 1-based list of packets in the order they
/// are sent, e.g. `[2, 3, 1]` sends packet 2 first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Order {
    positions: Vec<usize>,
}

impl Order {
    pub fn identity(n: usize) -> Self {
        Order {
            positions: (0..n).collect(),
        }
    }

    /// Builds an order from `positions[i]` = 0-based transmission position of packet `i`.
    pub fn from_positions(positions: Vec<usize>) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::InvalidOrder("empty order".into()));
        }
        let mut seen = vec![false; n];
        for &p in &positions {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidOrder(format!(
                    "{positions:?} is not a permutation of 0..{n}"
                )));
            }
        }
        Ok(Order { positions })
    }

    /// Builds an order from the 0-based packet indices listed in transmission order.
    pub fn from_sequence(sequence: &[usize]) -> Result<Self> {
        let n = sequence.len();
        let mut positions = vec![usize::MAX; n];
        for (pos, &pkt) in sequence.iter().enumerate() {
            if pkt >= n || positions[pkt] != usize::MAX {
                return Err(Error::InvalidOrder(format!(
                    "{sequence:?} is not a permutation of 0..{n}"
                )));
            }
            positions[pkt] = pos;
        }
        Order::from_positions(positions)
    }

    /// Same as [`Order::from_sequence`] but with 1-based packet labels.
    pub fn from_sequence_one_based(sequence: &[usize]) -> Result<Self> {
        if sequence.contains(&0) {
            return Err(Error::InvalidOrder("packet labels start at 1".into()));
        }
        let zero: Vec<usize> = sequence.iter().map(|p| p - 1).collect();
        Order::from_sequence(&zero)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, packet: usize) -> usize {
        self.positions[packet]
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// 0-based packet indices in transmission order.
    pub fn sequence(&self) -> Vec<usize> {
        let mut seq = vec![0; self.positions.len()];
        for (pkt, &pos) in self.positions.iter().enumerate() {
            seq[pos] = pkt;
        }
        seq
    }
}

impl TryFrom<Vec<usize>> for Order {
    type Error = Error;

    fn try_from(seq: Vec<usize>) -> Result<Self> {
        Order::from_sequence_one_based(&seq)
    }
}

impl From<Order> for Vec<usize> {
    fn from(o: Order) -> Self {
        o.sequence().into_iter().map(|p| p + 1).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousAllocation {
    pub energies: Vec<f64>,
    pub times: Vec<f64>,
    pub order: Order,
}

impl ContinuousAllocation {
    pub fn energy_used(&self) -> f64 {
        self.energies.iter().sum()
    }

    pub(crate) fn check_shape(&self, n: usize) -> Result<()> {
        if self.energies.len() != n || self.times.len() != n || self.order.len() != n {
            return Err(Error::InvalidInstance(format!(
                "allocation sized for {} packets, instance has {n}",
                self.energies.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `2^(B_i - B̂_i)` per packet.
    pub distortions: Vec<f64>,
    /// Completion time per packet.
    pub delays: Vec<f64>,
    pub bhat: Vec<f64>,
    pub total: f64,
}

fn check_domain(energy: f64, time: f64) -> Result<()> {
    if !(time >= T_MIN) || !time.is_finite() {
        return Err(Error::Domain(format!("time {time} is below t_min = {T_MIN}")));
    }
    if !(energy >= 0.0) || !energy.is_finite() {
        return Err(Error::Domain(format!("energy {energy} must be non-negative")));
    }
    Ok(())
}

/// Bits deliverable with `energy` Joules over `time` seconds at unit bandwidth:
/// `time · log2(1 + energy/time)`.
pub fn shannon_bits(energy: f64, time: f64) -> Result<f64> {
    check_domain(energy, time)?;
    Ok(rate_bits(energy, time))
}

#[inline]
pub(crate) fn rate_bits(energy: f64, time: f64) -> f64 {
    time * (energy / time).ln_1p() / LN_2
}

/// Weight `a_i` of `t_i` in the total cost: the number of packets whose
/// completion time includes `t_i`, i.e. `n - position(i)` with 0-based positions.
pub fn delay_coefficients(order: &Order) -> Vec<f64> {
    let n = order.len();
    order.positions().iter().map(|&p| (n - p) as f64).collect()
}

pub fn evaluate_cost(inst: &Instance, alloc: &ContinuousAllocation) -> Result<CostBreakdown> {
    let n = inst.n();
    alloc.check_shape(n)?;
    for (&e, &t) in alloc.energies.iter().zip(&alloc.times) {
        check_domain(e, t)?;
    }
    let used = alloc.energy_used();
    if used > inst.energy() * (1.0 + BUDGET_TOL) {
        return Err(Error::Infeasible {
            used,
            budget: inst.energy(),
        });
    }

    let bhat: Vec<f64> = alloc
        .energies
        .iter()
        .zip(&alloc.times)
        .map(|(&e, &t)| rate_bits(e, t))
        .collect();
    let distortions: Vec<f64> = inst.bits().iter().zip(&bhat).map(|(&b, &bh)| (b - bh).exp2()).collect();

    let mut delays = vec![0.0; n];
    let mut clock = 0.0;
    for pkt in alloc.order.sequence() {
        clock += alloc.times[pkt];
        delays[pkt] = clock;
    }

    let total = distortions.iter().sum::<f64>() + delays.iter().sum::<f64>();
    Ok(CostBreakdown {
        distortions,
        delays,
        bhat,
        total,
    })
}

/// Total cost in the separable form `Σ 2^(B_i - B̂_i) + a_i·t_i`.
///
/// `x` interleaves the variables as `(E_1, t_1, E_2, t_2, …)`. No domain or
/// budget checks are made; callers keep `x` inside the solver's feasible set.
pub fn separable_cost(bits: &[f64], coeffs: &[f64], x: &[f64]) -> f64 {
    bits.iter()
        .zip(coeffs)
        .zip(x.chunks_exact(2))
        .map(|((&b, &a), et)| (b - rate_bits(et[0], et[1])).exp2() + a * et[1])
        .sum()
}
