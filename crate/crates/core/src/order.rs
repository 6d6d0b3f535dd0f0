//! Transmission-order search.
//!
//! Convexity only holds for a fixed order, so the exact optimum needs a solve
//! per permutation. [`brute_force_order`] does that for small `n`;
//! [`spf_order`] is the shortest-packet-first heuristic, and
//! [`spf_agreement_experiment`] measures how often the heuristic is optimal.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csolve::{solve_fixed_order, SolveReport, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{Instance, Order};

/// Largest instance [`brute_force_order`] accepts (8! solves).
pub const DEFAULT_N_MAX: usize = 8;

/// Two costs closer than this (relative) are treated as a tie.
const TIE_TOL: f64 = 1e-9;

/// Costs within this absolute distance count as SPF agreeing with the optimum.
pub const AGREEMENT_TOL: f64 = 1e-6;

fn better(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - TIE_TOL * incumbent.abs().max(1.0)
}

pub fn brute_force_order(inst: &Instance, cfg: &SolverConfig) -> Result<(Order, SolveReport)> {
    brute_force_order_with_limit(inst, cfg, DEFAULT_N_MAX)
}

/// Solves every permutation and keeps the cheapest converged one.
///
/// Permutations are enumerated in lexicographic order of their transmission
/// sequence; on ties the earlier one wins. If no solve converges the cheapest
/// unconverged one is returned (its report says so).
pub fn brute_force_order_with_limit(inst: &Instance, cfg: &SolverConfig, n_max: usize) -> Result<(Order, SolveReport)> {
    let n = inst.n();
    if n > n_max {
        return Err(Error::Size {
            what: "packet count for brute-force order search",
            actual: n,
            limit: n_max,
        });
    }
    cfg.validate()?;
    let orders: Vec<Order> = (0..n)
        .permutations(n)
        .map(|seq| Order::from_sequence(&seq))
        .collect::<Result<_>>()?;
    let reports: Vec<SolveReport> = orders
        .par_iter()
        .map(|o| solve_fixed_order(inst, o, cfg))
        .collect::<Result<_>>()?;

    let any_converged = reports.iter().any(|r| r.converged);
    let mut best: Option<usize> = None;
    for (k, r) in reports.iter().enumerate() {
        if any_converged && !r.converged {
            continue;
        }
        match best {
            Some(b) if !better(r.cost.total, reports[b].cost.total) => {}
            _ => best = Some(k),
        }
    }
    let k = best.expect("at least one permutation");
    let report = reports.into_iter().nth(k).expect("index in range");
    Ok((orders[k].clone(), report))
}

/// Shortest packet first; equal sizes keep index order.
pub fn spf_order(inst: &Instance) -> Order {
    let seq: Vec<usize> = (0..inst.n())
        .sorted_by(|&a, &b| inst.bits()[a].total_cmp(&inst.bits()[b]).then(a.cmp(&b)))
        .collect();
    Order::from_sequence(&seq).expect("sorted indices form a permutation")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpfRow {
    pub seed: u64,
    /// 0-based index of the instance within the experiment.
    pub instance: usize,
    pub bits: Vec<f64>,
    pub energy: f64,
    pub spf_cost: f64,
    pub opt_cost: f64,
    /// `spf_cost - opt_cost`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpfExperiment {
    pub seed: u64,
    pub n: usize,
    pub count: usize,
    pub agreements: usize,
    pub agreement: f64,
    /// Row with the largest gap among the disagreements, if any.
    pub worst_counterexample: Option<SpfRow>,
    pub rows: Vec<SpfRow>,
}

impl SpfExperiment {
    /// CSV with header `seed,instance,bits,energy,spf_cost,opt_cost,gap`; `bits`
    /// is `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,instance,bits,energy,spf_cost,opt_cost,gap\n");
        for r in &self.rows {
            let bits = r.bits.iter().map(|b| b.to_string()).join(";");
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.seed, r.instance, bits, r.energy, r.spf_cost, r.opt_cost, r.gap
            ));
        }
        out
    }
}

/// Random instance with `B_i ~ U[1, 25]` and `E ~ U[0.5, 4]·ΣB_i`.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> Instance {
    let bits: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..=25.0)).collect();
    let total: f64 = bits.iter().sum();
    let energy = rng.gen_range(0.5 * total..=4.0 * total);
    Instance::new(bits, energy).expect("sampled instance is valid")
}

/// Compares SPF against the brute-force optimum on `count` random instances.
///
/// Reports only; nothing here asserts that SPF is optimal.
pub fn spf_agreement_experiment(count: usize, rng_seed: u64, n: usize, cfg: &SolverConfig) -> Result<SpfExperiment> {
    if n > DEFAULT_N_MAX {
        return Err(Error::Size {
            what: "packet count for the SPF experiment",
            actual: n,
            limit: DEFAULT_N_MAX,
        });
    }
    if n == 0 {
        return Err(Error::InvalidInstance("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let instances: Vec<Instance> = (0..count).map(|_| random_instance(&mut rng, n)).collect();

    let rows = instances
        .iter()
        .enumerate()
        .map(|(k, inst)| {
            let spf = solve_fixed_order(inst, &spf_order(inst), cfg)?;
            let (_, opt) = brute_force_order(inst, cfg)?;
            Ok(SpfRow {
                seed: rng_seed,
                instance: k,
                bits: inst.bits().to_vec(),
                energy: inst.energy(),
                spf_cost: spf.cost.total,
                opt_cost: opt.cost.total,
                gap: spf.cost.total - opt.cost.total,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let agreements = rows.iter().filter(|r| r.gap <= AGREEMENT_TOL).count();
    let worst_counterexample = rows
        .iter()
        .filter(|r| r.gap > AGREEMENT_TOL)
        .max_by(|a, b| a.gap.total_cmp(&b.gap))
        .cloned();
    Ok(SpfExperiment {
        seed: rng_seed,
        n,
        count,
        agreements,
        agreement: if count == 0 {
            1.0
        } else {
            agreements as f64 / count as f64
        },
        worst_counterexample,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(b: &[f64], e: f64) -> Instance {
        Instance::new(b.to_vec(), e).unwrap()
    }

    #[test]
    fn spf_examples() {
        assert_eq!(spf_order(&inst(&[15.0, 20.0], 1.0)).sequence(), vec![0, 1]);
        assert_eq!(spf_order(&inst(&[20.0, 12.0, 16.0], 1.0)).sequence(), vec![1, 2, 0]);
        assert_eq!(spf_order(&inst(&[5.0, 5.0], 1.0)).sequence(), vec![0, 1]);
    }

    #[test]
    fn shorter_packet_first_in_two_packet_cases() {
        let cfg = SolverConfig::default();
        let (o, r) = brute_force_order(&inst(&[15.0, 20.0], 50.0), &cfg).unwrap();
        assert_eq!(o.sequence(), vec![0, 1]);
        assert!(r.converged);
        let (o, _) = brute_force_order(&inst(&[20.0, 12.0], 20.0), &cfg).unwrap();
        assert_eq!(o.sequence(), vec![1, 0]);
    }

    #[test]
    fn symmetric_instance_ties_break_lexicographically() {
        let cfg = SolverConfig::default();
        let i = inst(&[10.0, 10.0], 30.0);
        let a = solve_fixed_order(&i, &Order::identity(2), &cfg).unwrap();
        let b = solve_fixed_order(&i, &Order::from_sequence(&[1, 0]).unwrap(), &cfg).unwrap();
        assert!((a.cost.total - b.cost.total).abs() < 1e-6);
        let (o, _) = brute_force_order(&i, &cfg).unwrap();
        assert_eq!(o.sequence(), vec![0, 1]);
    }

    #[test]
    fn size_limit() {
        let i = inst(&[1.0; 4], 4.0);
        let err = brute_force_order_with_limit(&i, &SolverConfig::default(), 3).unwrap_err();
        assert!(matches!(
            err,
            Error::Size {
                actual: 4,
                limit: 3,
                ..
            }
        ));
        assert!(spf_agreement_experiment(1, 0, 9, &SolverConfig::default()).is_err());
    }

    #[test]
    fn empty_experiment_is_vacuous() {
        let e = spf_agreement_experiment(0, 7, 3, &SolverConfig::default()).unwrap();
        assert_eq!(e.agreement, 1.0);
        assert!(e.worst_counterexample.is_none());
        assert_eq!(e.to_csv(), "seed,instance,bits,energy,spf_cost,opt_cost,gap\n");
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = SolverConfig::default();
        let a = spf_agreement_experiment(5, 11, 2, &cfg).unwrap();
        let b = spf_agreement_experiment(5, 11, 2, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 5);
        assert!(a.rows.iter().all(|r| r.gap >= -1e-9));
    }
}
