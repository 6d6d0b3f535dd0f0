//! Benchmark fixtures shared by the criterion benches.

use edd_core::{DiscreteParams, DiscreteProblem, Instance};

/// Two-packet instance from the reference experiments.
pub fn two_packet() -> Instance {
    Instance::new(vec![15.0, 20.0], 50.0).expect("valid instance")
}

/// `n` packets of sizes 4, 7, 10, … sharing 6 Joules per packet.
pub fn ladder(n: usize) -> Instance {
    let bits: Vec<f64> = (0..n).map(|i| 4.0 + 3.0 * i as f64).collect();
    Instance::new(bits, 6.0 * n as f64).expect("valid instance")
}

pub fn discrete(bits: &[f64], quanta: usize) -> DiscreteProblem {
    let params = DiscreteParams::from_energy(quanta as f64, 1.0, 1.0, None).expect("valid params");
    DiscreteProblem::new(bits.to_vec(), params).expect("valid problem")
}
