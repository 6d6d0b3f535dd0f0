//! Solvers for the energy-delay-distortion scheduling problem.
//!
//! A source holds `n` packets of `B_i` bits and a finite energy budget `E`.
//! Sending `B̂_i` of the `B_i` bits costs a distortion `2^(B_i - B̂_i)`, and
//! each packet also pays its completion time. The crate provides:
//!
//! * [`model`]: instances, the Shannon rate `B̂ = t·log2(1 + E/t)` and the cost.
//! * [`csolve`]: projected-gradient solver for the continuous problem at a fixed
//!   transmission order, with analytic gradients and Hessian-block probes.
//! * [`order`]: exhaustive and shortest-packet-first order search.
//! * [`discrete`]: slotted resource-block allocation (GREEDY, GREEDY₁ and an
//!   exhaustive oracle).
//! * [`verify`]: property checkers for monotonicity, super-modularity and
//!   joint convexity.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod csolve;
pub mod discrete;
mod error;
pub mod model;
pub mod order;
pub mod verify;

pub use csolve::{solve_fixed_order, SolveReport, SolverConfig};
pub use discrete::{DiscreteAllocation, DiscreteCost, DiscreteParams, DiscreteProblem};
pub use error::{Error, Result};
pub use model::{ContinuousAllocation, CostBreakdown, Instance, Order, T_MIN};
pub use order::{brute_force_order, spf_order};
pub use verify::PropertyReport;
