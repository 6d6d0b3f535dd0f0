use criterion::{black_box, criterion_group, criterion_main, Criterion};
use edd_bench::{discrete, ladder, two_packet};
use edd_core::discrete::{greedy_allocate, oracle_allocate, OracleBounds};
use edd_core::{brute_force_order, solve_fixed_order, Order, SolverConfig};

fn continuous(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let inst = two_packet();
    c.bench_function("solve_fixed_order/n=2", |b| {
        b.iter(|| solve_fixed_order(black_box(&inst), &Order::identity(2), &cfg).unwrap())
    });
    let inst = ladder(6);
    c.bench_function("solve_fixed_order/n=6", |b| {
        b.iter(|| solve_fixed_order(black_box(&inst), &Order::identity(6), &cfg).unwrap())
    });
    let inst = ladder(5);
    c.bench_function("brute_force_order/n=5", |b| {
        b.iter(|| brute_force_order(black_box(&inst), &cfg).unwrap())
    });
}

fn slotted(c: &mut Criterion) {
    let big = discrete(&[4.0, 6.0, 8.0, 10.0, 12.0], 200);
    c.bench_function("greedy_allocate/n=5,Q=200", |b| {
        b.iter(|| greedy_allocate(black_box(&big), false))
    });
    let small = discrete(&[2.0, 3.0, 3.0], 6);
    c.bench_function("oracle_allocate/n=3,Q=6", |b| {
        b.iter(|| oracle_allocate(black_box(&small), &OracleBounds::default()).unwrap())
    });
}

criterion_group!(benches, continuous, slotted);
criterion_main!(benches);
