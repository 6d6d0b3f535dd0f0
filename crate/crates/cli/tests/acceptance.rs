//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use edd_core::csolve::gradient;
use edd_core::discrete::{certificate_grid, greedy_allocate, oracle_allocate, OracleBounds};
use edd_core::order::random_instance;
use edd_core::verify::{check_convexity, check_supermodular, CheckMode, DiSetFunction};
use edd_core::{
    solve_fixed_order, ContinuousAllocation, DiscreteParams, DiscreteProblem, Instance, Order, SolverConfig,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn edd(args: &[&str]) -> (i32, Vec<u8>, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_edd"))
        .args(args)
        .output()
        .expect("edd runs");
    (
        out.status.code().unwrap_or(-1),
        out.stdout,
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .expect("array")
        .iter()
        .map(|x| x.as_f64().expect("number"))
        .collect()
}

fn paper_instance(bits: &str, energy: &str, expected: [f64; 2]) -> Verdict {
    let (code, stdout, stderr) = edd(&["solve", "--bits", bits, "--energy", energy, "--search", "brute"]);
    if code != 0 {
        return verdict(false, format!("exit {code}: {stderr}"));
    }
    let report: Value = serde_json::from_slice(&stdout).expect("report JSON");
    let bhat = floats(&report["cost"]["bhat"]);
    let order: Vec<u64> = report["alloc"]["order"]
        .as_array()
        .expect("order")
        .iter()
        .map(|x| x.as_u64().expect("label"))
        .collect();
    let gaps: Vec<f64> = bhat.iter().zip(expected).map(|(a, b)| (a - b).abs()).collect();
    let within = gaps.iter().all(|&g| g <= 0.05);
    let shorter_first = order == [1, 2];
    let coeffs = floats(&report["delay_coefficients"]);
    verdict(
        within && shorter_first,
        format!(
            "bhat = ({:.4}, {:.4}), expected ({}, {}) ± 0.05, gaps ({:.4}, {:.4}); order {:?}; delay coefficients {:?} (completion times)",
            bhat[0], bhat[1], expected[0], expected[1], gaps[0], gaps[1], order, coeffs
        ),
    )
}

/// Independent cost: per-packet terms `2^(B - t·log2(1 + E/t))` and completion times.
fn packet_terms(bits: &[f64], seq: &[usize], e: &[f64], t: &[f64]) -> Vec<f64> {
    let n = bits.len();
    let mut terms: Vec<f64> = (0..n)
        .map(|i| 2f64.powf(bits[i] - t[i] * (1.0 + e[i] / t[i]).log2()))
        .collect();
    let mut clock = 0.0;
    for &i in seq {
        clock += t[i];
        terms[i] += clock;
    }
    terms
}

/// Five-point central difference of the total cost. Packet terms are differenced
/// one by one, so unaffected packets contribute exact zeros.
fn fd_partial(bits: &[f64], seq: &[usize], e: &[f64], t: &[f64], var: usize) -> f64 {
    let (packet, is_time) = (var / 2, var % 2 == 1);
    let x0 = if is_time { t[packet] } else { e[packet] };
    let h = 1e-3 * x0.abs().max(1e-2);
    let at = |dx: f64| {
        let (mut e2, mut t2) = (e.to_vec(), t.to_vec());
        if is_time {
            t2[packet] += dx;
        } else {
            e2[packet] += dx;
        }
        packet_terms(bits, seq, &e2, &t2)
    };
    let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
    (0..bits.len())
        .map(|i| (-(p2[i] - m2[i]) + 8.0 * (p1[i] - m1[i])) / (12.0 * h))
        .sum()
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=4);
        let bits: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..25.0)).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..20.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
        let mut seq: Vec<usize> = (0..n).collect();
        seq.shuffle(&mut rng);
        let inst = Instance::new(bits.clone(), e.iter().sum()).expect("instance");
        let alloc = ContinuousAllocation {
            energies: e.clone(),
            times: t.clone(),
            order: Order::from_sequence(&seq).expect("order"),
        };
        let g = gradient(&inst, &alloc).expect("gradient");
        for (var, &analytic) in g.iter().enumerate() {
            let fd = fd_partial(&bits, &seq, &e, &t, var);
            let rel = (analytic - fd).abs() / fd.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-5 && elapsed < Duration::from_secs(10),
        format!(
            "100 points, {checked} partials, worst relative error {worst:.2e} (limit 1e-5), {elapsed:.2?} (limit 10s)"
        ),
    )
}

fn convexity_certification() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut midpoint, mut hessian, mut violations) = (0, 0, 0);
    for k in 0..10u64 {
        let n = rng.gen_range(1..=4);
        let inst = random_instance(&mut rng, n);
        let mut seq: Vec<usize> = (0..n).collect();
        seq.shuffle(&mut rng);
        let order = Order::from_sequence(&seq).expect("order");
        let r = check_convexity(&inst, &order, 1000, k).expect("check runs");
        midpoint += 1000;
        hessian += r.trials - 1000;
        violations += r.violations;
    }
    let elapsed = start.elapsed();
    verdict(
        violations == 0 && midpoint >= 10_000 && elapsed < Duration::from_secs(30),
        format!(
            "{midpoint} midpoint trials and {hessian} Hessian blocks, {violations} violations, {elapsed:.2?} (limit 30s)"
        ),
    )
}

fn energy_tightness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let cfg = SolverConfig::default();
    let (mut converged, mut worst) = (0, f64::NEG_INFINITY);
    let mut bad = Vec::new();
    for k in 0..50 {
        let n = rng.gen_range(1..=5);
        let inst = random_instance(&mut rng, n);
        let mut seq: Vec<usize> = (0..n).collect();
        seq.shuffle(&mut rng);
        let r = solve_fixed_order(&inst, &Order::from_sequence(&seq).expect("order"), &cfg).expect("solve");
        let rel = r.energy_slack / inst.energy();
        worst = worst.max(rel);
        if r.converged {
            converged += 1;
        }
        if !r.converged || rel > 1e-6 {
            bad.push(k);
        }
    }
    verdict(
        bad.is_empty(),
        format!("{converged}/50 converged, worst slack/E = {worst:.2e} (limit 1e-6), failing instances {bad:?}"),
    )
}

fn describe(p: &DiscreteProblem) -> String {
    let q = p.params();
    format!(
        "bits {:?}, slot {}, quantum {}, {} quanta",
        p.bits(),
        q.slot_len,
        q.quantum,
        q.budget_quanta
    )
}

fn approximation_certificate() -> Verdict {
    let start = Instant::now();
    let bounds = OracleBounds::default();
    let grid = certificate_grid();
    let mut worst: f64 = 0.0;
    let mut exceptions = Vec::new();
    for p in &grid {
        let (_, opt) = oracle_allocate(p, &bounds).expect("within oracle bounds");
        for spend_all in [false, true] {
            let g = greedy_allocate(p, spend_all);
            let ratio = g.cost.total / opt.total;
            worst = worst.max(ratio);
            if g.cost.total > 2.0 * opt.total {
                exceptions.push(format!("{} (spend_all={spend_all}): ratio {ratio}", describe(p)));
            }
        }
    }
    let elapsed = start.elapsed();
    for e in &exceptions {
        println!("    exception: {e}");
    }
    verdict(
        exceptions.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "{} instances, both stop rules, worst greedy/optimal {worst:.4}, {} exceptions, {elapsed:.2?} (limit 5 min)",
            grid.len(),
            exceptions.len()
        ),
    )
}

fn greedy_trace_decreasing() -> Verdict {
    let mut broken = Vec::new();
    let mut steps = 0;
    for p in certificate_grid() {
        let g = greedy_allocate(&p, false);
        let mut prev: f64 = p.bits().iter().map(|b| b.exp2()).sum();
        for s in &g.trace {
            steps += 1;
            if s.total_cost.partial_cmp(&prev) != Some(std::cmp::Ordering::Less) {
                broken.push(describe(&p));
                break;
            }
            prev = s.total_cost;
        }
    }
    verdict(
        broken.is_empty(),
        format!(
            "{steps} greedy steps over the grid, {} traces not strictly decreasing",
            broken.len()
        ),
    )
}

fn greedy_exact_single_packet() -> Verdict {
    let bounds = OracleBounds::default();
    let mut total = 0;
    let mut misses = Vec::new();
    for p in certificate_grid().into_iter().filter(|p| p.n() == 1) {
        total += 1;
        let (_, opt) = oracle_allocate(&p, &bounds).expect("within oracle bounds");
        let g = greedy_allocate(&p, false);
        if (g.cost.total - opt.total).abs() > 1e-9 * opt.total.max(1.0) {
            misses.push(format!(
                "{}: greedy {} vs optimal {}",
                describe(&p),
                g.cost.total,
                opt.total
            ));
        }
    }
    for m in misses.iter().take(5) {
        println!("    mismatch: {m}");
    }
    verdict(
        misses.is_empty(),
        format!(
            "{} of {total} single-packet instances differ from the optimum by more than 1e-9",
            misses.len()
        ),
    )
}

fn supermodularity() -> Verdict {
    let (mut configs, mut pairs, mut violations) = (0, 0, 0);
    let (mut full_pairs, mut full_violations) = (0, 0);
    for bits in [1.0, 2.5, 4.0, 8.0] {
        for (slot_len, quantum) in [(0.5, 0.5), (1.0, 0.5), (0.5, 1.0), (1.0, 1.0)] {
            for levels in 1..=3usize {
                for cells in 2..=10usize {
                    let slots = cells.div_ceil(levels);
                    let params =
                        DiscreteParams::from_energy(cells as f64 * quantum, slot_len, quantum, None).expect("params");
                    let problem = DiscreteProblem::new(vec![bits, 3.0], params).expect("problem");
                    let owned = vec![Some(0); slots];
                    let mixed: Vec<Option<usize>> =
                        (0..slots).map(|j| if j % 3 == 1 { Some(1) } else { Some(0) }).collect();
                    for ownership in [owned, mixed] {
                        let base = DiSetFunction::new(&problem, 0, &ownership, levels).expect("set function");
                        let d = base.clone().truncate(cells).distortion_only();
                        let r = check_supermodular(&d, 0, 0, CheckMode::Exhaustive).expect("check");
                        configs += 1;
                        pairs += r.trials;
                        violations += r.violations;
                        let f = base.truncate(cells);
                        let r = check_supermodular(&f, 0, 0, CheckMode::Exhaustive).expect("check");
                        full_pairs += r.trials;
                        full_violations += r.violations;
                    }
                }
            }
        }
    }
    println!("    full D_i (reported only): {full_violations} violations in {full_pairs} exhaustive checks");
    verdict(
        violations == 0,
        format!("distortion term: {configs} ground sets of 2..=10 cells, {pairs} exhaustive checks, {violations} violations"),
    )
}

fn artifact_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
}

fn spf_experiment() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for (n, count) in [("2", "200"), ("3", "100")] {
        let (code, csv, stderr) = edd(&["spf", "--count", count, "--n", n, "--seed", "11", "--csv"]);
        let (jcode, json, _) = edd(&["spf", "--count", count, "--n", n, "--seed", "11"]);
        if code != 0 || jcode != 0 {
            return verdict(false, format!("spf n={n} exit {code}/{jcode}: {stderr}"));
        }
        let path = artifact_dir().join(format!("spf_n{n}.csv"));
        std::fs::write(&path, &csv).expect("write artifact");
        std::fs::write(artifact_dir().join(format!("spf_n{n}.json")), &json).expect("write artifact");
        let rows = String::from_utf8_lossy(&csv).lines().count() - 1;
        let summary: Value = serde_json::from_slice(&json).expect("summary JSON");
        ok &= rows == count.parse::<usize>().expect("count");
        lines.push(format!(
            "n={n}: {}/{} agree ({:.3}), {rows} rows in {}",
            summary["agreements"],
            summary["count"],
            summary["agreement"].as_f64().unwrap_or(f64::NAN),
            path.display()
        ));
    }
    verdict(ok, lines.join("; "))
}

fn determinism() -> Verdict {
    let commands: &[&[&str]] = &[
        &["solve", "--bits", "15,20", "--energy", "50", "--search", "brute"],
        &["solve", "--bits", "4,9,7", "--energy", "12", "--search", "spf"],
        &[
            "sweep",
            "--fix",
            "B1=15",
            "--vary",
            "B2=1:30:1",
            "--energy",
            "50",
            "--order",
            "1,2",
        ],
        &[
            "sweep",
            "--surface",
            "--bits",
            "15,20",
            "--energy",
            "50",
            "--grid",
            "11",
        ],
        &[
            "discrete",
            "--bits",
            "3,5",
            "--energy",
            "6",
            "--slot-len",
            "0.5",
            "--quantum",
            "1",
        ],
        &["oracle", "--grid"],
        &[
            "check",
            "--bits",
            "4,3",
            "--trials",
            "2000",
            "--seed",
            "9",
            "--ground-set",
            "12",
        ],
        &["spf", "--count", "20", "--n", "3", "--seed", "3", "--csv"],
    ];
    let mut differing = Vec::new();
    for args in commands {
        let a = edd(args);
        let b = edd(args);
        if a != b {
            differing.push(args.join(" "));
        }
    }
    verdict(
        differing.is_empty(),
        format!(
            "{} commands run twice, differing outputs: {differing:?}",
            commands.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("paper instance (15, 20) bits, 50 J", || {
            paper_instance("15,20", "50", [13.667, 19.1396])
        }),
        ("paper instance (12, 20) bits, 20 J", || {
            paper_instance("12,20", "20", [7.663, 15.8431])
        }),
        ("gradient correctness", gradient_correctness),
        ("convexity certification", convexity_certification),
        ("energy tightness", energy_tightness),
        ("approximation certificate", approximation_certificate),
        ("greedy sanity: strictly decreasing trace", greedy_trace_decreasing),
        (
            "greedy sanity: exact on single-packet instances",
            greedy_exact_single_packet,
        ),
        ("supermodularity of the distortion term", supermodularity),
        ("SPF experiment artifact", spf_experiment),
        ("determinism", determinism),
    ];
    let total = criteria.len();
    let mut failed = 0;
    for (name, check) in criteria {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", total - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
