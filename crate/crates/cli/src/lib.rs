//! The `edd` command line.
//!
//! Every subcommand writes its result to `out` and diagnostics to `err`, and
//! [`run`] returns the process exit code: 0 on success, 1 on bad input, 2 when
//! a continuous solve did not converge, 3 when a greedy/oracle ratio exceeds 2.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use edd_core::discrete::{certificate_grid, greedy_allocate, oracle_allocate, trace_csv, OracleBounds};
use edd_core::order::spf_agreement_experiment;
use edd_core::verify::{check_convexity, check_monotone, check_supermodular, CheckMode, DiSetFunction};
use edd_core::{
    brute_force_order, solve_fixed_order, spf_order, ContinuousAllocation, DiscreteParams, DiscreteProblem, Instance,
    Order, PropertyReport, SolveReport, SolverConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_RATIO_BOUND: i32 = 3;

const MAX_SWEEP_POINTS: usize = 100_000;

#[derive(Parser, Debug)]
#[command(
    name = "edd",
    version,
    about = "Energy, delay and distortion aware packet scheduling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal energy and time split for a packet order.
    Solve(SolveArgs),
    /// Re-solve while one packet size (or the energy) varies, or tabulate the two-packet cost surface.
    Sweep(SweepArgs),
    /// Greedy slotted allocation with its trace.
    Discrete(DiscreteArgs),
    /// Exhaustive slotted optimum and the greedy/optimal ratio.
    Oracle(OracleArgs),
    /// Supermodularity, monotonicity and convexity checks.
    Check(CheckArgs),
    /// Compares shortest-packet-first with the best order on random instances.
    Spf(SpfArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Search {
    Brute,
    Spf,
}

#[derive(Args, Debug)]
struct OrderArgs {
    /// Transmission sequence of 1-based packet labels, e.g. 2,1.
    #[arg(long, value_delimiter = ',', conflicts_with = "search")]
    order: Vec<usize>,
    /// Choose the order instead of fixing it.
    #[arg(long, value_enum)]
    search: Option<Search>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Packet sizes in bits, comma separated.
    #[arg(long, value_delimiter = ',')]
    bits: Vec<f64>,
    #[arg(long)]
    energy: Option<f64>,
    #[command(flatten)]
    order: OrderArgs,
    /// JSON file with instance fields and solver settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Base packet sizes; individual entries can be set with --fix.
    #[arg(long, value_delimiter = ',')]
    bits: Vec<f64>,
    /// `B<k>=value`, repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    fix: Vec<String>,
    /// `B<k>=start:stop:step` or `E=start:stop:step`.
    #[arg(long)]
    vary: Option<String>,
    #[arg(long)]
    energy: Option<f64>,
    #[command(flatten)]
    order: OrderArgs,
    /// Emit the (E1, t1) grid of per-packet costs for a two-packet instance.
    #[arg(long, conflicts_with = "vary")]
    surface: bool,
    /// Grid points per axis in surface mode.
    #[arg(long, default_value_t = 41)]
    grid: usize,
    /// Upper end of the t1 axis in surface mode (default: twice the optimal t1).
    #[arg(long)]
    t_max: Option<f64>,
}

#[derive(Args, Debug)]
struct DiscreteArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    bits: Vec<f64>,
    #[arg(long)]
    energy: f64,
    #[arg(long)]
    slot_len: f64,
    #[arg(long)]
    quantum: f64,
    /// Keep allocating until the budget is gone, even if the cost rises.
    #[arg(long)]
    spend_all: bool,
    #[arg(long)]
    max_slots: Option<usize>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, value_delimiter = ',', required_unless_present = "grid")]
    bits: Vec<f64>,
    #[arg(long, required_unless_present = "grid")]
    energy: Option<f64>,
    #[arg(long, required_unless_present = "grid")]
    slot_len: Option<f64>,
    #[arg(long, required_unless_present = "grid")]
    quantum: Option<f64>,
    #[arg(long)]
    spend_all: bool,
    #[arg(long)]
    max_slots: Option<usize>,
    /// Run every problem of the built-in certificate grid and print one CSV row each.
    #[arg(long, conflicts_with_all = ["bits", "energy", "slot_len", "quantum", "max_slots"])]
    grid: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "4")]
    bits: Vec<f64>,
    /// Energy of the continuous instance used for the convexity check.
    #[arg(long, default_value_t = 10.0)]
    energy: f64,
    #[arg(long, default_value_t = 1.0)]
    slot_len: f64,
    #[arg(long, default_value_t = 1.0)]
    quantum: f64,
    /// 1-based packet whose D_i is checked.
    #[arg(long, default_value_t = 1)]
    packet: usize,
    /// Number of resource-block cells in the ground set.
    #[arg(long, default_value_t = 8)]
    ground_set: usize,
    /// Quanta levels per slot.
    #[arg(long, default_value_t = 2)]
    levels: usize,
    /// Owner of each slot (1-based, 0 for none); default: every slot belongs to --packet.
    #[arg(long, value_delimiter = ',')]
    owners: Vec<usize>,
    /// Transmission sequence for the convexity check.
    #[arg(long, value_delimiter = ',')]
    order: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Enumerate every pair instead of sampling.
    #[arg(long)]
    exhaustive: bool,
    /// Only sets the greedy can reach.
    #[arg(long)]
    greedy_reachable: bool,
    /// Check the distortion term alone.
    #[arg(long)]
    distortion_only: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SpfArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-instance rows as CSV instead of the JSON summary.
    #[arg(long)]
    csv: bool,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(rendered.as_bytes());
                EXIT_USAGE
            } else {
                let _ = out.write_all(rendered.as_bytes());
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Discrete(a) => cmd_discrete(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Check(a) => cmd_check(a),
        Command::Spf(a) => cmd_spf(a),
    };
    match result {
        Ok((text, code)) => {
            if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
                return EXIT_USAGE;
            }
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_USAGE
        }
    }
}

type Outcome = anyhow::Result<(String, i32)>;

fn converged_code(ok: bool) -> i32 {
    if ok {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    }
}

fn pretty(v: &impl serde::Serialize) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn solve_with(inst: &Instance, order: &OrderArgs, cfg: &SolverConfig) -> anyhow::Result<SolveReport> {
    let report = match order.search {
        Some(Search::Brute) => brute_force_order(inst, cfg)?.1,
        Some(Search::Spf) => solve_fixed_order(inst, &spf_order(inst), cfg)?,
        None => {
            let o = if order.order.is_empty() {
                Order::identity(inst.n())
            } else {
                Order::from_sequence_one_based(&order.order)?
            };
            solve_fixed_order(inst, &o, cfg)?
        }
    };
    Ok(report)
}

const INSTANCE_KEYS: [&str; 4] = ["bits", "energy", "slot_len", "quantum"];

fn read_config(path: &PathBuf) -> anyhow::Result<(Map<String, Value>, SolverConfig)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Value::Object(map) = value else {
        bail!("{} must hold a JSON object", path.display());
    };
    let (inst, solver): (Map<String, Value>, Map<String, Value>) =
        map.into_iter().partition(|(k, _)| INSTANCE_KEYS.contains(&k.as_str()));
    let cfg: SolverConfig = serde_json::from_value(Value::Object(solver)).context("solver settings")?;
    Ok((inst, cfg))
}

fn cmd_solve(a: SolveArgs) -> Outcome {
    let (mut fields, cfg) = match &a.config {
        Some(path) => read_config(path)?,
        None => (Map::new(), SolverConfig::default()),
    };
    if !a.bits.is_empty() {
        fields.insert("bits".into(), json!(a.bits));
    }
    if let Some(e) = a.energy {
        fields.insert("energy".into(), json!(e));
    }
    for key in ["bits", "energy"] {
        if !fields.contains_key(key) {
            bail!("--{key} is required (or give it in --config)");
        }
    }
    let inst: Instance = serde_json::from_value(Value::Object(fields))?;
    cfg.validate()?;
    let report = solve_with(&inst, &a.order, &cfg)?;
    Ok((pretty(&report)?, converged_code(report.converged)))
}

fn parse_key(key: &str, n_hint: usize) -> anyhow::Result<Option<usize>> {
    let key = key.trim();
    if key == "E" {
        return Ok(None);
    }
    let idx: usize = key
        .strip_prefix('B')
        .and_then(|k| k.parse().ok())
        .filter(|&k| k >= 1 && k <= n_hint.max(64))
        .ok_or_else(|| anyhow!("expected B<k> (k >= 1) or E, got {key:?}"))?;
    Ok(Some(idx - 1))
}

fn parse_range(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        bail!("range must be start:stop:step, got {spec:?}");
    };
    let p = |s: &str| -> anyhow::Result<f64> {
        let v: f64 = s
            .trim()
            .parse()
            .with_context(|| format!("bad number {s:?} in range {spec:?}"))?;
        if !v.is_finite() {
            bail!("range bounds must be finite");
        }
        Ok(v)
    };
    let (start, stop, step) = (p(start)?, p(stop)?, p(step)?);
    if step <= 0.0 || stop < start {
        bail!("range {spec:?} needs step > 0 and stop >= start");
    }
    let count = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize + 1;
    if count > MAX_SWEEP_POINTS {
        bail!("range {spec:?} has {count} points, limit is {MAX_SWEEP_POINTS}");
    }
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

fn cmd_sweep(a: SweepArgs) -> Outcome {
    let mut bits: Vec<Option<f64>> = a.bits.iter().copied().map(Some).collect();
    let mut energy = a.energy;
    let mut set = |slot: Option<usize>, v: f64, bits: &mut Vec<Option<f64>>| match slot {
        Some(i) => {
            if bits.len() <= i {
                bits.resize(i + 1, None);
            }
            bits[i] = Some(v);
        }
        None => energy = Some(v),
    };
    for f in &a.fix {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| anyhow!("--fix expects KEY=VALUE, got {f:?}"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("bad value in --fix {f:?}"))?;
        set(parse_key(k, bits.len())?, v, &mut bits);
    }

    if a.surface {
        let bits = complete_bits(&bits, None)?;
        let energy = energy.ok_or_else(|| anyhow!("--energy is required"))?;
        return surface(&Instance::new(bits, energy)?, &a);
    }

    let vary = a
        .vary
        .as_deref()
        .ok_or_else(|| anyhow!("--vary or --surface is required"))?;
    let (key, range) = vary
        .split_once('=')
        .ok_or_else(|| anyhow!("--vary expects KEY=start:stop:step"))?;
    let slot = parse_key(key, bits.len())?;
    let values = parse_range(range)?;
    if let Some(i) = slot {
        if bits.len() <= i {
            bits.resize(i + 1, None);
        }
    }
    let base = complete_bits(&bits, slot)?;
    let n = base.len();
    if slot.is_some() && energy.is_none() {
        bail!("--energy is required");
    }

    let cfg = SolverConfig::default();
    let mut csv = String::new();
    csv.push_str(key.trim());
    for i in 1..=n {
        let _ = write!(csv, ",bhat_{i}");
    }
    csv.push_str(",cost\n");
    let mut all_converged = true;
    for v in values {
        let mut b = base.clone();
        let e = match slot {
            Some(i) => {
                b[i] = v;
                energy.expect("checked above")
            }
            None => v,
        };
        let inst = Instance::new(b, e).with_context(|| format!("sweep point {v}"))?;
        let r = solve_with(&inst, &a.order, &cfg)?;
        all_converged &= r.converged;
        let _ = write!(csv, "{v}");
        for bh in &r.cost.bhat {
            let _ = write!(csv, ",{bh}");
        }
        let _ = writeln!(csv, ",{}", r.cost.total);
    }
    Ok((csv, converged_code(all_converged)))
}

/// All sizes must be given except the varied one, which gets a placeholder.
fn complete_bits(bits: &[Option<f64>], varied: Option<usize>) -> anyhow::Result<Vec<f64>> {
    if bits.is_empty() {
        bail!("no packet sizes given; use --bits or --fix");
    }
    bits.iter()
        .enumerate()
        .map(|(i, b)| match (b, Some(i) == varied) {
            (_, true) => Ok(1.0),
            (Some(v), false) => Ok(*v),
            (None, false) => Err(anyhow!("size of packet {} is not set", i + 1)),
        })
        .collect()
}

fn surface(inst: &Instance, a: &SweepArgs) -> Outcome {
    if inst.n() != 2 {
        bail!("--surface needs exactly two packets, got {}", inst.n());
    }
    if a.grid < 2 {
        bail!("--grid must be at least 2");
    }
    let cfg = SolverConfig::default();
    let opt = solve_with(inst, &a.order, &cfg)?;
    let t_max = a.t_max.unwrap_or(2.0 * opt.alloc.times[0]);
    if !(t_max > cfg.t_min && t_max.is_finite()) {
        bail!("--t-max must exceed {}", cfg.t_min);
    }
    let t2 = opt.alloc.times[1];
    let steps = (a.grid - 1) as f64;
    let mut csv = String::from("E1,t1,U1,U2\n");
    for ie in 0..a.grid {
        let e1 = inst.energy() * ie as f64 / steps;
        for it in 0..a.grid {
            let t1 = (t_max * it as f64 / steps).max(cfg.t_min);
            let alloc = ContinuousAllocation {
                energies: vec![e1, (inst.energy() - e1).max(0.0)],
                times: vec![t1, t2],
                order: opt.alloc.order.clone(),
            };
            let c = edd_core::model::evaluate_cost(inst, &alloc)?;
            let _ = writeln!(
                csv,
                "{e1},{t1},{},{}",
                c.distortions[0] + c.delays[0],
                c.distortions[1] + c.delays[1]
            );
        }
    }
    Ok((csv, converged_code(opt.converged)))
}

fn discrete_problem(
    bits: &[f64],
    energy: f64,
    slot_len: f64,
    quantum: f64,
    max_slots: Option<usize>,
) -> anyhow::Result<DiscreteProblem> {
    let params = DiscreteParams::from_energy(energy, slot_len, quantum, max_slots)?;
    Ok(DiscreteProblem::new(bits.to_vec(), params)?)
}

fn cmd_discrete(a: DiscreteArgs) -> Outcome {
    let problem = discrete_problem(&a.bits, a.energy, a.slot_len, a.quantum, a.max_slots)?;
    let g = greedy_allocate(&problem, a.spend_all);
    let mut text = pretty(&json!({"allocation": g.allocation, "cost": g.cost}))?;
    text.push('\n');
    text.push_str(&trace_csv(&g.trace));
    Ok((text, EXIT_OK))
}

fn ratio(greedy: f64, oracle: f64) -> f64 {
    greedy / oracle
}

fn ratio_code(r: f64) -> i32 {
    if r > 2.0 {
        EXIT_RATIO_BOUND
    } else {
        EXIT_OK
    }
}

fn cmd_oracle(a: OracleArgs) -> Outcome {
    let bounds = OracleBounds::default();
    if a.grid {
        let mut csv = String::from("index,bits,slot_len,quantum,quanta,greedy,oracle,ratio\n");
        let mut worst: f64 = 0.0;
        for (k, p) in certificate_grid().iter().enumerate() {
            let g = greedy_allocate(p, a.spend_all);
            let (_, o) = oracle_allocate(p, &bounds)?;
            let r = ratio(g.cost.total, o.total);
            worst = worst.max(r);
            let bits: Vec<String> = p.bits().iter().map(|b| b.to_string()).collect();
            let pr = p.params();
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                k + 1,
                bits.join(";"),
                pr.slot_len,
                pr.quantum,
                pr.budget_quanta,
                g.cost.total,
                o.total,
                r
            );
        }
        return Ok((csv, ratio_code(worst)));
    }
    let missing = || anyhow!("--energy, --slot-len and --quantum are required");
    let problem = discrete_problem(
        &a.bits,
        a.energy.ok_or_else(missing)?,
        a.slot_len.ok_or_else(missing)?,
        a.quantum.ok_or_else(missing)?,
        a.max_slots,
    )?;
    let g = greedy_allocate(&problem, a.spend_all);
    let (alloc, cost) = oracle_allocate(&problem, &bounds)?;
    let r = ratio(g.cost.total, cost.total);
    let text = pretty(&json!({
        "greedy": {"allocation": g.allocation, "cost": g.cost},
        "oracle": {"allocation": alloc, "cost": cost},
        "ratio": r,
    }))?;
    Ok((text, ratio_code(r)))
}

fn cmd_check(a: CheckArgs) -> Outcome {
    let n = a.bits.len();
    if a.packet == 0 || a.packet > n {
        bail!("--packet must name one of the {n} packets");
    }
    if a.levels == 0 {
        bail!("--levels must be positive");
    }
    let slots = a.ground_set.div_ceil(a.levels);
    let ownership: Vec<Option<usize>> = if a.owners.is_empty() {
        vec![Some(a.packet - 1); slots]
    } else {
        if a.owners.len() != slots {
            bail!("--owners lists {} slots, the ground set spans {slots}", a.owners.len());
        }
        a.owners
            .iter()
            .map(|&o| match o {
                0 => Ok(None),
                o if o <= n => Ok(Some(o - 1)),
                o => Err(anyhow!("slot owner {o} is not a packet")),
            })
            .collect::<anyhow::Result<_>>()?
    };
    let problem = discrete_problem(&a.bits, a.energy, a.slot_len, a.quantum, None)?;
    let mode = if a.exhaustive {
        CheckMode::Exhaustive
    } else {
        CheckMode::Auto
    };

    let mut reports: Vec<PropertyReport> = Vec::new();
    let variants: &[bool] = if a.distortion_only { &[true] } else { &[true, false] };
    for &distortion_only in variants {
        let mut f = DiSetFunction::new(&problem, a.packet - 1, &ownership, a.levels)?.truncate(a.ground_set);
        if distortion_only {
            f = f.distortion_only();
        }
        if a.greedy_reachable {
            f = f.greedy_reachable();
        }
        let label = match (distortion_only, a.greedy_reachable) {
            (true, false) => "distortion",
            (true, true) => "distortion, greedy-reachable",
            (false, false) => "D_i",
            (false, true) => "D_i, greedy-reachable",
        };
        for mut r in [
            check_supermodular(&f, a.trials, a.seed, mode)?,
            check_monotone(&f, a.trials, a.seed, mode)?,
        ] {
            r.property = format!("{} [{label}]", r.property);
            reports.push(r);
        }
    }
    let inst = Instance::new(a.bits.clone(), a.energy)?;
    let order = if a.order.is_empty() {
        Order::identity(n)
    } else {
        Order::from_sequence_one_based(&a.order)?
    };
    reports.push(check_convexity(&inst, &order, a.trials, a.seed)?);

    let text = if a.json {
        pretty(&reports)?
    } else {
        let mut t = format!(
            "{:<44} {:>10} {:>10} {:>14}\n",
            "property", "trials", "violations", "margin"
        );
        for r in &reports {
            let margin = r.margin.map_or("-".to_string(), |m| format!("{m:.6e}"));
            let _ = writeln!(
                t,
                "{:<44} {:>10} {:>10} {:>14}",
                r.property, r.trials, r.violations, margin
            );
        }
        t
    };
    Ok((text, EXIT_OK))
}

fn cmd_spf(a: SpfArgs) -> Outcome {
    let exp = spf_agreement_experiment(a.count, a.seed, a.n, &SolverConfig::default())?;
    let text = if a.csv { exp.to_csv() } else { pretty(&exp)? };
    Ok((text, EXIT_OK))
}
