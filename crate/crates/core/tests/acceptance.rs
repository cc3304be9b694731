//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does. Tolerances are pinned below.
//!
//! Weak scaling needs one core per rank to mean anything. On a host with
//! fewer cores its line is still printed against the same bound, but a
//! failure there does not fail the test.
//!
//! Runs without the test harness so the table always shows:
//! `cargo test --test acceptance`.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use mbflow::exchange::{build_halo_plan, ExchangeOptions};
use mbflow::gas::{conserved_from_primitive, GasModel, PrimitiveState};
use mbflow::harness::*;
use mbflow::hetero::{balance_ratio, corner_speedup, evaluate, ratio_grid, CornerAnalog, ModelParams};
use mbflow::integrator::{rk3_scalar, TimeControls, Tiling};
use mbflow::partition::{regroup_blocks, split_zone, NodeTopology, SplitTarget, ZoneSpec};
use mbflow::runtime::{run_in_process, RunOptions};

const SPATIAL_ORDER_MIN: f64 = 4.5;
const TEMPORAL_ORDER_MIN: f64 = 2.7;
const RK3_SCALAR_TOL: f64 = 1e-12;
const FREESTREAM_TOL: f64 = 1e-12;
const DRIFT_TOL: f64 = 1e-12;
const SOD_L1_MAX: f64 = 0.02;
const SOD_OVERSHOOT_MAX: f64 = 0.02;
const RATIO_BAND: (f64, f64) = (0.6, 0.8);
const RATIO_CLOSED_FORM_TOL: f64 = 0.2;
const SPEEDUP_BAND: (f64, f64) = (2.3, 2.9);
const COMP_COMM_GAIN_MIN: f64 = 2.0;
const WEAK_VARIATION_MAX: f64 = 0.10;
const WEAK_RANKS: [usize; 4] = [1, 2, 4, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn case(kind: CaseKind, size: usize, blocks: usize) -> CaseFile {
    gen_case(kind, size, blocks).unwrap()
}

/// Density of every cell in zone order, with cell-centre coordinates.
fn density(run: &CaseRun) -> Vec<([f64; 3], f64)> {
    let d = FieldDump::merged(&run.plan, &run.output.fields).unwrap();
    let zone = &run.plan.zone;
    let h = zone.spacing();
    let [nx, ny, _] = zone.cells;
    d.blocks[0].values[0]
        .iter()
        .enumerate()
        .map(|(k, rho)| {
            let i = [k % nx, (k / nx) % ny, k / (nx * ny)];
            (std::array::from_fn(|a| zone.origin[a] + (i[a] as f64 + 0.5) * h[a]), *rho)
        })
        .collect()
}

/// rho = 1 + 0.2 sin(2 pi (x + y + z - 3t)) for the generated density wave.
fn wave_density(x: [f64; 3], t: f64) -> f64 {
    1.0 + 0.2 * (2.0 * PI * (x[0] + x[1] + x[2] - 3.0 * t)).sin()
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    (s / n as f64).sqrt()
}

fn sci(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", s.join(", "))
}

fn fixed(dt: f64, steps: usize) -> TimeControls {
    TimeControls {
        fixed_dt: true,
        dt,
        max_iters: steps,
        convergence_tol: 0.0,
        ..TimeControls::default()
    }
}

fn spatial_order() -> Outcome {
    // dt small enough that the time error sits far below the space error
    let (dt, steps) = (2.0e-4, 25);
    let mut errors = Vec::new();
    for n in [16, 32, 64] {
        let mut c = case(CaseKind::DensityWave, n, 1);
        c.time = fixed(dt, steps);
        let run = run_case(&c, None).unwrap();
        let t = run.output.summary.time;
        errors.push(l2(density(&run).into_iter().map(|(x, rho)| rho - wave_density(x, t))));
    }
    let orders: Vec<f64> = errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    outcome(
        orders.iter().all(|o| *o >= SPATIAL_ORDER_MIN),
        format!("L2 errors {}, orders {orders:.2?}", sci(&errors)),
    )
}

fn temporal_order() -> Outcome {
    let t_end = 0.048;
    let mut sols = Vec::new();
    for steps in [12, 24, 48] {
        let mut c = case(CaseKind::DensityWave, 32, 1);
        c.time = fixed(t_end / steps as f64, steps);
        let run = run_case(&c, None).unwrap();
        sols.push(density(&run).into_iter().map(|(_, r)| r).collect::<Vec<_>>());
    }
    let diff = |a: &[f64], b: &[f64]| l2(a.iter().zip(b).map(|(x, y)| x - y));
    let order = (diff(&sols[0], &sols[1]) / diff(&sols[1], &sols[2])).log2();
    let lambda: f64 = 0.1;
    let q1 = rk3_scalar(1.0, lambda, |q| -q);
    let hand = 1.0 - lambda + lambda * lambda / 2.0 - lambda.powi(3) / 6.0;
    outcome(
        order >= TEMPORAL_ORDER_MIN && (q1 - hand).abs() <= RK3_SCALAR_TOL && (q1 - 0.9048333333333333).abs() <= RK3_SCALAR_TOL,
        format!("observed order {order:.3}, scalar step {q1:.16}"),
    )
}

fn freestream() -> Outcome {
    let mut c = case(CaseKind::Uniform, 16, 8);
    c.set_ranks(4).unwrap();
    c.time.max_iters = 50;
    c.time.convergence_tol = 0.0;
    let run = run_case(&c, None).unwrap();
    let InitialCondition::Uniform { rho, u, v, w, p } = c.initial else { unreachable!() };
    let q0 = conserved_from_primitive(&PrimitiveState::new(rho, u, v, w, p), &c.gas).unwrap().to_array();
    let d = FieldDump::merged(&run.plan, &run.output.fields).unwrap();
    let err = (0..5)
        .flat_map(|k| d.blocks[0].values[k].iter().map(move |q| (q - q0[k]).abs()))
        .fold(0.0, f64::max);
    outcome(
        run.metrics.iterations == 50 && err <= FREESTREAM_TOL,
        format!("{} steps, max |Q - Q0| = {err:.2e}", run.metrics.iterations),
    )
}

fn conservation() -> Outcome {
    let mut c = case(CaseKind::DensityWave, 16, 4);
    c.set_ranks(2).unwrap();
    c.time.convergence_tol = 0.0;
    c.time.max_iters = 50;
    // totals of the initial state, from the same initializer the runs use
    let init = c.initializer();
    let n = c.zone.cells[0];
    let h = 1.0 / n as f64;
    let mut s0 = [0.0; 5];
    for k in 0..n * n * n {
        let x = [(k % n) as f64, ((k / n) % n) as f64, (k / (n * n)) as f64].map(|i| (i + 0.5) * h);
        let q = conserved_from_primitive(&init(x), &c.gas).unwrap().to_array();
        for i in 0..5 {
            s0[i] += q[i];
        }
    }
    let run = run_case(&c, None).unwrap();
    let d = FieldDump::merged(&run.plan, &run.output.fields).unwrap();
    let drift: Vec<f64> = (0..5)
        .map(|i| {
            let s: f64 = d.blocks[0].values[i].iter().sum();
            (s - s0[i]).abs() / s0[i].abs()
        })
        .collect();
    outcome(
        run.metrics.iterations == 50 && drift.iter().all(|e| *e <= DRIFT_TOL),
        format!("relative drift {}", sci(&drift)),
    )
}

fn partition_transparency() -> Outcome {
    let mut one = case(CaseKind::DensityWave, 64, 1);
    one.time.max_iters = 2;
    let mut many = one.clone();
    many.partition.blocks = 8;
    many.set_ranks(8).unwrap();
    let a = run_case(&one, None).unwrap();
    let b = run_case(&many, None).unwrap();
    let da = FieldDump::merged(&a.plan, &a.output.fields).unwrap().to_bytes();
    let db = FieldDump::merged(&b.plan, &b.output.fields).unwrap().to_bytes();
    outcome(
        b.plan.blocks.len() == 8 && b.plan.ranks == 8 && da == db,
        format!("{} vs {} blocks, {} dump bytes, identical: {}", a.plan.blocks.len(), b.plan.blocks.len(), da.len(), da == db),
    )
}

fn sod() -> Outcome {
    let c = case(CaseKind::Sod, 200, 1);
    assert_eq!(c.initial, InitialCondition::sod());
    let run = run_case(&c, None).unwrap();
    let t = run.output.summary.time;
    let (l, r) = ([1.0, 0.0, 1.0], [0.125, 0.0, 0.1]);
    let rho = density(&run);
    let l1 = rho
        .iter()
        .map(|(x, v)| (v - common::riemann(l, r, c.gas.gamma, (x[0] - 0.5) / t)[0]).abs())
        .sum::<f64>()
        / rho.len() as f64;
    let jump = l[0] - r[0];
    let hi = rho.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = rho.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let over = ((hi - l[0]).max(r[0] - lo)).max(0.0) / jump;
    outcome(
        (t - 0.2).abs() < 1e-12 && rho.len() == 200 && l1 <= SOD_L1_MAX && over <= SOD_OVERSHOOT_MAX,
        format!("t = {t}, L1 density error {l1:.4}, overshoot {:.2}% of the jump", 100.0 * over),
    )
}

fn load_ratio_trend() -> Outcome {
    let c = case(CaseKind::Corner, 40_000, 16);
    let sweep = sweep_load_ratio(&c, &ratio_grid(0.2, 1.2, 0.1), SweepMode::Model).unwrap();
    let best = sweep.best.unwrap();
    let mut pass = sweep.points.len() == 11 && (RATIO_BAND.0..=RATIO_BAND.1).contains(&best);
    let mut detail = format!("default argmax {best:.2}");
    let analog = c.corner.unwrap();
    let fine = ratio_grid(0.1, 3.0, 0.05);
    for k in [0.6, 0.9, 1.3, 1.7, 2.2] {
        let mut s = c.clone();
        s.devices.coprocessor.throughput = k * s.devices.cpu.throughput;
        let got = sweep_load_ratio(&s, &fine, SweepMode::Model).unwrap().best.unwrap();
        let params = ModelParams {
            models: s.devices,
            network: s.network,
            ..ModelParams::default()
        };
        let closed = balance_ratio(&analog, &params, &s.gas).unwrap();
        pass &= (got - closed).abs() <= RATIO_CLOSED_FORM_TOL;
        detail += &format!("; k {k}: argmax {got:.2} vs {closed:.2}");
    }
    outcome(pass, detail)
}

fn hetero_speedup() -> Outcome {
    let analog = CornerAnalog::default();
    let s = corner_speedup(&analog, &ModelParams::default(), &GasModel::default(), 0.7).unwrap();
    outcome(
        analog.nodes == 16 && (SPEEDUP_BAND.0..=SPEEDUP_BAND.1).contains(&s.speedup),
        format!("{} nodes at r = 0.7: {:.3}x ({:.0} vs {:.0} MCUPS)", analog.nodes, s.speedup, s.hetero_mcups, s.cpu_only_mcups),
    )
}

fn overlap_benefit() -> Outcome {
    let gas = GasModel::default();
    let params = ModelParams::default();
    let mut worst = f64::NEG_INFINITY;
    let mut timelines = 0;
    for nodes in [1, 4, 16] {
        let analog = CornerAnalog { nodes, ..CornerAnalog::default() };
        for r in ratio_grid(0.2, 1.2, 0.1) {
            for cops in [true, false] {
                let plan = analog.plan(r, cops, &gas).unwrap();
                let hp = build_halo_plan(&plan, &gas).unwrap();
                let (m, _) = evaluate(&plan, &hp, &params).unwrap();
                worst = worst.max(m.step_time - m.serialized_step_time);
                timelines += 1;
            }
        }
    }
    // a measured heterogeneous run reports its hidden fraction
    let mut corner = case(CaseKind::Corner, 4000, 2);
    corner.time.max_iters = 2;
    let hidden = run_case(&corner, None).unwrap().metrics.hidden_fraction;

    // tuned against naive exchange on 64 blocks
    let mut c = case(CaseKind::DensityWave, 48, 64);
    c.set_ranks(8).unwrap();
    c.time.max_iters = 4;
    c.time.convergence_tol = 0.0;
    let ratio = |opts: ExchangeOptions| {
        let mut c = c.clone();
        c.exchange = opts;
        c.output.best_of = 2;
        run_case(&c, None).unwrap().metrics.comp_comm_ratio.unwrap()
    };
    let tuned = ratio(ExchangeOptions::tuned());
    let naive = ratio(ExchangeOptions::naive());
    let gain = tuned / naive;
    outcome(
        worst <= 0.0 && hidden.is_some_and(|h| (0.0..=1.0).contains(&h)) && gain >= COMP_COMM_GAIN_MIN,
        format!(
            "{timelines} timelines, max T_overlap - T_serialized {worst:.2e} s; hidden fraction {:.3}; comp/comm tuned {tuned:.2} vs naive {naive:.2} = {gain:.2}x",
            hidden.unwrap_or(f64::NAN)
        ),
    )
}

fn scheduling_invariance() -> Outcome {
    let gas = GasModel::default();
    let zone = ZoneSpec::periodic_cube(16, 1.0);
    let dec = split_zone(&zone, SplitTarget::Blocks(2)).unwrap();
    let plan = regroup_blocks(&zone, &dec, 1, &NodeTopology::homogeneous(1, 1), 1.0).unwrap();
    let c = case(CaseKind::DensityWave, 16, 2);
    let init = c.initializer();
    let controls = TimeControls { max_iters: 2, convergence_tol: 0.0, ..TimeControls::default() };
    let base = run_in_process(&plan, &gas, &init, &controls, &RunOptions::default()).unwrap();
    let mut same = true;
    let mut tried = 0;
    for workers in [1, 2, 8] {
        for tile in [[16, 16, 16], [4, 4, 4], [3, 5, 16], [1, 16, 2]] {
            let opts = RunOptions { tiling: Tiling { tile }, ..RunOptions::default() }.with_workers(workers);
            let r = run_in_process(&plan, &gas, &init, &controls, &opts).unwrap();
            let norms = |o: &mbflow::runtime::RunOutput| o.summary.history.iter().map(|h| h.residual_norm.to_bits()).collect::<Vec<_>>();
            same &= r.fields == base.fields && norms(&r) == norms(&base);
            tried += 1;
        }
    }
    outcome(same, format!("{tried} worker/tile combinations, all identical: {same}"))
}

fn weak_scaling() -> Outcome {
    let mut c = case(CaseKind::DensityWave, 24, 1);
    c.time.max_iters = 6;
    c.time.convergence_tol = 0.0;
    c.output.best_of = 5;
    let rows = bench_scaling(&c, BenchMode::Weak, &WEAK_RANKS).unwrap();
    let v = time_variation(&rows);
    let times: Vec<String> = rows.iter().map(|r| format!("{}: {:.2} ms", r.ranks, 1e3 * r.time_per_iter)).collect();
    outcome(
        rows.len() == 4 && v <= WEAK_VARIATION_MAX,
        format!("per-iteration times [{}], variation {:.1}%", times.join(", "), 100.0 * v),
    )
}

fn main() {
    // a name filter that does not match this suite skips it
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("spatial order", spatial_order),
        ("temporal order", temporal_order),
        ("freestream preservation", freestream),
        ("conservation", conservation),
        ("partition transparency", partition_transparency),
        ("shock capturing", sod),
        ("load-ratio trend", load_ratio_trend),
        ("heterogeneous speedup", hetero_speedup),
        ("overlap benefit", overlap_benefit),
        ("scheduling invariance", scheduling_invariance),
        ("weak scaling", weak_scaling),
    ];
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let weak_gated = cores >= WEAK_RANKS[WEAK_RANKS.len() - 1];
    let mut failed = Vec::new();
    println!("acceptance criteria");
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = check();
        println!(
            "{:>2}. {:<24} {}  {} ({:.1} s)",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        if o.pass {
            continue;
        }
        if *name == "weak scaling" && !weak_gated {
            println!("    not gated: {cores} core(s) for {} ranks", WEAK_RANKS[WEAK_RANKS.len() - 1]);
        } else {
            failed.push(*name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}

