use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mbflow::exchange::LinkModel;
use mbflow::harness::*;
use mbflow::hetero::LinkSpec;
use mbflow::partition::{imbalance_report, PartitionPlan};

/// Multi-block compressible flow runs and benchmarks.
#[derive(Parser)]
#[command(name = "mbflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a case file.
    Gen {
        /// uniform, density-wave, sod or corner.
        kind: CaseKind,
        /// Cells per side (cells along x for sod, cells per node for corner).
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Blocks (nodes for corner).
        #[arg(long, default_value_t = 1)]
        blocks: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Partition a case and write the plan.
    Partition {
        case: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run a case.
    Run {
        case: PathBuf,
        /// Use this plan instead of partitioning the case.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Directory for metrics.csv and fields.mbfd.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Sweep the coprocessor load ratio.
    SweepRatio {
        case: PathBuf,
        /// Ratios to try; defaults to 0.2, 0.3, ..., 1.2.
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
        #[arg(long, value_enum, default_value_t = SweepArg::Model)]
        mode: SweepArg,
        #[command(flatten)]
        overrides: Overrides,
        /// Directory for sweep.csv.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Weak, strong or ranks-by-workers scaling.
    Bench {
        case: PathBuf,
        #[arg(long, value_enum, default_value_t = BenchArg::Weak)]
        mode: BenchArg,
        /// Rank counts, or core counts for the matrix.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        counts: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
        /// Directory for bench-<mode>.csv.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print CSV results and field dumps as tables.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Model,
    Run,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchArg {
    Weak,
    Strong,
    Matrix,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Workers per CPU device.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    load_ratio: Option<f64>,
    /// CPU cell updates per second.
    #[arg(long)]
    cpu_throughput: Option<f64>,
    /// Coprocessor cell updates per second.
    #[arg(long)]
    cop_throughput: Option<f64>,
    /// Coprocessor workers.
    #[arg(long)]
    cop_workers: Option<usize>,
    /// Host link bandwidth, bytes per second.
    #[arg(long)]
    cop_bandwidth: Option<f64>,
    /// Host link latency, seconds.
    #[arg(long)]
    cop_latency: Option<f64>,
    /// Treat the network as free.
    #[arg(long)]
    ideal_network: bool,
    /// Repeat and keep the fastest.
    #[arg(long)]
    best_of: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, case: &mut CaseFile) -> Result<()> {
        if let Some(b) = self.blocks {
            case.partition.blocks = b;
        }
        if let Some(w) = self.workers {
            case.devices.cpu.workers = w;
            case.topology.workers_per_device = w;
        }
        let cop = &mut case.devices.coprocessor;
        if let Some(t) = self.cop_throughput {
            cop.throughput = t;
        }
        if let Some(w) = self.cop_workers {
            cop.workers = w;
        }
        if self.cop_bandwidth.is_some() || self.cop_latency.is_some() {
            let link = cop.link.get_or_insert_with(LinkSpec::default);
            link.bandwidth = self.cop_bandwidth.unwrap_or(link.bandwidth);
            link.latency = self.cop_latency.unwrap_or(link.latency);
        }
        if let Some(t) = self.cpu_throughput {
            case.devices.cpu.throughput = t;
        }
        if self.ideal_network {
            case.network = LinkModel::ideal();
        }
        if let Some(n) = self.best_of {
            case.output.best_of = n;
        }
        if let Some(n) = self.max_iters {
            case.time.max_iters = n;
        }
        if let Some(s) = self.seed {
            case.seed = s;
        }
        if let Some(r) = self.ranks {
            case.set_ranks(r)?;
        }
        if let Some(r) = self.load_ratio {
            case.set_load_ratio(r)?;
        }
        case.validate()?;
        Ok(())
    }
}

fn load_case(path: &Path, overrides: &Overrides) -> Result<CaseFile> {
    let mut case = CaseFile::load(path).with_context(|| format!("reading case {}", path.display()))?;
    overrides.apply(&mut case)?;
    Ok(case)
}

fn out_dir(dir: &Option<PathBuf>) -> Result<Option<&Path>> {
    if let Some(d) = dir {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(dir.as_deref())
}

fn default_ratios() -> Vec<f64> {
    (2..=12).map(|k| k as f64 / 10.0).collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Gen { kind, size, blocks, out } => {
            let case = gen_case(kind, size, blocks)?;
            case.save(&out)?;
            println!("wrote {} ({} cells)", out.display(), case.zone.cells.iter().product::<usize>());
        }
        Command::Partition { case, overrides, out } => {
            let case = load_case(&case, &overrides)?;
            let plan = case.plan()?;
            fs::write(&out, plan.to_toml()?).with_context(|| format!("writing {}", out.display()))?;
            let devices = case.devices;
            let report = imbalance_report(&plan, |c| devices.get(c).throughput);
            println!(
                "{} blocks on {} ranks, imbalance {:.3}; wrote {}",
                plan.blocks.len(),
                plan.ranks,
                report.imbalance,
                out.display()
            );
        }
        Command::Run { case, plan, overrides, out } => {
            let case = load_case(&case, &overrides)?;
            let plan = match plan {
                Some(p) => Some(
                    PartitionPlan::from_toml(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                ),
                None => None,
            };
            let run = run_case(&case, plan.as_ref())?;
            print!("{}", render_runs(std::slice::from_ref(&run.metrics)));
            if let Some(dir) = out_dir(&out)? {
                save_csv(&dir.join("metrics.csv"), std::slice::from_ref(&run.metrics))?;
                if case.output.dump {
                    FieldDump::merged(&run.plan, &run.output.fields)?.save(&dir.join("fields.mbfd"))?;
                }
            }
        }
        Command::SweepRatio { case, ratios, mode, overrides, out } => {
            let case = load_case(&case, &overrides)?;
            let ratios = if ratios.is_empty() { default_ratios() } else { ratios };
            let mode = match mode {
                SweepArg::Model => SweepMode::Model,
                SweepArg::Run => SweepMode::Run,
            };
            let sweep = sweep_load_ratio(&case, &ratios, mode)?;
            println!("{:>6} {:>10} {:>12} {:>12} {:>8}", "ratio", "MCUPS", "s/step", "serial s", "hidden");
            for p in &sweep.points {
                println!(
                    "{:>6.2} {:>10.3} {:>12.6} {:>12.6} {:>8.3}",
                    p.ratio, p.mcups, p.step_time, p.serialized_step_time, p.hidden_fraction
                );
            }
            match sweep.best {
                Some(r) => println!("best ratio {r:.2}"),
                None => println!("no best ratio"),
            }
            if let Some(dir) = out_dir(&out)? {
                save_csv(&dir.join("sweep.csv"), &sweep.points)?;
            }
        }
        Command::Bench { case, mode, counts, overrides, out } => {
            let case = load_case(&case, &overrides)?;
            let (mode, name) = match mode {
                BenchArg::Weak => (BenchMode::Weak, "weak"),
                BenchArg::Strong => (BenchMode::Strong, "strong"),
                BenchArg::Matrix => (BenchMode::Matrix, "matrix"),
            };
            let rows = bench_scaling(&case, mode, &counts)?;
            print!("{}", render_scaling(&rows));
            if mode == BenchMode::Weak {
                println!("per-iteration time variation {:.1}%", 100.0 * time_variation(&rows));
            }
            if let Some(dir) = out_dir(&out)? {
                save_csv(&dir.join(format!("bench-{name}.csv")), &rows)?;
            }
        }
        Command::Report { files } => {
            for f in &files {
                println!("{}", f.display());
                print!("{}", report_file(f)?);
            }
        }
    }
    Ok(())
}

/// Table for one result file, chosen by its extension and header.
fn report_file(path: &Path) -> Result<String> {
    if path.extension().is_some_and(|e| e == "mbfd") {
        let dump = FieldDump::load(path)?;
        let mut s = format!("{:>5} {:>14} {:>12} {:>12}\n", "block", "cells", "min rho", "max rho");
        for b in &dump.blocks {
            let lo = b.values[0].iter().copied().fold(f64::INFINITY, f64::min);
            let hi = b.values[0].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s += &format!("{:>5} {:>14} {:>12.6} {:>12.6}\n", b.id, format!("{:?}", b.dims), lo, hi);
        }
        return Ok(s);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    if header.starts_with("case,") {
        Ok(render_runs(&read_csv(text.as_bytes())?))
    } else if header.starts_with("mode,") {
        Ok(render_scaling(&read_csv(text.as_bytes())?))
    } else if header.starts_with("ratio,") {
        let points: Vec<mbflow::hetero::RatioPoint> = read_csv(text.as_bytes())?;
        let mut s = format!("{:>6} {:>10} {:>8}\n", "ratio", "MCUPS", "hidden");
        for p in &points {
            s += &format!("{:>6.2} {:>10.3} {:>8.3}\n", p.ratio, p.mcups, p.hidden_fraction);
        }
        Ok(s)
    } else {
        bail!("{} is not a result file", path.display())
    }
}
