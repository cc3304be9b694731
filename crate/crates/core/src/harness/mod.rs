//! Case generation, runs, sweeps, scaling studies and their reports.

pub mod case;
pub mod dump;
pub mod report;
pub mod run;

pub use case::{gen_case, CaseFile, CaseKind, InitialCondition, OutputOptions, PartitionSpec, Strategy, CASE_VERSION};
pub use dump::{DumpBlock, FieldDump, DUMP_MAGIC, DUMP_VERSION};
pub use report::{
    csv_header, load_csv, read_csv, render_runs, render_scaling, save_csv, write_csv, RunMetrics, ScalingRow,
};
pub use run::{
    bench_scaling, density_error, run_case, run_metrics, sweep_load_ratio, time_variation, zone_density, BenchMode,
    CaseRun, Sweep, SweepMode,
};
