use std::path::Path;
use std::process::{Command, Output};

fn mbflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbflow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn mbflow")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mbflow(dir, args);
    assert!(
        out.status.success(),
        "mbflow {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn gen_partition_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "density-wave", "--size", "8", "--blocks", "4", "-o", "case.toml"]);
    let s = ok(d, &["partition", "case.toml", "--ranks", "2", "-o", "plan.toml"]);
    assert!(s.contains("4 blocks on 2 ranks"), "{s}");
    ok(d, &["run", "case.toml", "--plan", "plan.toml", "--ranks", "2", "--max-iters", "2", "--seed", "3", "-o", "out"]);
    assert!(d.join("out/metrics.csv").exists());
    assert!(d.join("out/fields.mbfd").exists());
    let s = ok(d, &["report", "out/metrics.csv", "out/fields.mbfd"]);
    assert!(s.contains("density-wave-8"), "{s}");
    assert!(s.contains("[8, 8, 8]"), "{s}");
}

#[test]
fn runs_on_different_rank_counts_dump_the_same_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "density-wave", "--size", "8", "--blocks", "8", "-o", "case.toml"]);
    ok(d, &["run", "case.toml", "--max-iters", "2", "-o", "one"]);
    ok(d, &["run", "case.toml", "--max-iters", "2", "--ranks", "4", "--workers", "2", "-o", "four"]);
    let a = std::fs::read(d.join("one/fields.mbfd")).unwrap();
    let b = std::fs::read(d.join("four/fields.mbfd")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_finds_the_best_ratio_of_the_corner_case() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "corner", "--size", "40000", "--blocks", "16", "-o", "corner.toml"]);
    let s = ok(d, &["sweep-ratio", "corner.toml", "-o", "out"]);
    assert!(s.contains("best ratio 0.70"), "{s}");
    let csv = std::fs::read_to_string(d.join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    let s = ok(d, &["sweep-ratio", "corner.toml", "--ratios", "0.5,0.9"]);
    assert!(s.contains("0.50") && s.contains("0.90"));
}

#[test]
fn bench_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "uniform", "--size", "6", "-o", "u.toml"]);
    ok(d, &["bench", "u.toml", "--mode", "strong", "--counts", "1,2", "--blocks", "2", "--max-iters", "2", "-o", "out"]);
    let csv = std::fs::read_to_string(d.join("out/bench-strong.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let s = ok(d, &["report", "out/bench-strong.csv"]);
    assert!(s.contains("strong"));
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(!mbflow(d, &["gen", "vortex", "-o", "x.toml"]).status.success());
    assert!(!mbflow(d, &["run", "missing.toml"]).status.success());
    std::fs::write(d.join("junk.csv"), "a,b\n1,2\n").unwrap();
    let out = mbflow(d, &["report", "junk.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a result file"));
}
