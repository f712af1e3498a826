use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use npse_core::io::{read_table, read_trajectory};

const TINY: &str = r#"
n_z = 64
horizon = 2.0
n_t = 40
lambda_t = 10.0
hold_time = 0.5
snapshot_stride = 10
max_iters = 3
bfa_orders = [1, 2]
bfa_order = 2
"#;

fn npse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("{TINY}{extra}")).unwrap();
    (dir, cfg)
}

fn run(sub: &str, cfg: &Path, out: &Path, more: &[&str]) -> Output {
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(more);
    npse(&args)
}

fn header_hash(path: &Path) -> String {
    let t = read_table(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
    t.header.get("config-sha256").expect("hash header").to_string()
}

#[test]
fn groundstate_writes_both_states_with_hash() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("gs");
    let o = run("groundstate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = header_hash(&out.join("groundstate_initial.csv"));
    let b = header_hash(&out.join("groundstate_final.csv"));
    assert_eq!(a.len(), 64);
    assert_eq!(a, b);
}

#[test]
fn simulate_is_deterministic() {
    let (dir, cfg) = setup("");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run("simulate", &cfg, &a, &[]).status.success());
    assert!(run("simulate", &cfg, &b, &[]).status.success());
    for f in ["trajectory.csv", "final_state.csv", "density_carpet.csv", "error_evolution.csv", "summary.txt"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let t = read_table(std::fs::read(a.join("error_evolution.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(t.rows.len(), 41 + 10);
}

#[test]
fn simulate_reads_a_trajectory_file() {
    let (dir, cfg) = setup("");
    let first = dir.path().join("first");
    assert!(run("simulate", &cfg, &first, &[]).status.success());
    let traj = first.join("trajectory.csv");
    let second = dir.path().join("second");
    let o = run("simulate", &cfg, &second, &["--trajectory", traj.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(first.join("final_state.csv")).unwrap(),
        std::fs::read(second.join("final_state.csv")).unwrap()
    );
}

#[test]
fn optimize_writes_outputs_then_reports_non_convergence() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("opt");
    let o = run("optimize", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, c) = read_trajectory(std::fs::read(out.join("optimal_trajectory.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(c.samples().first(), Some(&0.0));
    assert_eq!(c.samples().last(), Some(&10.0));
    let log = read_table(std::fs::read(out.join("convergence.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(log.columns.join(","), npse_core::io::CONVERGENCE_COLUMNS);
    assert!(out.join("summary.txt").exists());
}

#[test]
fn bfa_optimizer_writes_coefficients() {
    let (dir, cfg) = setup("optimizer = \"bfa\"\n");
    let out = dir.path().join("bfa");
    let o = run("optimize", &cfg, &out, &[]);
    assert!(matches!(o.status.code(), Some(0) | Some(4)));
    let t = read_table(std::fs::read(out.join("bfa_coefficients.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(t.rows.len(), 2);
}

#[test]
fn sweep_and_tmin() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("s");
    let o = run("sweep-bfa", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = read_table(std::fs::read(out.join("bfa_sweep.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(t.column("order").unwrap(), vec![1.0, 2.0]);
    let o = run("tmin", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("tmin.txt")).unwrap();
    assert!(text.contains("plateau_tmin = "));
}

#[test]
fn params_override_changes_the_hash() {
    let (dir, cfg) = setup("");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run("groundstate", &cfg, &a, &[]).status.success());
    assert!(run("groundstate", &cfg, &b, &["--params", "n_atoms=2000"]).status.success());
    assert_ne!(
        header_hash(&a.join("groundstate_initial.csv")),
        header_hash(&b.join("groundstate_initial.csv"))
    );
}

#[test]
fn bad_configs_exit_with_code_2() {
    let (dir, cfg) = setup("r_comp = 2.0\n");
    let out = dir.path().join("x");
    let o = run("groundstate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda_t or r_comp"));

    let (dir, cfg) = setup("bogus_key = 1\n");
    let o = run("groundstate", &cfg, &dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));

    let (dir, cfg) = setup("");
    let o = run("groundstate", &cfg, &dir.path().join("x"), &["--params", "v_max=3"]);
    assert_eq!(o.status.code(), Some(2));

    let o = npse(&["simulate", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
}
