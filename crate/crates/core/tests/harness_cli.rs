use std::fs;
use std::path::Path;
use std::process::Command;

use fbpinn::harness::{export_gram_pattern_for, run_experiment, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fbpinn"))
}

fn tiny(optimizer: &str, subdomains: usize) -> String {
    format!(
        r#"
problem = "ode1d_hf"
seed = 11

[model]
kind = "fbpinn"
layers = [1, 6, 1]
init = "uniform_weights_zero_bias"
subdomains = [{subdomains}]
overlap = [0.5]

[optimizer]
{optimizer}

[collocation]
counts = [64]

[stop]
max_iters = 15
loss_tol = 0.0

[test]
counts = [101]
"#
    )
}

const GN: &str = "kind = \"gn\"\neta = 0.01\nmu = 0.01\nsolver = { kind = \"block_cg\", tol = 1e-10, max_iter = 500 }";
const ADAM: &str = "kind = \"adam\"\nlr = 0.01";

/// Parses a pattern file into (dim, set of (i, j)).
fn read_pattern(path: &Path) -> (usize, std::collections::BTreeSet<(usize, usize)>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<usize> = lines.next().unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
    let entries: std::collections::BTreeSet<_> = lines
        .map(|l| {
            let mut it = l.split(' ').map(|v| v.parse::<usize>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(entries.len(), header[1]);
    (header[0], entries)
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, tiny(GN, 4)).unwrap();
    let out = dir.path().join("run");
    let status = bin().args(["run", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--every", "0"]).status().unwrap();
    assert!(status.success());
    for f in ["config.toml", "loss_history.csv", "diagnostics.csv", "solution.csv", "params.txt", "report.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(out.join("config.toml")).unwrap(), tiny(GN, 4));
    let history = fs::read_to_string(out.join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 16);
    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("iter,loss,grad_norm,step_norm,cg_iters,time_s\n"));
    let solution = fs::read_to_string(out.join("solution.csv")).unwrap();
    assert_eq!(solution.lines().count(), 102);
    assert_eq!(fs::read_to_string(out.join("params.txt")).unwrap().lines().count(), 4 * 19);
}

#[test]
fn report_matches_history() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml_str(&tiny(ADAM, 3)).unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.iterations, 15);
    assert_eq!(report.loss_history.len(), 16);
    assert!(report.loss_history.iter().all(|l| l.is_finite()));
    assert_eq!(*report.loss_history.last().unwrap(), report.final_loss);
    let last = fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
    let last: f64 = last.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(last, report.final_loss);
}

#[test]
fn identical_runs_are_byte_identical() {
    for opt in [GN, ADAM] {
        let dir = tempfile::tempdir().unwrap();
        let mut a = RunConfig::from_toml_str(&tiny(opt, 4)).unwrap();
        let mut b = a.clone();
        a.out_dir = dir.path().join("a");
        b.out_dir = dir.path().join("b");
        run_experiment(&a).unwrap();
        run_experiment(&b).unwrap();
        for f in ["loss_history.csv", "solution.csv", "params.txt"] {
            assert_eq!(fs::read(a.out_dir.join(f)).unwrap(), fs::read(b.out_dir.join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn invalid_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, tiny(ADAM, 4).replace("layers = [1, 6, 1]", "layers = [2, 6, 1]")).unwrap();
    let out = bin().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid config"));
    let missing = bin().args(["run", "/nonexistent/cfg.toml"]).status().unwrap();
    assert!(!missing.success());
    let garbage = dir.path().join("garbage.toml");
    fs::write(&garbage, "problem = [").unwrap();
    assert!(!bin().args(["gram", garbage.to_str().unwrap()]).status().unwrap().success());
}

#[test]
fn gram_pattern_block_structure() {
    let dir = tempfile::tempdir().unwrap();

    // one subdomain: fully dense (random points; on a symmetric grid the
    // zero-bias init makes odd/even parameter pairs cancel exactly)
    let text = tiny(GN, 1).replace("counts = [64]", "counts = [64]\nscheme = \"random\"");
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    let (n, e) = {
        let p = dir.path().join("k1.txt");
        export_gram_pattern_for(&cfg, &p).unwrap();
        read_pattern(&p)
    };
    assert_eq!(e.len(), n * n);

    // eight subdomains: block tridiagonal, via the CLI
    let cfg_path = dir.path().join("k8.toml");
    fs::write(&cfg_path, tiny(GN, 8)).unwrap();
    let out = dir.path().join("k8");
    assert!(bin().args(["gram", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap().success());
    let (n, e) = read_pattern(&out.join("gram_pattern.txt"));
    let b = n / 8;
    assert!(e.iter().all(|&(i, j)| (i / b).abs_diff(j / b) <= 1));
    for k in 0..8usize {
        for l in k.saturating_sub(1)..(k + 2).min(8) {
            assert!(e.contains(&(k * b, l * b)) || e.iter().any(|&(i, j)| i / b == k && j / b == l));
        }
    }

    // 2x2 Helmholtz: every block pair present
    let text = tiny(GN, 1)
        .replace("ode1d_hf", "helmholtz2d")
        .replace("layers = [1, 6, 1]", "layers = [2, 6, 1]")
        .replace("subdomains = [1]", "subdomains = [2, 2]")
        .replace("overlap = [0.5]", "overlap = [0.5, 0.5]")
        .replace("counts = [64]", "counts = [12, 12]")
        .replace("counts = [101]", "counts = [11, 11]");
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    let p = dir.path().join("h.txt");
    export_gram_pattern_for(&cfg, &p).unwrap();
    let header = fs::read_to_string(&p).unwrap();
    let adjacency = header.lines().find(|l| l.starts_with("# block_adjacency")).unwrap();
    assert_eq!(adjacency.split(' ').count() - 2, 10);
    let (n, e) = read_pattern(&p);
    let b = n / 4;
    for k in 0..4 {
        for l in 0..4 {
            assert!(e.iter().any(|&(i, j)| i / b == k && j / b == l), "block {k},{l}");
        }
    }
}

#[test]
fn sweep_summarizes_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, tiny(ADAM, 2)).unwrap();
    let out = dir.path().join("sweep");
    let o = bin().args(["sweep", cfg_path.to_str().unwrap(), "--seeds", "3", "--out", out.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("median rel_l2_error"));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("seed_11").join("report.txt").exists());
    assert!(out.join("seed_13").join("report.txt").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
