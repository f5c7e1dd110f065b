//! Experiment runner: TOML configs, training runs, metrics and run artifacts.
//!
//! A run directory contains
//!
//! | file               | content                                              |
//! |--------------------|------------------------------------------------------|
//! | `config.toml`      | the config as given (or re-serialized)               |
//! | `loss_history.csv` | `iter,loss`, deterministic for a fixed config        |
//! | `diagnostics.csv`  | `iter,loss,grad_norm,step_norm,cg_iters,time_s`      |
//! | `solution.csv`     | test-grid coordinates, `pred,exact,abs_err`          |
//! | `params.txt`       | trained parameter vector, one value per line         |
//! | `report.txt`       | `key = value` summary                                |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{ConstraintOp, DecompError, Decomposition, Decomposition1D, Decomposition2D};
use crate::model::{field_value, FbpinnModel, ModelError, PinnModel, ResidualSystem, VanillaPinnModel};
use crate::net::{Activation, InitKind};
use crate::optim::{
    assemble_gram, run_optimizer, AdamConfig, GnConfig, IterRecord, Method, OptimError,
    StopCriteria, Trace,
};
use crate::problems::{
    collocation_random, collocation_uniform, CollocationSet, Problem, ProblemError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("relative error undefined: exact solution is zero on the whole test grid")]
    ZeroReference,
    #[error("prediction has {pred} values, reference has {exact}")]
    LengthMismatch { pred: usize, exact: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Fbpinn,
    Vanilla,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub init: InitKind,
    /// Subdomains per axis (FBPINN only).
    #[serde(default)]
    pub subdomains: Vec<usize>,
    /// Overlap ratio per axis (FBPINN only).
    #[serde(default)]
    pub overlap: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Gn(GnConfig),
}

impl OptimizerConfig {
    pub fn method(&self) -> Method {
        match *self {
            OptimizerConfig::Adam(c) => Method::Adam(c),
            OptimizerConfig::Gn(c) => Method::GaussNewton(c),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Uniform,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationConfig {
    /// Points per axis; `random` draws their product.
    pub counts: Vec<usize>,
    #[serde(default)]
    pub scheme: SchemeName,
    /// Sampling seed for `random`; defaults to the run seed.
    #[serde(default)]
    pub sample_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    /// Overrides the problem's default constraint.
    #[serde(default)]
    pub constraint: Option<ConstraintOp>,
    pub optimizer: OptimizerConfig,
    pub collocation: CollocationConfig,
    pub stop: StopCriteria,
    pub test: TestConfig,
    /// Original text when parsed from a file; echoed into the run directory.
    #[serde(skip)]
    pub source: Option<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.source = Some(text.to_string());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn problem(&self) -> Result<Problem, HarnessError> {
        let mut p = Problem::by_name(&self.problem)?;
        if let Some(c) = self.constraint {
            p.constraint = c;
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let problem = self.problem()?;
        let dim = problem.dim();
        if problem.constraint.dim() != dim {
            return Err(cfg_err(format!(
                "constraint is {}-dimensional, problem {} is {dim}-dimensional",
                problem.constraint.dim(),
                self.problem
            )));
        }
        if let ConstraintOp::TanhScaled { kappa } = problem.constraint {
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(cfg_err(format!("kappa must be positive, got {kappa}")));
            }
        }

        let m = &self.model;
        if m.layers.len() < 2 || m.layers.contains(&0) {
            return Err(cfg_err("model.layers needs at least two positive widths"));
        }
        if m.layers[0] != dim {
            return Err(cfg_err(format!(
                "model.layers starts with {}, problem dimension is {dim}",
                m.layers[0]
            )));
        }
        if *m.layers.last().unwrap() != 1 {
            return Err(cfg_err("model.layers must end with a scalar output"));
        }
        match m.kind {
            ModelKind::Fbpinn => {
                if m.subdomains.len() != dim || m.overlap.len() != dim {
                    return Err(cfg_err(format!(
                        "fbpinn needs {dim} subdomain count(s) and overlap(s)"
                    )));
                }
                self.decomposition()?;
            }
            ModelKind::Vanilla => {
                if !m.subdomains.is_empty() || !m.overlap.is_empty() {
                    return Err(cfg_err("vanilla model takes no subdomains/overlap"));
                }
            }
        }

        match self.optimizer {
            OptimizerConfig::Adam(a) => {
                if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2)
                    || !(a.eps > 0.0)
                {
                    return Err(cfg_err("adam needs lr > 0, betas in [0, 1), eps > 0"));
                }
            }
            OptimizerConfig::Gn(g) => g.validate()?,
        }

        check_counts("collocation.counts", &self.collocation.counts, dim)?;
        check_counts("test.counts", &self.test.counts, dim)?;
        if !(self.stop.loss_tol >= 0.0) {
            return Err(cfg_err("stop.loss_tol must be non-negative"));
        }
        Ok(())
    }

    pub fn decomposition(&self) -> Result<Decomposition, HarnessError> {
        let m = &self.model;
        Ok(match m.subdomains.len() {
            1 => Decomposition::D1(Decomposition1D::new(m.subdomains[0], m.overlap[0])?),
            2 => Decomposition::D2(Decomposition2D::new(
                m.subdomains[0],
                m.subdomains[1],
                m.overlap[0],
                m.overlap[1],
            )?),
            n => return Err(cfg_err(format!("{n}-dimensional decompositions are unsupported"))),
        })
    }

    pub fn collocation(&self) -> Result<CollocationSet, HarnessError> {
        let dim = self.problem()?.dim();
        let c = &self.collocation;
        Ok(match c.scheme {
            SchemeName::Uniform => collocation_uniform(dim, &c.counts)?,
            SchemeName::Random => {
                collocation_random(dim, &c.counts, c.sample_seed.unwrap_or(self.seed))?
            }
        })
    }

    pub fn test_grid(&self) -> Result<CollocationSet, HarnessError> {
        Ok(collocation_uniform(self.problem()?.dim(), &self.test.counts)?)
    }

    pub fn build_model(&self) -> Result<AnyModel, HarnessError> {
        let problem = self.problem()?;
        let m = &self.model;
        Ok(match m.kind {
            ModelKind::Fbpinn => AnyModel::Fbpinn(FbpinnModel::new(
                self.decomposition()?,
                &m.layers,
                m.init,
                self.seed,
                problem.constraint,
            )?),
            ModelKind::Vanilla => AnyModel::Vanilla(VanillaPinnModel::new(
                &m.layers,
                m.init,
                self.seed,
                problem.constraint,
            )?),
        })
    }
}

fn check_counts(name: &str, counts: &[usize], dim: usize) -> Result<(), HarnessError> {
    if counts.len() != dim {
        return Err(cfg_err(format!("{name} needs {dim} entries, got {}", counts.len())));
    }
    if counts.iter().any(|&n| n < 2) {
        return Err(cfg_err(format!("{name} entries must be at least 2")));
    }
    Ok(())
}

pub enum AnyModel {
    Fbpinn(FbpinnModel),
    Vanilla(VanillaPinnModel),
}

/// `‖pred - exact‖₂ / ‖exact‖₂`.
pub fn relative_l2_error(pred: &[f64], exact: &[f64]) -> Result<f64, HarnessError> {
    if pred.len() != exact.len() {
        return Err(HarnessError::LengthMismatch {
            pred: pred.len(),
            exact: exact.len(),
        });
    }
    let den: f64 = exact.iter().map(|e| e * e).sum();
    if den == 0.0 {
        return Err(HarnessError::ZeroReference);
    }
    let num: f64 = pred.iter().zip(exact).map(|(p, e)| (p - e) * (p - e)).sum();
    Ok((num / den).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub problem: String,
    pub seed: u64,
    pub final_loss: f64,
    pub rel_l2_error: f64,
    /// Parameter updates performed.
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    /// Loss at every evaluated iterate, `iterations + 1` entries.
    pub loss_history: Vec<f64>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "problem = {}", self.problem);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "final_loss = {:e}", self.final_loss);
        let _ = writeln!(s, "rel_l2_error = {:e}", self.rel_l2_error);
        let _ = writeln!(s, "wall_time_s = {:.3}", self.wall_time_s);
        let files: Vec<String> = self
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let _ = writeln!(s, "files = {}", files.join(" "));
        s
    }
}

/// Trains `cfg` and writes the run directory `cfg.out_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    run_experiment_with(cfg, |_| {})
}

/// [`run_experiment`] with a per-iteration callback.
pub fn run_experiment_with(
    cfg: &RunConfig,
    observer: impl FnMut(&IterRecord),
) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    match cfg.build_model()? {
        AnyModel::Fbpinn(m) => run_model(cfg, m, observer),
        AnyModel::Vanilla(m) => run_model(cfg, m, observer),
    }
}

fn run_model<M: PinnModel>(
    cfg: &RunConfig,
    mut model: M,
    observer: impl FnMut(&IterRecord),
) -> Result<RunReport, HarnessError> {
    let start = Instant::now();
    let problem = cfg.problem()?;
    let colloc = cfg.collocation()?;
    let system = ResidualSystem::new(&model, &problem, &colloc)?;
    let trace = run_optimizer(&mut model, &system, cfg.optimizer.method(), cfg.stop, observer)?;
    let wall_time_s = start.elapsed().as_secs_f64();

    let test = cfg.test_grid()?;
    let pred: Vec<f64> = test.iter().map(|x| field_value(&model, x)).collect();
    let exact: Vec<f64> = test.iter().map(|x| problem.exact(x)).collect();
    let rel_l2_error = relative_l2_error(&pred, &exact)?;

    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    let mut write = |name: &str, content: &str| -> Result<(), HarnessError> {
        let path = dir.join(name);
        fs::write(&path, content).map_err(io_err(&path))?;
        files.push(path);
        Ok(())
    };
    write(
        "config.toml",
        cfg.source.clone().unwrap_or_else(|| cfg.to_toml()).as_str(),
    )?;
    write("loss_history.csv", &loss_history_csv(&trace))?;
    write("diagnostics.csv", &diagnostics_csv(&trace))?;
    write("solution.csv", &solution_csv(&test, &pred, &exact))?;
    let mut params = String::new();
    for p in model.params() {
        let _ = writeln!(params, "{p:e}");
    }
    write("params.txt", &params)?;

    let mut report = RunReport {
        problem: cfg.problem.clone(),
        seed: cfg.seed,
        final_loss: trace.final_loss(),
        rel_l2_error,
        iterations: trace.steps,
        converged: trace.converged,
        wall_time_s,
        loss_history: trace.losses(),
        files,
    };
    report.files.push(dir.join("report.txt"));
    let path = dir.join("report.txt");
    fs::write(&path, report.to_text()).map_err(io_err(&path))?;
    Ok(report)
}

/// `iter,loss` with shortest round-trip float formatting.
pub fn loss_history_csv(trace: &Trace) -> String {
    let mut s = String::from("iter,loss\n");
    for r in &trace.records {
        let _ = writeln!(s, "{},{:e}", r.iter, r.loss);
    }
    s
}

pub fn diagnostics_csv(trace: &Trace) -> String {
    let mut s = String::from("iter,loss,grad_norm,step_norm,cg_iters,time_s\n");
    for r in &trace.records {
        let cg = r.cg_iters.map(|n| n.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{},{:.6}",
            r.iter, r.loss, r.grad_norm, r.step_norm, cg, r.time_s
        );
    }
    s
}

fn solution_csv(test: &CollocationSet, pred: &[f64], exact: &[f64]) -> String {
    let coords = ["x", "y"];
    let mut s = String::new();
    let _ = writeln!(s, "{},pred,exact,abs_err", coords[..test.dim()].join(","));
    for ((x, p), e) in test.iter().zip(pred).zip(exact) {
        for v in x {
            let _ = write!(s, "{v:e},");
        }
        let _ = writeln!(s, "{p:e},{e:e},{:e}", (p - e).abs());
    }
    s
}

/// Writes the nonzero pattern (`|G_ij| > 1e-14`) of the Gram matrix at the
/// model's current parameters. Format: `#` comment lines with the block
/// offsets and block adjacency, a `dim nnz` line, then one `i j` line per
/// nonzero, 0-based and row-major.
pub fn export_gram_pattern<M: PinnModel>(
    model: &M,
    problem: &Problem,
    colloc: &CollocationSet,
    path: &Path,
) -> Result<usize, HarnessError> {
    let system = ResidualSystem::new(model, problem, colloc)?;
    let rows = system.rows(model);
    let adjacency = model.block_adjacency();
    let gram = assemble_gram(&rows, model.layout(), &adjacency, 1.0 / rows.len() as f64)?;
    let dense = gram.densify();
    let n = dense.nrows();
    let mut body = String::new();
    let mut nnz = 0;
    for i in 0..n {
        for j in 0..n {
            if dense[(i, j)].abs() > 1e-14 {
                let _ = writeln!(body, "{i} {j}");
                nnz += 1;
            }
        }
    }
    let mut s = String::from("# gram nonzero pattern\n");
    let offsets: Vec<String> = model.layout().offsets().iter().map(usize::to_string).collect();
    let _ = writeln!(s, "# block_offsets {}", offsets.join(" "));
    let pairs: Vec<String> = adjacency.iter().map(|(k, l)| format!("{k}-{l}")).collect();
    let _ = writeln!(s, "# block_adjacency {}", pairs.join(" "));
    let _ = writeln!(s, "{n} {nnz}");
    s.push_str(&body);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, s).map_err(io_err(path))?;
    Ok(nnz)
}

/// Gram pattern of the freshly initialized model described by `cfg`.
pub fn export_gram_pattern_for(cfg: &RunConfig, path: &Path) -> Result<usize, HarnessError> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let colloc = cfg.collocation()?;
    match cfg.build_model()? {
        AnyModel::Fbpinn(m) => export_gram_pattern(&m, &problem, &colloc, path),
        AnyModel::Vanilla(m) => export_gram_pattern(&m, &problem, &colloc, path),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub reports: Vec<RunReport>,
}

/// Median of a non-empty slice; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl SweepSummary {
    pub fn errors(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.rel_l2_error).collect()
    }

    pub fn median_error(&self) -> f64 {
        median(&self.errors())
    }

    pub fn best_error(&self) -> f64 {
        self.errors().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn median_final_loss(&self) -> f64 {
        median(&self.reports.iter().map(|r| r.final_loss).collect::<Vec<_>>())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,iterations,converged,final_loss,rel_l2_error\n");
        for r in &self.reports {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e}",
                r.seed, r.iterations, r.converged, r.final_loss, r.rel_l2_error
            );
        }
        s
    }
}

/// Runs seeds `cfg.seed .. cfg.seed + seeds`, each into `out_dir/seed_<s>`,
/// and writes `sweep.csv` plus a median/best summary into `out_dir`.
pub fn run_sweep(
    cfg: &RunConfig,
    seeds: usize,
    mut on_done: impl FnMut(&RunReport),
) -> Result<SweepSummary, HarnessError> {
    if seeds == 0 {
        return Err(cfg_err("sweep needs at least one seed"));
    }
    let mut reports = Vec::with_capacity(seeds);
    for s in cfg.seed..cfg.seed + seeds as u64 {
        let mut run = cfg.clone();
        run.seed = s;
        run.out_dir = cfg.out_dir.join(format!("seed_{s}"));
        let report = run_experiment(&run)?;
        on_done(&report);
        reports.push(report);
    }
    let summary = SweepSummary { reports };
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("sweep.csv");
    fs::write(&path, summary.to_csv()).map_err(io_err(&path))?;
    let path = dir.join("sweep_summary.txt");
    let text = format!(
        "seeds = {seeds}\nmedian_rel_l2_error = {:e}\nbest_rel_l2_error = {:e}\nmedian_final_loss = {:e}\n",
        summary.median_error(),
        summary.best_error(),
        summary.median_final_loss()
    );
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ODE: &str = r#"
problem = "ode1d_hf"
seed = 3

[model]
kind = "fbpinn"
layers = [1, 4, 1]
init = "uniform_weights_zero_bias"
subdomains = [4]
overlap = [0.5]

[optimizer]
kind = "adam"
lr = 0.01

[collocation]
counts = [40]

[stop]
max_iters = 5
loss_tol = 0.0

[test]
counts = [101]
"#;

    #[test]
    fn relative_error_examples() {
        let e = [1.0, -2.0, 0.5];
        assert_eq!(relative_l2_error(&e, &e).unwrap(), 0.0);
        assert_eq!(relative_l2_error(&[0.0; 3], &e).unwrap(), 1.0);
        let p: Vec<f64> = e.iter().map(|v| 1.1 * v).collect();
        assert!((relative_l2_error(&p, &e).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(
            relative_l2_error(&[1.0], &[0.0]),
            Err(HarnessError::ZeroReference)
        ));
    }

    #[test]
    fn parses_and_defaults() {
        let cfg = RunConfig::from_toml_str(ODE).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.problem().unwrap().constraint, ConstraintOp::TanhScaled { kappa: 16.0 });
        assert_eq!(cfg.optimizer, OptimizerConfig::Adam(AdamConfig::new(0.01)));
        assert_eq!(cfg.collocation.scheme, SchemeName::Uniform);
        let round: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(round.model, cfg.model);
    }

    #[test]
    fn rejects_bad_configs() {
        for (from, to) in [
            ("layers = [1, 4, 1]", "layers = [2, 4, 1]"),
            ("subdomains = [4]", "subdomains = [4, 4]"),
            ("overlap = [0.5]", "overlap = [1.5]"),
            ("lr = 0.01", "lr = -1.0"),
            ("counts = [40]", "counts = [1]"),
            ("problem = \"ode1d_hf\"", "problem = \"heat\""),
        ] {
            let text = ODE.replace(from, to);
            assert!(RunConfig::from_toml_str(&text).is_err(), "{to}");
        }
        assert!(RunConfig::from_toml_str(&ODE.replace("seed = 3", "seed = 3\nbogus = 1")).is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
