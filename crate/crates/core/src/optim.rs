//! Adam and regularized Gauss–Newton training.
//!
//! The Gauss–Newton direction solves `(G + μI) d = ∇L` with the Gram matrix
//! `G = JᵀJ`, where `J` is the Jacobian of the scaled residuals `r_i/√N`, and
//! updates `θ ← θ - η d` with a constant step size. Because `G` is normalized
//! by `N`, a damping `μ` here corresponds to `N·μ` on the unnormalized
//! `Σ ∇r_i ∇r_iᵀ`.
//!
//! Residual rows only touch the parameters of the subnets covering their point,
//! so `G` is block-sparse over the subdomain adjacency graph. [`BlockSymMatrix`]
//! stores the upper block triangle of that pattern. Rows with identical
//! covering sets are grouped and each group contributes one dense `JᵀJ`
//! product.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ParamLayout, PinnModel, ResidualRow, ResidualSystem};
use crate::problems::{CollocationSet, Problem};

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("residual row couples subnets {0} and {1}, which do not overlap")]
    NonAdjacentSupport(usize, usize),
    #[error("residual row has {got} gradient entries, its blocks need {expected}")]
    RowWidth { expected: usize, got: usize },
    #[error("Cholesky factorization of the regularized Gram matrix failed")]
    Cholesky,
    #[error("non-finite loss {loss} at iteration {iter}")]
    NonFinite { iter: usize, loss: f64 },
    #[error("invalid optimizer setting: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected Adam update in place; returns the step norm.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> f64 {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut norm_sq = 0.0;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let delta = lr * m_hat / (v_hat.sqrt() + eps);
            params[i] -= delta;
            norm_sq += delta * delta;
        }
        norm_sq.sqrt()
    }
}

/// Symmetric matrix stored as dense blocks `(k, l)`, `k <= l`, over a fixed
/// block pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSymMatrix {
    layout: ParamLayout,
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl BlockSymMatrix {
    /// Zero matrix with a stored block for every pair in `pattern` and every
    /// diagonal block.
    pub fn zeros(layout: ParamLayout, pattern: &BTreeSet<(usize, usize)>) -> Self {
        let mut blocks = BTreeMap::new();
        for k in 0..layout.blocks() {
            blocks.insert((k, k), DMatrix::zeros(layout.size(k), layout.size(k)));
        }
        for &(k, l) in pattern {
            let (k, l) = (k.min(l), k.max(l));
            blocks
                .entry((k, l))
                .or_insert_with(|| DMatrix::zeros(layout.size(k), layout.size(l)));
        }
        Self { layout, blocks }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn stored_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.blocks.keys().copied().collect()
    }

    pub fn block(&self, k: usize, l: usize) -> Option<&DMatrix<f64>> {
        self.blocks.get(&(k, l))
    }

    pub fn densify(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (&(k, l), b) in &self.blocks {
            let (ok, ol) = (self.layout.offset(k), self.layout.offset(l));
            m.view_mut((ok, ol), b.shape()).copy_from(b);
            if k != l {
                m.view_mut((ol, ok), (b.ncols(), b.nrows()))
                    .copy_from(&b.transpose());
            }
        }
        m
    }

    /// `y = G·x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (&(k, l), b) in &self.blocks {
            let (rk, rl) = (self.layout.range(k), self.layout.range(l));
            gemv_add(b, &x[rl.clone()], &mut y[rk.clone()]);
            if k != l {
                gemv_t_add(b, &x[rk], &mut y[rl]);
            }
        }
    }
}

fn gemv_add(b: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    // column-major storage
    let rows = b.nrows();
    if rows == 0 {
        return;
    }
    for (col, &xj) in b.as_slice().chunks_exact(rows).zip(x) {
        for (yi, &bij) in y.iter_mut().zip(col) {
            *yi += bij * xj;
        }
    }
}

fn gemv_t_add(b: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let rows = b.nrows();
    if rows == 0 {
        return;
    }
    for (col, yj) in b.as_slice().chunks_exact(rows).zip(y.iter_mut()) {
        *yj += dot(col, x);
    }
}

/// `G = scale · Σ_i g_i g_iᵀ` over the stored pattern, where `g_i` is the
/// sparse gradient of row `i`.
pub fn assemble_gram(
    rows: &[ResidualRow],
    layout: &ParamLayout,
    adjacency: &BTreeSet<(usize, usize)>,
    scale: f64,
) -> Result<BlockSymMatrix, OptimError> {
    let mut gram = BlockSymMatrix::zeros(layout.clone(), adjacency);
    let mut groups: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let expected: usize = row.blocks.iter().map(|&k| layout.size(k)).sum();
        if expected != row.grad.len() {
            return Err(OptimError::RowWidth {
                expected,
                got: row.grad.len(),
            });
        }
        for (a, &k) in row.blocks.iter().enumerate() {
            for &l in &row.blocks[a + 1..] {
                let pair = (k.min(l), k.max(l));
                if !gram.blocks.contains_key(&pair) {
                    return Err(OptimError::NonAdjacentSupport(pair.0, pair.1));
                }
            }
        }
        groups.entry(&row.blocks).or_default().push(i);
    }

    for (blocks, members) in groups {
        let width = members.first().map_or(0, |&i| rows[i].grad.len());
        if width == 0 {
            continue;
        }
        let jac = DMatrix::from_fn(members.len(), width, |r, c| rows[members[r]].grad[c]);
        let local = jac.tr_mul(&jac) * scale;
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        for &k in blocks {
            offsets.push(offsets.last().unwrap() + layout.size(k));
        }
        for (a, &k) in blocks.iter().enumerate() {
            for (b, &l) in blocks.iter().enumerate().skip(a) {
                let sub = local.view(
                    (offsets[a], offsets[b]),
                    (layout.size(k), layout.size(l)),
                );
                let (key, transpose) = if k <= l { ((k, l), false) } else { ((l, k), true) };
                let target = gram.blocks.get_mut(&key).unwrap();
                if transpose {
                    *target += sub.transpose();
                } else {
                    *target += sub;
                }
            }
        }
    }

    // Diagonal blocks are exactly symmetric.
    for k in 0..layout.blocks() {
        let b = gram.blocks.get_mut(&(k, k)).unwrap();
        for j in 0..b.ncols() {
            for i in j + 1..b.nrows() {
                b[(i, j)] = b[(j, i)];
            }
        }
    }
    Ok(gram)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GramSolver {
    DenseCholesky,
    BlockCg {
        tol: f64,
        max_iter: usize,
        /// Start each solve from the previous Gauss–Newton direction.
        #[serde(default)]
        warm_start: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnConfig {
    #[serde(default = "default_mu")]
    pub mu: f64,
    pub eta: f64,
    pub solver: GramSolver,
}

fn default_mu() -> f64 {
    1.0
}

impl GnConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.mu > 0.0) {
            return Err(OptimError::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.eta > 0.0) {
            return Err(OptimError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if let GramSolver::BlockCg { tol, max_iter, .. } = self.solver {
            if !(tol > 0.0) || max_iter == 0 {
                return Err(OptimError::Config(
                    "block CG needs tol > 0 and max_iter > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    /// CG iterations, `None` for the direct solver.
    pub iterations: Option<usize>,
    pub converged: bool,
    /// `‖b - (G + μI)x‖ / ‖b‖` of the returned iterate.
    pub rel_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the reduction vectorizes
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Solves `(G + μI) x = b` with the dense Cholesky factorization.
pub fn solve_dense_cholesky(
    gram: &BlockSymMatrix,
    mu: f64,
    b: &[f64],
) -> Result<SolveOutcome, OptimError> {
    let mut a = gram.densify();
    for i in 0..a.nrows() {
        a[(i, i)] += mu;
    }
    let chol = Cholesky::new(a).ok_or(OptimError::Cholesky)?;
    let x = chol.solve(&DVector::from_column_slice(b));
    let x: Vec<f64> = x.iter().copied().collect();
    let rel_residual = shifted_residual(gram, mu, &x, b);
    Ok(SolveOutcome {
        x,
        iterations: None,
        converged: true,
        rel_residual,
    })
}

fn shifted_residual(gram: &BlockSymMatrix, mu: f64, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    gram.matvec(x, &mut ax);
    let r: Vec<f64> = (0..x.len()).map(|i| b[i] - ax[i] - mu * x[i]).collect();
    let bn = norm(b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}

/// Preconditioned CG on `(G + μI) x = b`, block-Jacobi preconditioned with the
/// Cholesky factors of `G_kk + μI`. Stops when `‖r‖ ≤ tol·‖b‖`; on hitting
/// `max_iter` the iterate with the smallest residual is returned unconverged.
pub fn solve_block_cg(
    gram: &BlockSymMatrix,
    mu: f64,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    x0: Option<&[f64]>,
) -> Result<SolveOutcome, OptimError> {
    let n = b.len();
    let layout = gram.layout();
    // Explicit block inverses make the preconditioner a plain block gemv.
    let inverses = (0..layout.blocks())
        .map(|k| {
            let mut d = gram.block(k, k).unwrap().clone();
            for i in 0..d.nrows() {
                d[(i, i)] += mu;
            }
            Cholesky::new(d)
                .map(|c| c.inverse())
                .ok_or(OptimError::Cholesky)
        })
        .collect::<Result<Vec<DMatrix<f64>>, _>>()?;
    let precondition = |r: &[f64], z: &mut [f64]| {
        for (k, inv) in inverses.iter().enumerate() {
            let range = layout.range(k);
            z[range.clone()].iter_mut().for_each(|v| *v = 0.0);
            gemv_add(inv, &r[range.clone()], &mut z[range]);
        }
    };
    let apply = |x: &[f64], y: &mut [f64]| {
        gram.matvec(x, y);
        for i in 0..x.len() {
            y[i] += mu * x[i];
        }
    };

    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(SolveOutcome {
            x: vec![0.0; n],
            iterations: Some(0),
            converged: true,
            rel_residual: 0.0,
        });
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut ap = vec![0.0; n];
    apply(&x, &mut ap);
    let mut r: Vec<f64> = (0..n).map(|i| b[i] - ap[i]).collect();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rnorm = norm(&r);
    let mut best = (rnorm, x.clone());
    let mut iters = 0;
    while rnorm > tol * bnorm && iters < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iters += 1;
        rnorm = norm(&r);
        if rnorm < best.0 {
            best = (rnorm, x.clone());
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let converged = rnorm <= tol * bnorm;
    let x = if converged { x } else { best.1 };
    let rel_residual = shifted_residual(gram, mu, &x, b);
    Ok(SolveOutcome {
        x,
        iterations: Some(iters),
        converged,
        rel_residual,
    })
}

/// Solves `(G + μI) d = grad` with the configured backend.
pub fn gn_direction(
    gram: &BlockSymMatrix,
    grad: &[f64],
    cfg: &GnConfig,
    x0: Option<&[f64]>,
) -> Result<SolveOutcome, OptimError> {
    match cfg.solver {
        GramSolver::DenseCholesky => solve_dense_cholesky(gram, cfg.mu, grad),
        GramSolver::BlockCg { tol, max_iter, .. } => {
            solve_block_cg(gram, cfg.mu, grad, tol, max_iter, x0)
        }
    }
}

/// Loss, gradient and Gram matrix at the current parameters.
#[derive(Clone, Debug)]
pub struct GnSystem {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub gram: BlockSymMatrix,
}

pub fn gn_system<M: PinnModel>(model: &M, system: &ResidualSystem) -> Result<GnSystem, OptimError> {
    let rows = system.rows(model);
    let n = rows.len() as f64;
    let layout = model.layout();
    let mut grad = vec![0.0; layout.total()];
    let mut sum_sq = 0.0;
    for row in &rows {
        sum_sq += row.value * row.value;
        row.scatter_into(layout, 2.0 * row.value / n, &mut grad);
    }
    let gram = assemble_gram(&rows, layout, &model.block_adjacency(), 1.0 / n)?;
    Ok(GnSystem {
        loss: sum_sq / n,
        grad,
        gram,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnDiagnostics {
    pub loss: f64,
    pub residual_norm: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub cg_iters: Option<usize>,
    pub solver_converged: bool,
    /// The update `-η·d` that was applied.
    pub step: Vec<f64>,
}

/// One Gauss–Newton update of `model` in place.
pub fn gn_step<M: PinnModel>(
    model: &mut M,
    problem: &Problem,
    colloc: &CollocationSet,
    cfg: &GnConfig,
) -> Result<GnDiagnostics, OptimError> {
    let system = ResidualSystem::new(model, problem, colloc)?;
    let mut gn = GaussNewton::new(*cfg)?;
    gn.step(model, &system)
}

/// Gauss–Newton driver; keeps the previous direction for CG warm starts.
#[derive(Clone, Debug)]
pub struct GaussNewton {
    pub cfg: GnConfig,
    previous: Option<Vec<f64>>,
}

impl GaussNewton {
    pub fn new(cfg: GnConfig) -> Result<Self, OptimError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            previous: None,
        })
    }

    fn warm_start(&self) -> bool {
        matches!(self.cfg.solver, GramSolver::BlockCg { warm_start: true, .. })
    }

    /// Linearization at the current parameters without updating them.
    pub fn evaluate<M: PinnModel>(
        &self,
        model: &M,
        system: &ResidualSystem,
    ) -> Result<GnSystem, OptimError> {
        gn_system(model, system)
    }

    pub fn apply<M: PinnModel>(
        &mut self,
        model: &mut M,
        sys: &GnSystem,
    ) -> Result<GnDiagnostics, OptimError> {
        let x0 = if self.warm_start() { self.previous.as_deref() } else { None };
        let sol = gn_direction(&sys.gram, &sys.grad, &self.cfg, x0)?;
        let step: Vec<f64> = sol.x.iter().map(|d| -self.cfg.eta * d).collect();
        let mut params = model.params();
        for (p, s) in params.iter_mut().zip(&step) {
            *p += s;
        }
        model.set_params(&params)?;
        if self.warm_start() {
            self.previous = Some(sol.x);
        }
        Ok(GnDiagnostics {
            loss: sys.loss,
            residual_norm: sys.loss.sqrt(),
            grad_norm: norm(&sys.grad),
            step_norm: norm(&step),
            cg_iters: sol.iterations,
            solver_converged: sol.converged,
            step,
        })
    }

    pub fn step<M: PinnModel>(
        &mut self,
        model: &mut M,
        system: &ResidualSystem,
    ) -> Result<GnDiagnostics, OptimError> {
        let sys = self.evaluate(model, system)?;
        self.apply(model, &sys)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Adam(AdamConfig),
    GaussNewton(GnConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_iters: usize,
    pub loss_tol: f64,
}

/// One row of the training trace: the loss at the current iterate and the
/// update taken from it (zero when training stopped there).
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub cg_iters: Option<usize>,
    pub cg_converged: bool,
    pub time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub records: Vec<IterRecord>,
    /// Number of parameter updates performed.
    pub steps: usize,
    pub converged: bool,
}

impl Trace {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// First iteration whose loss is at or below `target`.
    pub fn first_reaching(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.loss <= target).map(|r| r.iter)
    }
}

/// Trains until `loss < loss_tol` or `max_iters` updates have been taken.
/// `observer` sees each record as it is produced.
pub fn run_optimizer<M: PinnModel>(
    model: &mut M,
    system: &ResidualSystem,
    method: Method,
    stop: StopCriteria,
    mut observer: impl FnMut(&IterRecord),
) -> Result<Trace, OptimError> {
    let start = Instant::now();
    let mut records = Vec::new();
    let mut push = |rec: IterRecord, records: &mut Vec<IterRecord>| {
        observer(&rec);
        records.push(rec);
    };
    let check = |iter: usize, loss: f64| {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(OptimError::NonFinite { iter, loss })
        }
    };
    let mut converged = false;
    match method {
        Method::Adam(cfg) => {
            let mut state = AdamState::new(cfg, model.num_params());
            let mut params = model.params();
            for iter in 0.. {
                let (loss, grad) = system.loss_and_gradient(model);
                check(iter, loss)?;
                let mut rec = IterRecord {
                    iter,
                    loss,
                    grad_norm: norm(&grad),
                    step_norm: 0.0,
                    cg_iters: None,
                    cg_converged: true,
                    time_s: 0.0,
                };
                converged = loss < stop.loss_tol;
                if converged || iter == stop.max_iters {
                    rec.time_s = start.elapsed().as_secs_f64();
                    push(rec, &mut records);
                    break;
                }
                rec.step_norm = state.step(&mut params, &grad);
                model.set_params(&params)?;
                rec.time_s = start.elapsed().as_secs_f64();
                push(rec, &mut records);
            }
        }
        Method::GaussNewton(cfg) => {
            let mut gn = GaussNewton::new(cfg)?;
            for iter in 0.. {
                let sys = gn.evaluate(model, system)?;
                check(iter, sys.loss)?;
                converged = sys.loss < stop.loss_tol;
                if converged || iter == stop.max_iters {
                    push(
                        IterRecord {
                            iter,
                            loss: sys.loss,
                            grad_norm: norm(&sys.grad),
                            step_norm: 0.0,
                            cg_iters: None,
                            cg_converged: true,
                            time_s: start.elapsed().as_secs_f64(),
                        },
                        &mut records,
                    );
                    break;
                }
                let diag = gn.apply(model, &sys)?;
                push(
                    IterRecord {
                        iter,
                        loss: diag.loss,
                        grad_norm: diag.grad_norm,
                        step_norm: diag.step_norm,
                        cg_iters: diag.cg_iters,
                        cg_converged: diag.solver_converged,
                        time_s: start.elapsed().as_secs_f64(),
                    },
                    &mut records,
                );
            }
        }
    }
    let steps = records.len() - 1;
    Ok(Trace {
        records,
        steps,
        converged,
    })
}
