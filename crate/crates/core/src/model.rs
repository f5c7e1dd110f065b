//! The FBPINN ansatz, residual rows and the collocation loss.
//!
//! The constrained field is
//!
//! ```text
//! ũ(x) = c(x) · Σ_k ω_k(x) · u_k(n_k(x))
//! ```
//!
//! where only the subdomains covering `x` contribute. All spatial derivatives
//! come from jet arithmetic through windows, normalization, networks and the
//! constraint.
//!
//! Because every problem operator is linear in `ũ`, the residual at a fixed
//! point is an affine function of the subnet output jets. [`ResidualSystem`]
//! precomputes those coefficients once per collocation point and then needs
//! only one network forward/backward per covering subnet to produce residuals,
//! loss gradients or full Jacobian rows. The generic jet path
//! ([`field_eval`], [`residual_row_tangent`]) is kept as an independent
//! reference.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::decomp::{ConstraintOp, Decomposition};
use crate::jet::{Dual, Jet2, Scalar};
use crate::net::{forward_jet_generic, AxisJets, InitKind, InitScheme, JetTape, Mlp, NetError};
use crate::problems::{seeded_point, CollocationSet, Problem};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("network input width {net} does not match domain dimension {dim}")]
    InputWidth { net: usize, dim: usize },
    #[error("constraint is {constraint}-dimensional but the domain is {dim}-dimensional")]
    ConstraintDim { constraint: usize, dim: usize },
    #[error("problem is {problem}-dimensional but the model is {model}-dimensional")]
    ProblemDim { problem: usize, model: usize },
    #[error("parameter vector has length {got}, model has {expected}")]
    ParamLength { expected: usize, got: usize },
}

/// Derives the init seed of subnet `k` from a master seed (SplitMix64 finalizer
/// applied to `master + (k + 1)·γ`).
pub fn subnet_seed(master: u64, k: usize) -> u64 {
    let mut z = master.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Offsets of each subnet's parameters in the global vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    offsets: Vec<usize>,
}

impl ParamLayout {
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Self { offsets }
    }

    pub fn blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn size(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
}

/// Common interface of the domain-decomposed and the single-network ansatz.
pub trait PinnModel {
    fn dim(&self) -> usize;
    fn constraint(&self) -> ConstraintOp;
    fn subnets(&self) -> &[Mlp];
    fn subnets_mut(&mut self) -> &mut [Mlp];
    fn layout(&self) -> &ParamLayout;
    /// Subnets whose window is positive at `x`, ascending.
    fn covering(&self, x: &[f64]) -> Vec<usize>;
    fn window<S: Scalar>(&self, k: usize, x: &[Jet2<S>]) -> Jet2<S>;
    fn net_input<S: Scalar>(&self, k: usize, x: &[Jet2<S>]) -> Vec<Jet2<S>>;
    /// Subnet pairs `(k, l)`, `k <= l`, that can share a collocation point.
    fn block_adjacency(&self) -> BTreeSet<(usize, usize)>;

    fn num_params(&self) -> usize {
        self.layout().total()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for net in self.subnets() {
            p.extend_from_slice(net.params());
        }
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<(), ModelError> {
        let expected = self.num_params();
        if params.len() != expected {
            return Err(ModelError::ParamLength {
                expected,
                got: params.len(),
            });
        }
        let layout = self.layout().clone();
        for (k, net) in self.subnets_mut().iter_mut().enumerate() {
            net.params_mut().copy_from_slice(&params[layout.range(k)]);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FbpinnModel {
    decomposition: Decomposition,
    subnets: Vec<Mlp>,
    constraint: ConstraintOp,
    layout: ParamLayout,
}

fn check_dims(net: &Mlp, dim: usize, constraint: ConstraintOp) -> Result<(), ModelError> {
    if net.input_dim() != dim {
        return Err(ModelError::InputWidth {
            net: net.input_dim(),
            dim,
        });
    }
    if net.output_dim() != 1 {
        return Err(NetError::NonScalarOutput(net.output_dim()).into());
    }
    if constraint.dim() != dim {
        return Err(ModelError::ConstraintDim {
            constraint: constraint.dim(),
            dim,
        });
    }
    Ok(())
}

impl FbpinnModel {
    /// One subnet per subdomain, each initialized from [`subnet_seed`]`(seed, k)`.
    pub fn new(
        decomposition: Decomposition,
        layer_sizes: &[usize],
        init: InitKind,
        seed: u64,
        constraint: ConstraintOp,
    ) -> Result<Self, ModelError> {
        let subnets = (0..decomposition.count())
            .map(|k| Mlp::new(layer_sizes, InitScheme::new(init, subnet_seed(seed, k))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_subnets(decomposition, subnets, constraint)
    }

    pub fn from_subnets(
        decomposition: Decomposition,
        subnets: Vec<Mlp>,
        constraint: ConstraintOp,
    ) -> Result<Self, ModelError> {
        for net in &subnets {
            check_dims(net, decomposition.dim(), constraint)?;
        }
        let layout =
            ParamLayout::from_sizes(&subnets.iter().map(Mlp::num_params).collect::<Vec<_>>());
        Ok(Self {
            decomposition,
            subnets,
            constraint,
            layout,
        })
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomposition
    }
}

impl PinnModel for FbpinnModel {
    fn dim(&self) -> usize {
        self.decomposition.dim()
    }

    fn constraint(&self) -> ConstraintOp {
        self.constraint
    }

    fn subnets(&self) -> &[Mlp] {
        &self.subnets
    }

    fn subnets_mut(&mut self) -> &mut [Mlp] {
        &mut self.subnets
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn covering(&self, x: &[f64]) -> Vec<usize> {
        self.decomposition.covering(x)
    }

    fn window<S: Scalar>(&self, k: usize, x: &[Jet2<S>]) -> Jet2<S> {
        self.decomposition.window(k, x)
    }

    fn net_input<S: Scalar>(&self, k: usize, x: &[Jet2<S>]) -> Vec<Jet2<S>> {
        self.decomposition.normalize(k, x)
    }

    fn block_adjacency(&self) -> BTreeSet<(usize, usize)> {
        self.decomposition.adjacency()
    }
}

/// A single network on the whole domain, `ũ = c(x)·u(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaPinnModel {
    net: [Mlp; 1],
    constraint: ConstraintOp,
    layout: ParamLayout,
}

impl VanillaPinnModel {
    pub fn new(
        layer_sizes: &[usize],
        init: InitKind,
        seed: u64,
        constraint: ConstraintOp,
    ) -> Result<Self, ModelError> {
        let net = Mlp::new(layer_sizes, InitScheme::new(init, subnet_seed(seed, 0)))?;
        Self::from_net(net, constraint)
    }

    pub fn from_net(net: Mlp, constraint: ConstraintOp) -> Result<Self, ModelError> {
        check_dims(&net, net.input_dim(), constraint)?;
        let layout = ParamLayout::from_sizes(&[net.num_params()]);
        Ok(Self {
            net: [net],
            constraint,
            layout,
        })
    }
}

impl PinnModel for VanillaPinnModel {
    fn dim(&self) -> usize {
        self.net[0].input_dim()
    }

    fn constraint(&self) -> ConstraintOp {
        self.constraint
    }

    fn subnets(&self) -> &[Mlp] {
        &self.net
    }

    fn subnets_mut(&mut self) -> &mut [Mlp] {
        &mut self.net
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn covering(&self, _x: &[f64]) -> Vec<usize> {
        vec![0]
    }

    fn window<S: Scalar>(&self, _k: usize, _x: &[Jet2<S>]) -> Jet2<S> {
        Jet2::constant(S::one())
    }

    fn net_input<S: Scalar>(&self, _k: usize, x: &[Jet2<S>]) -> Vec<Jet2<S>> {
        x.to_vec()
    }

    fn block_adjacency(&self) -> BTreeSet<(usize, usize)> {
        BTreeSet::from([(0, 0)])
    }
}

/// Constrained field jets at `x`, seeded along `axis`, with the global
/// parameter vector given in any scalar type.
pub fn field_jet_generic<M: PinnModel, S: Scalar>(
    model: &M,
    x: &[f64],
    axis: usize,
    params: &[S],
) -> Jet2<S> {
    let xs: Vec<Jet2<S>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == axis {
                Jet2::var(S::from_f64(v))
            } else {
                Jet2::constant(S::from_f64(v))
            }
        })
        .collect();
    let layout = model.layout();
    let mut sum = Jet2::zero();
    for k in model.covering(x) {
        let net = &model.subnets()[k];
        let u = forward_jet_generic(
            net.layer_sizes(),
            &params[layout.range(k)],
            &model.net_input(k, &xs),
        );
        sum = sum + model.window(k, &xs) * u;
    }
    model.constraint().apply(&xs, sum)
}

/// Jet of the constrained field `ũ` at `x` along `axis`.
pub fn field_eval<M: PinnModel>(model: &M, x: &[f64], axis: usize) -> Jet2 {
    field_jet_generic(model, x, axis, &model.params())
}

/// Plain value `ũ(x)`.
pub fn field_value<M: PinnModel>(model: &M, x: &[f64]) -> f64 {
    field_eval(model, x, 0).val
}

/// One residual and its gradient with respect to the parameters of the
/// covering subnets.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub point: Vec<f64>,
    pub value: f64,
    /// Covering subnets, ascending.
    pub blocks: Vec<usize>,
    /// Concatenated `∂r/∂θ_k` segments, in the order of `blocks`.
    pub grad: Vec<f64>,
}

impl ResidualRow {
    /// `(global parameter index, ∂r/∂θ)` for every stored entry.
    pub fn entries<'a>(&'a self, layout: &'a ParamLayout) -> impl Iterator<Item = (usize, f64)> + 'a {
        let mut pos = 0;
        self.blocks.iter().flat_map(move |&k| {
            let start = pos;
            pos += layout.size(k);
            layout.range(k).zip(self.grad[start..start + layout.size(k)].iter().copied())
        })
    }

    /// Segment of `grad` belonging to the `i`-th covering block.
    pub fn segment<'a>(&'a self, layout: &ParamLayout, i: usize) -> &'a [f64] {
        let start: usize = self.blocks[..i].iter().map(|&k| layout.size(k)).sum();
        &self.grad[start..start + layout.size(self.blocks[i])]
    }

    pub fn scatter_into(&self, layout: &ParamLayout, scale: f64, dense: &mut [f64]) {
        for (j, g) in self.entries(layout) {
            dense[j] += scale * g;
        }
    }
}

fn check_problem<M: PinnModel>(model: &M, problem: &Problem) -> Result<(), ModelError> {
    if problem.dim() != model.dim() {
        return Err(ModelError::ProblemDim {
            problem: problem.dim(),
            model: model.dim(),
        });
    }
    Ok(())
}

/// Residual at `x` through the generic jet path.
pub fn residual_value<M: PinnModel>(model: &M, problem: &Problem, x: &[f64]) -> f64 {
    let jets: Vec<Jet2> = (0..model.dim()).map(|a| field_eval(model, x, a)).collect();
    problem.residual(x, &jets)
}

/// Reference residual row: each gradient entry is obtained separately by
/// forward-mode differentiation in that single parameter.
pub fn residual_row_tangent<M: PinnModel>(model: &M, problem: &Problem, x: &[f64]) -> ResidualRow {
    let params = model.params();
    let layout = model.layout();
    let blocks = model.covering(x);
    let mut grad = Vec::new();
    for &k in &blocks {
        for j in layout.range(k) {
            let dual: Vec<Dual> = params
                .iter()
                .enumerate()
                .map(|(i, &p)| Dual::new(p, if i == j { 1.0 } else { 0.0 }))
                .collect();
            let jets: Vec<Jet2<Dual>> = (0..model.dim())
                .map(|a| field_jet_generic(model, x, a, &dual))
                .collect();
            grad.push(problem.operator(&jets).eps);
        }
    }
    ResidualRow {
        point: x.to_vec(),
        value: residual_value(model, problem, x),
        blocks,
        grad,
    }
}

/// Mean squared residual, evaluated through the generic jet path.
pub fn loss<M: PinnModel>(model: &M, problem: &Problem, colloc: &CollocationSet) -> f64 {
    let n = colloc.len() as f64;
    colloc
        .iter()
        .map(|x| residual_value(model, problem, x).powi(2))
        .sum::<f64>()
        / n
}

/// Residual row at a single point.
pub fn residual_row<M: PinnModel>(
    model: &M,
    problem: &Problem,
    x: &[f64],
) -> Result<ResidualRow, ModelError> {
    let colloc = CollocationSet::from_points(x.len(), &[x.to_vec()]);
    let sys = ResidualSystem::new(model, problem, &colloc)?;
    Ok(sys.rows(model).pop().unwrap())
}

/// `∇L = (2/N) Σ r_i ∇r_i`, assembled from residual rows.
pub fn loss_gradient<M: PinnModel>(
    model: &M,
    problem: &Problem,
    colloc: &CollocationSet,
) -> Result<Vec<f64>, ModelError> {
    let sys = ResidualSystem::new(model, problem, colloc)?;
    let rows = sys.rows(model);
    let mut g = vec![0.0; model.num_params()];
    let scale = 2.0 / colloc.len() as f64;
    for row in &rows {
        row.scatter_into(model.layout(), scale * row.value, &mut g);
    }
    Ok(g)
}

#[derive(Clone, Debug)]
struct Term {
    subnet: usize,
    /// Network inputs, `inputs[axis * d0 + i]`.
    inputs: Vec<Jet2>,
    /// Sensitivity of the operator to this subnet's output jets.
    coef: AxisJets,
}

#[derive(Clone, Debug)]
struct Stencil {
    point: Vec<f64>,
    forcing: f64,
    terms: Vec<Term>,
}

/// Per-point linearization of the residual in the subnet outputs, for a fixed
/// model geometry, problem and collocation set.
#[derive(Clone, Debug)]
pub struct ResidualSystem {
    dim: usize,
    stencils: Vec<Stencil>,
}

impl ResidualSystem {
    pub fn new<M: PinnModel>(
        model: &M,
        problem: &Problem,
        colloc: &CollocationSet,
    ) -> Result<Self, ModelError> {
        check_problem(model, problem)?;
        let dim = model.dim();
        let stencils = colloc
            .iter()
            .map(|x| Self::stencil(model, problem, x))
            .collect();
        Ok(Self { dim, stencils })
    }

    fn stencil<M: PinnModel>(model: &M, problem: &Problem, x: &[f64]) -> Stencil {
        let dim = model.dim();
        let seeded: Vec<Vec<Jet2>> = (0..dim).map(|a| seeded_point(x, a)).collect();
        let constraint = model.constraint();
        // c(x)·ω_k(x) per direction.
        let terms = model
            .covering(x)
            .into_iter()
            .map(|k| {
                let scale: Vec<Jet2> = seeded
                    .iter()
                    .map(|xs| constraint.jet(xs) * model.window(k, xs))
                    .collect();
                let op = |u: &dyn Fn(usize) -> Jet2| {
                    let jets: Vec<Jet2> = (0..dim).map(|a| scale[a] * u(a)).collect();
                    problem.operator(&jets)
                };
                let mut coef = AxisJets {
                    val: op(&|_| Jet2::constant(1.0)),
                    ..Default::default()
                };
                for ax in 0..dim {
                    coef.d1[ax] = op(&|a| if a == ax { Jet2::new(0.0, 1.0, 0.0) } else { Jet2::zero() });
                    coef.d2[ax] = op(&|a| if a == ax { Jet2::new(0.0, 0.0, 1.0) } else { Jet2::zero() });
                }
                let inputs = seeded.iter().flat_map(|xs| model.net_input(k, xs)).collect();
                Term {
                    subnet: k,
                    inputs,
                    coef,
                }
            })
            .collect();
        Stencil {
            point: x.to_vec(),
            forcing: problem.forcing(x),
            terms,
        }
    }

    pub fn len(&self) -> usize {
        self.stencils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stencils.is_empty()
    }

    /// Covering subnets of every collocation point, in point order.
    pub fn coverings(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.stencils
            .iter()
            .map(|s| s.terms.iter().map(|t| t.subnet).collect())
    }

    fn term_forward<M: PinnModel>(&self, model: &M, term: &Term, tape: &mut JetTape) -> f64 {
        let net = &model.subnets()[term.subnet];
        let d0 = net.input_dim();
        let out = match self.dim {
            1 => tape.forward(net, &[&term.inputs[..d0]]),
            _ => tape.forward(net, &[&term.inputs[..d0], &term.inputs[d0..2 * d0]]),
        };
        let c = &term.coef;
        let mut r = c.val * out.val;
        for ax in 0..self.dim {
            r += c.d1[ax] * out.d1[ax] + c.d2[ax] * out.d2[ax];
        }
        r
    }

    pub fn residuals<M: PinnModel>(&self, model: &M) -> Vec<f64> {
        let mut tape = JetTape::new();
        self.stencils
            .iter()
            .map(|s| {
                s.terms
                    .iter()
                    .map(|t| self.term_forward(model, t, &mut tape))
                    .sum::<f64>()
                    - s.forcing
            })
            .collect()
    }

    pub fn loss<M: PinnModel>(&self, model: &M) -> f64 {
        let r = self.residuals(model);
        r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
    }

    /// Loss and its dense gradient `(2/N) Σ r_i ∇r_i`.
    pub fn loss_and_gradient<M: PinnModel>(&self, model: &M) -> (f64, Vec<f64>) {
        let layout = model.layout();
        let mut grad = vec![0.0; layout.total()];
        let mut tapes: Vec<JetTape> = Vec::new();
        let n = self.stencils.len() as f64;
        let mut sum_sq = 0.0;
        for s in &self.stencils {
            if tapes.len() < s.terms.len() {
                tapes.resize_with(s.terms.len(), JetTape::new);
            }
            let r: f64 = s
                .terms
                .iter()
                .zip(tapes.iter_mut())
                .map(|(t, tape)| self.term_forward(model, t, tape))
                .sum::<f64>()
                - s.forcing;
            sum_sq += r * r;
            let scale = 2.0 * r / n;
            for (t, tape) in s.terms.iter().zip(tapes.iter_mut()) {
                let net = &model.subnets()[t.subnet];
                tape.backward(net, &t.coef, scale, &mut grad[layout.range(t.subnet)]);
            }
        }
        (sum_sq / n, grad)
    }

    /// Residual rows with gradients over the covering subnets.
    pub fn rows<M: PinnModel>(&self, model: &M) -> Vec<ResidualRow> {
        let layout = model.layout();
        let mut tape = JetTape::new();
        self.stencils
            .iter()
            .map(|s| {
                let width: usize = s.terms.iter().map(|t| layout.size(t.subnet)).sum();
                let mut grad = vec![0.0; width];
                let mut value = -s.forcing;
                let mut pos = 0;
                for t in &s.terms {
                    value += self.term_forward(model, t, &mut tape);
                    let net = &model.subnets()[t.subnet];
                    let size = layout.size(t.subnet);
                    tape.backward(net, &t.coef, 1.0, &mut grad[pos..pos + size]);
                    pos += size;
                }
                ResidualRow {
                    point: s.point.clone(),
                    value,
                    blocks: s.terms.iter().map(|t| t.subnet).collect(),
                    grad,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{Decomposition1D, Decomposition2D};
    use crate::problems::{collocation_uniform, helmholtz_problem, ode_problem};
    use std::f64::consts::PI;

    fn ode_model(k: usize, seed: u64) -> FbpinnModel {
        FbpinnModel::new(
            Decomposition::D1(Decomposition1D::new(k, 0.5).unwrap()),
            &[1, 8, 1],
            InitKind::UniformWeightsZeroBias,
            seed,
            ConstraintOp::TanhScaled { kappa: 16.0 },
        )
        .unwrap()
    }

    fn helm_model(seed: u64) -> FbpinnModel {
        FbpinnModel::new(
            Decomposition::D2(Decomposition2D::new(2, 2, 0.5, 0.5).unwrap()),
            &[2, 6, 1],
            InitKind::UniformWeightsZeroBias,
            seed,
            ConstraintOp::ProductBubble,
        )
        .unwrap()
    }

    #[test]
    fn layout_is_prefix_sum() {
        let m = ode_model(24, 0);
        assert_eq!(m.num_params(), 24 * 25);
        assert!(m.layout().offsets().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(m.layout().range(3), 75..100);
    }

    #[test]
    fn zero_params_give_zero_field_and_forcing_residual() {
        let mut m = ode_model(6, 1);
        m.set_params(&vec![0.0; m.num_params()]).unwrap();
        let p = ode_problem();
        for x in [-0.9, -0.13, 0.4, 1.0] {
            assert_eq!(field_eval(&m, &[x], 0), Jet2::zero());
            let row = residual_row(&m, &p, &[x]).unwrap();
            let want = -16.0 * PI * (16.0 * PI * x).cos();
            assert!((row.value - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_subdomain_is_constraint_times_net() {
        let m = FbpinnModel::new(
            Decomposition::D1(Decomposition1D::new(1, 0.7).unwrap()),
            &[1, 5, 1],
            InitKind::GlorotUniform,
            3,
            ConstraintOp::TanhScaled { kappa: 2.0 },
        )
        .unwrap();
        let d = Decomposition1D::new(1, 0.7).unwrap();
        let x = 0.21;
        let n = d.normalize(0, Jet2::var(x));
        let want = (Jet2::var(x).scale(2.0 * PI)).tanh() * m.subnets()[0].forward_jet(&[n]).unwrap();
        let got = field_eval(&m, &[x], 0);
        assert!((got.val - want.val).abs() < 1e-14);
        assert!((got.d1 - want.d1).abs() < 1e-12);
        assert!((got.d2 - want.d2).abs() < 1e-10);
    }

    #[test]
    fn fast_rows_match_tangent_rows() {
        let p = ode_problem();
        let m = ode_model(5, 2);
        for x in [-1.0, -0.55, -0.2, 0.05, 0.61] {
            let fast = residual_row(&m, &p, &[x]).unwrap();
            let slow = residual_row_tangent(&m, &p, &[x]);
            assert_eq!(fast.blocks, slow.blocks);
            assert!((fast.value - slow.value).abs() < 1e-10 * (1.0 + slow.value.abs()));
            for (a, b) in fast.grad.iter().zip(&slow.grad) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
        let p = helmholtz_problem();
        let m = helm_model(4);
        for x in [[0.1, -0.05], [-0.7, 0.2], [0.9, 0.95]] {
            let fast = residual_row(&m, &p, &x).unwrap();
            let slow = residual_row_tangent(&m, &p, &x);
            assert_eq!(fast.blocks, slow.blocks);
            assert!((fast.value - slow.value).abs() < 1e-10 * (1.0 + slow.value.abs()));
            for (a, b) in fast.grad.iter().zip(&slow.grad) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn system_loss_matches_reference_loss() {
        let p = helmholtz_problem();
        let m = helm_model(7);
        let c = collocation_uniform(2, &[9, 7]).unwrap();
        let sys = ResidualSystem::new(&m, &p, &c).unwrap();
        let a = sys.loss(&m);
        let b = loss(&m, &p, &c);
        assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn gradient_paths_agree() {
        let p = ode_problem();
        let m = ode_model(4, 9);
        let c = collocation_uniform(1, &[57]).unwrap();
        let sys = ResidualSystem::new(&m, &p, &c).unwrap();
        let (l, g) = sys.loss_and_gradient(&m);
        let g_rows = loss_gradient(&m, &p, &c).unwrap();
        assert!((l - sys.loss(&m)).abs() < 1e-12 * l);
        for (a, b) in g.iter().zip(&g_rows) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn dimension_errors() {
        let m = ode_model(3, 0);
        let c = collocation_uniform(2, &[3, 3]).unwrap();
        assert!(matches!(
            ResidualSystem::new(&m, &helmholtz_problem(), &c),
            Err(ModelError::ProblemDim { problem: 2, model: 1 })
        ));
        let bad = FbpinnModel::new(
            Decomposition::D1(Decomposition1D::new(3, 0.5).unwrap()),
            &[2, 4, 1],
            InitKind::GlorotUniform,
            0,
            ConstraintOp::TanhScaled { kappa: 1.0 },
        );
        assert_eq!(bad.unwrap_err(), ModelError::InputWidth { net: 2, dim: 1 });
        let mut m = m;
        assert!(matches!(m.set_params(&[0.0; 3]), Err(ModelError::ParamLength { .. })));
    }

    #[test]
    fn seeds_are_distinct_per_subnet() {
        let seeds: BTreeSet<u64> = (0..64).map(|k| subnet_seed(0, k)).collect();
        assert_eq!(seeds.len(), 64);
        assert_ne!(subnet_seed(1, 0), subnet_seed(0, 0));
    }
}
