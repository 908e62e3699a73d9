//! Skew-products over the full shift whose fiber maps are unipotent.
//!
//! A [`FiberSystem`] bundles the maps `f_{p,𝔞}` on `X = [-1,1]^N`, where
//! `𝔞` is a forward address read to at most `address_depth` letters. Under
//! assumption (U) every Jacobian is lower triangular with one repeated
//! diagonal value, so the eigenvalue of a composition is the product of the
//! stage diagonals along the orbit.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affine_ifs::AffineIfsFamily;
use crate::error::{LabError, Result};
use crate::expr::Expr;
use crate::jets::jet_dimension;
use crate::jets::taylor::{JetIndexSet, Taylor};
use crate::param::ParamBox;
use crate::rng::{SeedSplitter, STREAM_DIAGNOSTIC};
use crate::symbolic::{word_at, Alphabet, BackwardSeq, Letter};
use crate::system::{full_address, in_cube, CodedPoint, CodedSystem, CUBE_MARGIN};

/// Absolute tolerance for structural zeros and equal diagonals.
pub const UNIPOTENCY_TOL: f64 = 1e-9;
/// Grid points along the leading fiber axis used for `Λ` estimates.
pub const DEFAULT_LAMBDA_GRID: usize = 33;

/// Fiber maps `(p, 𝔞, x) ↦ f_{p,𝔞}(x)`; `addr[0]` is the letter itself.
pub trait FiberMaps: Send + Sync {
    fn fiber_dim(&self) -> usize;
    fn eval(&self, p: &[f64], addr: &[Letter], x: &[f64], out: &mut [f64]);
    fn jacobian(&self, p: &[f64], addr: &[Letter], x: &[f64]) -> DMatrix<f64>;

    /// `|∂f_0/∂x_0|`, the eigenvalue modulus when (U) holds.
    fn diag_value(&self, p: &[f64], addr: &[Letter], x: &[f64]) -> f64 {
        self.jacobian(p, addr, x)[(0, 0)].abs()
    }

    /// Evaluation in truncated Taylor arithmetic, when the maps are given
    /// symbolically.
    fn eval_taylor(&self, _p: &[Taylor], _addr: &[Letter], _x: &[Taylor]) -> Option<Vec<Taylor>> {
        None
    }

    /// Row-major Jacobian in Taylor arithmetic.
    fn jacobian_taylor(&self, _p: &[Taylor], _addr: &[Letter], _x: &[Taylor]) -> Option<Vec<Taylor>> {
        None
    }
}

/// Fiber maps given per letter by one expression per output coordinate.
#[derive(Debug, Clone)]
pub struct ExprMaps {
    dim: usize,
    branches: Vec<Vec<Expr>>,
    jac: Vec<Vec<Expr>>,
}

impl ExprMaps {
    pub fn new(branches: Vec<Vec<Expr>>) -> Result<Self> {
        let dim = branches.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(LabError::Config("fiber maps need at least one branch and one coordinate".into()));
        }
        for (a, b) in branches.iter().enumerate() {
            if b.len() != dim {
                return Err(LabError::Config(format!("branch {a} has {} coordinates, expected {dim}", b.len())));
            }
            if let Some(e) = b.iter().find(|e| e.var_arity() > dim) {
                return Err(LabError::Config(format!("branch {a}: `{e}` reads a coordinate beyond {dim}")));
            }
        }
        let jac = branches
            .iter()
            .map(|b| {
                let mut m = Vec::with_capacity(dim * dim);
                for e in b {
                    for j in 0..dim {
                        m.push(e.diff_var(j));
                    }
                }
                m
            })
            .collect();
        Ok(ExprMaps { dim, branches, jac })
    }

    pub fn branches(&self) -> &[Vec<Expr>] {
        &self.branches
    }

    pub fn letter_arity(&self) -> usize {
        self.branches.iter().flatten().map(Expr::letter_arity).max().unwrap_or(0)
    }

    pub fn param_arity(&self) -> usize {
        self.branches.iter().flatten().map(Expr::param_arity).max().unwrap_or(0)
    }
}

impl FiberMaps for ExprMaps {
    fn fiber_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, p: &[f64], addr: &[Letter], x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.branches[addr[0] as usize]) {
            *o = e.eval(p, x, addr);
        }
    }

    fn jacobian(&self, p: &[f64], addr: &[Letter], x: &[f64]) -> DMatrix<f64> {
        let j = &self.jac[addr[0] as usize];
        DMatrix::from_row_iterator(self.dim, self.dim, j.iter().map(|e| e.eval(p, x, addr)))
    }

    fn diag_value(&self, p: &[f64], addr: &[Letter], x: &[f64]) -> f64 {
        self.jac[addr[0] as usize][0].eval(p, x, addr).abs()
    }

    fn eval_taylor(&self, p: &[Taylor], addr: &[Letter], x: &[Taylor]) -> Option<Vec<Taylor>> {
        let like = p.first().or(x.first())?;
        Some(self.branches[addr[0] as usize].iter().map(|e| e.eval_scalar(like, p, x, addr)).collect())
    }

    fn jacobian_taylor(&self, p: &[Taylor], addr: &[Letter], x: &[Taylor]) -> Option<Vec<Taylor>> {
        let like = p.first().or(x.first())?;
        Some(self.jac[addr[0] as usize].iter().map(|e| e.eval_scalar(like, p, x, addr)).collect())
    }
}

type MapFn = dyn Fn(&[f64], &[Letter], &[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64], &[Letter], &[f64]) -> DMatrix<f64> + Send + Sync;

/// Fiber maps backed by closures.
#[derive(Clone)]
pub struct FnMaps {
    dim: usize,
    f: Arc<MapFn>,
    jac: Arc<JacFn>,
}

impl FnMaps {
    pub fn new(
        dim: usize,
        f: impl Fn(&[f64], &[Letter], &[f64], &mut [f64]) + Send + Sync + 'static,
        jac: impl Fn(&[f64], &[Letter], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        FnMaps { dim, f: Arc::new(f), jac: Arc::new(jac) }
    }
}

impl FiberMaps for FnMaps {
    fn fiber_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, p: &[f64], addr: &[Letter], x: &[f64], out: &mut [f64]) {
        (self.f)(p, addr, x, out)
    }

    fn jacobian(&self, p: &[f64], addr: &[Letter], x: &[f64]) -> DMatrix<f64> {
        (self.jac)(p, addr, x)
    }
}

type DeltaFn = dyn Fn(&[f64], &[f64], &[Letter], &[f64], &mut [f64]) + Send + Sync;
type DeltaJacFn = dyn Fn(&[f64], &[f64], &[Letter], &[f64]) -> DMatrix<f64> + Send + Sync;

/// A family of fiberwise displacements `δ(t, p, 𝔞, x)` of size at most `ϑ`.
#[derive(Clone)]
pub struct PerturbationFamily {
    t_dim: usize,
    theta_bound: f64,
    delta: Arc<DeltaFn>,
    delta_jac: Arc<DeltaJacFn>,
}

impl fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationFamily")
            .field("t_dim", &self.t_dim)
            .field("theta_bound", &self.theta_bound)
            .finish_non_exhaustive()
    }
}

impl PerturbationFamily {
    pub fn new(
        t_dim: usize,
        theta_bound: f64,
        delta: impl Fn(&[f64], &[f64], &[Letter], &[f64], &mut [f64]) + Send + Sync + 'static,
        delta_jac: impl Fn(&[f64], &[f64], &[Letter], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        PerturbationFamily { t_dim, theta_bound, delta: Arc::new(delta), delta_jac: Arc::new(delta_jac) }
    }

    /// `δ = t_0·ϑ` in every coordinate, for `t_0 ∈ [-1, 1]`.
    pub fn constant_shift(theta: f64, dim: usize) -> Self {
        PerturbationFamily::new(
            1,
            theta,
            move |t, _, _, _, out| out.iter_mut().for_each(|o| *o = t[0] * theta),
            move |_, _, _, _| DMatrix::zeros(dim, dim),
        )
    }

    pub fn t_dim(&self) -> usize {
        self.t_dim
    }

    pub fn theta_bound(&self) -> f64 {
        self.theta_bound
    }

    pub fn delta(&self, t: &[f64], p: &[f64], addr: &[Letter], x: &[f64], out: &mut [f64]) {
        (self.delta)(t, p, addr, x, out)
    }

    pub fn delta_jacobian(&self, t: &[f64], p: &[f64], addr: &[Letter], x: &[f64]) -> DMatrix<f64> {
        (self.delta_jac)(t, p, addr, x)
    }

    /// Sampled `C²` size: the largest of `|δ|`, `|Dδ|` and a difference
    /// quotient of `Dδ`, over `t ∈ [-1,1]^τ` and the system's samples.
    pub fn sampled_c2_size(&self, sys: &FiberSystem, spec: &SampleSpec) -> f64 {
        let n = sys.fiber_dim();
        let mut rng = SeedSplitter::new(spec.seed).stream(STREAM_DIAGNOSTIC);
        let samples = sys.samples(spec);
        let mut size = 0.0f64;
        let mut out = vec![0.0; n];
        let h = 1e-5;
        for (p, addr, x) in &samples {
            let t: Vec<f64> = (0..self.t_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            self.delta(&t, p, addr, x, &mut out);
            size = size.max(out.iter().fold(0.0, |m, v| m.max(v.abs())));
            let j = self.delta_jacobian(&t, p, addr, x);
            size = size.max(j.amax());
            for k in 0..n {
                let mut xp = x.clone();
                xp[k] += h;
                let jp = self.delta_jacobian(&t, p, addr, &xp);
                size = size.max((jp - &j).amax() / h);
            }
        }
        size
    }
}

struct PerturbedMaps {
    base: Arc<dyn FiberMaps>,
    pert: PerturbationFamily,
    t: Vec<f64>,
}

impl FiberMaps for PerturbedMaps {
    fn fiber_dim(&self) -> usize {
        self.base.fiber_dim()
    }

    fn eval(&self, p: &[f64], addr: &[Letter], x: &[f64], out: &mut [f64]) {
        self.base.eval(p, addr, x, out);
        let mut d = vec![0.0; out.len()];
        self.pert.delta(&self.t, p, addr, x, &mut d);
        for (o, v) in out.iter_mut().zip(d) {
            *o += v;
        }
    }

    fn jacobian(&self, p: &[f64], addr: &[Letter], x: &[f64]) -> DMatrix<f64> {
        self.base.jacobian(p, addr, x) + self.pert.delta_jacobian(&self.t, p, addr, x)
    }
}

/// How verification samples parameters, addresses and fiber points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub params: usize,
    pub addresses: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { params: 9, addresses: 27, points: 64, seed: 0 }
    }
}

/// Outcome of checking assumption (U) on sampled Jacobians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnipotencyReport {
    pub max_upper_violation: f64,
    pub max_diag_spread: f64,
    pub eig_range: (f64, f64),
    pub samples: usize,
    pub tolerance: f64,
}

impl UnipotencyReport {
    pub fn from_jacobians<'a>(jacs: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Self {
        let mut r = UnipotencyReport {
            max_upper_violation: 0.0,
            max_diag_spread: 0.0,
            eig_range: (f64::INFINITY, 0.0),
            samples: 0,
            tolerance: UNIPOTENCY_TOL,
        };
        for j in jacs {
            r.absorb(j);
        }
        r
    }

    fn absorb(&mut self, j: &DMatrix<f64>) {
        let n = j.nrows();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            for k in i + 1..n {
                self.max_upper_violation = self.max_upper_violation.max(j[(i, k)].abs());
            }
            lo = lo.min(j[(i, i)]);
            hi = hi.max(j[(i, i)]);
        }
        self.max_diag_spread = self.max_diag_spread.max(hi - lo);
        let e = j[(0, 0)].abs();
        self.eig_range = (self.eig_range.0.min(e), self.eig_range.1.max(e));
        self.samples += 1;
    }

    /// Whether (U) is certified within tolerance.
    pub fn holds(&self) -> bool {
        self.samples > 0
            && self.max_upper_violation <= self.tolerance
            && self.max_diag_spread <= self.tolerance
            && self.eig_range.0 > 0.0
            && self.eig_range.1 < 1.0
    }
}

/// Sup estimate of the contraction rate: grid maximum and a
/// Lipschitz-inflated upper value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone)]
pub struct FiberSystem {
    name: String,
    alphabet: Alphabet,
    param_box: ParamBox,
    address_depth: usize,
    domain_margin: f64,
    maps: Arc<dyn FiberMaps>,
    gamma: (f64, f64),
    unipotency: UnipotencyReport,
    lambda_grid: usize,
}

impl fmt::Debug for FiberSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiberSystem")
            .field("name", &self.name)
            .field("alphabet", &self.alphabet)
            .field("fiber_dim", &self.fiber_dim())
            .field("param_box", &self.param_box)
            .field("address_depth", &self.address_depth)
            .field("gamma", &self.gamma)
            .finish_non_exhaustive()
    }
}

impl FiberSystem {
    /// Builds a system and certifies on samples that `X'` is mapped strictly
    /// inside `X`, then records (U) and the contraction bounds.
    pub fn new(
        name: impl Into<String>,
        maps: Arc<dyn FiberMaps>,
        alphabet: Alphabet,
        param_box: ParamBox,
        address_depth: usize,
        domain_margin: f64,
    ) -> Result<Self> {
        if address_depth == 0 {
            return Err(LabError::Config("address depth must be at least 1".into()));
        }
        if !(domain_margin >= 0.0 && domain_margin.is_finite()) {
            return Err(LabError::Config(format!("bad domain margin {domain_margin}")));
        }
        let mut sys = FiberSystem {
            name: name.into(),
            alphabet,
            param_box,
            address_depth,
            domain_margin,
            maps,
            gamma: (0.0, 1.0),
            unipotency: UnipotencyReport::from_jacobians([]),
            lambda_grid: DEFAULT_LAMBDA_GRID,
        };
        sys.certify()?;
        Ok(sys)
    }

    /// Wraps a system defined by expressions; the address depth is the
    /// number of letters the expressions read.
    pub fn from_exprs(
        name: impl Into<String>,
        maps: ExprMaps,
        param_box: ParamBox,
        domain_margin: f64,
    ) -> Result<Self> {
        let alphabet = Alphabet::new(maps.branches().len())?;
        if maps.param_arity() > param_box.dim() {
            return Err(LabError::Config("fiber maps read parameters beyond the box dimension".into()));
        }
        let depth = maps.letter_arity().max(1);
        FiberSystem::new(name, Arc::new(maps), alphabet, param_box, depth, domain_margin)
    }

    /// The affine family as a one-dimensional fiber system.
    pub fn from_affine(fam: &AffineIfsFamily) -> Result<Self> {
        let branches = fam
            .branches()
            .iter()
            .map(|b| vec![Expr::add(Expr::mul(b.slope.clone(), Expr::Var(0)), b.offset.clone()).fold()])
            .collect();
        FiberSystem::from_exprs("affine", ExprMaps::new(branches)?, fam.param_box().clone(), CUBE_MARGIN)
    }

    fn certify(&mut self) -> Result<()> {
        let spec = SampleSpec::default();
        let n = self.fiber_dim();
        let mut out = vec![0.0; n];
        for (p, addr, x) in self.samples(&spec) {
            self.maps.eval(&p, &addr, &x, &mut out);
            if !out.iter().all(|v| v.is_finite() && v.abs() < 1.0) {
                return Err(LabError::Domain {
                    stage: 0,
                    msg: format!("{}: f(p={p:?}, 𝔞={addr:?}) maps {x:?} to {out:?}, outside X", self.name),
                });
            }
        }
        self.unipotency = verify_unipotent(self, &spec);
        let (lo, hi) = if self.unipotency.holds() {
            self.unipotency.eig_range
        } else {
            self.det_rate_range(&spec)
        };
        if !(hi < 1.0 && lo > 0.0) {
            return Err(LabError::Invariant(format!(
                "{}: sampled contraction rates [{lo}, {hi}] are not inside (0, 1)",
                self.name
            )));
        }
        self.gamma = (lo * (1.0 - 1e-9), (hi * (1.0 + 1e-9)).min(0.5 * (1.0 + hi)));
        Ok(())
    }

    fn det_rate_range(&self, spec: &SampleSpec) -> (f64, f64) {
        let n = self.fiber_dim() as f64;
        self.samples(spec).iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), (p, a, x)| {
            let r = self.maps.jacobian(p, a, x).determinant().abs().powf(1.0 / n);
            (lo.min(r), hi.max(r))
        })
    }

    /// Deterministic samples `(p, 𝔞, x)` with `p` in the closed box, all
    /// addresses when few enough, and `x` in `X'` (corners, centre, random).
    pub fn samples(&self, spec: &SampleSpec) -> Vec<(Vec<f64>, Vec<Letter>, Vec<f64>)> {
        let splitter = SeedSplitter::new(spec.seed);
        let mut rng = splitter.stream(STREAM_DIAGNOSTIC);
        let d = self.param_box.dim();
        let mut params = vec![self.param_box.center()];
        if d <= 4 {
            for corner in 0..(1usize << d) {
                let u: Vec<f64> = (0..d).map(|i| ((corner >> i) & 1) as f64).collect();
                params.push(self.param_box.from_unit(&u));
            }
        }
        while params.len() < spec.params.max(1) {
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            params.push(self.param_box.from_unit(&u));
        }
        let k = self.alphabet.size();
        let m = self.address_depth;
        let total = (k as f64).powi(m as i32);
        let addresses: Vec<Vec<Letter>> = if total <= spec.addresses.max(k) as f64 {
            (0..total as usize).map(|i| word_at(self.alphabet, m, i)).collect()
        } else {
            let mut v: Vec<Vec<Letter>> = (0..k).map(|a| {
                let mut w = vec![a as Letter];
                w.extend((1..m).map(|_| rng.random_range(0..k) as Letter));
                w
            }).collect();
            while v.len() < spec.addresses {
                v.push((0..m).map(|_| rng.random_range(0..k) as Letter).collect());
            }
            v
        };
        let n = self.fiber_dim();
        let w = 1.0 + self.domain_margin;
        let mut points = vec![vec![0.0; n]];
        if n <= 6 {
            for corner in 0..(1usize << n) {
                points.push((0..n).map(|i| if (corner >> i) & 1 == 1 { w } else { -w }).collect());
            }
        }
        while points.len() < spec.points.max(2) {
            points.push((0..n).map(|_| rng.random_range(-w..=w)).collect());
        }
        let mut out = Vec::with_capacity(params.len() * addresses.len() * points.len());
        for p in &params {
            for a in &addresses {
                for x in &points {
                    out.push((p.clone(), a.clone(), x.clone()));
                }
            }
        }
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn maps(&self) -> &Arc<dyn FiberMaps> {
        &self.maps
    }

    pub fn param_dim(&self) -> usize {
        self.param_box.dim()
    }

    pub fn unipotency(&self) -> &UnipotencyReport {
        &self.unipotency
    }

    pub fn lambda_grid(&self) -> usize {
        self.lambda_grid
    }

    pub fn with_lambda_grid(mut self, points: usize) -> Self {
        self.lambda_grid = points.max(2);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl CodedSystem for FiberSystem {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn fiber_dim(&self) -> usize {
        self.maps.fiber_dim()
    }

    fn param_box(&self) -> &ParamBox {
        &self.param_box
    }

    fn address_depth(&self) -> usize {
        self.address_depth
    }

    fn gamma_bounds(&self) -> (f64, f64) {
        self.gamma
    }

    fn domain_margin(&self) -> f64 {
        self.domain_margin
    }

    fn step(&self, p: &[f64], address: &[Letter], x: &[f64], out: &mut [f64]) -> Result<()> {
        self.maps.eval(p, &address[..self.address_depth], x, out);
        Ok(())
    }

    fn contraction_rate(&self, p: &[f64], fiber: &[Letter], word: &[Letter]) -> Result<f64> {
        Ok(lambda_sup(self, p, fiber, word, self.lambda_grid)?.lower)
    }
}

/// `ψ^α_{p,𝔞}` with its Jacobian, evaluated on demand.
pub struct ComposedMap<'a> {
    sys: &'a FiberSystem,
    p: Vec<f64>,
    addr: Vec<Letter>,
    len: usize,
}

impl ComposedMap<'_> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.run(x, true)?.1)
    }

    pub fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.run(x, true)
    }

    fn run(&self, x: &[f64], with_jac: bool) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = x.len();
        let m = self.sys.address_depth;
        let mut cur = x.to_vec();
        let mut next = vec![0.0; n];
        let mut jac = DMatrix::identity(n, n);
        let w = 1.0 + self.sys.domain_margin;
        for i in 0..self.len {
            let a = &self.addr[i..i + m];
            if with_jac {
                jac = self.sys.maps.jacobian(&self.p, a, &cur) * jac;
            }
            self.sys.maps.eval(&self.p, a, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            if !in_cube(&cur, w) {
                return Err(LabError::Domain { stage: i, msg: format!("orbit left X': {cur:?}") });
            }
        }
        Ok((cur, jac))
    }
}

pub fn compose_fiber<'a>(
    sys: &'a FiberSystem,
    p: &[f64],
    fiber: &[Letter],
    alpha: &[Letter],
) -> Result<ComposedMap<'a>> {
    sys.param_box.check_extended(p)?;
    check_letters(sys.alphabet, alpha)?;
    check_letters(sys.alphabet, fiber)?;
    Ok(ComposedMap {
        sys,
        p: p.to_vec(),
        addr: full_address(alpha, fiber, sys.address_depth),
        len: alpha.len(),
    })
}

fn check_letters(alphabet: Alphabet, w: &[Letter]) -> Result<()> {
    match w.iter().find(|&&a| a as usize >= alphabet.size()) {
        Some(a) => Err(LabError::Range(format!("letter {a} outside alphabet of size {}", alphabet.size()))),
        None => Ok(()),
    }
}

/// `λ_{p,𝔞,α}(x)`: product of the stage diagonals along the orbit of `x`.
pub fn eigenvalue_product(sys: &FiberSystem, p: &[f64], fiber: &[Letter], alpha: &[Letter], x: &[f64]) -> Result<f64> {
    if !sys.unipotency.holds() {
        return Err(LabError::Contract(format!("{}: assumption (U) is not certified", sys.name)));
    }
    let map = compose_fiber(sys, p, fiber, alpha)?;
    orbit_eigenvalue(&map, x)
}

fn orbit_eigenvalue(map: &ComposedMap<'_>, x: &[f64]) -> Result<f64> {
    let sys = map.sys;
    let m = sys.address_depth;
    let w = 1.0 + sys.domain_margin;
    let mut cur = x.to_vec();
    let mut next = vec![0.0; cur.len()];
    let mut lambda = 1.0;
    for i in 0..map.len {
        let a = &map.addr[i..i + m];
        lambda *= sys.maps.diag_value(&map.p, a, &cur);
        sys.maps.eval(&map.p, a, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        if !in_cube(&cur, w) {
            return Err(LabError::Domain { stage: i, msg: format!("orbit left X': {cur:?}") });
        }
    }
    Ok(lambda)
}

/// `Λ_{p,𝔞,α}` by a grid along `x_0`. Under (U) the first coordinate evolves
/// on its own and carries the diagonal, so the other coordinates are fixed
/// at 0.
pub fn lambda_sup(sys: &FiberSystem, p: &[f64], fiber: &[Letter], alpha: &[Letter], grid: usize) -> Result<LambdaEstimate> {
    if !sys.unipotency.holds() {
        return Err(LabError::Contract(format!("{}: assumption (U) is not certified", sys.name)));
    }
    let grid = grid.max(2);
    let map = compose_fiber(sys, p, fiber, alpha)?;
    let mut x = vec![0.0; sys.fiber_dim()];
    let mut best = 0.0f64;
    let mut max_jump = 0.0f64;
    let mut prev: Option<f64> = None;
    for i in 0..grid {
        x[0] = -1.0 + 2.0 * i as f64 / (grid - 1) as f64;
        let l = orbit_eigenvalue(&map, &x)?;
        best = best.max(l);
        if let Some(q) = prev {
            max_jump = max_jump.max((l.ln() - q.ln()).abs());
        }
        prev = Some(l);
    }
    Ok(LambdaEstimate { lower: best, upper: best * (0.5 * max_jump).exp() })
}

/// `π_{p,𝔞}(α)` truncated at `depth`, bounded by `2·depth^N·γ^depth`.
pub fn code_fiber_point(sys: &FiberSystem, p: &[f64], fiber: &[Letter], alpha: &BackwardSeq, depth: usize) -> Result<CodedPoint> {
    let n = sys.fiber_dim();
    let map = compose_fiber(sys, p, fiber, &alpha.prefix(depth))?;
    let value = map.apply(&vec![0.0; n])?;
    let error_bound = 2.0 * (depth.max(1) as f64).powi(n as i32) * sys.gamma.1.powi(depth as i32);
    Ok(CodedPoint { value, error_bound, depth })
}

/// Checks (U) on the sampled Jacobians of `sys` over `X'`.
pub fn verify_unipotent(sys: &FiberSystem, spec: &SampleSpec) -> UnipotencyReport {
    let mut report = UnipotencyReport::from_jacobians([]);
    for (p, a, x) in sys.samples(spec) {
        report.absorb(&sys.maps.jacobian(&p, &a, &x));
    }
    report
}

/// Adds `δ(t, ·)` to the fiber maps. (U) is re-sampled but not required.
pub fn apply_perturbation(sys: &FiberSystem, pert: &PerturbationFamily, t: &[f64]) -> Result<FiberSystem> {
    if t.len() != pert.t_dim {
        return Err(LabError::Config(format!("perturbation expects {} parameters, got {}", pert.t_dim, t.len())));
    }
    let maps = PerturbedMaps { base: sys.maps.clone(), pert: pert.clone(), t: t.to_vec() };
    let out = FiberSystem::new(
        format!("{}+perturbation", sys.name),
        Arc::new(maps),
        sys.alphabet,
        sys.param_box.clone(),
        sys.address_depth,
        sys.domain_margin,
    )?;
    Ok(out.with_lambda_grid(sys.lambda_grid))
}

// Distortion suites

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistortionKind {
    Point,
    Parameter,
    Address,
    Perturbation,
}

/// Running supremum of a distortion ratio over sampled words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSeries {
    pub kind: DistortionKind,
    pub depths: Vec<usize>,
    pub running_sup: Vec<f64>,
}

impl DistortionSeries {
    /// Relative growth of the running sup between two recorded depths.
    pub fn growth(&self, from: usize, to: usize) -> Option<f64> {
        let at = |d| self.depths.iter().position(|&x| x == d).map(|i| self.running_sup[i]);
        Some(at(to)? / at(from)? - 1.0)
    }
}

/// Word sample for the distortion suites: the innermost `exhaustive`
/// letters run over all words, the rest are drawn at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub depths: Vec<usize>,
    pub exhaustive: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        DistortionSpec { depths: vec![10, 15, 20, 25, 30], exhaustive: 6, points: 9, seed: 0 }
    }
}

impl DistortionSpec {
    fn words(&self, alphabet: Alphabet, depth: usize) -> Vec<Vec<Letter>> {
        let e = self.exhaustive.min(depth);
        let k = alphabet.size();
        let count = k.pow(e as u32);
        let splitter = SeedSplitter::new(self.seed);
        (0..count)
            .map(|i| {
                let mut w = word_at(alphabet, e, i);
                let mut rng = splitter.cell(STREAM_DIAGNOSTIC, (depth as u64) << 32 | i as u64);
                w.extend((e..depth).map(|_| rng.random_range(0..k) as Letter));
                w
            })
            .collect()
    }

    fn run(
        &self,
        kind: DistortionKind,
        alphabet: Alphabet,
        ratio: impl Fn(&[Letter]) -> Result<f64> + Sync,
    ) -> Result<DistortionSeries> {
        use rayon::prelude::*;
        let mut depths = self.depths.clone();
        depths.sort_unstable();
        depths.dedup();
        let mut sup = 0.0f64;
        let mut running_sup = Vec::with_capacity(depths.len());
        for &n in &depths {
            let words = self.words(alphabet, n);
            let level = words
                .par_iter()
                .map(|w| ratio(w))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0f64, f64::max);
            sup = sup.max(level);
            running_sup.push(sup);
        }
        Ok(DistortionSeries { kind, depths, running_sup })
    }
}

/// Bounded distortion in `x`: `sup λ_α(x)/λ_α(y)` over sampled points.
pub fn distortion_points(sys: &FiberSystem, p: &[f64], fiber: &[Letter], spec: &DistortionSpec) -> Result<DistortionSeries> {
    let n = sys.fiber_dim();
    let pts: Vec<Vec<f64>> = (0..spec.points.max(2))
        .map(|i| {
            let mut x = vec![0.0; n];
            x[0] = -1.0 + 2.0 * i as f64 / (spec.points.max(2) - 1) as f64;
            x
        })
        .collect();
    spec.run(DistortionKind::Point, sys.alphabet, |w| {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for x in &pts {
            let l = eigenvalue_product(sys, p, fiber, w, x)?;
            lo = lo.min(l);
            hi = hi.max(l);
        }
        Ok(hi / lo)
    })
}

/// Per-stage log-rate gap between two parameters, `η` in the ratio bound.
///
/// Two orbits started at the same point drift apart by at most
/// `σ = sup |f_{p1} - f_{p2}| / (1 - γ)` in `x_0`, so each stage changes the
/// log ratio by at most the pointwise gap plus `L·σ`, with `L` the
/// Lipschitz constant of `log λ` along `x_0`. All sups run over addresses
/// and a grid along `x_0`.
pub fn parameter_rate_gap(sys: &FiberSystem, p1: &[f64], p2: &[f64], grid: usize) -> Result<f64> {
    let grid = grid.max(2);
    let m = sys.address_depth;
    let w = 1.0 + sys.domain_margin;
    let h = 2.0 * w / (grid - 1) as f64;
    let n = sys.fiber_dim();
    let (mut x, mut y1, mut y2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut gap, mut lip, mut shift) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..sys.alphabet.size().pow(m as u32) {
        let addr = word_at(sys.alphabet, m, i);
        let mut prev: Option<f64> = None;
        for j in 0..grid {
            x[0] = -w + h * j as f64;
            let l1 = sys.maps.diag_value(p1, &addr, &x).ln();
            let l2 = sys.maps.diag_value(p2, &addr, &x).ln();
            gap = gap.max((l1 - l2).abs());
            if let Some(q) = prev {
                lip = lip.max((l1 - q).abs() / h);
            }
            prev = Some(l1);
            sys.maps.eval(p1, &addr, &x, &mut y1);
            sys.maps.eval(p2, &addr, &x, &mut y2);
            shift = shift.max((y1[0] - y2[0]).abs());
        }
    }
    let gamma = sys.gamma.1;
    if !(gamma < 1.0) {
        return Err(LabError::Contract(format!("{}: contraction bound {gamma} is not below 1", sys.name)));
    }
    Ok(gap + lip * shift / (1.0 - gamma))
}

/// Distortion in `p`: `max(Λ_{p1,α}/Λ_{p2,α}, Λ_{p2,α}/Λ_{p1,α})·e^{-η|α|}`.
pub fn distortion_parameters(sys: &FiberSystem, p1: &[f64], p2: &[f64], fiber: &[Letter], spec: &DistortionSpec) -> Result<DistortionSeries> {
    let grid = spec.points.max(2);
    let eta = parameter_rate_gap(sys, p1, p2, 4 * grid)?;
    spec.run(DistortionKind::Parameter, sys.alphabet, |w| {
        let l1 = lambda_sup(sys, p1, fiber, w, grid)?.lower;
        let l2 = lambda_sup(sys, p2, fiber, w, grid)?.lower;
        Ok((l1 / l2).max(l2 / l1) * (-eta * w.len() as f64).exp())
    })
}

/// Distortion in the fiber address: `sup Λ_{p,𝔞,α}/Λ_{p,𝔞',α}`.
pub fn distortion_addresses(sys: &FiberSystem, p: &[f64], fibers: &[Vec<Letter>], spec: &DistortionSpec) -> Result<DistortionSeries> {
    let grid = spec.points.max(2);
    spec.run(DistortionKind::Address, sys.alphabet, |w| {
        let rates = fibers
            .iter()
            .map(|f| Ok(lambda_sup(sys, p, f, w, grid)?.lower))
            .collect::<Result<Vec<f64>>>()?;
        let hi = rates.iter().cloned().fold(0.0, f64::max);
        let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(hi / lo)
    })
}

/// Distortion under a perturbation: the least `D` with
/// `Λ^{ε'}/D ≤ Λ̃ ≤ D·Λ^{1/ε'}`.
pub fn distortion_perturbation(
    sys: &FiberSystem,
    perturbed: &FiberSystem,
    p: &[f64],
    fiber: &[Letter],
    eps_prime: f64,
    spec: &DistortionSpec,
) -> Result<DistortionSeries> {
    let grid = spec.points.max(2);
    spec.run(DistortionKind::Perturbation, sys.alphabet, |w| {
        let l = lambda_sup(sys, p, fiber, w, grid)?.lower;
        let lt = lambda_sup(perturbed, p, fiber, w, grid)?.lower;
        Ok((l.powf(eps_prime) / lt).max(lt / l.powf(1.0 / eps_prime)))
    })
}

// The planar blender

/// Optional overrides for [`build_planar_blender`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlenderSpec {
    /// Disjoint closed subintervals `X_j ⋐ [0, 1]` of the base.
    pub segments: Option<Vec<(f64, f64)>>,
    /// Heights `r_j ∈ (0, 1 - 1/n)` on the `[0, 1]` chart.
    pub heights: Option<Vec<f64>>,
    /// Scale of the parameter unfolding coefficients.
    pub unfolding_scale: f64,
    /// Half-width of the parameter box `[-w, w]^d`.
    pub param_halfwidth: f64,
}

impl Default for BlenderSpec {
    fn default() -> Self {
        BlenderSpec { segments: None, heights: None, unfolding_scale: 1.0, param_halfwidth: 0.05 }
    }
}

/// The endomorphism `F(x, y) = (g(x), y/n + h(x))` with `n'` branches.
#[derive(Debug, Clone)]
pub struct PlanarBlender {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub jet_dim: usize,
    pub n_prime: usize,
    /// Base branch domains on the `[0, 1]` chart.
    pub segments: Vec<(f64, f64)>,
    /// Expanding base maps `g_j(x) = slope·x + offset`, `X_j → [0, 1]`.
    pub base_maps: Vec<(f64, f64)>,
    /// Heights `r_j` on the `[0, 1]` chart.
    pub heights: Vec<f64>,
    /// Per branch, the unfolding coefficient of each multi-index (graded
    /// order); index 0 is the `[-1,1]`-chart offset.
    pub coefficients: Vec<Vec<f64>>,
    pub fiber: FiberSystem,
    /// `log n'`
    pub entropy: f64,
    /// `|log(1/n)|`
    pub contraction_log: f64,
}

/// Builds the planar blender for jets of order `s` in `d` parameters:
/// `n' = (n+1)^{δ_{d,s}}` branches whose fiber maps are
/// `y ↦ y/n + Σ_m c_{j,m} p^m/m!`, the digits of `j` in base `n+1` choosing
/// the level of each coefficient.
pub fn build_planar_blender(n: usize, d: usize, s: usize, spec: &BlenderSpec) -> Result<PlanarBlender> {
    if n < 2 {
        return Err(LabError::Invariant(format!("blender needs n >= 2, got {n}")));
    }
    if d == 0 {
        return Err(LabError::Invariant("blender needs at least one parameter".into()));
    }
    let delta = jet_dimension(d, s);
    let n_prime_f = ((n + 1) as f64).powi(delta as i32);
    if n_prime_f > 1e6 {
        return Err(LabError::Resource { requested: n_prime_f, cap: 1_000_000 });
    }
    let n_prime = n_prime_f as usize;
    if n_prime > Letter::MAX as usize {
        return Err(LabError::Resource { requested: n_prime_f, cap: Letter::MAX as u64 });
    }
    let nf = n as f64;

    let segments = match &spec.segments {
        Some(v) => v.clone(),
        None => (0..n_prime)
            .map(|j| ((j as f64 + 0.1) / n_prime as f64, (j as f64 + 0.9) / n_prime as f64))
            .collect(),
    };
    if segments.len() != n_prime {
        return Err(LabError::Invariant(format!("expected {n_prime} base segments, got {}", segments.len())));
    }
    let mut sorted = segments.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (i, &(a, b)) in sorted.iter().enumerate() {
        if !(0.0 < a && a < b && b < 1.0) {
            return Err(LabError::Invariant(format!("segment [{a}, {b}] is not compactly inside [0, 1]")));
        }
        if i > 0 && sorted[i - 1].1 >= a {
            return Err(LabError::Invariant(format!("segments overlap near {a}")));
        }
    }
    let base_maps = segments.iter().map(|&(a, b)| (1.0 / (b - a), -a / (b - a))).collect();

    let level = |digit: usize| (2.0 * digit as f64 - nf) / (nf + 1.0) * (1.0 - 1.0 / nf);
    let digits = |j: usize| -> Vec<usize> {
        let mut j = j;
        (0..delta)
            .map(|_| {
                let dgt = j % (n + 1);
                j /= n + 1;
                dgt
            })
            .collect()
    };
    let heights = match &spec.heights {
        Some(h) => h.clone(),
        None => (0..n_prime).map(|j| 0.5 * (level(digits(j)[0]) + 1.0 - 1.0 / nf)).collect(),
    };
    if heights.len() != n_prime {
        return Err(LabError::Invariant(format!("expected {n_prime} heights, got {}", heights.len())));
    }
    if let Some(r) = heights.iter().find(|&&r| !(r > 0.0 && r < 1.0 - 1.0 / nf)) {
        return Err(LabError::Invariant(format!("height {r} outside (0, 1 - 1/n)")));
    }

    let set = JetIndexSet::new(d, s);
    let mut coefficients = Vec::with_capacity(n_prime);
    let mut branches = Vec::with_capacity(n_prime);
    for (j, &r) in heights.iter().enumerate() {
        let dg = digits(j);
        let mut coef = vec![2.0 * r + 1.0 / nf - 1.0];
        let mut e = Expr::add(Expr::mul(Expr::Const(1.0 / nf), Expr::Var(0)), Expr::Const(coef[0]));
        for (i, m) in set.indices().iter().enumerate().skip(1) {
            let c = spec.unfolding_scale * level(dg[i]);
            coef.push(c);
            let mut mono = Expr::Const(c / set.factorial(i));
            for (k, &pow) in m.iter().enumerate() {
                if pow > 0 {
                    mono = Expr::mul(mono, Expr::Pow(Box::new(Expr::Param(k)), pow));
                }
            }
            e = Expr::add(e, mono);
        }
        coefficients.push(coef);
        branches.push(vec![e.fold()]);
    }
    let w = spec.param_halfwidth;
    let pbox = ParamBox::new(vec![-w; d], vec![w; d])?;
    let fiber = FiberSystem::from_exprs(format!("blender(n={n},d={d},s={s})"), ExprMaps::new(branches)?, pbox, CUBE_MARGIN)?;
    Ok(PlanarBlender {
        n,
        d,
        s,
        jet_dim: delta,
        n_prime,
        segments,
        base_maps,
        heights,
        coefficients,
        fiber,
        entropy: n_prime_f.ln(),
        contraction_log: nf.ln(),
    })
}

impl PlanarBlender {
    /// Whether `h_F = log n' > |log(1/n)|`, decided on integers:
    /// `n' > n` is equivalent.
    pub fn entropy_exceeds_contraction(&self) -> bool {
        self.n_prime > self.n
    }

    /// `log n' / |log(1/n)| = δ_{d,s}·log(n+1)/log(n)`.
    pub fn entropy_ratio(&self) -> f64 {
        self.entropy / self.contraction_log
    }

    /// Cumulative occupancy of a `res × res` grid on the square by the
    /// unstable pieces `F^m(X × {y0})`, `m = 0..=depth`. Each branch maps
    /// `X_j` onto `X`, so these pieces are full horizontal segments at the
    /// heights `ψ^α(y0)`, `|α| = m`.
    pub fn unstable_occupancy(&self, p: &[f64], y0: f64, depth: usize, res: usize) -> Result<Vec<f64>> {
        let res = res.clamp(2, 1 << 16);
        let k = self.n_prime;
        if (k as f64).powi(depth as i32) > 1e8 {
            return Err(LabError::Resource { requested: (k as f64).powi(depth as i32), cap: 100_000_000 });
        }
        let mut rows = vec![false; res];
        let mut hit = 0usize;
        let mark = |y: f64, rows: &mut Vec<bool>, hit: &mut usize| {
            let r = (((y + 1.0) / 2.0 * res as f64).floor() as isize).clamp(0, res as isize - 1) as usize;
            if !rows[r] {
                rows[r] = true;
                *hit += 1;
            }
        };
        let mut level = vec![y0];
        mark(y0, &mut rows, &mut hit);
        let mut out = vec![hit as f64 / res as f64];
        let mut buf = [0.0];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(level.len() * k);
            for &y in &level {
                for a in 0..k {
                    self.fiber.step(p, &[a as Letter], &[y], &mut buf)?;
                    next.push(buf[0]);
                    mark(buf[0], &mut rows, &mut hit);
                }
            }
            level = next;
            out.push(hit as f64 / res as f64);
        }
        Ok(out)
    }
}
