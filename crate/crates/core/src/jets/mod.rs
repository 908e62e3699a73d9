//! Parameter jets of fiber points and the induced jet systems.
//!
//! A jet vector stores the raw partials `∂^m_p x_p |_{p0}` for all
//! multi-indices `|m| ≤ s`, in the graded order of [`JetIndexSet`]. Lower
//! degrees come first, which makes the Jacobian of the induced map lower
//! triangular with the base derivative `Df_{p0}(x_{p0})` on the diagonal.

pub mod taylor;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::Expr;
use crate::measure_lab::{pushforward, EmpiricalMeasure};
use crate::skewprod::{FiberMaps, FiberSystem, SampleSpec};
use crate::symbolic::Letter;
use crate::system::CodedSystem;
use crate::thermo::GibbsApprox;

pub use taylor::{JetIndexSet, Taylor};

/// `δ_{d,s} = binomial(d + s, d)`.
pub fn jet_dimension(d: usize, s: usize) -> usize {
    let k = d.min(s) as u128;
    let n = (d + s) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc as usize
}

/// Raw parameter partials of a scalar fiber point at `basepoint`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "JetVectorRepr", try_from = "JetVectorRepr")]
pub struct JetVector {
    set: Arc<JetIndexSet>,
    coeffs: Vec<f64>,
    basepoint: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JetVectorRepr {
    d: usize,
    s: usize,
    indices: Vec<Vec<u32>>,
    basepoint: Vec<f64>,
    coeffs: Vec<f64>,
}

impl From<JetVector> for JetVectorRepr {
    fn from(j: JetVector) -> Self {
        JetVectorRepr {
            d: j.set.vars(),
            s: j.set.order(),
            indices: j.set.indices().to_vec(),
            basepoint: j.basepoint,
            coeffs: j.coeffs,
        }
    }
}

impl TryFrom<JetVectorRepr> for JetVector {
    type Error = LabError;

    fn try_from(r: JetVectorRepr) -> Result<Self> {
        let set = JetIndexSet::new(r.d.max(1), r.s);
        if r.indices != set.indices() {
            return Err(LabError::Config("jet indices are not in graded order".into()));
        }
        JetVector::new(set, r.coeffs, r.basepoint)
    }
}

impl fmt::Debug for JetVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetVector")
            .field("d", &self.set.vars())
            .field("s", &self.set.order())
            .field("coeffs", &self.coeffs)
            .field("basepoint", &self.basepoint)
            .finish()
    }
}

impl JetVector {
    pub fn new(set: Arc<JetIndexSet>, coeffs: Vec<f64>, basepoint: Vec<f64>) -> Result<Self> {
        if coeffs.len() != set.len() {
            return Err(LabError::Contract(format!("jet needs {} coefficients, got {}", set.len(), coeffs.len())));
        }
        if basepoint.len() != set.vars() {
            return Err(LabError::Contract(format!("jet basepoint needs {} components", set.vars())));
        }
        Ok(JetVector { set, coeffs, basepoint })
    }

    /// The jet of a point independent of the parameter.
    pub fn constant(set: Arc<JetIndexSet>, x: f64, basepoint: Vec<f64>) -> Result<Self> {
        let mut coeffs = vec![0.0; set.len()];
        coeffs[0] = x;
        JetVector::new(set, coeffs, basepoint)
    }

    pub fn index_set(&self) -> &Arc<JetIndexSet> {
        &self.set
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn basepoint(&self) -> &[f64] {
        &self.basepoint
    }

    /// `Σ_m ∂^m x / m! · t^m`
    pub fn to_taylor(&self) -> Taylor {
        let c = self.coeffs.iter().enumerate().map(|(i, v)| v / self.set.factorial(i)).collect();
        Taylor::from_coeffs(&self.set, c)
    }

    fn from_taylor(t: &Taylor, basepoint: Vec<f64>) -> JetVector {
        let set = t.set().clone();
        let coeffs = t.coeffs().iter().enumerate().map(|(i, v)| v * set.factorial(i)).collect();
        JetVector { set, coeffs, basepoint }
    }

    /// The polynomial `x_p` the jet describes, evaluated at `p`.
    pub fn eval_polynomial(&self, p: &[f64]) -> f64 {
        let dp: Vec<f64> = p.iter().zip(&self.basepoint).map(|(a, b)| a - b).collect();
        self.set
            .indices()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mono: f64 = m.iter().zip(&dp).map(|(&k, v)| v.powi(k as i32)).product();
                self.coeffs[i] * mono / self.set.factorial(i)
            })
            .sum()
    }
}

type ScalarFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// A parameterized scalar map `(p, x) ↦ f_p(x)`.
#[derive(Clone)]
pub enum ScalarFamily {
    /// Symbolic: `x` is the fiber coordinate, `p`, `p1`, .. the parameter.
    Expr(Expr),
    /// Black box, differentiated by finite differences.
    Closure { d: usize, f: Arc<ScalarFn> },
}

impl fmt::Debug for ScalarFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFamily::Expr(e) => write!(f, "ScalarFamily::Expr({e})"),
            ScalarFamily::Closure { d, .. } => write!(f, "ScalarFamily::Closure(d = {d})"),
        }
    }
}

impl ScalarFamily {
    pub fn closure(d: usize, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFamily::Closure { d, f: Arc::new(f) }
    }

    pub fn eval(&self, p: &[f64], x: f64) -> f64 {
        match self {
            ScalarFamily::Expr(e) => e.eval(p, &[x], &[]),
            ScalarFamily::Closure { f, .. } => f(p, x),
        }
    }
}

/// Highest order the finite-difference oracle supports.
pub const FD_MAX_ORDER: usize = 4;

/// The jet of `p ↦ f_p(x_p)` at `p0`, given the jet of `x_p`.
pub fn jet_transport(family: &ScalarFamily, p0: &[f64], jet: &JetVector) -> Result<JetVector> {
    if jet.basepoint.len() != p0.len() || jet.basepoint.iter().zip(p0).any(|(a, b)| a != b) {
        return Err(LabError::Contract(format!("jet basepoint {:?} differs from p0 {p0:?}", jet.basepoint)));
    }
    let set = jet.set.clone();
    match family {
        ScalarFamily::Expr(e) => {
            let x = jet.to_taylor();
            let p: Vec<Taylor> = (0..set.vars()).map(|i| Taylor::variable(&set, i, p0[i])).collect();
            let out = e.eval_scalar(&x, &p, &[x.clone()], &[]);
            Ok(JetVector::from_taylor(&out, p0.to_vec()))
        }
        ScalarFamily::Closure { d, f } => {
            if *d != 1 || set.vars() != 1 {
                return Err(LabError::Capability(
                    "finite-difference jets are only available for one parameter".into(),
                ));
            }
            if set.order() > FD_MAX_ORDER {
                return Err(LabError::Capability(format!(
                    "finite-difference jets are limited to order {FD_MAX_ORDER}, requested {}",
                    set.order()
                )));
            }
            let g = |p: f64| f(&[p], jet.eval_polynomial(&[p]));
            let coeffs = (0..=set.order()).map(|k| fd_derivative(&g, p0[0], k)).collect();
            JetVector::new(set, coeffs, p0.to_vec())
        }
    }
}

/// Central difference of order `k` with step `h_k = 10^{-16/(k+4)}`,
/// refined once by Richardson extrapolation.
pub fn fd_derivative(g: &impl Fn(f64) -> f64, p0: f64, k: usize) -> f64 {
    if k == 0 {
        return g(p0);
    }
    let h = 10f64.powf(-16.0 / (k as f64 + 4.0));
    let stencil = |h: f64| {
        let mut acc = 0.0;
        let mut binom = 1.0;
        for i in 0..=k {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * g(p0 + (k as f64 / 2.0 - i as f64) * h);
            binom = binom * (k - i) as f64 / (i + 1) as f64;
        }
        acc / h.powi(k as i32)
    };
    (4.0 * stencil(h / 2.0) - stencil(h)) / 3.0
}

/// Induced maps on scaled jet states `y_m = ∂^m x / R_{|m|}`.
struct InducedJetMaps {
    base: Arc<dyn FiberMaps>,
    set: Arc<JetIndexSet>,
    radii: Vec<f64>,
}

impl InducedJetMaps {
    fn scale(&self, i: usize) -> f64 {
        self.radii[self.set.degree(i) as usize]
    }

    fn lift(&self, p0: &[f64], y: &[f64]) -> (Vec<Taylor>, Taylor) {
        let p: Vec<Taylor> = (0..self.set.vars()).map(|i| Taylor::variable(&self.set, i, p0[i])).collect();
        let c = (0..self.set.len()).map(|i| y[i] * self.scale(i) / self.set.factorial(i)).collect();
        (p, Taylor::from_coeffs(&self.set, c))
    }

    fn try_eval(&self, p0: &[f64], addr: &[Letter], y: &[f64]) -> Option<Vec<f64>> {
        let (p, x) = self.lift(p0, y);
        let t = self.base.eval_taylor(&p, addr, &[x])?.pop()?;
        Some((0..self.set.len()).map(|i| t.coeffs()[i] * self.set.factorial(i) / self.scale(i)).collect())
    }
}

impl FiberMaps for InducedJetMaps {
    fn fiber_dim(&self) -> usize {
        self.set.len()
    }

    fn eval(&self, p: &[f64], addr: &[Letter], y: &[f64], out: &mut [f64]) {
        let v = self.try_eval(p, addr, y).expect("base maps support Taylor evaluation");
        out.copy_from_slice(&v);
    }

    fn jacobian(&self, p0: &[f64], addr: &[Letter], y: &[f64]) -> DMatrix<f64> {
        let (p, x) = self.lift(p0, y);
        let fx = self.base.jacobian_taylor(&p, addr, &[x]).expect("base maps support Taylor evaluation");
        let fx = &fx[0];
        let n = self.set.len();
        let idx = self.set.indices();
        DMatrix::from_fn(n, n, |m, mp| {
            let (a, b) = (&idx[m], &idx[mp]);
            if a.iter().zip(b).any(|(u, v)| u < v) {
                return 0.0;
            }
            let diff: Vec<u32> = a.iter().zip(b).map(|(u, v)| u - v).collect();
            self.scale(mp) / self.scale(m) * self.set.factorial(m) / self.set.factorial(mp) * fx.coeff(&diff)
        })
    }

    fn diag_value(&self, p: &[f64], addr: &[Letter], y: &[f64]) -> f64 {
        self.base.diag_value(p, addr, &y[..1])
    }
}

/// An induced jet system with the scales `R_k` it was built with.
#[derive(Debug, Clone)]
pub struct InducedJetSystem {
    pub system: FiberSystem,
    pub set: Arc<JetIndexSet>,
    /// `R_k` for jet degree `k`; `R_0 = 1`.
    pub radii: Vec<f64>,
}

impl InducedJetSystem {
    /// Scaled state of a jet.
    pub fn to_state(&self, jet: &JetVector) -> Vec<f64> {
        (0..self.set.len()).map(|i| jet.coeffs[i] / self.radii[self.set.degree(i) as usize]).collect()
    }

    pub fn from_state(&self, y: &[f64], p0: &[f64]) -> JetVector {
        let coeffs = (0..self.set.len()).map(|i| y[i] * self.radii[self.set.degree(i) as usize]).collect();
        JetVector { set: self.set.clone(), coeffs, basepoint: p0.to_vec() }
    }
}

/// Default first jet scale and growth factor.
pub const JET_RADIUS_START: f64 = 8.0;
pub const JET_RADIUS_FACTOR: f64 = 8.0;

/// Builds the system acting on `s`-jets of fiber points of a scalar system,
/// with state box `X × Π[-R_k, R_k]` rescaled to the unit cube. `R_k` is
/// doubled from the lowest escaping degree upward until the sampled images
/// fit.
pub fn induced_jet_system(sys: &FiberSystem, s: usize) -> Result<InducedJetSystem> {
    if sys.fiber_dim() != 1 {
        return Err(LabError::Contract(format!("jet systems need a scalar fiber, got N = {}", sys.fiber_dim())));
    }
    let d = sys.param_dim();
    let set = JetIndexSet::new(d, s);
    let mut radii: Vec<f64> = (0..=s).map(|k| if k == 0 { 1.0 } else { JET_RADIUS_START * JET_RADIUS_FACTOR.powi(k as i32 - 1) }).collect();
    let probe = InducedJetMaps { base: sys.maps().clone(), set: set.clone(), radii: radii.clone() };
    let p0 = sys.param_box().center();
    if probe.try_eval(&p0, &vec![0; sys.address_depth()], &vec![0.0; set.len()]).is_none() {
        return Err(LabError::Capability("base fiber maps do not support Taylor evaluation".into()));
    }

    let spec = SampleSpec::default();
    let w = 1.0 + sys.domain_margin();
    let base_samples = sys.samples(&spec);
    for _attempt in 0..40 {
        let maps = InducedJetMaps { base: sys.maps().clone(), set: set.clone(), radii: radii.clone() };
        let mut worst = vec![0.0f64; s + 1];
        for (i, (p, a, x)) in base_samples.iter().enumerate() {
            // corners of the jet box plus the sampled base point
            let mut y: Vec<f64> = (0..set.len()).map(|k| if (i >> (k % 16)) & 1 == 1 { w } else { -w }).collect();
            y[0] = x[0];
            if let Some(out) = maps.try_eval(p, a, &y) {
                for (k, v) in out.iter().enumerate() {
                    let deg = set.degree(k) as usize;
                    worst[deg] = worst[deg].max(v.abs());
                }
            }
        }
        match (1..=s).find(|&k| worst[k] >= 1.0) {
            Some(k) => radii.iter_mut().skip(k).for_each(|r| *r *= 2.0),
            None => break,
        }
    }
    let maps = InducedJetMaps { base: sys.maps().clone(), set: set.clone(), radii: radii.clone() };
    let system = FiberSystem::new(
        format!("jets(s={s}) of {}", sys.name()),
        Arc::new(maps),
        sys.alphabet(),
        sys.param_box().clone(),
        sys.address_depth(),
        sys.domain_margin(),
    )?
    .with_lambda_grid(sys.lambda_grid());
    if !system.unipotency().holds() {
        return Err(LabError::Contract(format!(
            "induced jet system fails (U): {:?}",
            system.unipotency()
        )));
    }
    Ok(InducedJetSystem { system, set, radii })
}

/// Samples coded jet vectors; the measure's atoms are scaled states.
pub fn jet_set_sampler(
    induced: &InducedJetSystem,
    gibbs: &GibbsApprox,
    p0: &[f64],
    n_atoms: usize,
    seed: u64,
    coding_depth: usize,
) -> Result<EmpiricalMeasure> {
    if !induced.system.unipotency().holds() {
        return Err(LabError::Contract("induced system is not (U)-certified".into()));
    }
    pushforward(&induced.system, p0, &[], gibbs, n_atoms, seed, coding_depth)
}
