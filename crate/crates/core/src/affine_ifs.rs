//! Parameterized families of affine contractions of `X = [-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::Expr;
use crate::param::ParamBox;
use crate::symbolic::{Alphabet, BackwardSeq, Letter};
use crate::system::{CodedPoint, CodedSystem};

/// Default truncation depth for coding in double precision.
pub const DEFAULT_CODING_DEPTH: usize = 60;

/// `x ↦ slope·x + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineContraction {
    pub slope: f64,
    pub offset: f64,
}

impl AffineContraction {
    pub const IDENTITY: AffineContraction = AffineContraction { slope: 1.0, offset: 0.0 };

    /// Checked constructor: `0 < |slope| < 1` and `[-1,1]` maps strictly
    /// inside `(-1,1)`.
    pub fn new(slope: f64, offset: f64) -> Result<Self> {
        let m = AffineContraction { slope, offset };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.slope.abs();
        if !(a > 0.0 && a < 1.0) {
            return Err(LabError::Invariant(format!("slope {} is not a contraction", self.slope)));
        }
        if a + self.offset.abs() >= 1.0 {
            return Err(LabError::Invariant(format!(
                "map {}x + {} does not send [-1,1] strictly inside",
                self.slope, self.offset
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.offset
    }

    /// `self ∘ inner`
    pub fn after(&self, inner: &AffineContraction) -> AffineContraction {
        AffineContraction { slope: self.slope * inner.slope, offset: self.slope * inner.offset + self.offset }
    }

    /// Conjugates a map written on the `[0,1]` chart to the `[-1,1]` chart.
    pub fn from_unit_chart(slope: f64, offset: f64) -> AffineContraction {
        AffineContraction { slope, offset: slope + 2.0 * offset - 1.0 }
    }

    /// The same map written on the `[0,1]` chart, as `(slope, offset)`.
    pub fn to_unit_chart(&self) -> (f64, f64) {
        (self.slope, 0.5 * (self.offset + 1.0 - self.slope))
    }
}

/// Slope and offset of one letter as expressions in the parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineBranch {
    pub slope: Expr,
    pub offset: Expr,
}

impl AffineBranch {
    pub fn constant(slope: f64, offset: f64) -> Self {
        AffineBranch { slope: Expr::Const(slope), offset: Expr::Const(offset) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineIfsFamily {
    alphabet: Alphabet,
    branches: Vec<AffineBranch>,
    param_box: ParamBox,
    gamma: (f64, f64),
}

impl AffineIfsFamily {
    /// Builds a family and checks, on a sample of the parameter box, that
    /// every branch is a contraction into the interior of `X`. When
    /// `gamma` is `None` the bounds are estimated from the same sample and
    /// widened slightly.
    pub fn new(branches: Vec<AffineBranch>, param_box: ParamBox, gamma: Option<(f64, f64)>) -> Result<Self> {
        let alphabet = Alphabet::new(branches.len())?;
        for (a, b) in branches.iter().enumerate() {
            for e in [&b.slope, &b.offset] {
                if e.var_arity() > 0 || e.letter_arity() > 0 {
                    return Err(LabError::Config(format!(
                        "branch {a}: affine coefficients may only depend on the parameter"
                    )));
                }
                if e.param_arity() > param_box.dim() {
                    return Err(LabError::Config(format!(
                        "branch {a} uses parameter components beyond the box dimension {}",
                        param_box.dim()
                    )));
                }
            }
        }
        let mut fam = AffineIfsFamily { alphabet, branches, param_box, gamma: (0.0, 1.0) };
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for p in fam.sample_params() {
            for a in 0..fam.branches.len() {
                let m = fam.raw_map(&p, a as Letter);
                m.validate()?;
                lo = lo.min(m.slope.abs());
                hi = hi.max(m.slope.abs());
            }
        }
        fam.gamma = match gamma {
            Some((g_lo, g_hi)) => {
                if !(0.0 < g_lo && g_lo < g_hi && g_hi < 1.0) {
                    return Err(LabError::Invariant(format!("bad gamma bounds ({g_lo}, {g_hi})")));
                }
                if !(g_lo < lo && hi < g_hi) {
                    return Err(LabError::Invariant(format!(
                        "sampled slopes [{lo}, {hi}] not strictly inside gamma bounds ({g_lo}, {g_hi})"
                    )));
                }
                (g_lo, g_hi)
            }
            None => (lo * (1.0 - 1e-9), (hi * (1.0 + 1e-9)).min(0.5 * (1.0 + hi))),
        };
        Ok(fam)
    }

    /// Corners, centre and a coarse grid of the closed box.
    fn sample_params(&self) -> Vec<Vec<f64>> {
        let d = self.param_box.dim();
        let per_axis: usize = if d == 1 { 17 } else if d == 2 { 9 } else { 3 };
        let total = per_axis.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let u: Vec<f64> = (0..d)
                    .map(|_| {
                        let i = idx % per_axis;
                        idx /= per_axis;
                        i as f64 / (per_axis - 1) as f64
                    })
                    .collect();
                self.param_box.from_unit(&u)
            })
            .collect()
    }

    pub fn branches(&self) -> &[AffineBranch] {
        &self.branches
    }

    fn raw_map(&self, p: &[f64], a: Letter) -> AffineContraction {
        let b = &self.branches[a as usize];
        AffineContraction { slope: b.slope.eval(p, &[], &[]), offset: b.offset.eval(p, &[], &[]) }
    }

    /// `ψ_p^a`, defined for `p` in the extended box.
    pub fn map_at(&self, p: &[f64], a: Letter) -> Result<AffineContraction> {
        self.param_box.check_extended(p)?;
        if a as usize >= self.branches.len() {
            return Err(LabError::Range(format!("letter {a} outside alphabet")));
        }
        let m = self.raw_map(p, a);
        m.validate()?;
        Ok(m)
    }

    /// All branches at `p`.
    pub fn instantiate(&self, p: &[f64]) -> Result<Vec<AffineContraction>> {
        (0..self.branches.len()).map(|a| self.map_at(p, a as Letter)).collect()
    }

    /// `ψ_p^α = ψ^{α_{-1}} ∘ .. ∘ ψ^{α_{-n}}`; the empty word gives the identity.
    pub fn compose(&self, p: &[f64], alpha: &[Letter]) -> Result<AffineContraction> {
        let maps = self.instantiate(p)?;
        Ok(compose_with(&maps, alpha))
    }

    /// `π_p(α)` truncated at `depth`, with the bound `2·γ^depth`.
    pub fn code_point(&self, p: &[f64], alpha: &BackwardSeq, depth: usize) -> Result<CodedPoint> {
        let maps = self.instantiate(p)?;
        let value = compose_with(&maps, &alpha.prefix(depth)).offset;
        Ok(CodedPoint { value: vec![value], error_bound: 2.0 * self.gamma.1.powi(depth as i32), depth })
    }
}

/// Composition using pre-instantiated branches.
pub fn compose_with(maps: &[AffineContraction], alpha: &[Letter]) -> AffineContraction {
    alpha.iter().fold(AffineContraction::IDENTITY, |acc, &a| maps[a as usize].after(&acc))
}

/// `ψ^α(0)` using pre-instantiated branches.
pub fn code_with(maps: &[AffineContraction], alpha: &[Letter]) -> f64 {
    alpha.iter().fold(0.0, |x, &a| maps[a as usize].apply(x))
}

impl CodedSystem for AffineIfsFamily {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn fiber_dim(&self) -> usize {
        1
    }

    fn param_box(&self) -> &ParamBox {
        &self.param_box
    }

    fn address_depth(&self) -> usize {
        1
    }

    fn gamma_bounds(&self) -> (f64, f64) {
        self.gamma
    }

    fn step(&self, p: &[f64], address: &[Letter], x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.map_at(p, address[0])?.apply(x[0]);
        Ok(())
    }

    fn affine_letter_map(&self, p: &[f64], letter: Letter) -> Option<(f64, f64)> {
        self.map_at(p, letter).ok().map(|m| (m.slope, m.offset))
    }

    fn contraction_rate(&self, p: &[f64], _fiber: &[Letter], word: &[Letter]) -> Result<f64> {
        Ok(self.compose(p, word)?.slope.abs())
    }

    fn code(&self, p: &[f64], _fiber: &[Letter], word: &[Letter]) -> Result<Vec<f64>> {
        let maps = self.instantiate(p)?;
        Ok(vec![code_with(&maps, word)])
    }
}

/// The interval example: letters `0..=n`, slopes `c`, letters `a < n`
/// translated by `½(1/n - c) + a/n` and letter `n` by the parameter, on the
/// `[0,1]` chart; returned on the `[-1,1]` chart over the box `[1/n, 1-1/n]`.
pub fn build_interval_example(n: usize, c: f64) -> Result<AffineIfsFamily> {
    if n < 2 {
        return Err(LabError::Invariant(format!("example needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    if !(c > 0.0 && c < 1.0 / nf) {
        return Err(LabError::Invariant(format!("example needs 0 < c < 1/n, got c = {c}, n = {n}")));
    }
    let mut branches = Vec::with_capacity(n + 1);
    for a in 0..n {
        let b = 0.5 * (1.0 / nf - c) + a as f64 / nf;
        let m = AffineContraction::from_unit_chart(c, b);
        branches.push(AffineBranch::constant(m.slope, m.offset));
    }
    // unit-chart offset p becomes c + 2p - 1
    branches.push(AffineBranch {
        slope: Expr::Const(c),
        offset: Expr::add(Expr::mul(Expr::Const(2.0), Expr::Param(0)), Expr::Const(c - 1.0)),
    });
    let pbox = ParamBox::interval(1.0 / nf, 1.0 - 1.0 / nf)?;
    AffineIfsFamily::new(branches, pbox, Some((c * (1.0 - 1e-9), c * (1.0 + 1e-9))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::{enumerate_words, Orientation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_family(slopes: &[(f64, f64)]) -> AffineIfsFamily {
        let branches = slopes.iter().map(|&(s, b)| AffineBranch::constant(s, b)).collect();
        AffineIfsFamily::new(branches, ParamBox::interval(0.0, 1.0).unwrap(), None).unwrap()
    }

    #[test]
    fn contraction_invariants() {
        assert!(AffineContraction::new(0.5, 0.4).is_ok());
        assert!(AffineContraction::new(0.5, 0.5).is_err());
        assert!(AffineContraction::new(1.0, 0.0).is_err());
        assert!(AffineContraction::new(0.0, 0.0).is_err());
    }

    #[test]
    fn compose_examples() {
        let fam = uniform_family(&[(0.5, 0.1), (0.3, -0.2)]);
        assert_eq!(fam.compose(&[0.5], &[]).unwrap(), AffineContraction::IDENTITY);
        assert!((fam.compose(&[0.5], &[0, 1]).unwrap().slope.abs() - 0.15).abs() < 1e-16);
        let ex = build_interval_example(4, 0.21).unwrap();
        let m = ex.compose(&[0.5], &[4, 0, 2]).unwrap();
        assert!((m.slope.abs() - 0.009261).abs() < 1e-15);
    }

    #[test]
    fn compose_order_is_innermost_first() {
        let fam = uniform_family(&[(0.5, 0.1), (0.3, -0.2)]);
        let m = fam.compose(&[0.0], &[0, 1]).unwrap();
        // ψ^{α_{-1}}(ψ^{α_{-2}}(x)) with α_{-2} = 0, α_{-1} = 1
        let x = 0.37;
        let direct = 0.3 * (0.5 * x + 0.1) - 0.2;
        assert!((m.apply(x) - direct).abs() < 1e-15);
    }

    #[test]
    fn out_of_box_parameter_is_a_domain_error() {
        let ex = build_interval_example(4, 0.21).unwrap();
        assert!(matches!(ex.compose(&[0.9], &[4]), Err(LabError::Domain { .. })));
    }

    #[test]
    fn code_point_examples() {
        let fam = uniform_family(&[(0.5, 0.25), (0.5, -0.25)]);
        let pt = fam.code_point(&[0.5], &BackwardSeq::constant(0), 50).unwrap();
        assert!((pt.value[0] - 0.5).abs() < 1e-10);
        assert!(pt.error_bound <= 2.0 * fam.gamma_bounds().1.powi(50));
        let fam = uniform_family(&[(0.4, 0.0), (0.4, 0.5)]);
        for depth in [0, 1, 7, 60] {
            assert_eq!(fam.code_point(&[0.5], &BackwardSeq::constant(0), depth).unwrap().value[0], 0.0);
        }
        let ex = build_interval_example(4, 0.21).unwrap();
        let alt = BackwardSeq::periodic(vec![0, 1]);
        let shallow = ex.code_point(&[0.5], &alt, 40).unwrap();
        let deep = ex.code_point(&[0.5], &alt, 80).unwrap();
        assert!((shallow.value[0] - deep.value[0]).abs() <= 2.0 * 0.21f64.powi(40));
    }

    #[test]
    fn interval_example_builder_matches_unit_chart_formulas() {
        let ex = build_interval_example(4, 0.21).unwrap();
        assert_eq!(ex.alphabet().size(), 5);
        for m in ex.instantiate(&[0.5]).unwrap() {
            assert_eq!(m.slope, 0.21);
        }
        let ex = build_interval_example(2, 0.4).unwrap();
        let (s, b) = ex.map_at(&[0.5], 0).unwrap().to_unit_chart();
        assert_eq!(s, 0.4);
        assert!((b - 0.05).abs() < 1e-15);
        let (s, b) = ex.map_at(&[0.5], 2).unwrap().to_unit_chart();
        assert_eq!(s, 0.4);
        assert!((b - 0.5).abs() < 1e-15);
        assert!(matches!(build_interval_example(4, 0.25), Err(LabError::Invariant(_))));
        assert!(matches!(build_interval_example(1, 0.25), Err(LabError::Invariant(_))));
    }

    #[test]
    fn multiplicativity_is_exact_exhaustively() {
        let fam = uniform_family(&[(0.5, 0.1), (-0.3, -0.2), (0.7, 0.05)]);
        let a = fam.alphabet();
        let p = [0.3];
        for la in 0..=3 {
            for lb in 0..=3 {
                for x in enumerate_words(a, la, Orientation::Backward).unwrap() {
                    for y in enumerate_words(a, lb, Orientation::Backward).unwrap() {
                        let xy = x.concat(&y);
                        let lhs = fam.contraction_rate(&p, &[], xy.letters()).unwrap();
                        let rhs = fam.contraction_rate(&p, &[], x.letters()).unwrap()
                            * fam.contraction_rate(&p, &[], y.letters()).unwrap();
                        assert!((lhs - rhs).abs() <= 1e-15 * rhs);
                    }
                }
            }
        }
    }

    /// Single-letter distortion `Λ_{p1}^{1+ε/2} <= Λ_{p2}` carries over to
    /// every composition.
    #[test]
    fn parameter_distortion_extends_to_compositions() {
        let branches = vec![
            AffineBranch { slope: Expr::parse("0.3 + 0.05*p").unwrap(), offset: Expr::parse("-0.5").unwrap() },
            AffineBranch { slope: Expr::parse("0.35 - 0.04*p").unwrap(), offset: Expr::parse("0.5*p").unwrap() },
        ];
        let fam = AffineIfsFamily::new(branches, ParamBox::interval(-1.0, 1.0).unwrap(), None).unwrap();
        let eps = 0.2;
        // choose δ so that the single-letter inequality holds
        let delta = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let p1: f64 = rng.random_range(-1.0..1.0 - delta);
            let p2 = p1 + rng.random_range(0.0..delta);
            for a in 0..2u16 {
                let l1 = fam.contraction_rate(&[p1], &[], &[a]).unwrap();
                let l2 = fam.contraction_rate(&[p2], &[], &[a]).unwrap();
                assert!(l1.powf(1.0 + eps / 2.0) <= l2 && l2.powf(1.0 + eps / 2.0) <= l1);
            }
            let len = rng.random_range(1..=20);
            let w: Vec<Letter> = (0..len).map(|_| rng.random_range(0..2)).collect();
            let l1 = fam.contraction_rate(&[p1], &[], &w).unwrap();
            let l2 = fam.contraction_rate(&[p2], &[], &w).unwrap();
            assert!(l1.powf(1.0 + eps / 2.0) <= l2 * (1.0 + 1e-12));
        }
    }

    proptest! {
        #[test]
        fn coding_contracts_on_common_suffix(
            a in proptest::collection::vec(0u16..3, 30),
            b in proptest::collection::vec(0u16..3, 30),
            m in 0usize..12,
        ) {
            let fam = uniform_family(&[(0.45, -0.5), (-0.4, 0.1), (0.3, 0.6)]);
            let mut alpha = a.clone();
            let mut beta = b.clone();
            let n = alpha.len();
            for i in 0..m {
                beta[n - 1 - i] = alpha[n - 1 - i];
            }
            alpha.truncate(n);
            let x = fam.code(&[0.5], &[], &alpha).unwrap()[0];
            let y = fam.code(&[0.5], &[], &beta).unwrap()[0];
            let g = fam.gamma_bounds().1;
            prop_assert!((x - y).abs() <= 2.0 * g.powi(m as i32) * (1.0 + 1e-12));
        }
    }
}
