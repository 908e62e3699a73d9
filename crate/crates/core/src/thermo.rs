//! Pressure, similarity dimension and Gibbs cylinder weights.
//!
//! Every depth-`n` computation starts from a table of `log Λ_{p,𝔞,α}` over
//! all words of length `n`, indexed by [`word_index`]. Sums over the table
//! run in index order with compensated summation, so results do not depend
//! on the thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::symbolic::{word_at, word_index, Alphabet, Letter, DEFAULT_ENUMERATION_CAP};
use crate::system::CodedSystem;

/// `log Λ_α` for every word of one length.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTable {
    pub alphabet: Alphabet,
    pub depth: usize,
    pub log_lambda: Vec<f64>,
}

impl LambdaTable {
    pub fn build(sys: &dyn CodedSystem, p: &[f64], fiber: &[Letter], depth: usize) -> Result<Self> {
        let alphabet = sys.alphabet();
        let count = alphabet.check_cap(depth, DEFAULT_ENUMERATION_CAP)?;
        let log_lambda = (0..count)
            .into_par_iter()
            .map(|i| {
                let w = word_at(alphabet, depth, i);
                let l = sys.contraction_rate(p, fiber, &w)?;
                if !(l > 0.0 && l.is_finite()) {
                    return Err(LabError::Numeric(format!("contraction rate {l} for word {w:?}")));
                }
                Ok(l.ln())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(LambdaTable { alphabet, depth, log_lambda })
    }

    /// `log Z_n(s) = log Σ_α Λ_α^s`.
    pub fn log_partition(&self, s: f64) -> f64 {
        let m = self.log_lambda.iter().map(|l| s * l).fold(f64::NEG_INFINITY, f64::max);
        let sum = neumaier(self.log_lambda.iter().map(|l| (s * l - m).exp()));
        m + sum.ln()
    }

    /// `Π̂_n(s) = (1/n)·log Z_n(s)`.
    pub fn pressure(&self, s: f64) -> f64 {
        let n = self.depth.max(1) as f64;
        self.log_partition(s) / n
    }
}

/// Compensated summation in iteration order.
pub fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `Z_n(s) = Σ_{|α| = n} Λ_{p,𝔞,α}^s`.
pub fn partition_sum(sys: &dyn CodedSystem, p: &[f64], fiber: &[Letter], s: f64, n: usize) -> Result<f64> {
    Ok(LambdaTable::build(sys, p, fiber, n)?.log_partition(s).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureCurve {
    pub s_grid: Vec<f64>,
    pub depths: Vec<usize>,
    /// `values[i][j] = Π̂_{depths[i]}(s_grid[j])`
    pub values: Vec<Vec<f64>>,
    /// Minimum over depths, an upper bound for the limit by subadditivity.
    pub extrapolated: Vec<f64>,
    /// `|Π̂| difference between the two largest depths, per `s`.
    pub depth_spread: Vec<f64>,
}

impl PressureCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s");
        for d in &self.depths {
            out.push_str(&format!(",depth_{d}"));
        }
        out.push_str(",extrapolated,depth_spread\n");
        for (j, s) in self.s_grid.iter().enumerate() {
            out.push_str(&fmt17(*s));
            for row in &self.values {
                out.push(',');
                out.push_str(&fmt17(row[j]));
            }
            out.push_str(&format!(",{},{}\n", fmt17(self.extrapolated[j]), fmt17(self.depth_spread[j])));
        }
        out
    }
}

/// Seventeen significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn pressure_curve(sys: &dyn CodedSystem, p: &[f64], fiber: &[Letter], s_grid: &[f64], depths: &[usize]) -> Result<PressureCurve> {
    if depths.is_empty() || depths.windows(2).any(|w| w[0] >= w[1]) || depths[0] == 0 {
        return Err(LabError::Config(format!("depths must be nonempty, positive and increasing: {depths:?}")));
    }
    let tables = depths
        .iter()
        .map(|&n| LambdaTable::build(sys, p, fiber, n))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<Vec<f64>> = tables.iter().map(|t| s_grid.iter().map(|&s| t.pressure(s)).collect()).collect();
    let extrapolated = (0..s_grid.len()).map(|j| values.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min)).collect();
    let depth_spread = (0..s_grid.len())
        .map(|j| if values.len() < 2 { 0.0 } else { (values[values.len() - 1][j] - values[values.len() - 2][j]).abs() })
        .collect();
    Ok(PressureCurve { s_grid: s_grid.to_vec(), depths: depths.to_vec(), values, extrapolated, depth_spread })
}

/// Default bisection tolerance for `Δ(p)`.
pub const DIMENSION_TOL: f64 = 1e-9;

/// Pressure tables for the depths used by `Δ` estimates.
pub struct PressureModel {
    tables: Vec<LambdaTable>,
    gamma_hi: f64,
}

impl PressureModel {
    pub fn new(sys: &dyn CodedSystem, p: &[f64], fiber: &[Letter], depths: &[usize]) -> Result<Self> {
        if depths.is_empty() {
            return Err(LabError::Config("at least one depth is needed".into()));
        }
        let tables = depths.iter().map(|&n| LambdaTable::build(sys, p, fiber, n)).collect::<Result<Vec<_>>>()?;
        Ok(PressureModel { tables, gamma_hi: sys.gamma_bounds().1 })
    }

    pub fn extrapolated(&self, s: f64) -> f64 {
        self.tables.iter().map(|t| t.pressure(s)).fold(f64::INFINITY, f64::min)
    }

    /// Unique zero of the extrapolated pressure, by bisection on
    /// `[0, log k / -log γ + 1]`.
    pub fn root(&self, tol: f64) -> Result<f64> {
        let k = self.tables[0].alphabet.size() as f64;
        let mut lo = 0.0;
        let mut hi = k.ln() / -self.gamma_hi.ln() + 1.0;
        let (f_lo, f_hi) = (self.extrapolated(lo), self.extrapolated(hi));
        if !(f_lo > 0.0 && f_hi < 0.0) {
            return Err(LabError::Numeric(format!("pressure does not change sign on [0, {hi}]: {f_lo}, {f_hi}")));
        }
        let tol = tol.max(1e-15) * 1e-3;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.extrapolated(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Depths used for `Δ` when the caller does not choose: one level is exact
/// for affine families.
pub fn default_dimension_depths(sys: &dyn CodedSystem, affine: bool) -> Vec<usize> {
    if affine {
        return vec![1];
    }
    let k = sys.alphabet().size() as f64;
    let depths: Vec<usize> = [4usize, 6, 8].into_iter().filter(|&n| k.powi(n as i32) <= 1e6).collect();
    if depths.is_empty() {
        vec![2]
    } else {
        depths
    }
}

/// `Δ(p)`: the zero of the pressure.
pub fn similarity_dimension(sys: &dyn CodedSystem, p: &[f64], fiber: &[Letter], depths: &[usize], tol: f64) -> Result<f64> {
    PressureModel::new(sys, p, fiber, depths)?.root(tol)
}

/// Per-level normalized weights `Λ^Δ / Z_n(Δ)` on words of one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsApprox {
    pub alphabet_size: usize,
    pub depth: usize,
    pub weights: Vec<f64>,
    pub exponent: f64,
    pub base_fiber: Vec<Letter>,
    pub log_normalizer: f64,
    cdf: Vec<f64>,
}

impl GibbsApprox {
    pub fn from_table(table: &LambdaTable, exponent: f64, base_fiber: &[Letter]) -> Self {
        let count = table.log_lambda.len();
        let first = table.log_lambda.first().copied().unwrap_or(0.0);
        let uniform = table.log_lambda.iter().all(|&l| l == first);
        let log_z = table.log_partition(exponent);
        let weights: Vec<f64> = if uniform {
            vec![1.0 / count as f64; count]
        } else {
            table.log_lambda.iter().map(|l| (exponent * l - log_z).exp()).collect()
        };
        let mut cdf = Vec::with_capacity(count);
        let mut acc = 0.0;
        let mut comp = 0.0;
        for w in &weights {
            let t = acc + w;
            comp += if acc.abs() >= w.abs() { (acc - t) + w } else { (w - t) + acc };
            acc = t;
            cdf.push(acc + comp);
        }
        GibbsApprox {
            alphabet_size: table.alphabet.size(),
            depth: table.depth,
            weights,
            exponent,
            base_fiber: base_fiber.to_vec(),
            log_normalizer: log_z,
            cdf,
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet::new(self.alphabet_size).expect("validated at construction")
    }

    pub fn weight(&self, word: &[Letter]) -> f64 {
        self.weights[word_index(self.alphabet(), word)]
    }

    pub fn total(&self) -> f64 {
        neumaier(self.weights.iter().copied())
    }

    /// Draws a word with the stored probabilities.
    pub fn sample_word(&self, rng: &mut impl Rng) -> Vec<Letter> {
        let total = *self.cdf.last().unwrap_or(&1.0);
        let u = rng.random::<f64>() * total;
        let i = self.cdf.partition_point(|&c| c <= u).min(self.weights.len() - 1);
        word_at(self.alphabet(), self.depth, i)
    }
}

/// Weights at depth `n` with the exponent `Δ(p0)` supplied or computed.
pub fn gibbs_weights(sys: &dyn CodedSystem, p0: &[f64], fiber: &[Letter], depth: usize, exponent: f64) -> Result<GibbsApprox> {
    let table = LambdaTable::build(sys, p0, fiber, depth)?;
    Ok(GibbsApprox::from_table(&table, exponent, fiber))
}

/// Quasi-multiplicativity at depth `2m`:
/// `C = sup max(r, 1/r)` with `r = w_{2m}(ρρ') / (w_m(ρ)·w_m(ρ'))`.
pub fn quasi_multiplicativity(full: &GibbsApprox, half: &GibbsApprox) -> Result<f64> {
    if full.depth != 2 * half.depth || full.alphabet_size != half.alphabet_size {
        return Err(LabError::Contract("quasi-multiplicativity needs depths 2m and m on one alphabet".into()));
    }
    let k = half.weights.len();
    let mut c = 1.0f64;
    for i in 0..k {
        for j in 0..k {
            // word_at is big-endian in the stored order, so ρρ' has index i·k^m + j
            let r = full.weights[i * k + j] / (half.weights[i] * half.weights[j]);
            c = c.max(r).max(1.0 / r);
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine_ifs::{build_interval_example, AffineBranch, AffineIfsFamily};
    use crate::expr::Expr;
    use crate::param::ParamBox;
    use crate::rng::SeedSplitter;
    use crate::skewprod::{build_planar_blender, BlenderSpec, ExprMaps, FiberSystem};

    pub(crate) fn uniform(k: usize, c: f64) -> AffineIfsFamily {
        let branches = (0..k)
            .map(|a| {
                let t = if k == 1 { 0.0 } else { a as f64 / (k - 1) as f64 };
                AffineBranch::constant(c, (1.0 - c) * 0.9 * (2.0 * t - 1.0))
            })
            .collect();
        AffineIfsFamily::new(branches, ParamBox::interval(0.0, 1.0).unwrap(), None).unwrap()
    }

    fn nonlinear() -> FiberSystem {
        let b = vec![
            vec![Expr::parse("0.35*x + 0.06*sin(2*x) - 0.5").unwrap()],
            vec![Expr::parse("0.3*x + 0.05*x^2 + 0.4").unwrap()],
            vec![Expr::parse("0.25*x + 0.04*cos(x) + 0.1").unwrap()],
        ];
        FiberSystem::from_exprs("nl3", ExprMaps::new(b).unwrap(), ParamBox::interval(0.0, 1.0).unwrap(), 0.05).unwrap()
    }

    #[test]
    fn partition_sum_examples() {
        let fam = uniform(3, 0.5);
        assert!((partition_sum(&fam, &[0.5], &[], 1.0, 2).unwrap() - 2.25).abs() < 1e-14);
        let sys = nonlinear();
        assert!((partition_sum(&sys, &[0.5], &[], 0.0, 4).unwrap() - 81.0).abs() < 1e-10);
        let ex = build_interval_example(4, 0.21).unwrap();
        let delta = 5f64.ln() / -(0.21f64).ln();
        assert!((partition_sum(&ex, &[0.5], &[], delta, 1).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_pressure_is_a_line() {
        let fam = uniform(3, 0.5);
        let pc = pressure_curve(&fam, &[0.5], &[], &[0.0, 0.5, 1.0], &[1, 2, 3]).unwrap();
        for row in &pc.values {
            assert!((row[0] - 3f64.ln()).abs() < 1e-14);
            assert!((row[2] - 1.5f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn pressure_properties_on_a_nonlinear_system() {
        let sys = nonlinear();
        let s_grid: Vec<f64> = (0..21).map(|i| i as f64 * 0.1).collect();
        let pc = pressure_curve(&sys, &[0.5], &[], &s_grid, &[2, 4, 6]).unwrap();
        let log_g = sys.gamma_bounds().1.ln();
        for row in &pc.values {
            assert!((row[0] - 3f64.ln()).abs() < 1e-12);
            for j in 1..row.len() {
                assert!(row[j] - row[j - 1] < -0.1 * log_g.abs() * 0.5);
                assert!(row[j] <= row[j - 1] + 0.1 * log_g + 1e-12);
            }
            for j in 1..row.len() - 1 {
                assert!(row[j + 1] - 2.0 * row[j] + row[j - 1] >= -1e-9);
            }
        }
        let spread_half = (pc.values[1][10] - pc.values[0][10]).abs();
        assert!(pc.depth_spread[10] <= spread_half);
        let delta = similarity_dimension(&sys, &[0.5], &[], &[2, 4, 6], 1e-9).unwrap();
        let model = PressureModel::new(&sys, &[0.5], &[], &[2, 4, 6]).unwrap();
        assert!(model.extrapolated(delta - 1e-9) > 0.0 && model.extrapolated(delta + 1e-9) < 0.0);
    }

    #[test]
    fn dimension_examples() {
        let d = similarity_dimension(&uniform(2, 0.5), &[0.5], &[], &[1], 1e-9).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        let ex = build_interval_example(4, 0.21).unwrap();
        let d = similarity_dimension(&ex, &[0.5], &[], &[1], 1e-9).unwrap();
        assert!((d - 5f64.ln() / -(0.21f64).ln()).abs() < 1e-9);
        let b = build_planar_blender(2, 1, 0, &BlenderSpec::default()).unwrap();
        let d = similarity_dimension(&b.fiber, &[0.0], &[], &[1, 2], 1e-9).unwrap();
        assert!((d - 3f64.ln() / 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn dimension_is_continuous_in_p() {
        let b = vec![
            vec![Expr::parse("(0.3 + 0.1*p)*x - 0.5").unwrap()],
            vec![Expr::parse("0.3*x + 0.05*sin(x + p) + 0.4").unwrap()],
        ];
        let sys = FiberSystem::from_exprs("pdep", ExprMaps::new(b).unwrap(), ParamBox::interval(0.0, 1.0).unwrap(), 0.05).unwrap();
        let mut prev = None;
        for i in 0..=10 {
            let p = i as f64 * 0.1;
            let d = similarity_dimension(&sys, &[p], &[], &[4, 6], 1e-9).unwrap();
            if let Some(q) = prev {
                assert!((d - q as f64).abs() <= 0.1);
            }
            prev = Some(d);
        }
    }

    #[test]
    fn gibbs_weights_normalize() {
        let fam = uniform(3, 0.4);
        let g = gibbs_weights(&fam, &[0.5], &[], 4, 3f64.ln() / -(0.4f64).ln()).unwrap();
        assert!(g.weights.iter().all(|&w| w == 1.0 / 81.0));
        let sys = nonlinear();
        let delta = similarity_dimension(&sys, &[0.5], &[], &[4], 1e-9).unwrap();
        let g = gibbs_weights(&sys, &[0.5], &[], 6, delta).unwrap();
        assert!((g.total() - 1.0).abs() < 1e-12);
        let ex = build_interval_example(4, 0.21).unwrap();
        let g = gibbs_weights(&ex, &[0.5], &[], 3, 1.0).unwrap();
        assert!(g.weights.iter().all(|&w| w == 1.0 / 125.0));
    }

    #[test]
    fn sampling_matches_weights() {
        let sys = nonlinear();
        let g = gibbs_weights(&sys, &[0.5], &[], 2, 0.9).unwrap();
        let mut rng = SeedSplitter::new(11).stream(1);
        let draws = 1_000_000;
        let mut counts = vec![0usize; g.weights.len()];
        for _ in 0..draws {
            let w = g.sample_word(&mut rng);
            counts[word_index(g.alphabet(), &w)] += 1;
        }
        for (c, w) in counts.iter().zip(&g.weights) {
            let sigma = (draws as f64 * w * (1.0 - w)).sqrt();
            assert!((*c as f64 - draws as f64 * w).abs() <= 4.0 * sigma);
        }
        let mut a = SeedSplitter::new(5).stream(1);
        let mut b = SeedSplitter::new(5).stream(1);
        assert_eq!(g.sample_word(&mut a), g.sample_word(&mut b));
    }

    #[test]
    fn quasi_multiplicativity_is_one_for_uniform_systems() {
        let fam = uniform(2, 0.3);
        let e = 2f64.ln() / -(0.3f64).ln();
        let c = quasi_multiplicativity(
            &gibbs_weights(&fam, &[0.5], &[], 4, e).unwrap(),
            &gibbs_weights(&fam, &[0.5], &[], 2, e).unwrap(),
        )
        .unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }
}
