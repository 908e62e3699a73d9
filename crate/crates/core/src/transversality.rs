//! Empirical transversality: parameter measure of near collisions between
//! differently coded points, the stratified bound and the density integral.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine_ifs::AffineIfsFamily;
use crate::error::{LabError, Result};
use crate::measure_lab::{draw_mu_word, unit_ball_volume, ParamSampler};
use crate::rng::{SeedSplitter, STREAM_DENSITY, STREAM_PAIRS};
use crate::symbolic::{pair_stratum, word_at, FiniteWord, Letter};
use crate::system::CodedSystem;
use crate::thermo::{fmt17, similarity_dimension, GibbsApprox, DIMENSION_TOL};

/// Restriction on the last letters of sampled pairs, beyond `α₋₁ ≠ β₋₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairConstraint {
    Distinct,
    /// `α₋₁ = letter`, `β₋₁ ≠ letter`.
    AlphaEnds { letter: Letter },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub count: usize,
    pub constraint: PairConstraint,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedPair {
    pub alpha: Vec<Letter>,
    pub beta: Vec<Letter>,
    pub fiber: Vec<Letter>,
}

/// Depth at which both truncations of a pair are within `tol / 10` in total.
pub fn coding_depth_for(sys: &dyn CodedSystem, tol: f64) -> usize {
    let gamma = sys.gamma_bounds().1;
    let n = ((tol / 40.0).ln() / gamma.ln()).ceil();
    (n.max(1.0)) as usize
}

/// Truncation error of a pair difference at `depth`.
pub fn pair_truncation_error(sys: &dyn CodedSystem, depth: usize) -> f64 {
    4.0 * sys.gamma_bounds().1.powi(depth as i32)
}

pub fn sample_pairs(sys: &dyn CodedSystem, spec: &PairSpec, depth: usize) -> Result<Vec<CodedPair>> {
    let k = sys.alphabet().size();
    if depth == 0 {
        return Err(LabError::Contract("pairs need a positive coding depth".into()));
    }
    if let PairConstraint::AlphaEnds { letter } = spec.constraint {
        if letter as usize >= k {
            return Err(LabError::Config(format!("letter {letter} is outside the alphabet of size {k}")));
        }
    }
    let mut rng = SeedSplitter::new(spec.seed).stream(STREAM_PAIRS);
    let fiber_len = sys.address_depth().saturating_sub(1);
    let word = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Letter> {
        (0..depth).map(|_| rng.random_range(0..k) as Letter).collect()
    };
    let mut pairs = Vec::with_capacity(spec.count);
    while pairs.len() < spec.count {
        let mut alpha = word(&mut rng);
        let mut beta = word(&mut rng);
        let last = depth - 1;
        match spec.constraint {
            PairConstraint::Distinct => {
                if alpha[last] == beta[last] {
                    continue;
                }
            }
            PairConstraint::AlphaEnds { letter } => {
                alpha[last] = letter;
                if beta[last] == letter {
                    beta[last] = ((letter as usize + rng.random_range(1..k)) % k) as Letter;
                }
            }
        }
        let fiber = (0..fiber_len).map(|_| rng.random_range(0..k) as Letter).collect();
        pairs.push(CodedPair { alpha, beta, fiber });
    }
    Ok(pairs)
}

fn distance(sys: &dyn CodedSystem, p: &[f64], pair: &CodedPair) -> Result<f64> {
    let a = sys.code(p, &pair.fiber, &pair.alpha)?;
    let b = sys.code(p, &pair.fiber, &pair.beta)?;
    Ok(a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityScan {
    pub radii: Vec<f64>,
    pub pairs: Vec<CodedPair>,
    /// `measure_estimates[pair][radius]`
    pub measure_estimates: Vec<Vec<f64>>,
    /// Sup over pairs of `estimate / r^N`, per radius.
    pub c_by_radius: Vec<f64>,
    pub c_hat: f64,
    pub sampler: ParamSampler,
    pub coding_depth: usize,
    /// A pair stays closer than the smallest radius on the whole box.
    pub persistent_collision: bool,
    pub plausible: bool,
}

impl TransversalityScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,radius,estimate,ratio\n");
        let n = self.c_by_radius.len();
        for (i, row) in self.measure_estimates.iter().enumerate() {
            for (j, est) in row.iter().enumerate().take(n) {
                let r = self.radii[j];
                out.push_str(&format!("{i},{},{},{}\n", fmt17(r), fmt17(*est), fmt17(est / r)));
            }
        }
        out
    }
}

/// Estimates `Leb{p : |π_p(α) − π_p(β)| < r}` for every pair and radius.
///
/// The verdict holds when the per-radius constants over the two smallest
/// decades differ by at most a factor 2.
pub fn scan_transversality(
    sys: &dyn CodedSystem,
    pairs_spec: &PairSpec,
    radii: &[f64],
    sampler: &ParamSampler,
) -> Result<TransversalityScan> {
    if radii.is_empty() || radii.iter().any(|&r| r <= 0.0) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::Config("radii must be positive and strictly decreasing".into()));
    }
    let r_min = *radii.last().unwrap();
    let depth = coding_depth_for(sys, r_min);
    if pair_truncation_error(sys, depth) > r_min / 10.0 {
        return Err(LabError::Precision(format!("coding depth {depth} cannot resolve radius {r_min:e}")));
    }
    let pairs = sample_pairs(sys, pairs_spec, depth)?;
    scan_pairs(sys, pairs, radii, sampler, depth)
}

/// [`scan_transversality`] on explicit pairs.
pub fn scan_pairs(
    sys: &dyn CodedSystem,
    pairs: Vec<CodedPair>,
    radii: &[f64],
    sampler: &ParamSampler,
    depth: usize,
) -> Result<TransversalityScan> {
    for pair in &pairs {
        if pair.alpha.len() != pair.beta.len() || pair.alpha.is_empty() {
            return Err(LabError::Contract("pair words must have equal positive length".into()));
        }
        if pair.alpha.last() == pair.beta.last() {
            return Err(LabError::Contract("pair words must differ in their last letter".into()));
        }
    }
    let pbox = sys.param_box();
    let volume = pbox.volume();
    let params = sampler.points(pbox, crate::rng::STREAM_PARAMS)?;
    let n_dim = sys.fiber_dim() as i32;
    let measure_estimates = pairs
        .par_iter()
        .map(|pair| {
            let mut dists = params.iter().map(|p| distance(sys, p, pair)).collect::<Result<Vec<_>>>()?;
            dists.sort_by(f64::total_cmp);
            Ok(radii
                .iter()
                .map(|&r| dists.partition_point(|&d| d < r) as f64 / params.len() as f64 * volume)
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let persistent_collision = measure_estimates.iter().any(|row| *row.last().unwrap() >= volume);
    let c_by_radius: Vec<f64> = (0..radii.len())
        .map(|j| measure_estimates.iter().map(|row| row[j] / radii[j].powi(n_dim)).fold(0.0, f64::max))
        .collect();
    let tail = &c_by_radius[radii.len().saturating_sub(3)..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
    let c_hat = if persistent_collision { f64::INFINITY } else { c_by_radius.iter().copied().fold(0.0, f64::max) };
    let plausible = !persistent_collision && (hi == 0.0 || (lo > 0.0 && hi / lo <= 2.0));
    Ok(TransversalityScan {
        radii: radii.to_vec(),
        pairs,
        measure_estimates,
        c_by_radius,
        c_hat,
        sampler: sampler.clone(),
        coding_depth: depth,
        persistent_collision,
        plausible,
    })
}

/// Exact identity for affine families: with a common suffix `ρ`,
/// `|π(α'ρ) − π(β'ρ)| = Λ_ρ |π(α') − π(β')|`. Returns both sides.
pub fn affine_scaling_identity(
    fam: &AffineIfsFamily,
    p: &[f64],
    rho: &[Letter],
    alpha: &[Letter],
    beta: &[Letter],
) -> Result<(f64, f64)> {
    let with_suffix = |w: &[Letter]| -> Vec<Letter> { w.iter().chain(rho).copied().collect() };
    let lhs = (fam.code(p, &[], &with_suffix(alpha))?[0] - fam.code(p, &[], &with_suffix(beta))?[0]).abs();
    let lambda = fam.compose(p, rho)?.slope.abs();
    let rhs = lambda * (fam.code(p, &[], alpha)?[0] - fam.code(p, &[], beta)?[0]).abs();
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub length: usize,
    pub strata: usize,
    pub pairs: usize,
    /// Sup of `estimate / (r^N Λ_{p₀,ρ}^{−N−ε'})` over strata, pairs and radii.
    pub sup_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedCheck {
    pub dimension: f64,
    pub exponent: f64,
    pub radii: Vec<f64>,
    pub rows: Vec<StratumRow>,
}

impl StratifiedCheck {
    pub fn sup(&self) -> f64 {
        self.rows.iter().map(|r| r.sup_ratio).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedSpec {
    pub strata_per_length: usize,
    pub pairs_per_stratum: usize,
    pub radii: Vec<f64>,
    pub seed: u64,
}

impl Default for StratifiedSpec {
    fn default() -> Self {
        StratifiedSpec { strata_per_length: 4, pairs_per_stratum: 8, radii: vec![1e-2, 1e-3], seed: 0 }
    }
}

/// Per stratum length `n ≤ n_max`, the measured collision mass inside the
/// ball `B(p₀, δ)` against the allowed bound `r^N Λ_{p₀,ρ}^{−N−ε'}`, with
/// `ε' = ε/2` for interval fibers and `2ε/3` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn stratified_bound_check(
    sys: &dyn CodedSystem,
    p0: &[f64],
    delta: f64,
    epsilon: f64,
    n_max: usize,
    sampler: &ParamSampler,
    spec: &StratifiedSpec,
) -> Result<StratifiedCheck> {
    let n_dim = sys.fiber_dim();
    let depths = crate::thermo::default_dimension_depths(sys, n_dim == 1 && sys.address_depth() == 1);
    let dimension = similarity_dimension(sys, p0, &[], &depths, DIMENSION_TOL)?;
    if dimension <= n_dim as f64 + epsilon {
        return Err(LabError::Contract(format!(
            "dimension {dimension:.6} does not exceed N + epsilon = {}",
            n_dim as f64 + epsilon
        )));
    }
    let ball = sys.param_box().ball(p0, delta)?;
    let params = sampler.points(&ball, crate::rng::STREAM_PARAMS)?;
    let volume = ball.volume();
    let exponent = n_dim as f64 + if n_dim == 1 { epsilon / 2.0 } else { 2.0 * epsilon / 3.0 };
    let r_min = spec.radii.iter().copied().fold(f64::INFINITY, f64::min);
    let k = sys.alphabet().size();
    let mut rng = SeedSplitter::new(spec.seed).stream(STREAM_PAIRS);
    let mut rows = Vec::new();
    for n in 0..=n_max {
        let tail_depth = coding_depth_for(sys, r_min * sys.gamma_bounds().0.powi(n as i32));
        let mut jobs = Vec::new();
        let strata = if n == 0 { 1 } else { spec.strata_per_length };
        for _ in 0..strata {
            let rho: Vec<Letter> = (0..n).map(|_| rng.random_range(0..k) as Letter).collect();
            for _ in 0..spec.pairs_per_stratum {
                let mut a: Vec<Letter> = (0..tail_depth).map(|_| rng.random_range(0..k) as Letter).collect();
                let mut b: Vec<Letter> = (0..tail_depth).map(|_| rng.random_range(0..k) as Letter).collect();
                let last = tail_depth - 1;
                if a[last] == b[last] {
                    b[last] = ((a[last] as usize + rng.random_range(1..k)) % k) as Letter;
                }
                a.extend_from_slice(&rho);
                b.extend_from_slice(&rho);
                jobs.push((rho.clone(), CodedPair { alpha: a, beta: b, fiber: vec![] }));
            }
        }
        let ratios = jobs
            .par_iter()
            .map(|(rho, pair)| {
                let lambda = sys.contraction_rate(p0, &[], rho)?;
                let mut dists = params.iter().map(|p| distance(sys, p, pair)).collect::<Result<Vec<_>>>()?;
                dists.sort_by(f64::total_cmp);
                let mut best = 0.0f64;
                for &r in &spec.radii {
                    let est = dists.partition_point(|&d| d < r) as f64 / params.len() as f64 * volume;
                    best = best.max(est / (r.powi(n_dim as i32) * lambda.powf(-exponent)));
                }
                Ok(best)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(StratumRow {
            length: n,
            strata,
            pairs: jobs.len(),
            sup_ratio: ratios.into_iter().fold(0.0, f64::max),
        });
    }
    Ok(StratifiedCheck { dimension, exponent, radii: spec.radii.clone(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityIntegral {
    pub radii: Vec<f64>,
    /// Estimate of `∬ Leb{p ∈ B : |π_p(α)−π_p(β)| < r} dμ×μ / (c_N r^N)`.
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub reliable: Vec<bool>,
    /// Value at the smallest reliable radius.
    pub value: f64,
    /// `values[j+1] / values[j]`, one entry per consecutive radius pair.
    pub trend: Vec<f64>,
    /// Every step of the trend is at least 2.
    pub diverging: bool,
    /// The last step of the trend is within a factor 2.
    pub stable: bool,
    pub pair_samples: usize,
    pub coding_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub radii: Vec<f64>,
    pub pair_samples: usize,
    /// Grid points along a one-dimensional ball; Monte Carlo points otherwise.
    pub param_points: usize,
    pub seed: u64,
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec { radii: vec![1e-2, 1e-3, 1e-4], pair_samples: 100_000, param_points: 33, seed: 0 }
    }
}

/// Lebesgue measure of `{t ∈ [0, h] : |g(t)| < r}` for `g` affine between
/// `g0` and `g1`.
fn segment_measure(g0: &[f64], g1: &[f64], h: f64, r: f64) -> f64 {
    // |g0 + t (g1 - g0)|^2 < r^2 on t ∈ [0,1]
    let (mut a, mut b, mut c) = (0.0, 0.0, -r * r);
    for (u, v) in g0.iter().zip(g1) {
        let d = v - u;
        a += d * d;
        b += 2.0 * u * d;
        c += u * u;
    }
    let (lo, hi) = if a <= f64::EPSILON * (b.abs() + c.abs()).max(f64::MIN_POSITIVE) {
        if b == 0.0 {
            return if c < 0.0 { h } else { 0.0 };
        }
        let t = -c / b;
        if b > 0.0 { (f64::NEG_INFINITY, t) } else { (t, f64::INFINITY) }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            return 0.0;
        }
        let s = disc.sqrt();
        ((-b - s) / (2.0 * a), (-b + s) / (2.0 * a))
    };
    (hi.min(1.0) - lo.max(0.0)).max(0.0) * h
}

/// Monte Carlo estimate of the density integral over `B(p₀, δ)`, with
/// pairs drawn from `μ×μ` (Gibbs head next to the origin, uniform tail).
///
/// For one-dimensional parameters the collision set of each pair is
/// measured exactly for the piecewise-linear interpolant of the coded
/// difference on a grid; otherwise by Monte Carlo points in the ball.
pub fn density_integral(
    sys: &dyn CodedSystem,
    p0: &[f64],
    delta: f64,
    gibbs: &GibbsApprox,
    spec: &DensitySpec,
) -> Result<DensityIntegral> {
    let radii = &spec.radii;
    if radii.len() < 2 || radii.windows(2).any(|w| w[1] >= w[0]) || radii[0] / radii[radii.len() - 1] < 99.999 {
        return Err(LabError::Config("density radii must decrease and span at least two decades".into()));
    }
    if gibbs.alphabet_size != sys.alphabet().size() {
        return Err(LabError::Contract("Gibbs weights belong to another alphabet".into()));
    }
    let r_min = radii[radii.len() - 1];
    let depth = coding_depth_for(sys, r_min).max(gibbs.depth);
    let ball = sys.param_box().ball(p0, delta)?;
    let n_dim = sys.fiber_dim();
    let norm = unit_ball_volume(n_dim);
    let draw_seed = SeedSplitter::new(spec.seed).stream(STREAM_DENSITY).next_u64();
    let one_dim = ball.dim() == 1;
    let points: Vec<Vec<f64>> = if one_dim {
        let (lo, hi) = (ball.lo()[0], ball.hi()[0]);
        let m = spec.param_points.max(2);
        (0..m).map(|i| vec![lo + (hi - lo) * i as f64 / (m - 1) as f64]).collect()
    } else {
        ParamSampler::MonteCarlo { count: spec.param_points, seed: spec.seed }.points(&ball, crate::rng::STREAM_PARAMS)?
    };
    let volume = ball.volume();
    let per_pair = (0..spec.pair_samples)
        .into_par_iter()
        .map(|i| {
            let alpha = draw_mu_word(gibbs, depth, draw_seed, 2 * i as u64);
            let beta = draw_mu_word(gibbs, depth, draw_seed, 2 * i as u64 + 1);
            if alpha == beta {
                return Ok(vec![volume; radii.len()]);
            }
            let g = points
                .iter()
                .map(|p| {
                    let a = sys.code(p, &[], &alpha)?;
                    let b = sys.code(p, &[], &beta)?;
                    Ok(a.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(radii
                .iter()
                .map(|&r| {
                    if one_dim {
                        let h = (ball.hi()[0] - ball.lo()[0]) / (points.len() - 1) as f64;
                        g.windows(2).map(|w| segment_measure(&w[0], &w[1], h, r)).sum()
                    } else {
                        let hits = g.iter().filter(|v| v.iter().map(|x| x * x).sum::<f64>() < r * r).count();
                        hits as f64 / points.len() as f64 * volume
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let n = per_pair.len() as f64;
    let mut values = Vec::new();
    let mut std_errors = Vec::new();
    for (j, &r) in radii.iter().enumerate() {
        let scale = 1.0 / (norm * r.powi(n_dim as i32));
        let mean = per_pair.iter().map(|v| v[j]).sum::<f64>() / n;
        let var = per_pair.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        values.push(mean * scale);
        std_errors.push((var / n).sqrt() * scale);
    }
    let reliable: Vec<bool> = values.iter().zip(&std_errors).map(|(v, e)| *v > 0.0 && *e <= 0.5 * v).collect();
    let Some(last_ok) = reliable.iter().rposition(|&b| b) else {
        return Err(LabError::Precision("statistical error exceeds half of the estimate at every radius".into()));
    };
    let trend: Vec<f64> = values.windows(2).map(|w| w[1] / w[0]).collect();
    let diverging = trend.iter().all(|&t| t >= 2.0);
    let last = *trend.last().unwrap();
    let stable = reliable[reliable.len() - 1] && (0.5..=2.0).contains(&last);
    Ok(DensityIntegral {
        radii: radii.clone(),
        values: values.clone(),
        std_errors,
        reliable,
        value: values[last_ok],
        trend,
        diverging,
        stable,
        pair_samples: spec.pair_samples,
        coding_depth: depth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumMass {
    pub rho: Vec<Letter>,
    pub empirical: f64,
    pub cylinder_squared: f64,
    pub sigma: f64,
}

impl StratumMass {
    pub fn within_bound(&self) -> bool {
        self.empirical <= self.cylinder_squared + 4.0 * self.sigma
    }
}

/// Empirical `μ×μ` mass of every stratum `C_ρ` with `|ρ| ≤ max_len`,
/// next to `μ[ρ]²`.
pub fn stratum_mass_check(gibbs: &GibbsApprox, max_len: usize, samples: usize, seed: u64) -> Result<Vec<StratumMass>> {
    if max_len > gibbs.depth {
        return Err(LabError::Contract(format!("strata up to length {max_len} need Gibbs depth at least that")));
    }
    let alphabet = gibbs.alphabet();
    let draw_seed = SeedSplitter::new(seed).stream(STREAM_DENSITY).next_u64();
    let depth = gibbs.depth + 1;
    let strata: Vec<Vec<Letter>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let a = FiniteWord::backward(draw_mu_word(gibbs, depth, draw_seed, 2 * i as u64));
            let b = FiniteWord::backward(draw_mu_word(gibbs, depth, draw_seed, 2 * i as u64 + 1));
            pair_stratum(&a, &b).map(|(rho, _)| rho.into_letters())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for len in 0..=max_len {
        let count = alphabet.check_cap(len, 1_000_000)?;
        for idx in 0..count {
            let rho = word_at(alphabet, len, idx);
            let cylinder: f64 = (0..gibbs.weights.len())
                .filter(|&w| word_at(alphabet, gibbs.depth, w).ends_with(&rho))
                .map(|w| gibbs.weights[w])
                .sum();
            let hits = strata.iter().filter(|s| **s == rho).count() as f64;
            let q = hits / samples as f64;
            out.push(StratumMass {
                rho,
                empirical: q,
                cylinder_squared: cylinder * cylinder,
                sigma: (cylinder * cylinder * (1.0 - cylinder * cylinder).max(0.0) / samples as f64).sqrt(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine_ifs::{build_interval_example, AffineBranch};
    use crate::param::ParamBox;
    use crate::thermo::gibbs_weights;
    use proptest::prelude::*;
    use rand::Rng;

    fn cantor() -> AffineIfsFamily {
        AffineIfsFamily::new(
            vec![
                AffineBranch::constant(0.3, -0.69),
                AffineBranch { slope: crate::expr::Expr::Const(0.3), offset: crate::expr::Expr::Param(0) },
            ],
            ParamBox::interval(0.4, 0.6).unwrap(),
            None,
        )
        .unwrap()
    }

    /// `∂_p π_p(α)` on the unit chart: `Σ c^j` over positions `j` (from the
    /// origin) carrying the parameter letter.
    fn unit_chart_slope(word: &[Letter], n: usize, c: f64) -> f64 {
        word.iter().rev().enumerate().filter(|(_, &a)| a as usize == n).map(|(j, _)| c.powi(j as i32)).sum()
    }

    #[test]
    fn interval_example_scan_matches_derivative_oracle() {
        let fam = build_interval_example(4, 0.21).unwrap();
        let spec = PairSpec { count: 12, constraint: PairConstraint::AlphaEnds { letter: 4 }, seed: 5 };
        let radii = [1e-2, 1e-3];
        let scan = scan_transversality(&fam, &spec, &radii, &ParamSampler::Grid { count: 10_000 }).unwrap();
        assert!(scan.plausible && scan.c_hat.is_finite());
        for (pair, est) in scan.pairs.iter().zip(&scan.measure_estimates) {
            assert!(est.windows(2).all(|w| w[1] <= w[0]));
            let slope = unit_chart_slope(&pair.alpha, 4, 0.21) - unit_chart_slope(&pair.beta, 4, 0.21);
            assert!(slope >= 1.0 - 0.21 / 0.79 - 1e-12);
            // on the [-1,1] chart the parameter enters as 2p, so the
            // collision interval has length r / |slope|, clipped to the box
            let dense: Vec<f64> = (0..200_001).map(|i| 0.25 + 0.5 * i as f64 / 200_000.0).collect();
            for (j, &r) in radii.iter().enumerate() {
                let hits = dense
                    .iter()
                    .filter(|&&p| {
                        (fam.code(&[p], &[], &pair.alpha).unwrap()[0] - fam.code(&[p], &[], &pair.beta).unwrap()[0]).abs() < r
                    })
                    .count() as f64
                    * 0.5
                    / 200_001.0;
                assert!((est[j] - hits).abs() <= 2e-4, "pair estimate {} vs dense {}", est[j], hits);
                assert!(est[j] <= r / slope + 2e-4);
            }
        }
    }

    #[test]
    fn equal_last_letters_are_rejected() {
        let fam = build_interval_example(2, 0.4).unwrap();
        let pair = CodedPair { alpha: vec![0, 1], beta: vec![0, 1], fiber: vec![] };
        let err = scan_pairs(&fam, vec![pair], &[1e-2], &ParamSampler::Grid { count: 10 }, 2).unwrap_err();
        assert!(matches!(err, LabError::Contract(_)));
    }

    #[test]
    fn parameter_free_collision_is_persistent() {
        // images overlap and nothing depends on p
        let fam = AffineIfsFamily::new(
            vec![AffineBranch::constant(0.5, 0.0), AffineBranch::constant(0.5, 0.0)],
            ParamBox::interval(0.0, 1.0).unwrap(),
            None,
        )
        .unwrap();
        let pair = CodedPair { alpha: vec![0, 0, 1], beta: vec![1, 0, 0], fiber: vec![] };
        let scan = scan_pairs(&fam, vec![pair], &[1e-1, 1e-2], &ParamSampler::Grid { count: 100 }, 3).unwrap();
        assert!(scan.persistent_collision && !scan.plausible);
        assert_eq!(scan.c_hat, f64::INFINITY);
        assert!(scan.measure_estimates[0].iter().all(|&e| e == 1.0 || e == 0.0));
    }

    #[test]
    fn interval_example_stratified_bound_is_stable() {
        let fam = build_interval_example(4, 0.21).unwrap();
        let spec = StratifiedSpec { strata_per_length: 3, pairs_per_stratum: 4, radii: vec![1e-2, 1e-3], seed: 1 };
        let check = stratified_bound_check(&fam, &[0.5], 0.1, 0.02, 6, &ParamSampler::Grid { count: 4000 }, &spec).unwrap();
        assert!(check.sup().is_finite());
        let first = check.rows[0].sup_ratio.max(1e-300);
        assert!(check.rows.iter().all(|r| r.sup_ratio <= 2.0 * first.max(check.rows[1].sup_ratio)));
        let low = build_interval_example(2, 0.2).unwrap();
        assert!(matches!(
            stratified_bound_check(&low, &[0.5], 0.1, 0.02, 2, &ParamSampler::Grid { count: 100 }, &spec),
            Err(LabError::Contract(_))
        ));
    }

    proptest! {
        #[test]
        fn affine_scaling_identity_is_exact(
            slopes in prop::collection::vec((0.05f64..0.4, -0.45f64..0.45), 2..5),
            seed in any::<u64>(),
            p in 0.0f64..1.0,
        ) {
            let branches = slopes.iter().map(|&(s, b)| AffineBranch {
                slope: crate::expr::Expr::Const(s),
                offset: crate::expr::Expr::add(crate::expr::Expr::Const(b), crate::expr::Expr::mul(crate::expr::Expr::Const(0.1), crate::expr::Expr::Param(0))),
            }).collect();
            let fam = AffineIfsFamily::new(branches, ParamBox::interval(0.0, 1.0).unwrap(), None).unwrap();
            let k = slopes.len();
            let mut rng = SeedSplitter::new(seed).stream(6);
            let mut word = |n: usize| -> Vec<Letter> { (0..n).map(|_| rng.random_range(0..k) as Letter).collect() };
            let (rho, alpha, beta) = (word(5), word(8), word(8));
            let (lhs, rhs) = affine_scaling_identity(&fam, &[p], &rho, &alpha, &beta).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn segment_measure_cases() {
        assert!((segment_measure(&[-1.0], &[1.0], 2.0, 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(segment_measure(&[0.1], &[0.1], 1.0, 0.5), 1.0);
        assert_eq!(segment_measure(&[0.6], &[0.6], 1.0, 0.5), 0.0);
        assert_eq!(segment_measure(&[1.0, 1.0], &[2.0, 1.0], 1.0, 0.5), 0.0);
        assert!((segment_measure(&[-1.0, 0.0], &[1.0, 0.0], 1.0, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cantor_density_integral_diverges() {
        let fam = cantor();
        let dim = 2f64.ln() / -(0.3f64).ln();
        let g = gibbs_weights(&fam, &[0.5], &[], 6, dim).unwrap();
        let spec = DensitySpec { pair_samples: 20_000, ..DensitySpec::default() };
        let di = density_integral(&fam, &[0.5], 0.1, &g, &spec).unwrap();
        assert!(di.diverging, "trend {:?}", di.trend);
    }

    #[test]
    fn stratum_masses_respect_cylinders() {
        let fam = build_interval_example(2, 0.4).unwrap();
        let g = gibbs_weights(&fam, &[0.5], &[], 4, 1.0).unwrap();
        let masses = stratum_mass_check(&g, 3, 20_000, 9).unwrap();
        for m in &masses {
            assert!(m.within_bound(), "{m:?}");
        }
        // strata of length 0 cover the pairs with distinct last letters
        let e = &masses[0];
        assert!(e.rho.is_empty() && (e.empirical - 2.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn sampled_pairs_land_in_one_stratum() {
        let fam = build_interval_example(4, 0.21).unwrap();
        let spec = PairSpec { count: 200, constraint: PairConstraint::Distinct, seed: 2 };
        for pair in sample_pairs(&fam, &spec, 12).unwrap() {
            let (rho, split) =
                pair_stratum(&FiniteWord::backward(pair.alpha.clone()), &FiniteWord::backward(pair.beta.clone())).unwrap();
            assert!(rho.is_empty() && split);
        }
    }
}
