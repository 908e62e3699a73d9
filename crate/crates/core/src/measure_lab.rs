//! Pushforward measures, lower densities and cover measures of limit sets.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng::{SeedSplitter, STREAM_GIBBS, STREAM_TAIL};
use crate::symbolic::{word_at, Alphabet, Letter};
use crate::system::{full_address, CodedSystem};
use crate::thermo::GibbsApprox;

/// Where an empirical measure came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub system: String,
    pub p: Vec<f64>,
    pub fiber: Vec<Letter>,
    pub gibbs_depth: usize,
    pub seed: u64,
    pub coding_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl EmpiricalMeasure {
    pub fn dim(&self) -> usize {
        self.atoms.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// A word of length `coding_depth` drawn from `μ`: the Gibbs head sits next
/// to the origin, earlier letters are uniform.
pub fn draw_mu_word(gibbs: &GibbsApprox, coding_depth: usize, seed: u64, index: u64) -> Vec<Letter> {
    let splitter = SeedSplitter::new(seed);
    let mut rng = splitter.cell(STREAM_GIBBS, index);
    let head = gibbs.sample_word(&mut rng);
    let k = gibbs.alphabet_size;
    let mut tail_rng = splitter.cell(STREAM_TAIL, index);
    let tail_len = coding_depth.saturating_sub(head.len());
    let mut w: Vec<Letter> = (0..tail_len).map(|_| tail_rng.random_range(0..k) as Letter).collect();
    w.extend(head);
    w
}

/// `ν_p = (π_p)_* μ` as `n_atoms` equally weighted coded points.
pub fn pushforward(
    sys: &dyn CodedSystem,
    p: &[f64],
    fiber: &[Letter],
    gibbs: &GibbsApprox,
    n_atoms: usize,
    seed: u64,
    coding_depth: usize,
) -> Result<EmpiricalMeasure> {
    if coding_depth < gibbs.depth {
        return Err(LabError::Contract(format!(
            "coding depth {coding_depth} is below the Gibbs depth {}",
            gibbs.depth
        )));
    }
    if gibbs.alphabet_size != sys.alphabet().size() {
        return Err(LabError::Contract("Gibbs weights belong to another alphabet".into()));
    }
    let atoms = (0..n_atoms)
        .into_par_iter()
        .map(|i| {
            let w = draw_mu_word(gibbs, coding_depth, seed, i as u64);
            sys.code(p, fiber, &w)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = vec![1.0 / n_atoms.max(1) as f64; n_atoms];
    Ok(EmpiricalMeasure {
        atoms,
        weights,
        provenance: Provenance {
            system: format!("k={}, N={}", sys.alphabet().size(), sys.fiber_dim()),
            p: p.to_vec(),
            fiber: fiber.to_vec(),
            gibbs_depth: gibbs.depth,
            seed,
            coding_depth,
        },
    })
}

/// Volume of the unit Euclidean ball in `R^N`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub radii: Vec<f64>,
    pub c_n: f64,
    /// `values[i][j] = ν(B(x_i, r_j)) / (c_N r_j^N)`
    pub values: Vec<Vec<f64>>,
    /// Radii passing the gate `r ≥ (10/n_atoms)^{1/N}`.
    pub reliable: Vec<bool>,
    /// Minimum over reliable radii, per evaluation point.
    pub liminf_proxy: Vec<f64>,
}

/// Empirical lower density of `ν` at the evaluation points.
pub fn lower_density(measure: &EmpiricalMeasure, eval_points: &[Vec<f64>], radii: &[f64]) -> Result<DensityReport> {
    let n = measure.dim().max(1);
    let gate = (10.0 / measure.len().max(1) as f64).powf(1.0 / n as f64);
    let reliable: Vec<bool> = radii.iter().map(|&r| r >= gate).collect();
    if !reliable.iter().any(|&b| b) {
        return Err(LabError::Precision(format!("every radius is below the resolution gate {gate:.3e}")));
    }
    let c_n = unit_ball_volume(n);
    let sorted: Option<Vec<(f64, f64)>> = (n == 1).then(|| {
        let mut v: Vec<(f64, f64)> = measure.atoms.iter().map(|a| a[0]).zip(measure.weights.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    });
    let prefix: Option<Vec<f64>> = sorted.as_ref().map(|v| {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for (_, w) in v {
            acc += w;
            out.push(acc);
        }
        out
    });
    let values: Vec<Vec<f64>> = eval_points
        .par_iter()
        .map(|x| {
            radii
                .iter()
                .map(|&r| {
                    let mass = match (&sorted, &prefix) {
                        (Some(v), Some(pre)) => {
                            let lo = v.partition_point(|a| a.0 <= x[0] - r);
                            let hi = v.partition_point(|a| a.0 < x[0] + r);
                            pre[hi] - pre[lo]
                        }
                        _ => measure
                            .atoms
                            .iter()
                            .zip(&measure.weights)
                            .filter(|(a, _)| a.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() < r * r)
                            .map(|(_, w)| w)
                            .sum(),
                    };
                    mass / (c_n * r.powi(n as i32))
                })
                .collect()
        })
        .collect();
    let liminf_proxy = values
        .iter()
        .map(|row| row.iter().zip(&reliable).filter(|(_, &ok)| ok).map(|(v, _)| *v).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(DensityReport { radii: radii.to_vec(), c_n, values, reliable, liminf_proxy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverEstimate {
    pub depths: Vec<usize>,
    /// Lebesgue measure of `∪_{|α|=n} ψ^α(X)` per depth.
    pub union_measure: Vec<f64>,
    pub method: String,
}

impl CoverEstimate {
    /// Measure at the deepest requested level.
    pub fn last(&self) -> f64 {
        *self.union_measure.last().unwrap_or(&f64::NAN)
    }
}

/// Cap on the interval count of a one-dimensional cover.
pub const INTERVAL_CAP: u64 = 20_000_000;
/// Cap on cells per axis of a planar occupancy grid.
pub const GRID_CAP: usize = 2048;

/// Lebesgue measure of the depth-`n` image unions, exact for `N = 1`
/// (interval unions under monotone maps) and by grid occupancy for `N = 2`.
pub fn cover_measure(sys: &dyn CodedSystem, p: &[f64], fiber: &[Letter], depths: &[usize]) -> Result<CoverEstimate> {
    cover_measure_capped(sys, p, fiber, depths, GRID_CAP)
}

/// [`cover_measure`] with a smaller planar grid; coarser grids over-cover.
pub fn cover_measure_capped(
    sys: &dyn CodedSystem,
    p: &[f64],
    fiber: &[Letter],
    depths: &[usize],
    grid_cap: usize,
) -> Result<CoverEstimate> {
    let max_depth = depths.iter().copied().max().unwrap_or(0);
    match sys.fiber_dim() {
        1 => {
            let levels = interval_cover(sys, p, fiber, max_depth)?;
            Ok(CoverEstimate {
                depths: depths.to_vec(),
                union_measure: depths.iter().map(|&n| levels[n]).collect(),
                method: "interval-union".into(),
            })
        }
        2 => {
            let gamma = sys.gamma_bounds().1;
            let side = gamma.powi(max_depth as i32) / 4.0;
            let res = ((2.0 / side).ceil() as usize).clamp(16, grid_cap.max(16));
            let levels = grid_cover(sys, p, fiber, max_depth, res)?;
            Ok(CoverEstimate {
                depths: depths.to_vec(),
                union_measure: depths.iter().map(|&n| levels[n]).collect(),
                method: format!("grid-occupancy({res}x{res})"),
            })
        }
        n => Err(LabError::Capability(format!("cover measure is implemented for N <= 2, got N = {n}"))),
    }
}

/// Context states: the `m-1` address letters following a word, which the
/// inner stages may read. `state_index` encodes them big-endian.
fn contexts(alphabet: Alphabet, m: usize) -> Vec<Vec<Letter>> {
    let len = m.saturating_sub(1);
    let count = alphabet.size().pow(len as u32);
    (0..count).map(|i| word_at(alphabet, len, i)).collect()
}

fn context_index(alphabet: Alphabet, ctx: &[Letter]) -> usize {
    ctx.iter().fold(0usize, |acc, &l| acc * alphabet.size() + l as usize)
}

/// `C_n(u) = ∪_a f_{a u}(C_{n-1}(a u'))`, with `u' = u` minus its last letter.
fn interval_cover(sys: &dyn CodedSystem, p: &[f64], fiber: &[Letter], depth: usize) -> Result<Vec<f64>> {
    let alphabet = sys.alphabet();
    let m = sys.address_depth();
    let ctxs = contexts(alphabet, m);
    let mut sets: Vec<Vec<(f64, f64)>> = vec![vec![(-1.0, 1.0)]; ctxs.len()];
    let root_ctx: Vec<Letter> = full_address(&[], fiber, m).into_iter().take(m - 1).collect();
    let root = context_index(alphabet, &root_ctx);
    let measure = |s: &[(f64, f64)]| s.iter().map(|(a, b)| b - a).sum::<f64>();
    let mut out = vec![measure(&sets[root])];
    let affine: Option<Vec<(f64, f64)>> = if m == 1 {
        alphabet.letters().map(|a| sys.affine_letter_map(p, a)).collect()
    } else {
        None
    };
    if let Some(maps) = affine {
        let mut set = sets.pop().unwrap();
        for _ in 0..depth {
            let mut pieces = Vec::with_capacity(set.len() * maps.len());
            for &(slope, offset) in &maps {
                let start = pieces.len();
                pieces.extend(set.iter().map(|&(lo, hi)| {
                    let (y0, y1) = (slope * lo + offset, slope * hi + offset);
                    (y0.min(y1), y0.max(y1))
                }));
                if slope < 0.0 {
                    pieces[start..].reverse();
                }
            }
            // concatenated sorted runs, which the stable sort merges cheaply
            set = merge_intervals(pieces);
            if set.len() as u64 > INTERVAL_CAP {
                return Err(LabError::Resource { requested: set.len() as f64, cap: INTERVAL_CAP });
            }
            out.push(measure(&set));
        }
        return Ok(out);
    }
    for _ in 0..depth {
        let next = ctxs
            .par_iter()
            .map(|u| {
                let mut buf = [0.0];
                let mut pieces = Vec::new();
                for a in alphabet.letters() {
                    let mut addr = vec![a];
                    addr.extend_from_slice(u);
                    let inner: Vec<Letter> = addr[..m - 1].to_vec();
                    for &(lo, hi) in &sets[context_index(alphabet, &inner)] {
                        sys.step(p, &addr, &[lo], &mut buf)?;
                        let y0 = buf[0];
                        sys.step(p, &addr, &[hi], &mut buf)?;
                        let y1 = buf[0];
                        pieces.push((y0.min(y1), y0.max(y1)));
                    }
                }
                Ok(merge_intervals(pieces))
            })
            .collect::<Result<Vec<_>>>()?;
        let total: usize = next.iter().map(Vec::len).sum();
        if total as u64 > INTERVAL_CAP {
            return Err(LabError::Resource { requested: total as f64, cap: INTERVAL_CAP });
        }
        sets = next;
        out.push(measure(&sets[root]));
    }
    Ok(out)
}

pub fn merge_intervals(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Occupancy grid over `[-1,1]^2`: each occupied cell is replaced by the
/// cells meeting the bounding box of its image corners and centre. This
/// over-approximates and is monotone, so levels nest.
fn grid_cover(sys: &dyn CodedSystem, p: &[f64], fiber: &[Letter], depth: usize, res: usize) -> Result<Vec<f64>> {
    let alphabet = sys.alphabet();
    let m = sys.address_depth();
    let ctxs = contexts(alphabet, m);
    let cells = res * res;
    let mut grids: Vec<Vec<bool>> = vec![vec![true; cells]; ctxs.len()];
    let root_ctx: Vec<Letter> = full_address(&[], fiber, m).into_iter().take(m - 1).collect();
    let root = context_index(alphabet, &root_ctx);
    let h = 2.0 / res as f64;
    let frac = |g: &[bool]| g.iter().filter(|&&b| b).count() as f64 / cells as f64 * 4.0;
    let mut out = vec![frac(&grids[root])];
    let to_cell = |v: f64| (((v + 1.0) / h).floor() as isize).clamp(0, res as isize - 1) as usize;
    for _ in 0..depth {
        let next = ctxs
            .par_iter()
            .map(|u| {
                let mut g = vec![false; cells];
                let mut buf = [0.0, 0.0];
                for a in alphabet.letters() {
                    let mut addr = vec![a];
                    addr.extend_from_slice(u);
                    let src = &grids[context_index(alphabet, &addr[..m - 1])];
                    for (idx, _) in src.iter().enumerate().filter(|(_, &b)| b) {
                        let (i, j) = (idx / res, idx % res);
                        let x0 = -1.0 + i as f64 * h;
                        let y0 = -1.0 + j as f64 * h;
                        let mut lo = [f64::INFINITY; 2];
                        let mut hi = [f64::NEG_INFINITY; 2];
                        for (dx, dy) in [(0.0, 0.0), (h, 0.0), (0.0, h), (h, h), (0.5 * h, 0.5 * h)] {
                            sys.step(p, &addr, &[x0 + dx, y0 + dy], &mut buf)?;
                            for c in 0..2 {
                                lo[c] = lo[c].min(buf[c]);
                                hi[c] = hi[c].max(buf[c]);
                            }
                        }
                        for ci in to_cell(lo[0])..=to_cell(hi[0] - 1e-15) {
                            for cj in to_cell(lo[1])..=to_cell(hi[1] - 1e-15) {
                                g[ci * res + cj] = true;
                            }
                        }
                    }
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        grids = next;
        out.push(frac(&grids[root]));
    }
    Ok(out)
}

/// Parameter samplers shared by scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParamSampler {
    /// Midpoint grid (one-dimensional boxes).
    Grid { count: usize },
    MonteCarlo { count: usize, seed: u64 },
}

impl ParamSampler {
    pub fn count(&self) -> usize {
        match self {
            ParamSampler::Grid { count } | ParamSampler::MonteCarlo { count, .. } => *count,
        }
    }

    pub fn points(&self, pbox: &crate::param::ParamBox, stream: u64) -> Result<Vec<Vec<f64>>> {
        match self {
            ParamSampler::Grid { count } => {
                if pbox.dim() != 1 {
                    return Err(LabError::Config("grid sampling needs a one-dimensional parameter box".into()));
                }
                Ok(pbox.grid_1d(*count).into_iter().map(|v| vec![v]).collect())
            }
            ParamSampler::MonteCarlo { count, seed } => {
                let mut rng = SeedSplitter::new(*seed).stream(stream);
                Ok((0..*count)
                    .map(|_| {
                        let u: Vec<f64> = (0..pbox.dim()).map(|_| rng.random::<f64>()).collect();
                        pbox.from_unit(&u)
                    })
                    .collect())
            }
        }
    }
}

/// What [`parameter_scan`] computes at each parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub dimension_depths: Vec<usize>,
    pub cover_depths: Vec<usize>,
    pub gibbs_depth: usize,
    pub coding_depth: usize,
    pub atoms: usize,
    pub eval_points: usize,
    pub radii: Vec<f64>,
    pub seed: u64,
    /// Cover fraction of `|X|` above which a parameter counts as positive.
    pub cover_threshold: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec {
            dimension_depths: vec![1],
            cover_depths: vec![6, 9, 12],
            gibbs_depth: 4,
            coding_depth: 40,
            atoms: 10_000,
            eval_points: 200,
            radii: vec![1e-1, 3e-2, 1e-2],
            seed: 0,
            cover_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub p: Vec<f64>,
    pub dimension: f64,
    pub cover: Vec<f64>,
    /// Geometric decay rate of the cover between the first and last depth.
    pub cover_rate: f64,
    /// Median density proxy at the smallest and largest reliable radius.
    pub density_small: f64,
    pub density_large: f64,
    pub density_stable: bool,
    pub positive: bool,
    /// Stable finite density together with cover decay faster than `0.8^n`.
    pub inconsistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    pub positive_fraction: f64,
    pub inconsistent_count: usize,
}

impl ScanTable {
    pub fn to_csv(&self) -> String {
        use crate::thermo::fmt17;
        let mut out = String::from("p,dimension,cover_last,cover_rate,density_small,density_large,density_stable,positive,inconsistent\n");
        for r in &self.rows {
            let p: Vec<String> = r.p.iter().map(|v| fmt17(*v)).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.join(";"),
                fmt17(r.dimension),
                fmt17(*r.cover.last().unwrap_or(&f64::NAN)),
                fmt17(r.cover_rate),
                fmt17(r.density_small),
                fmt17(r.density_large),
                r.density_stable,
                r.positive,
                r.inconsistent
            ));
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Per parameter: `Δ(p)`, the cover trend and a density verdict.
pub fn parameter_scan(sys: &dyn CodedSystem, params: &[Vec<f64>], spec: &ScanSpec) -> Result<ScanTable> {
    use crate::thermo::{gibbs_weights, similarity_dimension, DIMENSION_TOL};
    let n = sys.fiber_dim();
    let volume = 2f64.powi(n as i32);
    let rows = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let dimension = similarity_dimension(sys, p, &[], &spec.dimension_depths, DIMENSION_TOL)?;
            let cover = cover_measure(sys, p, &[], &spec.cover_depths)?;
            let (d0, d1) = (spec.cover_depths[0], *spec.cover_depths.last().unwrap());
            let cover_rate = if d1 > d0 {
                (cover.last() / cover.union_measure[0]).powf(1.0 / (d1 - d0) as f64)
            } else {
                1.0
            };
            let gibbs = gibbs_weights(sys, p, &[], spec.gibbs_depth, dimension)?;
            let cell_seed = spec.seed.wrapping_add(i as u64);
            let mu = pushforward(sys, p, &[], &gibbs, spec.atoms, cell_seed, spec.coding_depth)?;
            let eval: Vec<Vec<f64>> = mu.atoms.iter().take(spec.eval_points).cloned().collect();
            let rep = lower_density(&mu, &eval, &spec.radii)?;
            let ok: Vec<usize> = (0..spec.radii.len()).filter(|&j| rep.reliable[j]).collect();
            let col = |j: usize| median(rep.values.iter().map(|r| r[j]).collect());
            let j_small = ok.iter().copied().min_by(|&a, &b| spec.radii[a].total_cmp(&spec.radii[b])).unwrap();
            let j_large = ok.iter().copied().max_by(|&a, &b| spec.radii[a].total_cmp(&spec.radii[b])).unwrap();
            let (density_small, density_large) = (col(j_small), col(j_large));
            let ratio = density_small / density_large;
            let density_stable = density_small.is_finite() && (1.0 / 3.0..=3.0).contains(&ratio);
            let positive = cover.last() > spec.cover_threshold * volume && density_stable;
            let inconsistent = density_stable && cover_rate < 0.8;
            Ok(ScanRow {
                p: p.clone(),
                dimension,
                cover: cover.union_measure,
                cover_rate,
                density_small,
                density_large,
                density_stable,
                positive,
                inconsistent,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let positive_fraction = rows.iter().filter(|r| r.positive).count() as f64 / rows.len().max(1) as f64;
    let inconsistent_count = rows.iter().filter(|r| r.inconsistent).count();
    Ok(ScanTable { rows, positive_fraction, inconsistent_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine_ifs::{AffineBranch, AffineIfsFamily};
    use crate::param::ParamBox;
    use crate::thermo::gibbs_weights;

    fn family(pairs: &[(f64, f64)]) -> AffineIfsFamily {
        AffineIfsFamily::new(
            pairs.iter().map(|&(s, b)| AffineBranch::constant(s, b)).collect(),
            ParamBox::interval(0.0, 1.0).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn ball_volumes() {
        assert_eq!(unit_ball_volume(1), 2.0);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-12);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn halves_pushforward_is_centred() {
        // strictly inside: ratio just below 1/2
        let c = 0.499;
        let fam = family(&[(c, -0.5), (c, 0.5)]);
        let g = gibbs_weights(&fam, &[0.5], &[], 4, 1.0).unwrap();
        let mu = pushforward(&fam, &[0.5], &[], &g, 20_000, 1, 40).unwrap();
        let mean: f64 = mu.atoms.iter().map(|a| a[0]).sum::<f64>() / mu.len() as f64;
        let sd = (1.0 / 3.0 / mu.len() as f64).sqrt();
        assert!(mean.abs() < 4.0 * sd);
        let one = pushforward(&fam, &[0.5], &[], &g, 1, 1, 40).unwrap();
        assert_eq!(one.weights, vec![1.0]);
        let maps = fam.instantiate(&[0.5]).unwrap();
        for a in &mu.atoms {
            assert!(maps.iter().any(|m| {
                let (lo, hi) = (m.apply(-1.0).min(m.apply(1.0)), m.apply(-1.0).max(m.apply(1.0)));
                (lo..=hi).contains(&a[0])
            }));
        }
    }

    #[test]
    fn uniform_density_is_one_half() {
        let mut rng = SeedSplitter::new(3).stream(1);
        let atoms: Vec<Vec<f64>> = (0..100_000).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let mu = EmpiricalMeasure {
            weights: vec![1e-5; atoms.len()],
            atoms,
            provenance: Provenance { system: "uniform".into(), p: vec![], fiber: vec![], gibbs_depth: 0, seed: 3, coding_depth: 0 },
        };
        let rep = lower_density(&mu, &[vec![0.0], vec![0.5], vec![-0.3]], &[0.05]).unwrap();
        for row in &rep.values {
            assert!((row[0] - 0.5).abs() < 0.1);
        }
        assert!(matches!(lower_density(&mu, &[vec![0.0]], &[1e-6]), Err(LabError::Precision(_))));
    }

    #[test]
    fn dirac_and_cantor_densities_blow_up() {
        let dirac = EmpiricalMeasure {
            atoms: vec![vec![0.2]; 1000],
            weights: vec![1e-3; 1000],
            provenance: Provenance { system: "dirac".into(), p: vec![], fiber: vec![], gibbs_depth: 0, seed: 0, coding_depth: 0 },
        };
        let rep = lower_density(&dirac, &[vec![0.2]], &[1e-1, 1e-2]).unwrap();
        assert!(rep.values[0][1] >= 10.0 * rep.values[0][0] * 0.999);
        let cantor = family(&[(0.3, -0.69), (0.3, 0.69)]);
        let g = gibbs_weights(&cantor, &[0.5], &[], 6, 2f64.ln() / -(0.3f64).ln()).unwrap();
        let mu = pushforward(&cantor, &[0.5], &[], &g, 100_000, 2, 40).unwrap();
        let eval: Vec<Vec<f64>> = mu.atoms.iter().take(100).cloned().collect();
        let rep = lower_density(&mu, &eval, &[1e-1, 1e-2, 1e-3]).unwrap();
        let med = |j: usize| median(rep.values.iter().map(|r| r[j]).collect());
        assert!(med(1) > 1.5 * med(0) && med(2) > 1.5 * med(1));
    }

    #[test]
    fn cover_closed_forms() {
        let fam = family(&[(0.3, -0.69), (0.3, 0.69)]);
        let est = cover_measure(&fam, &[0.5], &[], &[0, 1, 2, 3, 4, 8]).unwrap();
        for (n, m) in est.depths.iter().zip(&est.union_measure) {
            assert!((m - 2.0 * 0.6f64.powi(*n as i32)).abs() < 1e-12);
        }
        let full = family(&[(0.49, -0.505), (0.49, 0.505)]);
        let est = cover_measure(&full, &[0.5], &[], &[1, 2, 3]).unwrap();
        assert!(est.union_measure.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn address_dependent_cover_nests() {
        use crate::expr::Expr;
        use crate::skewprod::{ExprMaps, FiberSystem};
        let b = vec![
            vec![Expr::parse("(0.3 + 0.1*a1)*x - 0.5").unwrap()],
            vec![Expr::parse("(0.3 + 0.1*a1)*x + 0.5").unwrap()],
        ];
        let sys = FiberSystem::from_exprs("addr", ExprMaps::new(b).unwrap(), ParamBox::interval(0.0, 1.0).unwrap(), 0.05).unwrap();
        let est = cover_measure(&sys, &[0.5], &[1], &[0, 1, 2, 3, 4, 5, 6]).unwrap();
        assert!(est.union_measure.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        // brute force over words
        for n in 1..=6 {
            let mut pieces = Vec::new();
            for i in 0..(1usize << n) {
                let w = word_at(sys.alphabet(), n, i);
                let a = sys.compose_apply(&[0.5], &[1], &w, &[-1.0]).unwrap()[0];
                let b = sys.compose_apply(&[0.5], &[1], &w, &[1.0]).unwrap()[0];
                pieces.push((a.min(b), a.max(b)));
            }
            let m: f64 = merge_intervals(pieces).iter().map(|(a, b)| b - a).sum();
            assert!((m - est.union_measure[n]).abs() < 1e-12, "depth {n}: {m} vs {}", est.union_measure[n]);
        }
    }

    #[test]
    fn planar_cover_of_disjoint_squares_decays() {
        use crate::expr::Expr;
        use crate::skewprod::{ExprMaps, FiberSystem};
        let mut branches = Vec::new();
        for (bx, by) in [(-0.6, -0.6), (0.6, -0.6), (-0.6, 0.6), (0.6, 0.6)] {
            branches.push(vec![
                Expr::parse(&format!("0.25*x + {bx}")).unwrap(),
                Expr::parse(&format!("0.25*y + {by}")).unwrap(),
            ]);
        }
        let sys = FiberSystem::from_exprs("squares", ExprMaps::new(branches).unwrap(), ParamBox::interval(0.0, 1.0).unwrap(), 0.05).unwrap();
        let est = cover_measure(&sys, &[0.5], &[], &[0, 1, 2, 3]).unwrap();
        assert!((est.union_measure[0] - 4.0).abs() < 1e-12);
        for n in 1..4 {
            let exact = 4.0 * 0.25f64.powi(n as i32);
            assert!(est.union_measure[n] >= exact - 1e-12 && est.union_measure[n] <= exact * 1.3);
        }
    }
}
