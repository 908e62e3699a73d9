//! Run configuration read from TOML.
//!
//! Every section has defaults; [`RunConfig::resolve`] expands them so the
//! written `resolved.toml` fully determines a run.

use serde::{Deserialize, Serialize};

use ifslab_core::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub dimension: DimensionConfig,
    #[serde(default)]
    pub pressure: PressureConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub transversality: TransversalityConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub jets: JetsConfig,
    #[serde(default)]
    pub blender: BlenderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub slope: String,
    pub offset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    Affine {
        branches: Vec<BranchConfig>,
        box_lo: Vec<f64>,
        box_hi: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<(f64, f64)>,
    },
    Fiber {
        /// One list of coordinate expressions per letter.
        maps: Vec<Vec<String>>,
        box_lo: Vec<f64>,
        box_hi: Vec<f64>,
        #[serde(default = "default_margin")]
        margin: f64,
    },
    PlanarBlender {
        n: usize,
        #[serde(default = "one")]
        d: usize,
        #[serde(default)]
        s: usize,
    },
    IntervalExample {
        n: usize,
        c: f64,
    },
    InducedJets {
        s: usize,
        base: Box<SystemConfig>,
    },
}

fn default_margin() -> f64 {
    ifslab_core::system::CUBE_MARGIN
}

fn one() -> usize {
    1
}

/// Parameters at which pointwise commands evaluate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    /// Midpoint grid size (one-dimensional boxes) or Monte Carlo count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cover_depths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gibbs_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coding_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cover_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransversalityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    /// When set, `α₋₁` is this letter and `β₋₁` differs from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_last: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gibbs_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JetsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cover_depths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gibbs_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coding_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlenderConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cover_depths: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }
}

/// Fills every unset field. `param_dim` and `center` describe the system's
/// parameter box; `alphabet` its size.
pub fn resolve(cfg: &mut RunConfig, center: &[f64], alphabet: usize, default_depths: Vec<usize>) {
    let d = center.len();
    cfg.params.count.get_or_insert(if d == 1 { 16 } else { 64 });
    cfg.dimension.depths.get_or_insert(default_depths.clone());
    cfg.dimension.tolerance.get_or_insert(ifslab_core::thermo::DIMENSION_TOL);

    cfg.pressure.p.get_or_insert_with(|| center.to_vec());
    cfg.pressure.s_grid.get_or_insert_with(|| (0..=8).map(|i| i as f64 * 0.25).collect());
    cfg.pressure.depths.get_or_insert_with(|| {
        (1..=8).filter(|&n| (alphabet as f64).powi(n as i32) <= 1e6).collect()
    });

    let scan = ifslab_core::measure_lab::ScanSpec::default();
    cfg.scan.cover_depths.get_or_insert(scan.cover_depths);
    cfg.scan.gibbs_depth.get_or_insert(scan.gibbs_depth.min(max_depth(alphabet, 1e5)));
    cfg.scan.coding_depth.get_or_insert(scan.coding_depth);
    cfg.scan.atoms.get_or_insert(scan.atoms);
    cfg.scan.eval_points.get_or_insert(scan.eval_points);
    cfg.scan.radii.get_or_insert(scan.radii);
    cfg.scan.cover_threshold.get_or_insert(scan.cover_threshold);

    cfg.transversality.pairs.get_or_insert(50);
    cfg.transversality.radii.get_or_insert_with(|| vec![1e-2, 1e-3, 1e-4]);
    cfg.transversality.samples.get_or_insert(if d == 1 { 10_000 } else { 100_000 });

    cfg.density.p0.get_or_insert_with(|| center.to_vec());
    cfg.density.delta.get_or_insert(0.1);
    cfg.density.gibbs_depth.get_or_insert(max_depth(alphabet, 1e5).min(6));
    cfg.density.radii.get_or_insert_with(|| vec![1e-2, 1e-3, 1e-4]);
    cfg.density.pairs.get_or_insert(100_000);
    cfg.density.param_points.get_or_insert(33);

    cfg.jets.p0.get_or_insert_with(|| center.to_vec());
    cfg.jets.cover_depths.get_or_insert_with(|| vec![2, 4, 6, 8]);
    cfg.jets.atoms.get_or_insert(1000);
    cfg.jets.gibbs_depth.get_or_insert(max_depth(alphabet, 1e5).min(4));
    cfg.jets.coding_depth.get_or_insert(40);

    cfg.blender.depth.get_or_insert(10);
    cfg.blender.resolution.get_or_insert(512);
    cfg.blender.y0.get_or_insert(0.0);
    cfg.blender.cover_depths.get_or_insert_with(|| vec![2, 4, 6, 8]);
}

/// Largest `n ≥ 1` with `k^n ≤ cap`.
fn max_depth(k: usize, cap: f64) -> usize {
    (1..64).take_while(|&n| (k as f64).powi(n as i32) <= cap).last().unwrap_or(1)
}
