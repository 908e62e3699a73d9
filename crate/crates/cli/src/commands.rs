use serde::Serialize;

use ifslab_core::affine_ifs::{build_interval_example, AffineBranch, AffineIfsFamily};
use ifslab_core::error::{LabError, Result};
use ifslab_core::expr::Expr;
use ifslab_core::jets::{induced_jet_system, jet_set_sampler, InducedJetSystem, JetVector};
use ifslab_core::measure_lab::{cover_measure, cover_measure_capped, parameter_scan, CoverEstimate, ParamSampler, ScanSpec};
use ifslab_core::param::ParamBox;
use ifslab_core::rng::STREAM_SCAN;
use ifslab_core::skewprod::{build_planar_blender, BlenderSpec, ExprMaps, FiberSystem, PlanarBlender, UnipotencyReport};
use ifslab_core::system::CodedSystem;
use ifslab_core::thermo::{default_dimension_depths, fmt17, gibbs_weights, pressure_curve, similarity_dimension};
use ifslab_core::transversality::{density_integral, scan_transversality, DensitySpec, PairConstraint, PairSpec};

use crate::config::{resolve, RunConfig, SystemConfig};

/// Planar grid cap used for jet covers.
const JET_GRID_CAP: usize = 256;

pub enum Built {
    Affine(AffineIfsFamily),
    Fiber(FiberSystem),
    Planar(Box<PlanarBlender>),
    Jets { base: Box<Built>, induced: Box<InducedJetSystem> },
}

impl Built {
    pub fn coded(&self) -> &dyn CodedSystem {
        match self {
            Built::Affine(f) => f,
            Built::Fiber(f) => f,
            Built::Planar(b) => &b.fiber,
            Built::Jets { induced, .. } => &induced.system,
        }
    }

    /// Whether one-letter rates determine the pressure exactly.
    pub fn multiplicative(&self) -> bool {
        match self {
            Built::Affine(_) | Built::Planar(_) => true,
            Built::Fiber(_) => false,
            Built::Jets { base, .. } => base.multiplicative(),
        }
    }

    pub fn fiber_system(&self) -> Result<FiberSystem> {
        match self {
            Built::Affine(f) => FiberSystem::from_affine(f),
            Built::Fiber(f) => Ok(f.clone()),
            Built::Planar(b) => Ok(b.fiber.clone()),
            Built::Jets { induced, .. } => Ok(induced.system.clone()),
        }
    }
}

fn parse_all(exprs: &[String]) -> Result<Vec<Expr>> {
    exprs.iter().map(|e| Expr::parse(e)).collect()
}

pub fn build(cfg: &SystemConfig) -> Result<Built> {
    match cfg {
        SystemConfig::Affine { branches, box_lo, box_hi, gamma } => {
            let branches = branches
                .iter()
                .map(|b| Ok(AffineBranch { slope: Expr::parse(&b.slope)?, offset: Expr::parse(&b.offset)? }))
                .collect::<Result<Vec<_>>>()?;
            let pbox = ParamBox::new(box_lo.clone(), box_hi.clone())?;
            Ok(Built::Affine(AffineIfsFamily::new(branches, pbox, *gamma)?))
        }
        SystemConfig::Fiber { maps, box_lo, box_hi, margin } => {
            let branches = maps.iter().map(|m| parse_all(m)).collect::<Result<Vec<_>>>()?;
            let pbox = ParamBox::new(box_lo.clone(), box_hi.clone())?;
            Ok(Built::Fiber(FiberSystem::from_exprs("fiber", ExprMaps::new(branches)?, pbox, *margin)?))
        }
        SystemConfig::PlanarBlender { n, d, s } => {
            Ok(Built::Planar(Box::new(build_planar_blender(*n, *d, *s, &BlenderSpec::default())?)))
        }
        SystemConfig::IntervalExample { n, c } => Ok(Built::Affine(build_interval_example(*n, *c)?)),
        SystemConfig::InducedJets { s, base } => {
            let base = build(base)?;
            let induced = induced_jet_system(&base.fiber_system()?, *s)?;
            Ok(Built::Jets { base: Box::new(base), induced: Box::new(induced) })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Dimension,
    Pressure,
    Scan,
    Transversality,
    DensityIntegral,
    Jets,
    BlenderDemo,
}

impl CommandKind {
    pub fn stem(self) -> &'static str {
        match self {
            CommandKind::Dimension => "dimension",
            CommandKind::Pressure => "pressure",
            CommandKind::Scan => "scan",
            CommandKind::Transversality => "transversality",
            CommandKind::DensityIntegral => "density_integral",
            CommandKind::Jets => "jets",
            CommandKind::BlenderDemo => "blender_demo",
        }
    }
}

/// One output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| LabError::Numeric(e.to_string()))
}

/// Builds the system, resolves the config and runs one command.
pub fn execute(kind: CommandKind, mut cfg: RunConfig) -> Result<(RunConfig, Vec<Artifact>)> {
    let built = build(&cfg.system)?;
    let sys = built.coded();
    let center = sys.param_box().center();
    resolve(&mut cfg, &center, sys.alphabet().size(), default_dimension_depths(sys, built.multiplicative()));
    let stem = kind.stem();
    let (csv, json_text) = match kind {
        CommandKind::Dimension => cmd_dimension(&cfg, sys)?,
        CommandKind::Pressure => cmd_pressure(&cfg, sys)?,
        CommandKind::Scan => cmd_scan(&cfg, sys)?,
        CommandKind::Transversality => cmd_transversality(&cfg, sys)?,
        CommandKind::DensityIntegral => cmd_density_integral(&cfg, sys)?,
        CommandKind::Jets => cmd_jets(&cfg, &built)?,
        CommandKind::BlenderDemo => cmd_blender_demo(&cfg, &built)?,
    };
    let mut out = Vec::new();
    if let Some(csv) = csv {
        out.push(Artifact { name: format!("{stem}.csv"), contents: csv });
    }
    out.push(Artifact { name: format!("{stem}.json"), contents: json_text });
    Ok((cfg, out))
}

fn param_points(cfg: &RunConfig, sys: &dyn CodedSystem) -> Result<Vec<Vec<f64>>> {
    if let Some(points) = &cfg.params.points {
        for p in points {
            sys.param_box().check_extended(p)?;
        }
        return Ok(points.clone());
    }
    let count = cfg.params.count.unwrap_or(16);
    let pbox = sys.param_box();
    let sampler = if pbox.dim() == 1 {
        ParamSampler::Grid { count }
    } else {
        ParamSampler::MonteCarlo { count, seed: cfg.seed }
    };
    sampler.points(pbox, STREAM_SCAN)
}

type Outputs = (Option<String>, String);

fn csv_header(d: usize, rest: &str) -> String {
    let mut cols: Vec<String> = (0..d).map(|i| format!("p{i}")).collect();
    cols.push(rest.to_string());
    cols.join(",") + "\n"
}

fn csv_params(p: &[f64]) -> String {
    p.iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(",")
}

#[derive(Serialize)]
struct DimensionRow {
    p: Vec<f64>,
    dimension: f64,
}

#[derive(Serialize)]
struct DimensionReport {
    depths: Vec<usize>,
    rows: Vec<DimensionRow>,
}

fn cmd_dimension(cfg: &RunConfig, sys: &dyn CodedSystem) -> Result<Outputs> {
    let depths = cfg.dimension.depths.clone().unwrap_or_default();
    let tol = cfg.dimension.tolerance.unwrap_or(ifslab_core::thermo::DIMENSION_TOL);
    let mut rows = Vec::new();
    for p in param_points(cfg, sys)? {
        let dimension = similarity_dimension(sys, &p, &[], &depths, tol)?;
        rows.push(DimensionRow { p, dimension });
    }
    let mut csv = csv_header(sys.param_box().dim(), "dimension");
    for r in &rows {
        csv.push_str(&format!("{},{}\n", csv_params(&r.p), fmt17(r.dimension)));
    }
    Ok((Some(csv), json(&DimensionReport { depths, rows })?))
}

fn cmd_pressure(cfg: &RunConfig, sys: &dyn CodedSystem) -> Result<Outputs> {
    let p = cfg.pressure.p.clone().unwrap_or_default();
    let s_grid = cfg.pressure.s_grid.clone().unwrap_or_default();
    let depths = cfg.pressure.depths.clone().unwrap_or_default();
    let curve = pressure_curve(sys, &p, &[], &s_grid, &depths)?;
    Ok((Some(curve.to_csv()), json(&curve)?))
}

fn cmd_scan(cfg: &RunConfig, sys: &dyn CodedSystem) -> Result<Outputs> {
    let s = &cfg.scan;
    let spec = ScanSpec {
        dimension_depths: cfg.dimension.depths.clone().unwrap_or_default(),
        cover_depths: s.cover_depths.clone().unwrap_or_default(),
        gibbs_depth: s.gibbs_depth.unwrap_or(4),
        coding_depth: s.coding_depth.unwrap_or(40),
        atoms: s.atoms.unwrap_or(10_000),
        eval_points: s.eval_points.unwrap_or(200),
        radii: s.radii.clone().unwrap_or_default(),
        seed: cfg.seed,
        cover_threshold: s.cover_threshold.unwrap_or(0.05),
    };
    let table = parameter_scan(sys, &param_points(cfg, sys)?, &spec)?;
    Ok((Some(table.to_csv()), json(&table)?))
}

fn cmd_transversality(cfg: &RunConfig, sys: &dyn CodedSystem) -> Result<Outputs> {
    let t = &cfg.transversality;
    let constraint = match t.alpha_last {
        Some(letter) => PairConstraint::AlphaEnds { letter },
        None => PairConstraint::Distinct,
    };
    let spec = PairSpec { count: t.pairs.unwrap_or(50), constraint, seed: cfg.seed };
    let samples = t.samples.unwrap_or(10_000);
    let sampler = if sys.param_box().dim() == 1 {
        ParamSampler::Grid { count: samples }
    } else {
        ParamSampler::MonteCarlo { count: samples, seed: cfg.seed }
    };
    let scan = scan_transversality(sys, &spec, &t.radii.clone().unwrap_or_default(), &sampler)?;
    Ok((Some(scan.to_csv()), json(&scan)?))
}

fn cmd_density_integral(cfg: &RunConfig, sys: &dyn CodedSystem) -> Result<Outputs> {
    let d = &cfg.density;
    let p0 = d.p0.clone().unwrap_or_default();
    let depths = cfg.dimension.depths.clone().unwrap_or_default();
    let dim = similarity_dimension(sys, &p0, &[], &depths, ifslab_core::thermo::DIMENSION_TOL)?;
    let gibbs = gibbs_weights(sys, &p0, &[], d.gibbs_depth.unwrap_or(4), dim)?;
    let spec = DensitySpec {
        radii: d.radii.clone().unwrap_or_default(),
        pair_samples: d.pairs.unwrap_or(100_000),
        param_points: d.param_points.unwrap_or(33),
        seed: cfg.seed,
    };
    let report = density_integral(sys, &p0, d.delta.unwrap_or(0.1), &gibbs, &spec)?;
    let mut csv = String::from("radius,value,std_error,reliable\n");
    for (j, r) in report.radii.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt17(*r),
            fmt17(report.values[j]),
            fmt17(report.std_errors[j]),
            report.reliable[j]
        ));
    }
    Ok((Some(csv), json(&report)?))
}

#[derive(Serialize)]
struct JetsReport {
    d: usize,
    s: usize,
    jet_dim: usize,
    radii: Vec<f64>,
    unipotency: UnipotencyReport,
    base_dimension: f64,
    dimension: f64,
    /// Target `δ_{d,s}`; the induced set can carry positive measure only above it.
    dimension_exceeds_jet_dim: bool,
    cover: Option<CoverEstimate>,
    sample_jets: Vec<JetVector>,
}

fn cmd_jets(cfg: &RunConfig, built: &Built) -> Result<Outputs> {
    let Built::Jets { base, induced } = built else {
        return Err(LabError::Config("the jets command needs a system of kind induced-jets".into()));
    };
    let j = &cfg.jets;
    let p0 = j.p0.clone().unwrap_or_default();
    let depths = cfg.dimension.depths.clone().unwrap_or_default();
    let tol = ifslab_core::thermo::DIMENSION_TOL;
    let base_dimension = similarity_dimension(base.coded(), &p0, &[], &depths, tol)?;
    let sys = &induced.system;
    let dimension = similarity_dimension(sys, &p0, &[], &depths, tol)?;
    let cover = if sys.fiber_dim() <= 2 {
        Some(cover_measure_capped(sys, &p0, &[], &j.cover_depths.clone().unwrap_or_default(), JET_GRID_CAP)?)
    } else {
        None
    };
    let gibbs = gibbs_weights(sys, &p0, &[], j.gibbs_depth.unwrap_or(4), dimension)?;
    let coding_depth = j.coding_depth.unwrap_or(40);
    let mu = jet_set_sampler(induced, &gibbs, &p0, j.atoms.unwrap_or(1000), cfg.seed, coding_depth)?;
    let sample_jets = mu.atoms.iter().take(10).map(|y| induced.from_state(y, &p0)).collect();
    let report = JetsReport {
        d: induced.set.vars(),
        s: induced.set.order(),
        jet_dim: induced.set.len(),
        radii: induced.radii.clone(),
        unipotency: sys.unipotency().clone(),
        base_dimension,
        dimension,
        dimension_exceeds_jet_dim: dimension > induced.set.len() as f64,
        cover,
        sample_jets,
    };
    Ok((None, json(&report)?))
}

#[derive(Serialize)]
struct BlenderReport {
    n: usize,
    d: usize,
    s: usize,
    n_prime: usize,
    entropy: f64,
    contraction_log: f64,
    entropy_ratio: f64,
    entropy_exceeds_contraction: bool,
    fiber_dimension: f64,
    fiber_cover: CoverEstimate,
    occupancy: Vec<f64>,
    resolution: usize,
    y0: f64,
}

fn cmd_blender_demo(cfg: &RunConfig, built: &Built) -> Result<Outputs> {
    let Built::Planar(blender) = built else {
        return Err(LabError::Config("the blender demo needs a system of kind planar-blender".into()));
    };
    let b = &cfg.blender;
    let p = blender.fiber.param_box().center();
    let depths = cfg.dimension.depths.clone().unwrap_or_default();
    let fiber_dimension = similarity_dimension(&blender.fiber, &p, &[], &depths, ifslab_core::thermo::DIMENSION_TOL)?;
    let fiber_cover = cover_measure(&blender.fiber, &p, &[], &b.cover_depths.clone().unwrap_or_default())?;
    let resolution = b.resolution.unwrap_or(512);
    let y0 = b.y0.unwrap_or(0.0);
    let occupancy = blender.unstable_occupancy(&p, y0, b.depth.unwrap_or(10), resolution)?;
    let mut csv = String::from("depth,occupancy\n");
    for (m, v) in occupancy.iter().enumerate() {
        csv.push_str(&format!("{m},{}\n", fmt17(*v)));
    }
    let report = BlenderReport {
        n: blender.n,
        d: blender.d,
        s: blender.s,
        n_prime: blender.n_prime,
        entropy: blender.entropy,
        contraction_log: blender.contraction_log,
        entropy_ratio: blender.entropy_ratio(),
        entropy_exceeds_contraction: blender.entropy_exceeds_contraction(),
        fiber_dimension,
        fiber_cover,
        occupancy,
        resolution,
        y0,
    };
    Ok((Some(csv), json(&report)?))
}
