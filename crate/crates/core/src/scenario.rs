//! Scenario files: which system to study, which stages to run and what the
//! results must satisfy.
//!
//! A scenario is a TOML document. Everything except `[scenario]` is
//! optional; a fixture supplies the family, rate, norms and `Z` unless the
//! corresponding section overrides it.
//!
//! ```toml
//! [scenario]
//! name = "diag2d"
//! fixture = "diag2d"
//! stages = ["validate", "detect", "adapt"]
//!
//! [expect]
//! dichotomy = true
//! lambda = 1.0
//! ```
//!
//! Every file written by [`run_scenario`] depends only on the configuration:
//! no timestamps, no timings, seeded probes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::adapted::{adapted_equivalence_check, adapted_uniformity_check, AdaptedNorms};
use crate::dichotomy::{detect, grid_pairs, verify_dichotomy, DetectConfig, Detection, SplitConfig};
use crate::error::{Error, Result};
use crate::family::{
    builtin_generator, check_norm_axioms, cocycle_residual, continuity_check, norm_bounds_estimate, BaseNorm,
    EvolutionFamily, NormFamily, WeightedNorm,
};
use crate::fixtures::{builtin_fixture, builtin_perturbation, bundled_suite, Fixture};
use crate::funcspaces::{SampledFunction, SubspaceZ};
use crate::green::{admissibility_probe, green_y1, green_yinf, Pair, ProbeConfig};
use crate::io;
use crate::linalg::{max_principal_angle, orthonormal_basis, to_rows, unit, Matrix, Vector};
use crate::rates::{make_rate, uniform_grid, validate_rate, Density, RateFunction, RateSpec, TimeGrid};
use crate::robust::{
    delta_sweep, lemma_identity_defect, perturbation_operator_bounds, perturbed_family, robustness_experiment,
    solve_perturbed_matrix, PerturbationFamily, PicardSettings,
};

/// Environment variable overriding the output root.
pub const OUTPUT_ROOT_VAR: &str = "GENDICH_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Detect,
    Adapt,
    ProbeY1,
    ProbeYinf,
    Perturb,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Detect => "detect",
            Stage::Adapt => "adapt",
            Stage::ProbeY1 => "probe_y1",
            Stage::ProbeYinf => "probe_yinf",
            Stage::Perturb => "perturb",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub name: String,
    #[serde(default)]
    pub fixture: Option<String>,
    pub stages: Vec<Stage>,
    /// Output subdirectory; defaults to `name`.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// `diag(e^{k₁(t−s)}, …)`.
    Exponential { exponents: Vec<f64> },
    /// ODE with a built-in generator (`rotation`, `scalar_decay`, `hyperbolic2d`).
    Ode {
        generator: String,
        #[serde(default)]
        param: Option<f64>,
        #[serde(default = "default_ode_tol")]
        tol: f64,
    },
    /// ODE with a generator sampled from CSV (`t,a11,...`).
    OdeCsv {
        path: String,
        #[serde(default = "default_ode_tol")]
        tol: f64,
    },
}

fn default_ode_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateConfig {
    Identity,
    Log1p,
    MuIntegral { density: DensityConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Constant { value: f64 },
    InvOnePlusT,
    Affine { a: f64, b: f64 },
    Csv { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormConfig {
    Base,
    /// `(1+t)^p ‖x‖`.
    Power { p: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZConfig {
    Trivial,
    /// Complement of the stable space at 0.
    Complement,
    /// Span of coordinate axes (0-based).
    Axes { axes: Vec<usize> },
    Csv { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateKnobs {
    pub t_max: f64,
    pub step: f64,
    pub triples: usize,
    pub norm_samples: usize,
    pub continuity_points: usize,
}

impl Default for ValidateKnobs {
    fn default() -> Self {
        ValidateKnobs { t_max: 10.0, step: 0.1, triples: 100, norm_samples: 20, continuity_points: 64 }
    }
}

/// Overrides of the fixture's detection settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectKnobs {
    pub horizon_span: Option<f64>,
    pub gap_margin: Option<f64>,
    pub fit_grid: Option<TimeGrid>,
    pub verify_grid: Option<TimeGrid>,
    pub random_probes: Option<usize>,
    pub nonuniform: Option<bool>,
    pub tol: Option<f64>,
    /// Certificates `(D, λ)` built from these lists (all combinations) and
    /// rechecked against the detected projections, or `P = Id` when
    /// detection finds none.
    #[serde(default)]
    pub challenge_d: Vec<f64>,
    #[serde(default)]
    pub challenge_lambda: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptKnobs {
    pub horizon: f64,
    pub grid: TimeGrid,
}

impl Default for AdaptKnobs {
    fn default() -> Self {
        AdaptKnobs { horizon: 20.0, grid: TimeGrid::Uniform { t_max: 8.0, step: 0.5 } }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeKnobs {
    pub t_max: Option<f64>,
    pub step: Option<f64>,
    pub b_max: Option<f64>,
    pub growth_tol: Option<f64>,
    pub uniqueness_tol: Option<f64>,
    /// CSV inputs replacing the bundled suite (must share one grid).
    #[serde(default)]
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbKnobs {
    /// `zero`, `envelope`, `constant` or `csv`.
    pub kind: String,
    #[serde(default = "default_pattern")]
    pub pattern: String,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub picard_tol: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub rho_spacing: Option<f64>,
}

fn default_pattern() -> String {
    "identity".into()
}

fn default_a() -> f64 {
    1.0
}

/// Assertions; each must refer to a stage that runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    pub rate_valid: Option<bool>,
    pub norm_axioms: Option<bool>,
    pub cocycle_max: Option<f64>,
    pub continuous: Option<bool>,
    pub dichotomy: Option<bool>,
    pub lambda: Option<f64>,
    pub lambda_rel_tol: f64,
    pub d_max: Option<f64>,
    pub projection: Option<Vec<Vec<f64>>>,
    pub projection_angle: f64,
    pub challenges_fail: Option<bool>,
    pub adapted_uniform: Option<bool>,
    pub adapted_equivalent: Option<bool>,
    pub y1_solvable: Option<bool>,
    pub yinf_solvable: Option<bool>,
    pub green_bounds: Option<bool>,
    pub perturbation_bound: Option<bool>,
    pub operator_bounds: Option<bool>,
    pub picard_iters_max: Option<usize>,
    pub zero_identity_max: Option<f64>,
    pub lemma_defect_max: Option<f64>,
    pub perturbed_lambda_min: Option<f64>,
    pub sweep_monotone: Option<bool>,
}

impl Default for Expectations {
    fn default() -> Self {
        Expectations {
            rate_valid: None,
            norm_axioms: None,
            cocycle_max: None,
            continuous: None,
            dichotomy: None,
            lambda: None,
            lambda_rel_tol: 0.05,
            d_max: None,
            projection: None,
            projection_angle: 1e-3,
            challenges_fail: None,
            adapted_uniform: None,
            adapted_equivalent: None,
            y1_solvable: None,
            yinf_solvable: None,
            green_bounds: None,
            perturbation_bound: None,
            operator_bounds: None,
            picard_iters_max: None,
            zero_identity_max: None,
            lemma_defect_max: None,
            perturbed_lambda_min: None,
            sweep_monotone: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Header,
    pub family: Option<FamilyConfig>,
    pub rate: Option<RateConfig>,
    pub norms: Option<NormConfig>,
    pub z: Option<ZConfig>,
    #[serde(default)]
    pub validate: ValidateKnobs,
    #[serde(default)]
    pub detect: DetectKnobs,
    #[serde(default)]
    pub adapt: AdaptKnobs,
    #[serde(default)]
    pub probe: ProbeKnobs,
    pub perturb: Option<PerturbKnobs>,
    #[serde(default)]
    pub expect: Expectations,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Everything resolved before computing.
pub struct Prepared {
    pub config: ScenarioConfig,
    pub family: EvolutionFamily,
    pub rate: RateFunction,
    pub norms: Arc<dyn NormFamily>,
    pub z: Option<SubspaceZ>,
    pub detect: DetectConfig,
    pub probe: ProbeConfig,
    pub probe_grid: (f64, f64),
    pub probe_inputs: Option<Vec<SampledFunction>>,
    pub perturbation: Option<(PerturbationFamily, PicardSettings)>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_grid(what: &str, g: &TimeGrid) -> Result<()> {
    let (end, step) = match *g {
        TimeGrid::Uniform { t_max, step } => (t_max, step),
        TimeGrid::RhoUniform { rho_max, step } => (rho_max, step),
    };
    if !(end > 0.0 && step > 0.0 && step <= end) {
        return Err(config_err(format!("{what}: need 0 < step ≤ end, got end {end}, step {step}")));
    }
    Ok(())
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{what} must be positive and finite, got {v}")))
    }
}

fn rate_from(cfg: &RateConfig, base: &Path) -> Result<RateFunction> {
    let spec = match cfg {
        RateConfig::Identity => RateSpec::Identity,
        RateConfig::Log1p => RateSpec::Log1p,
        RateConfig::MuIntegral { density } => RateSpec::MuIntegral(match density {
            DensityConfig::Constant { value } => Density::Constant(*value),
            DensityConfig::InvOnePlusT => Density::InvOnePlusT,
            DensityConfig::Affine { a, b } => Density::Affine { a: *a, b: *b },
            DensityConfig::Csv { path } => io::read_density(&base.join(path))?,
        }),
    };
    make_rate(&spec)
}

fn family_from(cfg: &FamilyConfig, base: &Path) -> Result<EvolutionFamily> {
    match cfg {
        FamilyConfig::Exponential { exponents } => {
            if exponents.is_empty() {
                return Err(config_err("family.exponents must not be empty"));
            }
            let k = Vector::from_vec(exponents.clone());
            let name = format!("exponential{exponents:?}");
            Ok(EvolutionFamily::closed_form(name, k.len(), move |t, s| {
                Matrix::from_diagonal(&k.map(|ki| (ki * (t - s)).exp()))
            }))
        }
        FamilyConfig::Ode { generator, param, tol } => {
            positive("family.tol", *tol)?;
            let gen = builtin_generator(generator, *param)?;
            Ok(EvolutionFamily::ode(generator.clone(), gen, *tol))
        }
        FamilyConfig::OdeCsv { path, tol } => {
            positive("family.tol", *tol)?;
            let gen = io::read_generator(&base.join(path))?;
            Ok(EvolutionFamily::ode(path.clone(), gen, *tol))
        }
    }
}

fn z_from(cfg: &ZConfig, dim: usize, base: &Path) -> Result<Option<SubspaceZ>> {
    match cfg {
        ZConfig::Trivial => Ok(Some(SubspaceZ::trivial(dim))),
        ZConfig::Complement => Ok(None),
        ZConfig::Axes { axes } => {
            let mut m = Matrix::zeros(dim, axes.len());
            for (j, &i) in axes.iter().enumerate() {
                if i >= dim {
                    return Err(config_err(format!("z.axes: axis {i} outside dimension {dim}")));
                }
                m[(i, j)] = 1.0;
            }
            Ok(Some(SubspaceZ::span(&m)))
        }
        ZConfig::Csv { path } => Ok(Some(io::read_subspace(&base.join(path))?)),
    }
}

fn expectation_stages(e: &Expectations) -> Vec<(&'static str, bool, Stage)> {
    vec![
        ("rate_valid", e.rate_valid.is_some(), Stage::Validate),
        ("norm_axioms", e.norm_axioms.is_some(), Stage::Validate),
        ("cocycle_max", e.cocycle_max.is_some(), Stage::Validate),
        ("continuous", e.continuous.is_some(), Stage::Validate),
        ("dichotomy", e.dichotomy.is_some(), Stage::Detect),
        ("lambda", e.lambda.is_some(), Stage::Detect),
        ("d_max", e.d_max.is_some(), Stage::Detect),
        ("projection", e.projection.is_some(), Stage::Detect),
        ("challenges_fail", e.challenges_fail.is_some(), Stage::Detect),
        ("adapted_uniform", e.adapted_uniform.is_some(), Stage::Adapt),
        ("adapted_equivalent", e.adapted_equivalent.is_some(), Stage::Adapt),
        ("y1_solvable", e.y1_solvable.is_some(), Stage::ProbeY1),
        ("yinf_solvable", e.yinf_solvable.is_some(), Stage::ProbeYinf),
        ("perturbation_bound", e.perturbation_bound.is_some(), Stage::Perturb),
        ("operator_bounds", e.operator_bounds.is_some(), Stage::Perturb),
        ("picard_iters_max", e.picard_iters_max.is_some(), Stage::Perturb),
        ("zero_identity_max", e.zero_identity_max.is_some(), Stage::Perturb),
        ("lemma_defect_max", e.lemma_defect_max.is_some(), Stage::Perturb),
        ("perturbed_lambda_min", e.perturbed_lambda_min.is_some(), Stage::Perturb),
        ("sweep_monotone", e.sweep_monotone.is_some(), Stage::Perturb),
    ]
}

/// Resolves fixtures, files and knobs; every configuration error surfaces
/// here, before any computation. Relative paths are taken from `base`.
pub fn prepare(config: ScenarioConfig, base: &Path) -> Result<Prepared> {
    let h = &config.scenario;
    if h.stages.is_empty() {
        return Err(config_err("scenario.stages must name at least one stage"));
    }
    for (i, s) in h.stages.iter().enumerate() {
        if h.stages[..i].contains(s) {
            return Err(config_err(format!("stage `{}` listed twice", s.name())));
        }
    }
    let has = |s: Stage| h.stages.contains(&s);
    if has(Stage::Adapt) && !has(Stage::Detect) {
        return Err(config_err("stage `adapt` needs `detect`"));
    }
    if has(Stage::Perturb) && config.perturb.is_none() {
        return Err(config_err("stage `perturb` needs a [perturb] section"));
    }
    for (name, set, stage) in expectation_stages(&config.expect) {
        if set && !has(stage) {
            return Err(config_err(format!("expect.{name} needs stage `{}`", stage.name())));
        }
    }
    if config.expect.green_bounds.is_some() && !(has(Stage::Detect) && (has(Stage::ProbeY1) || has(Stage::ProbeYinf))) {
        return Err(config_err("expect.green_bounds needs `detect` and a probe stage"));
    }
    positive("expect.lambda_rel_tol", config.expect.lambda_rel_tol)?;

    let fixture: Option<Fixture> = h.fixture.as_deref().map(builtin_fixture).transpose()?;
    let family = match (&config.family, &fixture) {
        (Some(f), _) => family_from(f, base)?,
        (None, Some(fx)) => fx.family.clone(),
        (None, None) => return Err(config_err("either scenario.fixture or a [family] section is required")),
    };
    let dim = family.dim();
    let rate = match (&config.rate, &fixture) {
        (Some(r), _) => rate_from(r, base)?,
        (None, Some(fx)) => fx.rate.clone(),
        (None, None) => RateFunction::identity(),
    };
    let norms: Arc<dyn NormFamily> = match (&config.norms, &fixture) {
        (Some(NormConfig::Base), _) => Arc::new(BaseNorm),
        (Some(NormConfig::Power { p }), _) => {
            if !(*p >= 0.0) {
                return Err(config_err(format!("norms.p must be nonnegative, got {p}")));
            }
            Arc::new(WeightedNorm::power(*p))
        }
        (None, Some(fx)) => fx.norms.clone(),
        (None, None) => Arc::new(BaseNorm),
    };
    let z = match (&config.z, &fixture) {
        (Some(zc), _) => z_from(zc, dim, base)?,
        (None, Some(fx)) => fx.z.clone(),
        (None, None) => None,
    };
    if let Some(z) = &z {
        if z.ambient_dim() != dim {
            return Err(config_err(format!("Z lives in dimension {}, family in {dim}", z.ambient_dim())));
        }
    }

    let v = &config.validate;
    positive("validate.t_max", v.t_max)?;
    positive("validate.step", v.step)?;
    if v.step > v.t_max {
        return Err(config_err("validate.step exceeds validate.t_max"));
    }

    let k = &config.detect;
    let mut detect_cfg = fixture.as_ref().map(|f| f.detect).unwrap_or_default();
    detect_cfg.seed = h.seed;
    let split = SplitConfig {
        horizon_span: k.horizon_span.unwrap_or(detect_cfg.split.horizon_span),
        gap_margin: k.gap_margin.unwrap_or(detect_cfg.split.gap_margin),
        ..detect_cfg.split
    };
    if !(split.horizon_span >= 5.0) {
        return Err(config_err(format!("detect.horizon_span must be ≥ 5 (ρ units), got {}", split.horizon_span)));
    }
    positive("detect.gap_margin", split.gap_margin)?;
    detect_cfg.split = split;
    if let Some(g) = k.fit_grid {
        detect_cfg.fit_grid = g;
    }
    if let Some(g) = k.verify_grid {
        detect_cfg.verify_grid = g;
    }
    check_grid("detect.fit_grid", &detect_cfg.fit_grid)?;
    check_grid("detect.verify_grid", &detect_cfg.verify_grid)?;
    if let Some(n) = k.random_probes {
        detect_cfg.random_probes = n;
    }
    if let Some(b) = k.nonuniform {
        detect_cfg.nonuniform = b;
    }
    if let Some(t) = k.tol {
        positive("detect.tol", t)?;
        detect_cfg.tol = t;
    }
    for &d in &k.challenge_d {
        positive("detect.challenge_d", d)?;
    }
    for &l in &k.challenge_lambda {
        positive("detect.challenge_lambda", l)?;
    }
    if k.challenge_d.is_empty() != k.challenge_lambda.is_empty() {
        return Err(config_err("detect.challenge_d and detect.challenge_lambda go together"));
    }

    if !(config.adapt.horizon >= 0.0) {
        return Err(config_err(format!("adapt.horizon must be nonnegative, got {}", config.adapt.horizon)));
    }
    check_grid("adapt.grid", &config.adapt.grid)?;

    let p = &config.probe;
    let mut probe = ProbeConfig::default();
    if let Some(b) = p.b_max {
        positive("probe.b_max", b)?;
        probe.b_max = b;
    }
    if let Some(g) = p.growth_tol {
        positive("probe.growth_tol", g)?;
        probe.growth_tol = g;
    }
    if let Some(u) = p.uniqueness_tol {
        positive("probe.uniqueness_tol", u)?;
        probe.uniqueness_tol = u;
    }
    let fixture_grid = fixture.as_ref().map_or((20.0, 0.01), |f| f.probe_grid);
    let probe_grid = (p.t_max.unwrap_or(fixture_grid.0), p.step.unwrap_or(fixture_grid.1));
    positive("probe.t_max", probe_grid.0)?;
    positive("probe.step", probe_grid.1)?;
    if probe_grid.1 > probe_grid.0 {
        return Err(config_err("probe.step exceeds probe.t_max"));
    }
    let probe_inputs = if p.inputs.is_empty() {
        None
    } else {
        let fs = p
            .inputs
            .iter()
            .map(|f| io::read_sampled_function(&base.join(f)))
            .collect::<Result<Vec<_>>>()?;
        if fs.iter().any(|f| f.dim() != dim || f.grid() != fs[0].grid()) {
            return Err(config_err("probe.inputs must match the family dimension and share one grid"));
        }
        Some(fs)
    };

    let perturbation = match &config.perturb {
        None => None,
        Some(pk) => {
            if !(pk.delta >= 0.0) || pk.deltas.iter().any(|d| !(*d >= 0.0)) {
                return Err(config_err("perturb.delta values must be nonnegative"));
            }
            positive("perturb.a", pk.a)?;
            if !(pk.epsilon >= 0.0) {
                return Err(config_err("perturb.epsilon must be nonnegative"));
            }
            let b = if pk.kind == "csv" {
                let path = pk.path.as_ref().ok_or_else(|| config_err("perturb.kind = \"csv\" needs perturb.path"))?;
                let (t, m) = io::parse_matrix_samples(std::fs::File::open(base.join(path))?)?;
                let gen = crate::family::sampled_generator(path.clone(), t, m)?;
                if gen.dim() != dim {
                    return Err(config_err(format!("perturbation has dimension {}, family {dim}", gen.dim())));
                }
                PerturbationFamily::new(path.clone(), dim, move |t| gen.at(t), pk.delta, pk.a, pk.epsilon)
            } else {
                if !pk.deltas.is_empty() && pk.kind == "zero" {
                    return Err(config_err("perturb.deltas needs a scalable perturbation"));
                }
                builtin_perturbation(&pk.kind, &pk.pattern, dim, &rate, pk.delta, pk.a, pk.epsilon)?
            };
            if !pk.deltas.is_empty() && pk.kind == "csv" {
                return Err(config_err("perturb.deltas is not available for CSV perturbations"));
            }
            let mut settings = PicardSettings::default();
            if let Some(t) = pk.picard_tol {
                positive("perturb.picard_tol", t)?;
                settings.tol = t;
            }
            if let Some(n) = pk.max_iters {
                if n == 0 {
                    return Err(config_err("perturb.max_iters must be positive"));
                }
                settings.max_iters = n;
            }
            if let Some(sp) = pk.rho_spacing {
                positive("perturb.rho_spacing", sp)?;
                settings.rho_spacing = sp;
            }
            Some((b, settings))
        }
    };

    Ok(Prepared {
        config,
        family,
        rate,
        norms,
        z,
        detect: detect_cfg,
        probe,
        probe_grid,
        probe_inputs,
        perturbation,
    })
}

/// One reported quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Line {
    pub key: String,
    pub value: String,
    /// Pass/fail of a diagnostic, if it has one.
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub expected: String,
    pub observed: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Outcome {
    pub lines: Vec<Line>,
    pub assertions: Vec<Assertion>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    fn line(&mut self, key: impl Into<String>, value: impl Cell, pass: Option<bool>) {
        self.lines.push(Line { key: key.into(), value: value.cell(), pass });
    }

    fn assert(&mut self, name: &str, expected: impl Cell, observed: impl Cell, pass: bool) {
        self.assertions.push(Assertion { name: name.into(), expected: expected.cell(), observed: observed.cell(), pass });
    }
}

/// Summary formatting: shortest round-trip form for moderate magnitudes,
/// scientific otherwise.
trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        let a = self.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e6).contains(&a) {
            self.to_string()
        } else {
            format!("{self:e}")
        }
    }
}

impl Cell for bool {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl Cell for usize {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl Cell for String {
    fn cell(&self) -> String {
        self.clone()
    }
}

impl Cell for &str {
    fn cell(&self) -> String {
        self.to_string()
    }
}

/// Output directory of a scenario: `$GENDICH_OUTPUT_ROOT` (or `default_root`)
/// joined with the scenario's output name.
pub fn output_dir(config: &ScenarioConfig, default_root: &Path) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| default_root.to_path_buf());
    root.join(config.scenario.output.as_deref().unwrap_or(&config.scenario.name))
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut buf = Vec::new();
        io::write_table(&mut buf, header, rows)?;
        self.text(name, &String::from_utf8_lossy(&buf))
    }

    fn function(&mut self, name: &str, f: &SampledFunction) -> Result<()> {
        let mut buf = Vec::new();
        io::write_sampled_function(&mut buf, f)?;
        self.text(name, &String::from_utf8_lossy(&buf))
    }
}

fn fmt_pair(p: Option<(f64, f64)>) -> String {
    p.map_or("-".into(), |(s, t)| format!("({s}, {t})"))
}

fn is_no_dichotomy(e: &Error) -> bool {
    matches!(e, Error::NoDichotomy(_) | Error::GapViolation { .. } | Error::DegenerateSplitting { .. })
}

/// Runs the stages in order, writing reports into `out_dir`.
pub fn run_scenario(prep: &Prepared, out_dir: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out_dir)?;
    let cfg = &prep.config;
    let exp = &cfg.expect;
    let mut out = Outcome::default();
    let mut w = Writer { dir: out_dir.to_path_buf(), files: vec![] };
    let norms: &dyn NormFamily = prep.norms.as_ref();
    let fam = &prep.family;
    let rate = &prep.rate;
    let seed = cfg.scenario.seed;
    let mut detection: Option<Detection> = None;

    for &stage in &cfg.scenario.stages {
        match stage {
            Stage::Validate => {
                let v = &cfg.validate;
                let grid = uniform_grid(v.t_max, v.step);
                let rv = validate_rate(rate, &grid)?;
                out.line("validate.rate.min_derivative", rv.min_derivative, None);
                out.line("validate.rate.inverse_error", fmt_opt(rv.max_inverse_error), None);
                out.line("validate.rate", if rv.passed { "valid" } else { "invalid" }, Some(rv.passed));
                if let Some(want) = exp.rate_valid {
                    out.assert("rate_valid", want, rv.passed, rv.passed == want);
                }
                let ax = check_norm_axioms(norms, &grid, fam.dim(), v.norm_samples, seed);
                out.line("validate.norms.axioms", if ax.passed { "hold" } else { "violated" }, Some(ax.passed));
                if let Some(want) = exp.norm_axioms {
                    out.assert("norm_axioms", want, ax.passed, ax.passed == want);
                }
                let probes = crate::dichotomy::probe_vectors(fam.dim(), v.norm_samples, seed);
                if norms.constants().is_some() {
                    let nb = norm_bounds_estimate(norms, rate, &grid, &probes)?;
                    out.line("validate.norms.c", nb.c, None);
                    out.line("validate.norms.epsilon", nb.epsilon, None);
                    if let Some(ok) = nb.claimed_ok {
                        out.line("validate.norms.claimed", ok, Some(ok));
                    }
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let triples: Vec<(f64, f64, f64)> = (0..v.triples)
                    .map(|_| {
                        let mut x = [0.0; 3].map(|_| rng.random::<f64>() * v.t_max);
                        x.sort_by(|a, b| b.total_cmp(a));
                        (x[0], x[1], x[2])
                    })
                    .collect();
                let cr = cocycle_residual(fam, &triples)?;
                let ok = exp.cocycle_max.is_none_or(|m| cr <= m);
                out.line("validate.cocycle_residual", cr, exp.cocycle_max.map(|_| ok));
                if let Some(m) = exp.cocycle_max {
                    out.assert("cocycle_max", format!("<= {m}"), cr, ok);
                }
                let cont = continuity_check(fam, 0.0, v.t_max, v.continuity_points)?;
                let verdict = match cont.continuous {
                    None => "flagged discontinuous".to_string(),
                    Some(c) => c.to_string(),
                };
                out.line("validate.continuity", verdict, cont.continuous);
                if let Some(want) = exp.continuous {
                    let obs = cont.continuous.unwrap_or(false);
                    out.assert("continuous", want, obs, obs == want);
                }
                w.csv(
                    "validate.csv",
                    &["diagnostic", "value"],
                    &[
                        vec!["rate_offset".into(), rv.rho_at_zero.to_string()],
                        vec!["rate_min_derivative".into(), rv.min_derivative.to_string()],
                        vec!["rate_monotonicity_violations".into(), rv.monotonicity_violations.len().to_string()],
                        vec!["norm_homogeneity".into(), ax.homogeneity_defect.to_string()],
                        vec!["norm_triangle".into(), ax.triangle_excess.to_string()],
                        vec!["cocycle_residual".into(), cr.to_string()],
                        vec!["continuity_jump_coarse".into(), cont.max_jump_coarse.to_string()],
                        vec!["continuity_jump_fine".into(), cont.max_jump_fine.to_string()],
                    ],
                )?;
            }
            Stage::Detect => {
                let result = detect(fam, rate, norms, prep.z.clone(), &prep.detect);
                let verified = match &result {
                    Ok(det) => {
                        let c = &det.certificate;
                        out.line("detect.lambda", c.lambda, None);
                        out.line("detect.d", c.d, None);
                        out.line("detect.epsilon", c.epsilon, None);
                        out.line("detect.m", c.m, None);
                        out.line("detect.stable_dim", det.stable_dim, None);
                        out.line("detect.d1.worst_slack", det.verification.d1.worst_slack, None);
                        out.line("detect.d2.worst_slack", det.verification.d2.worst_slack, None);
                        out.line("detect.commutation", det.verification.commutation, None);
                        out.line("detect.verified", det.verification.passed, Some(det.verification.passed));
                        w.json("certificate.json", &c.record())?;
                        w.json("verification.json", &det.verification)?;
                        det.verification.passed
                    }
                    Err(e) if is_no_dichotomy(e) => {
                        out.line("detect.verdict", format!("no dichotomy ({e})"), None);
                        false
                    }
                    Err(_) => return Err(result.err().expect("error arm")),
                };
                if let Some(want) = exp.dichotomy {
                    out.assert("dichotomy", want, verified, verified == want);
                }
                let cert = result.as_ref().ok().map(|d| &d.certificate);
                if let Some(l) = exp.lambda {
                    let obs = cert.map(|c| c.lambda);
                    let ok = obs.is_some_and(|x| (x - l).abs() <= exp.lambda_rel_tol * l.abs());
                    out.assert("lambda", format!("{l} ± {}%", exp.lambda_rel_tol * 100.0), fmt_opt(obs), ok);
                }
                if let Some(dm) = exp.d_max {
                    let obs = cert.map(|c| c.d);
                    out.assert("d_max", format!("<= {dm}"), fmt_opt(obs), obs.is_some_and(|d| d <= dm));
                }
                if let Some(p) = &exp.projection {
                    let obs = cert.map(|c| projection_angle(c.proj.at(0.0), p));
                    let ok = obs.is_some_and(|a| a <= exp.projection_angle);
                    out.assert("projection", format!("angle <= {}", exp.projection_angle), fmt_opt(obs), ok);
                }
                if !cfg.detect.challenge_d.is_empty() {
                    let all_fail = run_challenges(prep, result.as_ref().ok(), &mut out, &mut w)?;
                    if let Some(want) = exp.challenges_fail {
                        out.assert("challenges_fail", want, all_fail, all_fail == want);
                    }
                }
                detection = result.ok();
            }
            Stage::Adapt => {
                let Some(det) = detection.as_ref() else {
                    out.line("adapt.skipped", "no certificate", Some(false));
                    for name in ["adapted_uniform", "adapted_equivalent"] {
                        let want = if name == "adapted_uniform" { exp.adapted_uniform } else { exp.adapted_equivalent };
                        if let Some(want) = want {
                            out.assert(name, want, "no certificate", !want);
                        }
                    }
                    continue;
                };
                let c = &det.certificate;
                let adapted = AdaptedNorms::from_certificate(fam.clone(), rate.clone(), c, None, cfg.adapt.horizon)?;
                let grid = cfg.adapt.grid.build(rate)?;
                let pairs = grid_pairs(&grid, 300);
                let uni = adapted_uniformity_check(&adapted, &pairs, &det.probes)?;
                let eq = adapted_equivalence_check(&adapted, c.d, &grid, &pairs, &det.probes)?;
                out.line("adapt.lambda", adapted.lambda(), None);
                out.line("adapt.forward_ratio", uni.forward_ratio, None);
                out.line("adapt.backward_ratio", uni.backward_ratio, None);
                out.line("adapt.uniform", uni.passed, Some(uni.passed));
                out.line("adapt.c_hat", eq.bounds.c, None);
                out.line("adapt.epsilon_hat", eq.bounds.epsilon, None);
                out.line("adapt.equivalent", eq.passed, Some(eq.passed));
                if let Some(want) = exp.adapted_uniform {
                    out.assert("adapted_uniform", want, uni.passed, uni.passed == want);
                }
                if let Some(want) = exp.adapted_equivalent {
                    out.assert("adapted_equivalent", want, eq.passed, eq.passed == want);
                }
                let mut rows = Vec::new();
                for &t in &grid {
                    let mut row = vec![t.to_string()];
                    for x in &det.probes {
                        row.push(adapted.eval(t, x)?.to_string());
                    }
                    rows.push(row);
                }
                let mut header = vec!["t".to_string()];
                header.extend((1..=det.probes.len()).map(|i| format!("probe{i}")));
                let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
                w.csv("adapted.csv", &hdr, &rows)?;
                w.json("adapted.json", &(uni, eq))?;
            }
            Stage::ProbeY1 | Stage::ProbeYinf => {
                let pair = if stage == Stage::ProbeY1 { Pair::Y1 } else { Pair::YinfPrime };
                let suite = match &prep.probe_inputs {
                    Some(s) => s.clone(),
                    None => bundled_suite(fam.dim(), pair, prep.probe_grid.0, prep.probe_grid.1)?,
                };
                let z = match (&prep.z, &detection) {
                    (Some(z), _) => z.clone(),
                    (None, Some(d)) => d.z.clone(),
                    (None, None) => {
                        crate::dichotomy::Splitting::new(fam.clone(), rate.clone(), None, prep.detect.split)?.z().clone()
                    }
                };
                let rep = admissibility_probe(fam, &z, norms, rate, &suite, pair, &prep.probe)?;
                let tag = stage.name();
                out.line(format!("{tag}.solvable"), rep.solvable, None);
                out.line(format!("{tag}.unique"), rep.unique, None);
                out.line(format!("{tag}.bound_estimate"), rep.bound_estimate, None);
                out.line(format!("{tag}.witnesses"), format!("{:?}", rep.witnesses), None);
                let want = if pair == Pair::Y1 { exp.y1_solvable } else { exp.yinf_solvable };
                if let Some(want) = want {
                    let name = if pair == Pair::Y1 { "y1_solvable" } else { "yinf_solvable" };
                    out.assert(name, want, rep.solvable, rep.solvable == want);
                }
                let rows: Vec<Vec<String>> = rep
                    .members
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        vec![
                            i.to_string(),
                            m.input_norm.to_string(),
                            m.sup.to_string(),
                            m.sup_at.to_string(),
                            m.ratio.to_string(),
                            m.growth_slope.to_string(),
                            m.bounded.to_string(),
                        ]
                    })
                    .collect();
                w.csv(
                    &format!("{tag}.csv"),
                    &["member", "input_norm", "sup", "sup_at", "ratio", "growth_slope", "bounded"],
                    &rows,
                )?;
                w.json(&format!("{tag}.json"), &rep)?;
                if let Some(&i) = rep.witnesses.first() {
                    w.function(&format!("{tag}_witness.csv"), &rep.candidates[i])?;
                }
                if let Some(det) = &detection {
                    let c = &det.certificate;
                    let mut all = true;
                    let mut worst = 0.0_f64;
                    for y in &suite {
                        let sol = match pair {
                            Pair::Y1 => green_y1(fam, &c.proj, norms, y, Some(c.constants()))?,
                            Pair::YinfPrime => green_yinf(fam, &c.proj, norms, rate, y, Some(c.constants()))?,
                        };
                        if let Some(b) = sol.bound {
                            all &= b.holds;
                            worst = worst.max(b.ratio);
                        }
                    }
                    out.line(format!("{tag}.green_bound_ratio"), worst, Some(all));
                    if let Some(want) = exp.green_bounds {
                        out.assert(&format!("green_bounds.{tag}"), want, all, all == want);
                    }
                }
            }
            Stage::Perturb => perturb_stage(prep, &mut out, &mut w)?,
        }
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "# scenario {}", cfg.scenario.name);
    let _ = writeln!(summary, "# seed {seed}");
    let _ = writeln!(summary, "# family {} (dim {})", fam.name(), fam.dim());
    let _ = writeln!(summary, "# rate {}", rate.name());
    let _ = writeln!(summary, "# norms {}", norms.label());
    let stages: Vec<&str> = cfg.scenario.stages.iter().map(|s| s.name()).collect();
    let _ = writeln!(summary, "# stages {}", stages.join(","));
    for l in &out.lines {
        let status = match l.pass {
            Some(true) => " [pass]",
            Some(false) => " [fail]",
            None => "",
        };
        let _ = writeln!(summary, "{} = {}{status}", l.key, l.value);
    }
    for a in &out.assertions {
        let _ = writeln!(
            summary,
            "expect.{}: {} (expected {}, observed {})",
            a.name,
            if a.pass { "PASS" } else { "FAIL" },
            a.expected,
            a.observed
        );
    }
    let _ = writeln!(summary, "result: {}", if out.passed() { "PASS" } else { "FAIL" });
    w.text("summary.txt", &summary)?;
    out.files = w.files;
    Ok(out)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("none".into(), |v| v.cell())
}

/// Largest principal angle between ranges and between kernels of `p` and
/// the expected projection.
fn projection_angle(p: &Matrix, expected: &[Vec<f64>]) -> f64 {
    let n = p.nrows();
    if expected.len() != n || expected.iter().any(|r| r.len() != n) {
        return f64::INFINITY;
    }
    let e = crate::linalg::from_rows(expected, n);
    let id = Matrix::identity(n, n);
    let (r1, _, _) = orthonormal_basis(p, 1e-8);
    let (r2, _, _) = orthonormal_basis(&e, 1e-8);
    let (k1, _, _) = orthonormal_basis(&(&id - p), 1e-8);
    let (k2, _, _) = orthonormal_basis(&(&id - &e), 1e-8);
    if r1.ncols() != r2.ncols() || k1.ncols() != k2.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    max_principal_angle(&r1, &r2).max(max_principal_angle(&k1, &k2))
}

/// Rechecks certificates with prescribed constants; returns whether every one
/// of them fails verification.
fn run_challenges(prep: &Prepared, det: Option<&Detection>, out: &mut Outcome, w: &mut Writer) -> Result<bool> {
    let fam = &prep.family;
    let dim = fam.dim();
    let base = match det {
        Some(d) => d.certificate.clone(),
        None => crate::dichotomy::DichotomyCertificate {
            d: 1.0,
            lambda: 1.0,
            epsilon: 0.0,
            m: 1.0,
            rate: prep.rate.name(),
            proj: crate::green::ProjectionPath::constant(vec![0.0], Matrix::identity(dim, dim))?,
            diagnostics: crate::dichotomy::CertificateDiagnostics {
                d1: None,
                d2: None,
                commutation: 0.0,
                idempotency: 0.0,
                max_condition: 1.0,
            },
        },
    };
    let grid = prep.detect.verify_grid.build(&prep.rate)?;
    let pairs = grid_pairs(&grid, prep.detect.all_pairs_below);
    let probes = crate::dichotomy::probe_vectors(dim, prep.detect.random_probes, prep.detect.seed);
    let mut rows = Vec::new();
    let mut all_fail = true;
    for &d in &prep.config.detect.challenge_d {
        for &l in &prep.config.detect.challenge_lambda {
            let c = base.with_constants(d, l);
            let v = verify_dichotomy(fam, &c, prep.norms.as_ref(), &prep.rate, &pairs, &probes, prep.detect.tol)?;
            all_fail &= !v.passed;
            rows.push(vec![
                d.to_string(),
                l.to_string(),
                v.passed.to_string(),
                fmt_pair(v.d1.first_violation),
                fmt_pair(v.d2.first_violation),
            ]);
        }
    }
    out.line("detect.challenges_all_fail", all_fail, None);
    w.csv("challenges.csv", &["d", "lambda", "verified", "d1_first_violation", "d2_first_violation"], &rows)?;
    Ok(all_fail)
}

fn perturb_stage(prep: &Prepared, out: &mut Outcome, w: &mut Writer) -> Result<()> {
    let (b, picard) = prep.perturbation.as_ref().expect("checked in prepare");
    let pk = prep.config.perturb.as_ref().expect("checked in prepare");
    let exp = &prep.config.expect;
    let fam = &prep.family;
    let rate = &prep.rate;
    let norms: &dyn NormFamily = prep.norms.as_ref();
    let dim = fam.dim();

    let check_grid = prep.detect.verify_grid.build(rate)?;
    let t_end = *check_grid.last().expect("nonempty grid");

    let picard_run = solve_perturbed_matrix(fam, b, rate, 0.0, &[t_end], &Matrix::identity(dim, dim), picard)?;
    out.line("perturb.picard.iterations", picard_run.iterations, None);
    out.line("perturb.picard.contraction", picard_run.contraction, None);
    if let Some(n) = exp.picard_iters_max {
        out.assert("picard_iters_max", format!("<= {n}"), picard_run.iterations, picard_run.iterations <= n);
    }

    let zero = perturbed_family(fam, &PerturbationFamily::zero(dim), rate, *picard);
    let mut zero_gap = 0.0_f64;
    for (i, &t) in check_grid.iter().enumerate().step_by(8) {
        let s = check_grid[i / 2];
        zero_gap = zero_gap.max((zero.propagator(t, s)? - fam.propagator(t, s)?).abs().max());
    }
    out.line("perturb.zero_identity", zero_gap, None);
    if let Some(m) = exp.zero_identity_max {
        out.assert("zero_identity_max", format!("<= {m}"), zero_gap, zero_gap <= m);
    }

    let c = norms.constants().map_or(1.0, |k| k.c);
    let (pt, ph) = prep.probe_grid;
    let mut op_probes: Vec<SampledFunction> = (0..dim)
        .map(|i| SampledFunction::from_fn(uniform_grid(pt, ph), move |_| unit(dim, i)))
        .collect::<Result<_>>()?;
    let diag = Vector::from_element(dim, 1.0 / (dim as f64).sqrt());
    op_probes.push(SampledFunction::from_fn(uniform_grid(pt, ph), move |t| &diag * t.cos())?);
    let ob = perturbation_operator_bounds(b, norms, c, rate, &op_probes)?;
    out.line("perturb.operator.d_ratio", ob.d_ratio, None);
    out.line("perturb.operator.d_prime_ratio", ob.d_prime_ratio, None);
    out.line("perturb.operator_bounds", ob.passed, Some(ob.passed));
    if let Some(want) = exp.operator_bounds {
        out.assert("operator_bounds", want, ob.passed, ob.passed == want);
    }

    let perturbed = perturbed_family(fam, b, rate, *picard);
    let y = SampledFunction::from_fn(uniform_grid(4.0_f64.min(t_end), 0.005), move |t| unit(dim, 0) * (2.0 * t).sin())?;
    let lemma_pairs = [(0.0, 1.0), (0.5, 3.0), (1.0, 4.0_f64.min(t_end))];
    let lemma = lemma_identity_defect(fam, &perturbed, b, &y, &Vector::from_element(dim, 1.0), &lemma_pairs)?;
    out.line("perturb.lemma_defect", lemma, None);
    if let Some(m) = exp.lemma_defect_max {
        out.assert("lemma_defect_max", format!("<= {m}"), lemma, lemma <= m);
    }

    let rep = robustness_experiment(fam, b, prep.z.clone(), norms, rate, &prep.detect, *picard)?;
    out.line("perturb.bound.max_ratio", rep.bound.max_ratio, Some(rep.bound.passed));
    if let Some(want) = exp.perturbation_bound {
        out.assert("perturbation_bound", want, rep.bound.passed, rep.bound.passed == want);
    }
    out.line("perturb.before.lambda", rep.before.lambda, None);
    match &rep.after {
        Some(a) => {
            out.line("perturb.after.lambda", a.lambda, None);
            out.line("perturb.after.d", a.d, None);
            out.line("perturb.after.verified", a.verified, Some(a.verified));
        }
        None => out.line("perturb.after", format!("no certificate ({})", rep.failure.as_deref().unwrap_or("-")), None),
    }
    if let Some(angle) = rep.stable_angle {
        out.line("perturb.stable_angle", angle, None);
    }
    if let Some(m) = exp.perturbed_lambda_min {
        let obs = rep.after.as_ref().filter(|a| a.verified).map(|a| a.lambda);
        out.assert("perturbed_lambda_min", format!(">= {m}"), fmt_opt(obs), obs.is_some_and(|l| l >= m));
    }
    w.json("perturb.json", &rep)?;

    if !pk.deltas.is_empty() {
        let make = |delta: f64| {
            builtin_perturbation(&pk.kind, &pk.pattern, dim, rate, delta, pk.a, pk.epsilon).expect("validated in prepare")
        };
        let sweep = delta_sweep(fam, make, &pk.deltas, prep.z.clone(), norms, rate, &prep.detect, *picard)?;
        out.line("perturb.sweep.largest_certified", fmt_opt(sweep.largest_certified), None);
        out.line("perturb.sweep.monotone", sweep.monotone, None);
        if let Some(want) = exp.sweep_monotone {
            out.assert("sweep_monotone", want, sweep.monotone, sweep.monotone == want);
        }
        let rows: Vec<Vec<String>> = sweep
            .points
            .iter()
            .map(|p| {
                let a = p.report.after.as_ref();
                vec![
                    p.delta.to_string(),
                    fmt_opt(a.map(|a| a.lambda)),
                    fmt_opt(a.map(|a| a.d)),
                    a.is_some_and(|a| a.verified).to_string(),
                ]
            })
            .collect();
        w.csv("sweep.csv", &["delta", "lambda", "d", "verified"], &rows)?;
    }
    Ok(())
}

/// Rows of `P(τ)` on the certificate grid, for reports.
pub fn projection_rows(det: &Detection) -> Vec<Vec<Vec<f64>>> {
    det.certificate.proj.matrices().iter().map(to_rows).collect()
}
