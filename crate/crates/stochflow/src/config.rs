//! Experiment configuration: a TOML document with nested tables.
//!
//! Every optional key has a default listed next to its field. Unknown keys
//! are rejected, and [`ExperimentConfig::validate`] range-checks every value
//! and builds the coefficient field once so shape errors surface here rather
//! than mid-run.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use stochflow_core::coeffs::{
    Affine, Atom, CoefficientField, ConstantJump, ContinuousPart, JumpPart, LinearJump, MarkLinearJump,
    MarkMeasure, NoJump, Regularity, SinCos, SineJump,
};
use stochflow_core::flow::Scheme;
use stochflow_core::grid::SpatialBox;
use stochflow_core::inverse::default_tolerance;
use stochflow_core::linalg::Mat;

/// A rejected document: the dotted key path and what is wrong with it.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {reason}")]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, reason: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Simulate,
    Invert,
    Spde,
    SpdeBar,
    Partition,
    Limit,
    Moments,
    Assumptions,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Euler,
    Exact,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Euler => Scheme::Euler,
            SchemeName::Exact => Scheme::ExactFamily,
        }
    }
}

/// Continuous part `(b, σ)`, selected by `name`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum Family {
    #[serde(rename = "ZERO")]
    Zero {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "one")]
        brownian: usize,
    },
    #[serde(rename = "CONST")]
    Const { c: Vec<f64> },
    #[serde(rename = "GBM")]
    Gbm { mu: f64, nu: f64 },
    /// `b = A x + c`, `σ^ρ = B_ρ x + s_ρ`; matrices are row lists.
    #[serde(rename = "AFFINE")]
    Affine {
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
        b: Vec<Vec<Vec<f64>>>,
        s: Vec<Vec<f64>>,
    },
    #[serde(rename = "ROT")]
    Rot,
    /// `b_i = a sin x_i`, `σ_ii = s cos x_i`.
    #[serde(rename = "SINCOS")]
    SinCos {
        #[serde(default = "one")]
        dim: usize,
        a: f64,
        s: f64,
    },
}

/// Jump amplitude `H(x, z)`; the marks come from `atoms`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum Jump {
    #[default]
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "LINJUMP")]
    LinJump { c: f64 },
    #[serde(rename = "SINJUMP")]
    SinJump { a: f64 },
    /// `H(x, z) = z x`.
    #[serde(rename = "MARKLIN")]
    MarkLin,
    #[serde(rename = "CONSTJUMP")]
    ConstJump { h: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub mark: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    /// default 0
    #[serde(default)]
    pub s: f64,
    pub t_end: f64,
    /// default 256
    #[serde(default = "default_base_steps")]
    pub base_steps: usize,
}

/// A scalar bound applies to every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    PerAxis(Vec<f64>),
}

impl Bound {
    fn expand(&self, dim: usize) -> Vec<f64> {
        match self {
            Bound::Scalar(v) => vec![*v; dim],
            Bound::PerAxis(v) => v.clone(),
        }
    }
}

/// Lattice of initial, query and solution points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Space {
    /// default -1
    #[serde(default = "default_lower")]
    pub lower: Bound,
    /// default 1
    #[serde(default = "default_upper")]
    pub upper: Bound,
    /// default 0.25
    #[serde(default = "default_step")]
    pub step: f64,
}

impl Default for Space {
    fn default() -> Self {
        Self {
            lower: default_lower(),
            upper: default_upper(),
            step: default_step(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Norms {
    /// default 1
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// default 1.5
    #[serde(default = "default_beta_prime")]
    pub beta_prime: f64,
    /// default 2
    #[serde(default = "default_p")]
    pub p: f64,
}

impl Default for Norms {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            beta_prime: default_beta_prime(),
            p: default_p(),
        }
    }
}

/// Constants the assumption checks compare against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConfig {
    /// default 2
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// default 1
    #[serde(default = "default_n0")]
    pub n0: f64,
    /// default 0.5
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// default 10
    #[serde(default = "default_n_kappa")]
    pub n_kappa: f64,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        let r = Regularity::default();
        Self {
            beta: r.beta,
            n0: r.n0,
            eta: r.eta,
            n_kappa: r.n_kappa,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// `b⁽ⁿ⁾ = b + amplitude / n`
    DriftShift,
    /// `σ⁽ⁿ⁾ = (1 + amplitude / n) σ`
    #[default]
    DiffusionScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    /// default [1, 2, 4, 8, 16]
    #[serde(default = "default_ns")]
    pub ns: Vec<u64>,
    /// default diffusion_scale
    #[serde(default)]
    pub perturbation: Perturbation,
    /// default 1
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// default true
    #[serde(default = "yes")]
    pub inverse: bool,
    /// default true
    #[serde(default = "yes")]
    pub gradients: bool,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            ns: default_ns(),
            perturbation: Perturbation::default(),
            amplitude: default_amplitude(),
            inverse: true,
            gradients: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// default [4, 16, 64]; powers of two dividing `base_steps`
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    /// default 0.5
    #[serde(default = "default_point")]
    pub point: Bound,
    /// default 1e-3
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// default 8
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            counts: default_counts(),
            point: default_point(),
            fd_step: default_fd_step(),
            quad_order: default_quad_order(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    /// default 100
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// default euler
    #[serde(default)]
    pub scheme: SchemeName,
    /// Inversion tolerance; default 1e-8 (euler), 1e-10 (exact), 1e-12
    /// for partition runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// default "out"
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// default empty
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
    pub family: Family,
    /// default NONE
    #[serde(default)]
    pub jump: Jump,
    pub window: Window,
    #[serde(default)]
    pub space: Space,
    #[serde(default)]
    pub norms: Norms,
    #[serde(default)]
    pub regularity: RegularityConfig,
    #[serde(default)]
    pub limit: LimitConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_base_steps() -> usize {
    256
}
fn default_lower() -> Bound {
    Bound::Scalar(-1.0)
}
fn default_upper() -> Bound {
    Bound::Scalar(1.0)
}
fn default_step() -> f64 {
    0.25
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_beta_prime() -> f64 {
    1.5
}
fn default_p() -> f64 {
    2.0
}
fn default_beta() -> f64 {
    Regularity::default().beta
}
fn default_n0() -> f64 {
    Regularity::default().n0
}
fn default_eta() -> f64 {
    Regularity::default().eta
}
fn default_n_kappa() -> f64 {
    Regularity::default().n_kappa
}
fn default_ns() -> Vec<u64> {
    vec![1, 2, 4, 8, 16]
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_counts() -> Vec<usize> {
    vec![4, 16, 64]
}
fn default_point() -> Bound {
    Bound::Scalar(0.5)
}
fn default_fd_step() -> f64 {
    1e-3
}
fn default_quad_order() -> usize {
    8
}
fn default_paths() -> usize {
    100
}
fn default_output_dir() -> String {
    "out".into()
}

/// Parses and validates a document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::new(if path == "." { String::new() } else { path }, inner.message().trim())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Renders a config so that [`parse_config`] returns it unchanged.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config is representable in TOML")
}

fn check(ok: bool, path: &str, reason: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(path, reason()))
    }
}

impl ExperimentConfig {
    pub fn scheme(&self) -> Scheme {
        self.scheme.into()
    }

    pub fn tolerance(&self) -> f64 {
        match (self.tolerance, self.kind) {
            (Some(t), _) => t,
            (None, Kind::Partition) => 1e-12,
            (None, _) => default_tolerance(self.scheme()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = self.field()?;
        let d = field.dim();
        let w = &self.window;
        check(w.s.is_finite() && w.t_end.is_finite() && w.s < w.t_end, "window.t_end", || {
            format!("need finite s < t_end, got s = {}, t_end = {}", w.s, w.t_end)
        })?;
        check(w.base_steps >= 1, "window.base_steps", || "must be at least 1".into())?;
        self.bbox(d)?;
        check(self.space.step > 0.0 && self.space.step.is_finite(), "space.step", || {
            format!("must be positive, got {}", self.space.step)
        })?;
        let n = &self.norms;
        check(n.epsilon > 0.0 && n.epsilon.is_finite(), "norms.epsilon", || {
            format!("must be positive, got {}", n.epsilon)
        })?;
        check((1.0..=2.0).contains(&n.beta_prime), "norms.beta_prime", || {
            format!("must lie in [1, 2], got {}", n.beta_prime)
        })?;
        check(n.p >= 1.0 && n.p.is_finite(), "norms.p", || format!("must be at least 1, got {}", n.p))?;
        let min_paths = if matches!(self.kind, Kind::Limit | Kind::Moments) { 2 } else { 1 };
        check(self.paths >= min_paths, "paths", || {
            format!("must be at least {min_paths}, got {}", self.paths)
        })?;
        if let Some(t) = self.tolerance {
            check(t > 0.0 && t.is_finite(), "tolerance", || format!("must be positive, got {t}"))?;
        }
        match self.kind {
            Kind::Limit => self.validate_limit(),
            Kind::Partition => self.validate_partition(d),
            _ => Ok(()),
        }
    }

    fn validate_limit(&self) -> Result<(), ConfigError> {
        let l = &self.limit;
        check(!l.ns.is_empty() && l.ns[0] >= 1, "limit.ns", || "need at least one n ≥ 1".into())?;
        check(l.ns.windows(2).all(|p| p[0] < p[1]), "limit.ns", || "must be strictly increasing".into())?;
        check(l.amplitude.is_finite(), "limit.amplitude", || "must be finite".into())
    }

    fn validate_partition(&self, d: usize) -> Result<(), ConfigError> {
        let w = &self.window;
        let p = &self.partition;
        check(!p.counts.is_empty(), "partition.counts", || "must not be empty".into())?;
        for &m in &p.counts {
            check(m >= 2 && m.is_power_of_two() && w.base_steps.is_multiple_of(m), "partition.counts", || {
                format!("{m} is not a power of two ≥ 2 dividing window.base_steps = {}", w.base_steps)
            })?;
        }
        check(p.counts.windows(2).all(|c| c[0] < c[1]), "partition.counts", || {
            "must be strictly increasing".into()
        })?;
        check(p.point.expand(d).len() == d, "partition.point", || format!("needs {d} coordinates"))?;
        check(p.fd_step > 0.0 && p.fd_step.is_finite(), "partition.fd_step", || {
            format!("must be positive, got {}", p.fd_step)
        })?;
        check((1..=64).contains(&p.quad_order), "partition.quad_order", || {
            format!("must lie in 1..=64, got {}", p.quad_order)
        })?;
        Ok(())
    }

    pub fn bbox(&self, dim: usize) -> Result<SpatialBox, ConfigError> {
        let (lo, hi) = (self.space.lower.expand(dim), self.space.upper.expand(dim));
        check(lo.len() == dim && hi.len() == dim, "space", || format!("bounds need {dim} coordinates"))?;
        SpatialBox::new(lo, hi).map_err(|e| ConfigError::new("space", e))
    }

    pub fn partition_point(&self, dim: usize) -> Vec<f64> {
        self.partition.point.expand(dim)
    }

    pub fn continuous_part(&self) -> Result<Arc<dyn ContinuousPart>, ConfigError> {
        let err = |e| ConfigError::new("family", e);
        Ok(match &self.family {
            Family::Zero { dim, brownian } => {
                check(*dim >= 1 && *brownian >= 1, "family", || "dim and brownian must be ≥ 1".into())?;
                Arc::new(Affine::zero(*dim, *brownian))
            }
            Family::Const { c } => Arc::new(Affine::constant(c.clone()).map_err(err)?),
            Family::Gbm { mu, nu } => Arc::new(Affine::gbm(*mu, *nu).map_err(err)?),
            Family::Affine { a, c, b, s } => {
                let d = c.len();
                let rows = |m: &Vec<Vec<f64>>, what: &str| -> Result<Mat, ConfigError> {
                    check(m.len() == d && m.iter().all(|r| r.len() == d), "family", || {
                        format!("{what} must be {d}×{d}")
                    })?;
                    Ok(Mat::from_rows(d, d, m.concat()))
                };
                let bs = b.iter().map(|m| rows(m, "b[ρ]")).collect::<Result<Vec<_>, _>>()?;
                Arc::new(Affine::new(rows(a, "a")?, c.clone(), bs, s.clone()).map_err(err)?)
            }
            Family::Rot => Arc::new(Affine::rotation()),
            Family::SinCos { dim, a, s } => Arc::new(SinCos::new(*dim, *a, *s).map_err(err)?),
        })
    }

    fn jump_part(&self, dim: usize) -> Result<Arc<dyn JumpPart>, ConfigError> {
        let err = |e| ConfigError::new("jump", e);
        Ok(match &self.jump {
            Jump::None => Arc::new(NoJump::new(dim)),
            Jump::LinJump { c } => Arc::new(LinearJump::new(*c).map_err(err)?),
            Jump::SinJump { a } => Arc::new(SineJump::new(*a).map_err(err)?),
            Jump::MarkLin => Arc::new(MarkLinearJump),
            Jump::ConstJump { h } => Arc::new(ConstantJump::new(h.clone()).map_err(err)?),
        })
    }

    pub fn regularity(&self) -> Regularity {
        let r = &self.regularity;
        Regularity {
            beta: r.beta,
            n0: r.n0,
            eta: r.eta,
            n_kappa: r.n_kappa,
        }
    }

    /// The coefficient field with its mark measure bound in.
    pub fn field(&self) -> Result<CoefficientField, ConfigError> {
        let cont = self.continuous_part()?;
        let jump = self.jump_part(cont.dim())?;
        let atoms = self.atoms.iter().map(|a| Atom { mark: a.mark, rate: a.rate }).collect();
        let measure = MarkMeasure::new(atoms).map_err(|e| ConfigError::new("atoms", e))?;
        CoefficientField::new(cont, jump, measure, self.regularity()).map_err(|e| match e {
            stochflow_core::Error::DimensionMismatch(_) => ConfigError::new("jump", e),
            _ => ConfigError::new("regularity", e),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "simulate"
seed = 7
family = { name = "GBM", mu = 0.1, nu = 0.2 }
window = { t_end = 1.0 }
"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.paths, 100);
        assert_eq!(cfg.scheme, SchemeName::Euler);
        assert_eq!(cfg.window.s, 0.0);
        assert_eq!(cfg.window.base_steps, 256);
        assert_eq!(cfg.space, Space::default());
        assert_eq!(cfg.norms, Norms::default());
        assert_eq!(cfg.jump, Jump::None);
        assert_eq!(cfg.tolerance(), 1e-8);
        assert_eq!(cfg.output_dir, "out");
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = parse_config(&format!("{MINIMAL}foo = 1\n")).unwrap_err();
        assert!(e.to_string().contains("foo"), "{e}");
        let e = parse_config(&MINIMAL.replace("t_end = 1.0", "t_end = 1.0, bar = 2")).unwrap_err();
        assert!(e.to_string().contains("bar"), "{e}");
        assert!(e.path.starts_with("window"), "{e}");
    }

    #[test]
    fn missing_and_out_of_range_keys() {
        let e = parse_config(&MINIMAL.replace("seed = 7\n", "")).unwrap_err();
        assert!(e.reason.contains("seed"), "{e}");
        let e = parse_config(&MINIMAL.replace("t_end = 1.0", "t_end = -1.0")).unwrap_err();
        assert_eq!(e.path, "window.t_end");
        let e = parse_config(&format!("{MINIMAL}[norms]\nbeta_prime = 2.5\n")).unwrap_err();
        assert_eq!(e.path, "norms.beta_prime");
        let partition = MINIMAL.replace("simulate", "partition");
        assert!(parse_config(&format!("{MINIMAL}[partition]\ncounts = [3]\n")).is_ok());
        let e = parse_config(&format!("{partition}[partition]\ncounts = [3]\n")).unwrap_err();
        assert_eq!(e.path, "partition.counts");
        let e = parse_config(&MINIMAL.replace("\"GBM\"", "\"NOPE\"")).unwrap_err();
        assert!(e.path.starts_with("family"), "{e}");
    }

    #[test]
    fn full_document_round_trips() {
        let text = r#"
kind = "limit"
seed = 3
paths = 12
scheme = "exact"
tolerance = 1e-11
output_dir = "results/limit"
atoms = [{ mark = 0.0, rate = 0.5 }, { mark = 1.0, rate = 2.0 }]
family = { name = "AFFINE", a = [[0.1, 0.0], [0.0, -0.2]], c = [0.0, 1.0], b = [[[0.2, 0.0], [0.0, 0.2]]], s = [[0.0, 0.0]] }
jump = { name = "LINJUMP", c = -0.5 }
window = { s = 0.5, t_end = 2.0, base_steps = 128 }
space = { lower = [-2.0, -1.0], upper = 3.0, step = 0.5 }
norms = { epsilon = 0.5, beta_prime = 1.25, p = 3.0 }
regularity = { beta = 1.5, n0 = 4.0, eta = 0.6, n_kappa = 3.0 }
limit = { ns = [2, 4], perturbation = "drift_shift", amplitude = 0.25, inverse = false, gradients = false }
partition = { counts = [2, 8], point = [0.1, 0.2], fd_step = 1e-4, quad_order = 6 }
"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.field().unwrap().dim(), 2);
        let again = parse_config(&serialize_config(&cfg)).unwrap();
        assert_eq!(again, cfg);
        let defaults = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&serialize_config(&defaults)).unwrap(), defaults);
    }

    #[test]
    fn jump_dimension_must_match() {
        let e = parse_config(&format!(
            "{}jump = {{ name = \"CONSTJUMP\", h = [1.0, 2.0] }}\natoms = [{{ mark = 0.0, rate = 1.0 }}]\n",
            MINIMAL.replace("GBM\", mu = 0.1, nu = 0.2", "ZERO\"")
        ))
        .unwrap_err();
        assert_eq!(e.path, "jump", "{e}");
    }
}
