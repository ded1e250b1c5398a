//! Run configuration: a JSON document with a mandatory seed, the problem
//! definition and one optional block per command.
//!
//! Parsing is strict. Unknown keys anywhere in the document are rejected,
//! and all unknown keys and semantic problems are reported together.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use tikhon_core::operators::make_smoothing_operator;
use tikhon_core::regularizers::first_difference;
use tikhon_core::{ForwardOperator, Regularizer, SimilarityMeasure, TikhonovProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub operator: OperatorConfig,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    pub regularizers: Vec<RegularizerConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Discretised Gaussian convolution, `rows x cols`.
    Smoothing,
    /// Explicit matrix given row by row in `entries`.
    Matrix,
    /// `dim x dim` identity.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    #[default]
    SqNorm,
    PowerMetric,
    KlDivergence,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub kind: SimilarityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    SqL2,
    L1,
    Tv1d,
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedMap {
    Identity,
    FirstDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    /// `sq_l2` only: a named map `L` in `||L x||^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<NamedMap>,
    /// `sq_l2` only: explicit map rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<Box<RegularizerConfig>>,
}

/// `coefficient * l^(-rate)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Law {
    pub coefficient: f64,
    pub rate: f64,
}

/// `coefficient * delta^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRule {
    pub coefficient: f64,
    pub exponent: f64,
}

fn default_per_decade() -> usize {
    6
}

fn default_max_iterations() -> usize {
    200_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub alpha: Vec<f64>,
    pub data: Vec<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_threshold() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub alpha: Vec<f64>,
    /// Exact data; `F(1, ..., 1)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<f64>>,
    pub max_step: u64,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
    /// Perturbation of each parameter around `alpha`.
    pub alpha_jitter: Vec<Law>,
    pub data_noise: Law,
    pub operator_noise: Law,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionLineConfig {
    pub particular: Vec<f64>,
    pub direction: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

fn default_residual_tolerance() -> f64 {
    1e-6
}

fn default_limit_tolerance() -> f64 {
    1e-3
}

fn default_convergence_iterations() -> usize {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Exact solution used as the reference and the first starting point.
    pub x0: Vec<f64>,
    pub alphas: Vec<Law>,
    pub data_noise: Law,
    pub operator_noise: Law,
    pub max_step: u64,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution_line: Option<SolutionLineConfig>,
    #[serde(default = "default_residual_tolerance")]
    pub residual_tolerance: f64,
    #[serde(default = "default_limit_tolerance")]
    pub limit_tolerance: f64,
    #[serde(default = "default_convergence_iterations")]
    pub max_iterations: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Unit weight with random sign along every singular direction.
    #[default]
    Flat,
    Gaussian,
}

fn one() -> f64 {
    1.0
}

fn default_certificate_samples() -> usize {
    1000
}

/// Source-condition certificate for `||x||^2` plus further quadratic penalties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    #[serde(default)]
    pub source: SourceKind,
    /// Multiplies every index function; values below 1 break the certificate.
    #[serde(default = "one")]
    pub phi_scale: f64,
    #[serde(default = "default_certificate_samples")]
    pub samples: usize,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig {
            source: SourceKind::Flat,
            phi_scale: 1.0,
            samples: default_certificate_samples(),
        }
    }
}

fn default_trials() -> usize {
    10
}

fn default_index() -> usize {
    1
}

fn default_cloud_size() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatesConfig {
    /// Strictly decreasing `||y - y_delta||`.
    pub noise_levels: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub alpha_rule: Vec<NoiseRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_noise: Option<NoiseRule>,
    /// 1-based index `j` of the measured penalty.
    #[serde(default = "default_index")]
    pub index: usize,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default = "default_cloud_size")]
    pub cloud_size: usize,
    #[serde(default = "one")]
    pub cloud_half_width: f64,
}

fn default_triples() -> usize {
    100_000
}

fn default_psi_grid() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    #[serde(default = "default_triples")]
    pub triples: usize,
    #[serde(default = "default_certificate_samples")]
    pub vi_samples: usize,
    /// Points per axis of the parameter grid for the `Psi` comparison.
    #[serde(default = "default_psi_grid")]
    pub psi_grid: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            triples: default_triples(),
            vi_samples: default_certificate_samples(),
            psi_grid: default_psi_grid(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Stability,
    Convergence,
    Rates,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Stability => "stability",
            Command::Convergence => "convergence",
            Command::Rates => "rates",
            Command::Check => "check",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: unknown key")]
    UnknownKey { path: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    pub fn path(&self) -> &str {
        match self {
            ConfigError::Schema { path, .. } | ConfigError::UnknownKey { path } | ConfigError::Invalid { path, .. } => path,
        }
    }
}

/// Every problem found in a configuration document.
#[derive(Clone, Debug, PartialEq, Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} errors):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

/// Dotted path with `Option` wrappers elided, matching the semantic error paths.
fn render_path(path: &serde_ignored::Path) -> String {
    use serde_ignored::Path;
    let join = |parent: &Path, child: String| match render_path(parent) {
        p if p.is_empty() => child,
        p => format!("{p}.{child}"),
    };
    match path {
        Path::Root => String::new(),
        Path::Seq { parent, index } => format!("{}[{index}]", render_path(parent)),
        Path::Map { parent, key } => join(parent, key.clone()),
        Path::Some { parent } | Path::NewtypeStruct { parent } | Path::NewtypeVariant { parent } => render_path(parent),
    }
}

/// Parses and validates a configuration document.
///
/// Unknown keys are collected over the whole document. A type error stops
/// deserialisation at its location, so at most one is reported, alongside
/// the unknown keys seen up to that point.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let mut unknown = Vec::new();
    let mut json = serde_json::Deserializer::from_str(text);
    let mut record = |path: serde_ignored::Path| unknown.push(render_path(&path));
    let parsed: Result<RunConfig, _> =
        serde_path_to_error::deserialize(serde_ignored::Deserializer::new(&mut json, &mut record));
    let mut errors: Vec<ConfigError> = unknown
        .into_iter()
        .map(|path| ConfigError::UnknownKey { path })
        .collect();
    match parsed {
        Err(e) => {
            let path = e.path().to_string();
            errors.push(ConfigError::Schema {
                path: if path == "." { "<document>".into() } else { path },
                message: e.into_inner().to_string(),
            });
            Err(ConfigErrors(errors))
        }
        Ok(config) => {
            if let Err(e) = json.end() {
                errors.push(ConfigError::Schema {
                    path: "<document>".into(),
                    message: e.to_string(),
                });
            }
            errors.extend(config.validate());
            if errors.is_empty() {
                Ok(config)
            } else {
                Err(ConfigErrors(errors))
            }
        }
    }
}

/// Canonical JSON rendering; parses back to an equal configuration.
pub fn serialize_config(config: &RunConfig) -> String {
    serde_json::to_string_pretty(config).expect("configuration serialises")
}

/// SHA-256 of the canonical compact rendering, hex encoded.
pub fn config_digest(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("configuration serialises");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

struct Errors(Vec<ConfigError>);

impl Errors {
    fn invalid(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.invalid(path, message);
        }
    }

    fn dim(&mut self, path: &str, expected: usize, actual: usize) {
        self.check(
            expected == actual,
            path,
            format!("expected length {expected}, got {actual}"),
        );
    }

    fn law(&mut self, path: &str, law: &Law) {
        self.check(
            law.coefficient.is_finite() && law.coefficient >= 0.0 && law.rate.is_finite() && law.rate >= 0.0,
            path,
            "coefficient and rate must be finite and nonnegative",
        );
    }

    fn forbid<T>(&mut self, field: &Option<T>, path: String, kind: &str) {
        if field.is_some() {
            self.invalid(path, format!("not allowed for kind {kind}"));
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err("matrix must be nonempty".into());
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err("rows must have equal length".into());
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err("entries must be finite".into());
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl OperatorConfig {
    fn build(&self, errs: &mut Errors) -> Option<ForwardOperator> {
        let path = "problem.operator";
        let kind = format!("{:?}", self.kind).to_lowercase();
        match self.kind {
            OperatorKind::Smoothing => {
                errs.forbid(&self.dim, format!("{path}.dim"), &kind);
                errs.forbid(&self.entries, format!("{path}.entries"), &kind);
                match (self.rows, self.cols) {
                    (Some(r), Some(c)) if r > 0 && c > 0 => make_smoothing_operator(r, c).ok(),
                    _ => {
                        errs.invalid(path, "smoothing operator needs positive rows and cols");
                        None
                    }
                }
            }
            OperatorKind::Identity => {
                errs.forbid(&self.rows, format!("{path}.rows"), &kind);
                errs.forbid(&self.cols, format!("{path}.cols"), &kind);
                errs.forbid(&self.entries, format!("{path}.entries"), &kind);
                match self.dim {
                    Some(n) if n > 0 => Some(ForwardOperator::linear(DMatrix::identity(n, n))),
                    _ => {
                        errs.invalid(format!("{path}.dim"), "identity operator needs a positive dim");
                        None
                    }
                }
            }
            OperatorKind::Matrix => {
                errs.forbid(&self.rows, format!("{path}.rows"), &kind);
                errs.forbid(&self.cols, format!("{path}.cols"), &kind);
                errs.forbid(&self.dim, format!("{path}.dim"), &kind);
                match self.entries.as_deref().map(matrix_from_rows) {
                    Some(Ok(m)) => Some(ForwardOperator::linear(m)),
                    Some(Err(msg)) => {
                        errs.invalid(format!("{path}.entries"), msg);
                        None
                    }
                    None => {
                        errs.invalid(format!("{path}.entries"), "matrix operator needs entries");
                        None
                    }
                }
            }
        }
    }
}

impl SimilarityConfig {
    fn build(&self, errs: &mut Errors) -> Option<SimilarityMeasure> {
        let path = "problem.similarity";
        match self.kind {
            SimilarityKind::SqNorm => {
                errs.forbid(&self.p, format!("{path}.p"), "sq_norm");
                Some(SimilarityMeasure::sq_norm())
            }
            SimilarityKind::KlDivergence => {
                errs.forbid(&self.p, format!("{path}.p"), "kl_divergence");
                Some(SimilarityMeasure::kl_divergence())
            }
            SimilarityKind::PowerMetric => match self.p.map(SimilarityMeasure::power_metric) {
                Some(Ok(s)) => Some(s),
                Some(Err(e)) => {
                    errs.invalid(format!("{path}.p"), e.to_string());
                    None
                }
                None => {
                    errs.invalid(format!("{path}.p"), "power metric needs an exponent p");
                    None
                }
            },
        }
    }
}

impl RegularizerConfig {
    fn build(&self, path: &str, n: usize, errs: &mut Errors) -> Option<Regularizer> {
        let kind = format!("{:?}", self.kind).to_lowercase();
        if self.kind != RegularizerKind::SqL2 {
            errs.forbid(&self.map, format!("{path}.map"), &kind);
            errs.forbid(&self.matrix, format!("{path}.matrix"), &kind);
        }
        if self.kind != RegularizerKind::Box {
            errs.forbid(&self.lo, format!("{path}.lo"), &kind);
            errs.forbid(&self.hi, format!("{path}.hi"), &kind);
            errs.forbid(&self.inner, format!("{path}.inner"), &kind);
        }
        match self.kind {
            RegularizerKind::SqL2 => {
                let map = match (&self.map, &self.matrix) {
                    (Some(_), Some(_)) => {
                        errs.invalid(path, "give either map or matrix, not both");
                        return None;
                    }
                    (None, None) | (Some(NamedMap::Identity), None) => None,
                    (Some(NamedMap::FirstDifference), None) => {
                        if n < 2 {
                            errs.invalid(format!("{path}.map"), "first difference needs dimension >= 2");
                            return None;
                        }
                        Some(first_difference(n))
                    }
                    (None, Some(rows)) => match matrix_from_rows(rows) {
                        Ok(m) if m.ncols() == n => Some(m),
                        Ok(m) => {
                            errs.invalid(
                                format!("{path}.matrix"),
                                format!("expected {n} columns, got {}", m.ncols()),
                            );
                            return None;
                        }
                        Err(msg) => {
                            errs.invalid(format!("{path}.matrix"), msg);
                            return None;
                        }
                    },
                };
                Regularizer::sq_l2(map).ok()
            }
            RegularizerKind::L1 => Some(Regularizer::l1()),
            RegularizerKind::Tv1d => match Regularizer::tv1d(n) {
                Ok(r) => Some(r),
                Err(e) => {
                    errs.invalid(path, e.to_string());
                    None
                }
            },
            RegularizerKind::Box => {
                let (Some(lo), Some(hi), Some(inner)) = (&self.lo, &self.hi, &self.inner) else {
                    errs.invalid(path, "box needs lo, hi and inner");
                    return None;
                };
                errs.dim(&format!("{path}.lo"), n, lo.len());
                errs.dim(&format!("{path}.hi"), n, hi.len());
                let inner = inner.build(&format!("{path}.inner"), n, errs)?;
                if lo.len() != n || hi.len() != n {
                    return None;
                }
                match Regularizer::indicator_box(DVector::from_vec(lo.clone()), DVector::from_vec(hi.clone()), inner) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        errs.invalid(path, e.to_string());
                        None
                    }
                }
            }
        }
    }
}

impl ProblemConfig {
    fn build_collecting(&self, errs: &mut Errors) -> Option<TikhonovProblem> {
        let op = self.operator.build(errs);
        let sim = self.similarity.build(errs);
        errs.check(!self.regularizers.is_empty(), "problem.regularizers", "at least one regulariser is required");
        let n = op.as_ref().map(ForwardOperator::input_dim)?;
        let regs: Vec<Option<Regularizer>> = self
            .regularizers
            .iter()
            .enumerate()
            .map(|(k, r)| r.build(&format!("problem.regularizers[{k}]"), n, errs))
            .collect();
        let regs: Option<Vec<Regularizer>> = regs.into_iter().collect();
        match TikhonovProblem::new(op?, sim?, regs?) {
            Ok(p) => Some(p),
            Err(e) => {
                errs.invalid("problem", e.to_string());
                None
            }
        }
    }

    /// Builds the problem from a validated configuration.
    pub fn build(&self) -> Result<TikhonovProblem, ConfigErrors> {
        let mut errs = Errors(Vec::new());
        match self.build_collecting(&mut errs) {
            Some(p) if errs.0.is_empty() => Ok(p),
            _ => Err(ConfigErrors(errs.0)),
        }
    }
}

fn finite_vec(errs: &mut Errors, path: &str, v: &[f64]) {
    errs.check(v.iter().all(|x| x.is_finite()), path, "entries must be finite");
}

fn nonneg_vec(errs: &mut Errors, path: &str, v: &[f64]) {
    errs.check(
        v.iter().all(|x| x.is_finite() && *x >= 0.0),
        path,
        "entries must be finite and nonnegative",
    );
    errs.check(v.iter().any(|x| *x > 0.0), path, "at least one entry must be positive");
}

impl RunConfig {
    /// Semantic checks beyond the schema; returns every problem found.
    pub fn validate(&self) -> Vec<ConfigError> {
        let mut errs = Errors(Vec::new());
        let problem = self.problem.build_collecting(&mut errs);
        let dims = problem.as_ref().map(|p| {
            (
                p.operator().output_dim(),
                p.operator().input_dim(),
                p.penalty_count(),
            )
        });

        if let Some(s) = &self.solve {
            nonneg_vec(&mut errs, "solve.alpha", &s.alpha);
            finite_vec(&mut errs, "solve.data", &s.data);
            errs.check(s.max_iterations > 0, "solve.max_iterations", "must be positive");
            if let Some((m, _, k)) = dims {
                errs.dim("solve.alpha", k, s.alpha.len());
                errs.dim("solve.data", m, s.data.len());
            }
        }
        if let Some(s) = &self.stability {
            nonneg_vec(&mut errs, "stability.alpha", &s.alpha);
            errs.check(s.max_step >= 1, "stability.max_step", "must be >= 1");
            errs.check(s.per_decade >= 1, "stability.per_decade", "must be >= 1");
            errs.check(s.threshold > 0.0, "stability.threshold", "must be positive");
            for (i, law) in s.alpha_jitter.iter().enumerate() {
                errs.law(&format!("stability.alpha_jitter[{i}]"), law);
            }
            errs.law("stability.data_noise", &s.data_noise);
            errs.law("stability.operator_noise", &s.operator_noise);
            if let Some((m, _, k)) = dims {
                errs.dim("stability.alpha", k, s.alpha.len());
                errs.dim("stability.alpha_jitter", k, s.alpha_jitter.len());
                if let Some(d) = &s.data {
                    errs.dim("stability.data", m, d.len());
                    finite_vec(&mut errs, "stability.data", d);
                }
            }
        }
        if let Some(c) = &self.convergence {
            finite_vec(&mut errs, "convergence.x0", &c.x0);
            errs.check(c.max_step >= 1, "convergence.max_step", "must be >= 1");
            errs.check(c.per_decade >= 1, "convergence.per_decade", "must be >= 1");
            for (i, law) in c.alphas.iter().enumerate() {
                errs.law(&format!("convergence.alphas[{i}]"), law);
            }
            errs.check(
                c.alphas.iter().any(|l| l.coefficient > 0.0),
                "convergence.alphas",
                "at least one parameter law must be nonzero",
            );
            errs.law("convergence.data_noise", &c.data_noise);
            errs.law("convergence.operator_noise", &c.operator_noise);
            if let Some((_, n, k)) = dims {
                errs.dim("convergence.x0", n, c.x0.len());
                errs.dim("convergence.alphas", k, c.alphas.len());
                if let Some(line) = &c.solution_line {
                    errs.dim("convergence.solution_line.particular", n, line.particular.len());
                    errs.dim("convergence.solution_line.direction", n, line.direction.len());
                    errs.check(
                        line.count >= 2 && line.lo < line.hi,
                        "convergence.solution_line",
                        "needs count >= 2 and lo < hi",
                    );
                }
            }
        }
        if let Some(r) = &self.rates {
            errs.check(!r.noise_levels.is_empty(), "rates.noise_levels", "must be nonempty");
            errs.check(
                r.noise_levels.iter().all(|d| d.is_finite() && *d >= 0.0)
                    && r.noise_levels.windows(2).all(|w| w[1] < w[0]),
                "rates.noise_levels",
                "must be finite, nonnegative and strictly decreasing",
            );
            errs.check(r.trials >= 1, "rates.trials", "must be >= 1");
            errs.check(
                r.certificate.phi_scale.is_finite() && r.certificate.phi_scale > 0.0,
                "rates.certificate.phi_scale",
                "must be positive",
            );
            errs.check(r.cloud_half_width > 0.0, "rates.cloud_half_width", "must be positive");
            for (i, rule) in r.alpha_rule.iter().chain(&r.operator_noise).enumerate() {
                let path = if i < r.alpha_rule.len() {
                    format!("rates.alpha_rule[{i}]")
                } else {
                    "rates.operator_noise".into()
                };
                errs.check(
                    rule.coefficient.is_finite() && rule.coefficient >= 0.0 && rule.exponent.is_finite(),
                    path,
                    "coefficient must be finite and nonnegative, exponent finite",
                );
            }
            if let Some((_, _, k)) = dims {
                errs.dim("rates.alpha_rule", k, r.alpha_rule.len());
                errs.check(r.index >= 1 && r.index <= k, "rates.index", format!("must lie in 1..={k}"));
            }
            if let Some(p) = &problem {
                errs.check(
                    p.operator().is_linear() && *p.similarity() == SimilarityMeasure::SqNorm,
                    "problem",
                    "rates needs a linear operator and the sq_norm similarity",
                );
                errs.check(
                    matches!(p.regularizers().first(), Some(Regularizer::SqL2 { map: None })),
                    "problem.regularizers[0]",
                    "rates needs ||x||^2 as the first penalty",
                );
                for (k, r) in p.regularizers().iter().enumerate().skip(1) {
                    errs.check(
                        matches!(r, Regularizer::SqL2 { .. }),
                        format!("problem.regularizers[{k}]"),
                        "rates needs quadratic penalties",
                    );
                }
            }
        }
        if let Some(c) = &self.check {
            errs.check(c.triples >= 1, "check.triples", "must be >= 1");
            errs.check(c.psi_grid >= 2, "check.psi_grid", "must be >= 2");
        }
        errs.0
    }

    pub fn has_block(&self, command: Command) -> bool {
        match command {
            Command::Solve => self.solve.is_some(),
            Command::Stability => self.stability.is_some(),
            Command::Convergence => self.convergence.is_some(),
            Command::Rates => self.rates.is_some(),
            Command::Check => true,
        }
    }
}
