//! Bregman distances, variational-inequality certificates and the
//! convergence-rate bounds for multi-parameter Tikhonov minimisers.
//!
//! The bounds are stated for a minimiser `x` of `T(.; alpha, y_delta, F_delta)`
//! and a true solution `x_dagger` with `F(x_dagger) = y` that satisfies, for
//! every penalty `k`,
//!
//! `D^k(x; x_dagger) <= R_k(x) - R_k(x_dagger) + Phi_k(S(F(x), y))`
//!
//! with concave increasing index functions `Phi_k`. The penalty side of the
//! bound enters through `Psi(alpha) = sup_{t>0} (s^2 sum_k alpha_k Phi_k(t) - t)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operators::ForwardOperator;
use crate::problem::{joint_domain_member, validate_vector, Datum, Point, RegVector, TikhonovProblem};
use crate::regularizers::Regularizer;
use crate::rng::{self, StreamRng};

/// Bregman values in `[-BREGMAN_CLAMP, 0)` (relative to the penalty scale) are
/// rounding noise and reported as 0.
pub const BREGMAN_CLAMP: f64 = 1e-12;

/// Golden-section stopping width, relative to the bracket.
const PSI_TOLERANCE: f64 = 1e-12;

/// Concave, strictly increasing index function with `Phi(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PhiFunction {
    /// `coefficient * t^exponent`, exponent in `(0, 1]`.
    Power { coefficient: f64, exponent: f64 },
    /// Piecewise-linear interpolation of samples starting at `(0, 0)`,
    /// extended past the last sample with the last slope.
    Tabulated { t: Vec<f64>, values: Vec<f64> },
}

impl PhiFunction {
    pub fn power(coefficient: f64, exponent: f64) -> Result<Self> {
        if !(coefficient.is_finite() && coefficient > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "index function coefficient must be positive, got {coefficient}"
            )));
        }
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "index function exponent must lie in (0, 1], got {exponent}"
            )));
        }
        Ok(PhiFunction::Power {
            coefficient,
            exponent,
        })
    }

    pub fn tabulated(t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if t.len() != values.len() || t.len() < 2 {
            return Err(Error::InvalidArgument(
                "tabulated index function needs >= 2 matching samples".into(),
            ));
        }
        if t[0] != 0.0 || values[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "tabulated index function must start at (0, 0)".into(),
            ));
        }
        let mut last_slope = f64::INFINITY;
        for i in 1..t.len() {
            let (dt, dv) = (t[i] - t[i - 1], values[i] - values[i - 1]);
            if !(dt > 0.0 && dv > 0.0 && t[i].is_finite() && values[i].is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tabulated index function must be strictly increasing (sample {i})"
                )));
            }
            let slope = dv / dt;
            if slope > last_slope * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "tabulated index function is not concave at sample {i}"
                )));
            }
            last_slope = slope;
        }
        Ok(PhiFunction::Tabulated { t, values })
    }

    pub fn eval(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        let t = t.max(0.0);
        match self {
            PhiFunction::Power {
                coefficient,
                exponent,
            } => coefficient * t.powf(*exponent),
            PhiFunction::Tabulated { t: grid, values } => {
                let n = grid.len();
                let i = match grid.iter().position(|g| *g >= t) {
                    Some(0) => return 0.0,
                    Some(i) => i,
                    None => n - 1,
                };
                let slope = (values[i] - values[i - 1]) / (grid[i] - grid[i - 1]);
                values[i - 1] + slope * (t - grid[i - 1])
            }
        }
    }

    /// `lim_{t -> inf} Phi(t) / t`.
    pub fn asymptotic_slope(&self) -> f64 {
        match self {
            PhiFunction::Power {
                coefficient,
                exponent,
            } => {
                if *exponent == 1.0 {
                    *coefficient
                } else {
                    0.0
                }
            }
            PhiFunction::Tabulated { t, values } => {
                let n = t.len();
                (values[n - 1] - values[n - 2]) / (t[n - 1] - t[n - 2])
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match self {
            PhiFunction::Power {
                coefficient,
                exponent,
            } => PhiFunction::power(coefficient * factor, *exponent),
            PhiFunction::Tabulated { t, values } => {
                PhiFunction::tabulated(t.clone(), values.iter().map(|v| v * factor).collect())
            }
        }
    }
}

/// True solution with one subgradient and one index function per penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceCertificate {
    pub x_dagger: Point,
    pub subgradients: Vec<Point>,
    pub phis: Vec<PhiFunction>,
    /// Quasi-triangle constant of the similarity measure.
    pub s: f64,
}

impl SourceCertificate {
    pub fn new(x_dagger: Point, subgradients: Vec<Point>, phis: Vec<PhiFunction>, s: f64) -> Result<Self> {
        validate_vector("x_dagger", &x_dagger)?;
        if subgradients.is_empty() || subgradients.len() != phis.len() {
            return Err(Error::InvalidArgument(
                "certificate needs one subgradient and one index function per penalty".into(),
            ));
        }
        for xi in &subgradients {
            check_dim("subgradient", x_dagger.len(), xi.len())?;
        }
        if !(s >= 1.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quasi-triangle constant must be >= 1, got {s}"
            )));
        }
        Ok(SourceCertificate {
            x_dagger,
            subgradients,
            phis,
            s,
        })
    }

    pub fn penalty_count(&self) -> usize {
        self.phis.len()
    }

    /// Same certificate with every index function multiplied by `factor`.
    pub fn with_scaled_phis(&self, factor: f64) -> Result<Self> {
        Ok(SourceCertificate {
            phis: self
                .phis
                .iter()
                .map(|p| p.scaled(factor))
                .collect::<Result<_>>()?,
            ..self.clone()
        })
    }

    /// Checks `F(x_dagger) = y` within `1e-10` and `x_dagger` in the joint domain.
    pub fn check_consistency(&self, problem: &TikhonovProblem, y: &Datum) -> Result<()> {
        check_dim("certificate penalties", problem.penalty_count(), self.penalty_count())?;
        let fx = problem.operator().apply(&self.x_dagger)?;
        let gap = (&fx - y).norm();
        if gap > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "certificate: F(x_dagger) differs from y by {gap:e}"
            )));
        }
        if !joint_domain_member(problem.regularizers(), &self.x_dagger)? {
            return Err(Error::InvalidArgument(
                "certificate: x_dagger lies outside the joint domain".into(),
            ));
        }
        Ok(())
    }
}

/// Realised data and operator errors entering the rate bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseQuantities {
    /// `S(y, y_delta)`
    pub s_y_ydelta: f64,
    /// `S(y_delta, y)`
    pub s_ydelta_y: f64,
    /// `d_{K,y}(F_delta, F)`
    pub d_op: f64,
}

impl NoiseQuantities {
    pub fn new(s_y_ydelta: f64, s_ydelta_y: f64, d_op: f64) -> Result<Self> {
        for (name, v) in [("S(y, y_delta)", s_y_ydelta), ("S(y_delta, y)", s_ydelta_y), ("d_op", d_op)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(NoiseQuantities {
            s_y_ydelta,
            s_ydelta_y,
            d_op,
        })
    }

    pub fn zero() -> Self {
        NoiseQuantities {
            s_y_ydelta: 0.0,
            s_ydelta_y: 0.0,
            d_op: 0.0,
        }
    }
}

/// `R(x) - R(x_dagger) - <xi, x - x_dagger>`.
pub fn bregman_distance(r: &Regularizer, xi: &Point, x: &Point, x_dagger: &Point) -> Result<f64> {
    let raw = bregman_raw(r, xi, x, x_dagger)?;
    let scale = r.eval(x)?.to_f64().max(r.eval(x_dagger)?.to_f64()).max(1.0);
    if raw < 0.0 {
        if raw >= -BREGMAN_CLAMP * scale {
            if raw < -f64::EPSILON * scale {
                log::warn!("clamping negative Bregman distance {raw:e} to zero");
            }
            return Ok(0.0);
        }
        return Err(Error::InvalidArgument(format!(
            "Bregman distance {raw:e} is negative: xi is not a subgradient at x_dagger"
        )));
    }
    Ok(raw)
}

fn bregman_raw(r: &Regularizer, xi: &Point, x: &Point, x_dagger: &Point) -> Result<f64> {
    check_dim("subgradient", x_dagger.len(), xi.len())?;
    let rx = r
        .eval(x)?
        .finite()
        .ok_or_else(|| Error::InfiniteValue("R(x) in Bregman distance".into()))?;
    let rd = r
        .eval(x_dagger)?
        .finite()
        .ok_or_else(|| Error::InfiniteValue("R(x_dagger) in Bregman distance".into()))?;
    Ok(rx - rd - xi.dot(&(x - x_dagger)))
}

/// Worst sampled violation of the variational inequalities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// `max_{k, x} D^k(x) - R_k(x) + R_k(x_dagger) - Phi_k(S(F(x), y))`
    pub max_violation: f64,
    /// Penalty index (0-based) attaining the maximum.
    pub penalty: usize,
    /// Sample index attaining the maximum.
    pub sample: usize,
}

impl ViolationReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_violation <= tolerance
    }
}

/// Evaluates the variational inequalities on `samples`; samples outside the
/// joint domain satisfy them trivially and are skipped.
pub fn variational_inequality_violation(
    problem: &TikhonovProblem,
    cert: &SourceCertificate,
    y: &Datum,
    samples: &[Point],
) -> Result<ViolationReport> {
    check_dim("certificate penalties", problem.penalty_count(), cert.penalty_count())?;
    let mut report = ViolationReport {
        max_violation: f64::NEG_INFINITY,
        penalty: 0,
        sample: 0,
    };
    for (i, x) in samples.iter().enumerate() {
        if !joint_domain_member(problem.regularizers(), x)? {
            continue;
        }
        let residual = problem.similarity().eval(&problem.operator().apply(x)?, y)?;
        for (k, r) in problem.regularizers().iter().enumerate() {
            let d = bregman_raw(r, &cert.subgradients[k], x, &cert.x_dagger)?.max(0.0);
            let gain = r.eval(x)?.to_f64() - r.eval(&cert.x_dagger)?.to_f64();
            let v = d - gain - cert.phis[k].eval(residual);
            if v > report.max_violation {
                report = ViolationReport {
                    max_violation: v,
                    penalty: k,
                    sample: i,
                };
            }
        }
    }
    Ok(report)
}

/// Classical source-condition instance for `R = ||x||^2`, `S = ||.||^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSource {
    pub certificate: SourceCertificate,
    /// Exact data `y = A x_dagger`.
    pub data: Datum,
    /// Source elements `w_k` with `A^T w_k = xi_k`.
    pub sources: Vec<Datum>,
}

/// Builds `x_dagger = A^T w / 2`, so the gradient `2 x_dagger` of `||x||^2`
/// equals `A^T w`. Then `R(x) - R(x_dagger) = D(x) + <w, A(x - x_dagger)>
/// >= D(x) - ||w|| sqrt(S(Ax, y))`, i.e. `Phi(t) = ||w|| sqrt(t)`.
pub fn source_condition_construct(a: &ForwardOperator, w: &Datum) -> Result<QuadraticSource> {
    let m = a.matrix().ok_or(Error::NonlinearOperator)?;
    check_dim("source element", m.nrows(), w.len())?;
    validate_vector("source element", w)?;
    let norm = w.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("source element must be nonzero".into()));
    }
    let xi = m.tr_mul(w);
    let x_dagger = &xi * 0.5;
    let data = m * &x_dagger;
    let certificate = SourceCertificate::new(
        x_dagger,
        vec![xi],
        vec![PhiFunction::power(norm, 0.5)?],
        2.0,
    )?;
    Ok(QuadraticSource {
        certificate,
        data,
        sources: vec![w.clone()],
    })
}

/// Source element with unit weight and a random sign along every left
/// singular vector of `A` with nonzero singular value. Spreading `w` evenly
/// over the spectrum makes the `O(delta)` Bregman rate attained rather than
/// beaten, independently of the draw.
pub fn flat_source_element(a: &ForwardOperator, rng: &mut StreamRng) -> Result<Datum> {
    let m = a.matrix().ok_or(Error::NonlinearOperator)?;
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().ok_or_else(|| Error::Singular("SVD without left vectors".into()))?;
    let cutoff = svd.singular_values.max() * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    let mut w = DVector::zeros(m.nrows());
    for (i, sv) in svd.singular_values.iter().enumerate() {
        if *sv > cutoff {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            w += u.column(i) * sign;
        }
    }
    Ok(w)
}

impl QuadraticSource {
    /// Adds a certificate for a further quadratic penalty `||L x||^2` at the
    /// same `x_dagger`. Its gradient `xi = 2 L^T L x_dagger` is written as
    /// `A^T w` with the minimum-norm `w`; requires `xi` in the range of `A^T`.
    pub fn with_quadratic_penalty(&self, a: &ForwardOperator, penalty: &Regularizer) -> Result<Self> {
        let m = a.matrix().ok_or(Error::NonlinearOperator)?;
        let xd = &self.certificate.x_dagger;
        let xi = penalty
            .gradient(xd)?
            .filter(|_| penalty.quadratic_map(xd.len()).is_some())
            .ok_or_else(|| Error::Unsupported("certificate extension needs a quadratic penalty".into()))?;
        let w = min_norm_preimage(&m.transpose(), &xi)?;
        let residual = (m.tr_mul(&w) - &xi).norm();
        if residual > 1e-8 * xi.norm().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty gradient is not in the range of A^T (residual {residual:e})"
            )));
        }
        let norm = w.norm();
        let phi = if norm > 0.0 {
            PhiFunction::power(norm, 0.5)?
        } else {
            // xi = 0: the inequality holds with any index function
            PhiFunction::power(f64::MIN_POSITIVE, 0.5)?
        };
        let mut next = self.clone();
        next.certificate.subgradients.push(xi);
        next.certificate.phis.push(phi);
        next.sources.push(w);
        Ok(next)
    }

    /// Test points for the variational inequalities: Gaussian samples around
    /// `x_dagger` plus points along `-A^+ w_k`, where `<w_k, A h>` is most
    /// negative relative to `||A h||` and the inequalities are tight.
    pub fn probe_samples(
        &self,
        a: &ForwardOperator,
        count: usize,
        radius: f64,
        rng: &mut StreamRng,
    ) -> Result<Vec<Point>> {
        let m = a.matrix().ok_or(Error::NonlinearOperator)?;
        let xd = &self.certificate.x_dagger;
        let mut out: Vec<Point> = (0..count)
            .map(|_| xd + rng::gaussian_vector(rng, xd.len()) * radius)
            .collect();
        for w in &self.sources {
            let h = min_norm_preimage(m, w)?;
            let n = h.norm();
            if n == 0.0 {
                continue;
            }
            for t in [1e-3, 1e-2, 0.1, 1.0] {
                out.push(xd - &h * (t * radius / n));
            }
        }
        Ok(out)
    }
}

/// Minimum-norm least-squares solution of `M v = b` via the SVD.
fn min_norm_preimage(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = m.clone().svd(true, true);
    let tol = svd.singular_values.max() * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    svd.solve(b, tol)
        .map_err(|e| Error::Singular(format!("pseudo-inverse: {e}")))
}

fn psi_inputs<'a>(
    alpha: &RegVector,
    phis: &'a [PhiFunction],
    s: f64,
) -> Result<Vec<(f64, &'a PhiFunction)>> {
    check_dim("index functions", alpha.len(), phis.len())?;
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "quasi-triangle constant must be >= 1, got {s}"
        )));
    }
    let active: Vec<_> = alpha
        .as_slice()
        .iter()
        .zip(phis)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, p)| (s * s * a, p))
        .collect();
    let slope: f64 = active.iter().map(|(w, p)| w * p.asymptotic_slope()).sum();
    if slope >= 1.0 {
        return Err(Error::UnboundedPsi);
    }
    Ok(active)
}

/// `Psi(alpha) = sup_{t>0} (s^2 sum_k alpha_k Phi_k(t) - t)`.
///
/// When all active index functions are powers with a common exponent
/// `kappa < 1`, the supremum is attained at `t* = (kappa C)^(1/(1-kappa))` with
/// `C = s^2 sum_k alpha_k c_k`, giving `t* (1/kappa - 1)`. Otherwise the
/// maximum is located numerically.
pub fn psi(alpha: &RegVector, phis: &[PhiFunction], s: f64) -> Result<f64> {
    let active = psi_inputs(alpha, phis, s)?;
    if active.is_empty() {
        return Ok(0.0);
    }
    let mut common = None;
    let mut c_total = 0.0;
    for (w, p) in &active {
        match p {
            PhiFunction::Power {
                coefficient,
                exponent,
            } if *exponent < 1.0 && common.is_none_or(|k| k == *exponent) => {
                common = Some(*exponent);
                c_total += w * coefficient;
            }
            _ => return psi_numeric(alpha, phis, s),
        }
    }
    let kappa = common.expect("active set is nonempty");
    let t_star = (kappa * c_total).powf(1.0 / (1.0 - kappa));
    Ok(t_star * (1.0 / kappa - 1.0))
}

/// `Psi(alpha)` by golden-section search on a bracket where the objective
/// has become negative. The objective is concave, hence unimodal.
pub fn psi_numeric(alpha: &RegVector, phis: &[PhiFunction], s: f64) -> Result<f64> {
    let active = psi_inputs(alpha, phis, s)?;
    if active.is_empty() {
        return Ok(0.0);
    }
    let gain = |t: f64| active.iter().map(|(w, p)| w * p.eval(t)).sum::<f64>();
    let objective = |t: f64| gain(t) - t;

    // smallest power of two beyond the crossing s^2 sum alpha Phi(t) = t
    let mut hi = 1.0f64;
    let mut steps = 0;
    while gain(hi) >= hi {
        hi *= 2.0;
        steps += 1;
        if steps > 4000 || !hi.is_finite() {
            return Err(Error::UnboundedPsi);
        }
    }
    while hi > f64::MIN_POSITIVE * 4.0 && gain(hi / 2.0) < hi / 2.0 {
        hi /= 2.0;
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > PSI_TOLERANCE * hi {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    Ok(objective(0.5 * (a + b)).max(fc).max(fd).max(0.0))
}

/// Bound on `sum_k alpha_k D^k(x; x_dagger)`:
/// `s d_op + (s + 1) S(y, y_delta) + S(y_delta, y) / s + Psi / s^2`.
pub fn aggregate_rate_bound(noise: &NoiseQuantities, s: f64, psi_value: f64) -> Result<f64> {
    check_s(s)?;
    Ok(s * noise.d_op + (s + 1.0) * noise.s_y_ydelta + noise.s_ydelta_y / s + psi_value / (s * s))
}

/// Bound on the single distance `D^j(x; x_dagger)`:
/// `(s^3 d_op + (s^3 + s) S(y, y_delta) + s S(y_delta, y) + Psi) / (s^2 alpha_j)`.
/// `j` is 0-based.
pub fn rate_bound(j: usize, alpha: &RegVector, noise: &NoiseQuantities, s: f64, psi_value: f64) -> Result<f64> {
    check_s(s)?;
    if j >= alpha.len() {
        return Err(Error::InvalidArgument(format!(
            "penalty index {j} out of range for {} parameters",
            alpha.len()
        )));
    }
    let aj = alpha.get(j);
    if aj == 0.0 {
        return Err(Error::ZeroComponent { index: j + 1 });
    }
    let s3 = s * s * s;
    Ok((s3 * noise.d_op + (s3 + s) * noise.s_y_ydelta + s * noise.s_ydelta_y + psi_value) / (s * s * aj))
}

fn check_s(s: f64) -> Result<()> {
    if s >= 1.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "quasi-triangle constant must be >= 1, got {s}"
        )))
    }
}
