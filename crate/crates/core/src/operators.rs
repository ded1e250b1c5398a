//! Forward operators, calibrated perturbations and the sampled operator
//! pseudo-metric `d_{K,L}(F, G) = sup |S(F(x), z) - S(G(x), z)|`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::problem::{validate_vector, Datum, Point};
use crate::regularizers::Regularizer;
use crate::rng::{self, StreamRng};
use crate::similarity::SimilarityMeasure;

/// Width of the Gaussian kernel used by [`make_smoothing_operator`], on the unit interval.
pub const SMOOTHING_KERNEL_WIDTH: f64 = 0.08;

type ApplyFn = Arc<dyn Fn(&Point) -> Datum + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Linear(DMatrix<f64>),
    Nonlinear {
        input_dim: usize,
        output_dim: usize,
        apply: ApplyFn,
        jacobian: Option<JacobianFn>,
    },
}

/// Mapping `F: X -> Y`.
#[derive(Clone)]
pub struct ForwardOperator {
    kind: Kind,
}

impl fmt::Debug for ForwardOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Linear(m) => write!(f, "ForwardOperator::Linear({}x{})", m.nrows(), m.ncols()),
            Kind::Nonlinear {
                input_dim,
                output_dim,
                ..
            } => write!(f, "ForwardOperator::Nonlinear({output_dim}x{input_dim})"),
        }
    }
}

impl ForwardOperator {
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        ForwardOperator {
            kind: Kind::Linear(matrix),
        }
    }

    pub fn nonlinear(
        input_dim: usize,
        output_dim: usize,
        apply: impl Fn(&Point) -> Datum + Send + Sync + 'static,
        jacobian: Option<JacobianFn>,
    ) -> Self {
        ForwardOperator {
            kind: Kind::Nonlinear {
                input_dim,
                output_dim,
                apply: Arc::new(apply),
                jacobian,
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            Kind::Linear(m) => m.ncols(),
            Kind::Nonlinear { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            Kind::Linear(m) => m.nrows(),
            Kind::Nonlinear { output_dim, .. } => *output_dim,
        }
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            Kind::Linear(m) => Some(m),
            Kind::Nonlinear { .. } => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.matrix().is_some()
    }

    pub fn apply(&self, x: &Point) -> Result<Datum> {
        check_dim("operator input", self.input_dim(), x.len())?;
        let out = match &self.kind {
            Kind::Linear(m) => m * x,
            Kind::Nonlinear { apply, .. } => apply(x),
        };
        check_dim("operator output", self.output_dim(), out.len())?;
        Ok(out)
    }

    pub fn jacobian_at(&self, x: &Point) -> Result<Option<DMatrix<f64>>> {
        check_dim("operator input", self.input_dim(), x.len())?;
        Ok(match &self.kind {
            Kind::Linear(m) => Some(m.clone()),
            Kind::Nonlinear { jacobian, .. } => jacobian.as_ref().map(|j| j(x)),
        })
    }
}

/// Discretised Gaussian convolution on `[0, 1]` with midpoint quadrature.
/// Row `i` samples the output at `(i + 1/2) / rows`, column `j` the input at
/// `(j + 1/2) / cols`. Singular values decay quickly, so the inverse problem
/// is badly conditioned.
pub fn make_smoothing_operator(rows: usize, cols: usize) -> Result<ForwardOperator> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing operator needs positive size, got {rows}x{cols}"
        )));
    }
    let g = SMOOTHING_KERNEL_WIDTH;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * g * cols as f64);
    let m = DMatrix::from_fn(rows, cols, |i, j| {
        let s = (i as f64 + 0.5) / rows as f64;
        let t = (j as f64 + 0.5) / cols as f64;
        norm * (-(s - t) * (s - t) / (2.0 * g * g)).exp()
    });
    Ok(ForwardOperator::linear(m))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Ratio of largest to smallest singular value (`inf` when rank deficient).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Returns `F + E` with `||E||_2 = eps`, `E` a rescaled Gaussian matrix drawn
/// from `seed`.
pub fn perturb_operator(f: &ForwardOperator, eps: f64, seed: u64) -> Result<ForwardOperator> {
    let m = f.matrix().ok_or(Error::NonlinearOperator)?;
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation size must be finite and nonnegative, got {eps}"
        )));
    }
    if eps == 0.0 {
        return Ok(f.clone());
    }
    let mut r = rng::stream(seed, "operator-perturbation", &[]);
    let e = loop {
        let e = DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| {
            rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r)
        });
        let n = spectral_norm(&e);
        if n > 0.0 {
            break e * (eps / n);
        }
    };
    Ok(ForwardOperator::linear(m + e))
}

/// Finite stand-ins for the sets `K` (solution space) and `L` (data space).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleCloud {
    k_points: Vec<Point>,
    l_points: Vec<Datum>,
}

impl SampleCloud {
    pub fn new(k_points: Vec<Point>, l_points: Vec<Datum>) -> Result<Self> {
        if k_points.is_empty() || l_points.is_empty() {
            return Err(Error::InvalidArgument("sample cloud must be nonempty".into()));
        }
        for x in &k_points {
            validate_vector("cloud point", x)?;
        }
        for z in &l_points {
            validate_vector("cloud datum", z)?;
        }
        Ok(SampleCloud { k_points, l_points })
    }

    pub fn k_points(&self) -> &[Point] {
        &self.k_points
    }

    pub fn l_points(&self) -> &[Datum] {
        &self.l_points
    }

    /// Adds solution-space points, keeping the data points.
    pub fn with_k_points(mut self, extra: impl IntoIterator<Item = Point>) -> Self {
        self.k_points.extend(extra);
        self
    }
}

/// Rejection sample of `{x : R_k(x) <= R_k(anchor) + 1 for some k}` from the
/// box `anchor +- half_width`. The anchor itself is always included.
pub fn sample_sublevel_cloud(
    regs: &[Regularizer],
    anchor: &Point,
    half_width: f64,
    count: usize,
    l_points: Vec<Datum>,
    rng: &mut StreamRng,
) -> Result<SampleCloud> {
    let levels: Vec<f64> = regs
        .iter()
        .map(|r| r.eval(anchor).map(|v| v.to_f64() + 1.0))
        .collect::<Result<_>>()?;
    let mut points = vec![anchor.clone()];
    let max_attempts = count.saturating_mul(1000).max(1000);
    let mut attempts = 0;
    while points.len() < count + 1 && attempts < max_attempts {
        attempts += 1;
        let x = DVector::from_fn(anchor.len(), |i, _| {
            anchor[i] + half_width * (2.0 * rng.random::<f64>() - 1.0)
        });
        let mut accept = false;
        for (r, level) in regs.iter().zip(&levels) {
            if r.eval(&x)?.to_f64() <= *level {
                accept = true;
                break;
            }
        }
        if accept {
            points.push(x);
        }
    }
    if points.len() < count + 1 {
        log::warn!(
            "sublevel cloud: accepted {} of {} requested points",
            points.len() - 1,
            count
        );
    }
    SampleCloud::new(points, l_points)
}

/// Sampled lower estimate of `d_{K,L}(F, G)`.
pub fn d_kl_estimate(
    s: &SimilarityMeasure,
    f: &ForwardOperator,
    g: &ForwardOperator,
    cloud: &SampleCloud,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in &cloud.k_points {
        let (fx, gx) = (f.apply(x)?, g.apply(x)?);
        for z in &cloud.l_points {
            worst = worst.max((s.eval(&fx, z)? - s.eval(&gx, z)?).abs());
        }
    }
    Ok(worst)
}

/// `d_kl_estimate(F_l, F)` for each operator in the sequence.
pub fn operator_convergence_report(
    s: &SimilarityMeasure,
    f_seq: &[ForwardOperator],
    f: &ForwardOperator,
    cloud: &SampleCloud,
) -> Result<Vec<f64>> {
    f_seq.iter().map(|fl| d_kl_estimate(s, fl, f, cloud)).collect()
}

/// Sample-level check of joint continuity of `(F, x, y) -> S(F(x), y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityReport {
    /// `S(F(x), y)`
    pub limit: f64,
    /// `|S(F_l(x), y_l) - S(F(x), y)|`
    pub fixed_point_gap: Vec<f64>,
    /// `S(F_l(x_l), y_l)`
    pub along_sequence: Vec<f64>,
}

impl ContinuityReport {
    /// `liminf S(F_l(x_l), y_l) - S(F(x), y)` approximated over the last `tail` entries.
    pub fn tail_deficit(&self, tail: usize) -> f64 {
        let n = self.along_sequence.len();
        let start = n.saturating_sub(tail);
        let min = self.along_sequence[start..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        self.limit - min
    }
}

pub fn sequential_continuity_report(
    s: &SimilarityMeasure,
    f_seq: &[ForwardOperator],
    f: &ForwardOperator,
    x_seq: &[Point],
    x: &Point,
    y_seq: &[Datum],
    y: &Datum,
) -> Result<ContinuityReport> {
    if f_seq.len() != x_seq.len() || f_seq.len() != y_seq.len() {
        return Err(Error::InvalidArgument(
            "operator, point and data sequences must share length".into(),
        ));
    }
    let limit = s.eval(&f.apply(x)?, y)?;
    let mut fixed_point_gap = Vec::with_capacity(f_seq.len());
    let mut along_sequence = Vec::with_capacity(f_seq.len());
    for ((fl, xl), yl) in f_seq.iter().zip(x_seq).zip(y_seq) {
        fixed_point_gap.push((s.eval(&fl.apply(x)?, yl)? - limit).abs());
        along_sequence.push(s.eval(&fl.apply(xl)?, yl)?);
    }
    Ok(ContinuityReport {
        limit,
        fixed_point_gap,
        along_sequence,
    })
}
