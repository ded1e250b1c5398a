//! Penalty functionals `R_k: X -> [0, +inf]` with subgradients and proximal maps.
//!
//! All penalties here are convex and continuous on their (closed) domains,
//! which makes them lower semi-continuous. Coercivity holds for [`Regularizer::SqL2`]
//! with an injective map and for [`Regularizer::L1`]; total variation is only
//! coercive together with an anchoring penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{validate_vector, ExtReal, Point};

/// Stopping threshold on the duality gap of the total-variation prox.
pub const TV_PROX_TOLERANCE: f64 = 1e-10;
const TV_PROX_MAX_ITERATIONS: usize = 500_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regularizer {
    /// `||L x||^2`, identity when `map` is `None`.
    SqL2 { map: Option<DMatrix<f64>> },
    /// `sum_i |x_i|`
    L1,
    /// `sum_i |x_{i+1} - x_i|` on vectors of length `dim`.
    Tv1d { dim: usize },
    /// `inner(x)` on the box `lo <= x <= hi`, `+inf` outside.
    IndicatorBox {
        lo: DVector<f64>,
        hi: DVector<f64>,
        inner: Box<Regularizer>,
    },
}

impl Regularizer {
    pub fn sq_l2(map: Option<DMatrix<f64>>) -> Result<Self> {
        if let Some(m) = &map {
            if m.is_empty() || m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "penalty map must be a nonempty finite matrix".into(),
                ));
            }
        }
        Ok(Regularizer::SqL2 { map })
    }

    pub fn l1() -> Self {
        Regularizer::L1
    }

    pub fn tv1d(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "total variation needs dimension >= 2, got {dim}"
            )));
        }
        Ok(Regularizer::Tv1d { dim })
    }

    pub fn indicator_box(lo: DVector<f64>, hi: DVector<f64>, inner: Regularizer) -> Result<Self> {
        validate_vector("box lower corner", &lo)?;
        validate_vector("box upper corner", &hi)?;
        check_dim("box corners", lo.len(), hi.len())?;
        if let Some(i) = lo.iter().zip(hi.iter()).position(|(l, h)| l > h) {
            return Err(Error::InvalidArgument(format!(
                "empty box: lo[{i}] = {} > hi[{i}] = {}",
                lo[i], hi[i]
            )));
        }
        if let Some(d) = inner.dimension() {
            check_dim("box inner penalty", lo.len(), d)?;
        }
        Ok(Regularizer::IndicatorBox {
            lo,
            hi,
            inner: Box::new(inner),
        })
    }

    /// Input dimension when fixed by the penalty's own data.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            Regularizer::SqL2 { map } => map.as_ref().map(|m| m.ncols()),
            Regularizer::L1 => None,
            Regularizer::Tv1d { dim } => Some(*dim),
            Regularizer::IndicatorBox { lo, .. } => Some(lo.len()),
        }
    }

    fn check_input(&self, x: &Point) -> Result<()> {
        if let Some(d) = self.dimension() {
            check_dim("regulariser argument", d, x.len())?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &Point) -> Result<ExtReal> {
        self.check_input(x)?;
        Ok(match self {
            Regularizer::SqL2 { map: None } => ExtReal::Finite(x.norm_squared()),
            Regularizer::SqL2 { map: Some(l) } => ExtReal::Finite((l * x).norm_squared()),
            Regularizer::L1 => ExtReal::Finite(x.lp_norm(1)),
            Regularizer::Tv1d { .. } => ExtReal::Finite(total_variation(x)),
            Regularizer::IndicatorBox { lo, hi, inner } => {
                if in_box(lo, hi, x) {
                    inner.eval(x)?
                } else {
                    ExtReal::Infinite
                }
            }
        })
    }

    /// The matrix `L` of a quadratic penalty `||L x||^2`.
    pub fn quadratic_map(&self, dim: usize) -> Option<DMatrix<f64>> {
        match self {
            Regularizer::SqL2 { map: None } => Some(DMatrix::identity(dim, dim)),
            Regularizer::SqL2 { map: Some(l) } => Some(l.clone()),
            _ => None,
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Regularizer::SqL2 { .. })
    }

    /// Gradient of a smooth penalty.
    pub fn gradient(&self, x: &Point) -> Result<Option<Point>> {
        self.check_input(x)?;
        Ok(match self {
            Regularizer::SqL2 { map: None } => Some(2.0 * x),
            Regularizer::SqL2 { map: Some(l) } => Some(2.0 * l.tr_mul(&(l * x))),
            _ => None,
        })
    }

    /// A subgradient at `x`, or `None` outside the domain. Kinks of the
    /// absolute value select 0.
    pub fn subgradient_at(&self, x: &Point) -> Result<Option<Point>> {
        self.check_input(x)?;
        Ok(match self {
            Regularizer::SqL2 { .. } => self.gradient(x)?,
            Regularizer::L1 => Some(x.map(sign0)),
            Regularizer::Tv1d { .. } => {
                let n = x.len();
                let mut g = DVector::zeros(n);
                for i in 0..n - 1 {
                    let s = sign0(x[i + 1] - x[i]);
                    g[i + 1] += s;
                    g[i] -= s;
                }
                Some(g)
            }
            Regularizer::IndicatorBox { lo, hi, inner } => {
                if in_box(lo, hi, x) {
                    inner.subgradient_at(x)?
                } else {
                    None
                }
            }
        })
    }

    /// Coordinatewise separable penalties, whose prox commutes with box clipping.
    pub fn is_separable(&self) -> bool {
        match self {
            Regularizer::SqL2 { map: None } | Regularizer::L1 => true,
            Regularizer::SqL2 { map: Some(l) } => {
                let g = l.tr_mul(l);
                g.is_square()
                    && (0..g.nrows())
                        .all(|i| (0..g.ncols()).all(|j| i == j || g[(i, j)] == 0.0))
            }
            Regularizer::IndicatorBox { inner, .. } => inner.is_separable(),
            Regularizer::Tv1d { .. } => false,
        }
    }

    pub fn has_prox(&self) -> bool {
        match self {
            Regularizer::IndicatorBox { inner, .. } => inner.is_separable(),
            _ => true,
        }
    }

    /// `argmin_x lambda R(x) + 0.5 ||x - v||^2`.
    pub fn prox(&self, lambda: f64, v: &Point) -> Result<Point> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prox scale must be positive, got {lambda}"
            )));
        }
        self.check_input(v)?;
        match self {
            Regularizer::SqL2 { map: None } => Ok(v / (1.0 + 2.0 * lambda)),
            Regularizer::SqL2 { map: Some(l) } => {
                let n = v.len();
                let system = DMatrix::identity(n, n) + l.tr_mul(l) * (2.0 * lambda);
                system
                    .cholesky()
                    .map(|c| c.solve(v))
                    .ok_or_else(|| Error::Singular("quadratic prox system".into()))
            }
            Regularizer::L1 => Ok(v.map(|c| soft_threshold(c, lambda))),
            Regularizer::Tv1d { .. } => Ok(tv_prox(lambda, v)),
            Regularizer::IndicatorBox { lo, hi, inner } => {
                if !inner.is_separable() {
                    return Err(Error::Unsupported(
                        "box prox needs a separable inner penalty".into(),
                    ));
                }
                let p = inner.prox(lambda, v)?;
                Ok(DVector::from_fn(p.len(), |i, _| p[i].clamp(lo[i], hi[i])))
            }
        }
    }
}

fn in_box(lo: &DVector<f64>, hi: &DVector<f64>, x: &Point) -> bool {
    x.iter()
        .zip(lo.iter().zip(hi.iter()))
        .all(|(v, (l, h))| *l <= *v && *v <= *h)
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn total_variation(x: &Point) -> f64 {
    x.as_slice().windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// First-difference matrix of shape `(n - 1) x n`.
pub fn first_difference(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n.saturating_sub(1), n, |i, j| {
        if j == i + 1 {
            1.0
        } else if j == i {
            -1.0
        } else {
            0.0
        }
    })
}

// D^T u for the forward difference D
fn diff_adjoint(u: &[f64], out: &mut [f64]) {
    let n = out.len();
    out[0] = -u[0];
    for i in 1..n - 1 {
        out[i] = u[i - 1] - u[i];
    }
    out[n - 1] = u[n - 2];
}

/// Dual accelerated projected gradient for `lambda TV(x) + 0.5 ||x - v||^2`,
/// stopped on the duality gap.
fn tv_prox(lambda: f64, v: &Point) -> Point {
    let n = v.len();
    let m = n - 1;
    let step = 0.25; // ||D D^T|| <= 4
    let mut u = vec![0.0; m];
    let mut u_prev = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut t = 1.0f64;
    let mut dtu = vec![0.0; n];
    let mut x = vec![0.0; n];
    let scale = 1.0 + v.norm_squared();

    for it in 0..TV_PROX_MAX_ITERATIONS {
        // gradient of 0.5||v - D^T z||^2 wrt z is -D (v - D^T z)
        diff_adjoint(&z, &mut dtu);
        for i in 0..n {
            x[i] = v[i] - dtu[i];
        }
        u_prev.copy_from_slice(&u);
        for i in 0..m {
            let dx = x[i + 1] - x[i];
            u[i] = (z[i] + step * dx).clamp(-lambda, lambda);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..m {
            z[i] = u[i] + beta * (u[i] - u_prev[i]);
        }
        t = t_next;

        if it % 16 == 0 {
            diff_adjoint(&u, &mut dtu);
            let mut gap = 0.0;
            for i in 0..n {
                x[i] = v[i] - dtu[i];
            }
            for i in 0..m {
                let dx = x[i + 1] - x[i];
                gap += lambda * dx.abs() - u[i] * dx;
            }
            if gap <= TV_PROX_TOLERANCE * scale {
                return DVector::from_vec(x);
            }
        }
    }
    log::warn!("total-variation prox reached the iteration limit");
    diff_adjoint(&u, &mut dtu);
    DVector::from_fn(n, |i, _| v[i] - dtu[i])
}
