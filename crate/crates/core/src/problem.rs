//! Core domain types and the multi-parameter Tikhonov functional
//!
//! `T(x; alpha, y, F) = S(F(x), y) + sum_k alpha_k R_k(x)`
//!
//! Penalties take values in `[0, +inf]`. A term whose weight is exactly zero
//! contributes zero even where the penalty is infinite, so the weighted sum is
//! evaluated in [`ExtReal`] arithmetic and never through `0.0 * f64::INFINITY`.
//!
//! Points and data live in finite-dimensional Euclidean spaces with their
//! usual topology.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operators::ForwardOperator;
use crate::regularizers::Regularizer;
use crate::similarity::SimilarityMeasure;

/// Element of the solution space.
pub type Point = DVector<f64>;
/// Element of the data space.
pub type Datum = DVector<f64>;

/// Rejects empty vectors and non-finite entries.
pub fn validate_vector(context: &'static str, v: &DVector<f64>) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(format!("{context}: empty vector")));
    }
    if let Some(i) = v.iter().position(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{context}: entry {i} is not finite"
        )));
    }
    Ok(())
}

/// Nonnegative extended real, `[0, +inf]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    /// Wraps a finite nonnegative value. `+inf` maps to [`ExtReal::Infinite`].
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "extended real must be nonnegative, got {value}"
            )));
        }
        if value.is_infinite() {
            Ok(ExtReal::Infinite)
        } else {
            Ok(ExtReal::Finite(value))
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    /// Lossy conversion; infinity becomes `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(v) => v,
            ExtReal::Infinite => f64::INFINITY,
        }
    }

    /// `weight * self` with `0 * inf = 0`.
    pub fn weighted(self, weight: f64) -> ExtReal {
        debug_assert!(weight >= 0.0);
        if weight == 0.0 {
            return ExtReal::ZERO;
        }
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(weight * v),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }
}

impl Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinite,
        }
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
            (ExtReal::Finite(_), ExtReal::Infinite) => Some(Ordering::Less),
            (ExtReal::Infinite, ExtReal::Finite(_)) => Some(Ordering::Greater),
            (ExtReal::Infinite, ExtReal::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => write!(f, "+inf"),
        }
    }
}

/// Regularisation vector `alpha` with nonnegative components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RegVector(Vec<f64>);

impl RegVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "regularisation vector must not be empty".into(),
            ));
        }
        if let Some(i) = components
            .iter()
            .position(|a| !a.is_finite() || *a < 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "alpha_{} = {} is not a finite nonnegative number",
                i + 1,
                components[i]
            )));
        }
        Ok(RegVector(components))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|a| *a == 0.0)
    }

    /// Copy with every component multiplied by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        RegVector::new(self.0.iter().map(|a| a * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for RegVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        RegVector::new(v)
    }
}

impl From<RegVector> for Vec<f64> {
    fn from(a: RegVector) -> Vec<f64> {
        a.0
    }
}

/// Forward operator, similarity measure and an ordered list of penalties.
#[derive(Clone, Debug)]
pub struct TikhonovProblem {
    operator: ForwardOperator,
    similarity: SimilarityMeasure,
    regularizers: Vec<Regularizer>,
}

impl TikhonovProblem {
    pub fn new(
        operator: ForwardOperator,
        similarity: SimilarityMeasure,
        regularizers: Vec<Regularizer>,
    ) -> Result<Self> {
        if regularizers.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one regulariser is required".into(),
            ));
        }
        for r in &regularizers {
            if let Some(d) = r.dimension() {
                check_dim("regulariser domain", operator.input_dim(), d)?;
            }
        }
        Ok(TikhonovProblem {
            operator,
            similarity,
            regularizers,
        })
    }

    pub fn operator(&self) -> &ForwardOperator {
        &self.operator
    }

    pub fn similarity(&self) -> &SimilarityMeasure {
        &self.similarity
    }

    pub fn regularizers(&self) -> &[Regularizer] {
        &self.regularizers
    }

    pub fn penalty_count(&self) -> usize {
        self.regularizers.len()
    }

    /// Same penalties and similarity, different operator.
    pub fn with_operator(&self, operator: ForwardOperator) -> Result<Self> {
        TikhonovProblem::new(operator, self.similarity.clone(), self.regularizers.clone())
    }

    /// Problem restricted to the penalties with `alpha_k > 0`, together with
    /// the matching sub-vector of `alpha`.
    pub fn reduced(&self, alpha: &RegVector) -> Result<(TikhonovProblem, RegVector)> {
        check_dim("alpha", self.regularizers.len(), alpha.len())?;
        if alpha.is_zero() {
            return Err(Error::ZeroAlpha);
        }
        let (regs, weights): (Vec<_>, Vec<_>) = self
            .regularizers
            .iter()
            .zip(alpha.as_slice())
            .filter(|(_, a)| **a > 0.0)
            .map(|(r, a)| (r.clone(), *a))
            .unzip();
        Ok((
            TikhonovProblem {
                operator: self.operator.clone(),
                similarity: self.similarity.clone(),
                regularizers: regs,
            },
            RegVector::new(weights)?,
        ))
    }

    fn check_inputs(&self, x: &Point, alpha: &RegVector, y: &Datum) -> Result<()> {
        check_dim("point", self.operator.input_dim(), x.len())?;
        check_dim("datum", self.operator.output_dim(), y.len())?;
        check_dim("alpha", self.regularizers.len(), alpha.len())
    }
}

/// `sum_k alpha_k R_k(x)` with `0 * inf = 0`.
pub fn weighted_penalty(alpha: &RegVector, regs: &[Regularizer], x: &Point) -> Result<ExtReal> {
    check_dim("alpha", regs.len(), alpha.len())?;
    let mut total = ExtReal::ZERO;
    for (r, a) in regs.iter().zip(alpha.as_slice()) {
        if *a == 0.0 {
            continue;
        }
        total = total + r.eval(x)?.weighted(*a);
    }
    Ok(total)
}

/// Evaluates the Tikhonov functional at `x`.
pub fn tikhonov_eval(
    problem: &TikhonovProblem,
    x: &Point,
    alpha: &RegVector,
    y: &Datum,
) -> Result<ExtReal> {
    problem.check_inputs(x, alpha, y)?;
    let fx = problem.operator.apply(x)?;
    let fit = problem.similarity.eval(&fx, y)?;
    let penalty = weighted_penalty(alpha, &problem.regularizers, x)?;
    Ok(ExtReal::new(fit)? + penalty)
}

/// Whether every penalty is finite at `x`.
pub fn joint_domain_member(regs: &[Regularizer], x: &Point) -> Result<bool> {
    for r in regs {
        if !r.eval(x)?.is_finite() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Returns `(alpha / sum(alpha), sum(alpha))`.
pub fn normalize_alpha(alpha: &RegVector) -> Result<(RegVector, f64)> {
    if alpha.is_zero() {
        return Err(Error::ZeroAlpha);
    }
    let total = alpha.sum();
    let normalized = alpha.as_slice().iter().map(|a| a / total).collect();
    Ok((RegVector::new(normalized)?, total))
}
