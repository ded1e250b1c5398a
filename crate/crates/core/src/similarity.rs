//! Similarity measures `S(z, y)` on the data space.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::Datum;
use crate::rng::{self, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SimilarityMeasure {
    /// `||z - y||^2`
    SqNorm,
    /// `||z - y||^p`, `p > 1`
    PowerMetric { p: f64 },
    /// Generalised Kullback-Leibler divergence on nonnegative vectors.
    KlDivergence,
}

impl SimilarityMeasure {
    pub fn sq_norm() -> Self {
        SimilarityMeasure::SqNorm
    }

    pub fn power_metric(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "power metric exponent must exceed 1, got {p}"
            )));
        }
        Ok(SimilarityMeasure::PowerMetric { p })
    }

    pub fn kl_divergence() -> Self {
        SimilarityMeasure::KlDivergence
    }

    /// Constant `s` of the quasi-triangle inequality, when one is known.
    pub fn quasi_triangle_s(&self) -> Option<f64> {
        match self {
            SimilarityMeasure::SqNorm => Some(2.0),
            SimilarityMeasure::PowerMetric { p } => Some(2f64.powf(p - 1.0)),
            SimilarityMeasure::KlDivergence => None,
        }
    }

    pub fn eval(&self, z: &Datum, y: &Datum) -> Result<f64> {
        check_dim("similarity arguments", z.len(), y.len())?;
        match self {
            SimilarityMeasure::SqNorm => Ok((z - y).norm_squared()),
            SimilarityMeasure::PowerMetric { p } => Ok((z - y).norm().powf(*p)),
            SimilarityMeasure::KlDivergence => kl(z, y),
        }
    }

    /// Whether `S(., y)` is continuously differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        match self {
            SimilarityMeasure::SqNorm => true,
            SimilarityMeasure::PowerMetric { p } => *p >= 2.0,
            SimilarityMeasure::KlDivergence => false,
        }
    }

    /// Gradient of `S(., y)` at `z`, for the smooth measures.
    pub fn gradient_first(&self, z: &Datum, y: &Datum) -> Result<Datum> {
        check_dim("similarity arguments", z.len(), y.len())?;
        match self {
            SimilarityMeasure::SqNorm => Ok(2.0 * (z - y)),
            SimilarityMeasure::PowerMetric { p } if *p >= 2.0 => {
                let r = z - y;
                let n = r.norm();
                if n == 0.0 {
                    Ok(DVector::zeros(z.len()))
                } else {
                    Ok(r * (p * n.powf(p - 2.0)))
                }
            }
            _ => Err(Error::Unsupported(format!(
                "{self:?} is not smooth in its first argument"
            ))),
        }
    }
}

fn kl(z: &Datum, y: &Datum) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&zi, &yi)) in z.iter().zip(y.iter()).enumerate() {
        if zi < 0.0 || yi < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "KL divergence needs nonnegative entries (index {i})"
            )));
        }
        if zi == 0.0 {
            total += yi;
        } else if yi == 0.0 {
            return Err(Error::InfiniteSimilarity(format!(
                "KL divergence: reference entry {i} is zero where the argument is positive"
            )));
        } else {
            total += zi * (zi / yi).ln() - zi + yi;
        }
    }
    Ok(total.max(0.0))
}

/// `d^(z)(y, y2) = |S(z, y) - S(z, y2)|`.
pub fn pseudo_metric_dz(s: &SimilarityMeasure, z: &Datum, y: &Datum, y2: &Datum) -> Result<f64> {
    Ok((s.eval(z, y)? - s.eval(z, y2)?).abs())
}

/// For each `y_l`, the largest `|S(z, y_l) - S(z, y)|` over the probes.
pub fn sigma_convergence_report(
    s: &SimilarityMeasure,
    y_seq: &[Datum],
    y: &Datum,
    probes: &[Datum],
) -> Result<Vec<f64>> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("probe set is empty".into()));
    }
    y_seq
        .iter()
        .map(|yl| {
            probes.iter().try_fold(0.0f64, |acc, z| {
                Ok(acc.max(pseudo_metric_dz(s, z, yl, y)?))
            })
        })
        .collect()
}

/// Probe points drawn uniformly from balls of radius `radius` around each
/// anchor datum. There is no canonical probe set; data-adjacent balls are a
/// heuristic.
pub fn sample_probes(
    anchors: &[Datum],
    radius: f64,
    per_anchor: usize,
    rng: &mut StreamRng,
) -> Vec<Datum> {
    use rand::Rng;
    let mut out = Vec::with_capacity(anchors.len() * per_anchor);
    for a in anchors {
        for _ in 0..per_anchor {
            let dir = rng::unit_vector(rng, a.len());
            let r: f64 = radius * rng.random::<f64>().powf(1.0 / a.len() as f64);
            out.push(a + dir * r);
        }
    }
    out
}

/// Largest `S(z1, z2) - s (S(z1, z3) + S(z3, z2))` over the triples.
/// Nonpositive means the inequality holds on the sample.
pub fn quasi_triangle_violation(
    s_measure: &SimilarityMeasure,
    s: f64,
    triples: &[(Datum, Datum, Datum)],
) -> Result<f64> {
    if s < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "quasi-triangle constant must be >= 1, got {s}"
        )));
    }
    triples
        .iter()
        .try_fold(f64::NEG_INFINITY, |worst, (z1, z2, z3)| {
            let lhs = s_measure.eval(z1, z2)?;
            let rhs = s * (s_measure.eval(z1, z3)? + s_measure.eval(z3, z2)?);
            Ok(worst.max(lhs - rhs))
        })
}
