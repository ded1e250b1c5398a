//! Seeded numerical experiments: stability under perturbations, convergence
//! along parameter schedules, and convergence rates against the certified
//! bounds. Every report renders to CSV deterministically.

mod convergence;
mod rates;
mod schedule;
mod stability;

pub use convergence::{
    run_convergence_experiment, ConvergenceRecord, ConvergenceReport, ConvergenceSettings, LimitCheck,
    SolutionGrid,
};
pub use rates::{run_rate_experiment, NoisePower, RateRecord, RateReport, RateSettings};
pub use schedule::{check_schedule, make_schedule, Decay, Schedule, ScheduleClass};
pub use stability::{run_stability_experiment, StabilityRecord, StabilityReport, StabilitySettings};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::operators::{perturb_operator, ForwardOperator};
use crate::problem::Datum;
use crate::rng;

/// Pass/fail digest shared by all experiment reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Number of failed checks.
    pub violations: usize,
    pub fitted_slope: Option<f64>,
    pub verdict: bool,
}

/// `y + size * u` with `u` a seeded unit direction, so `||y^(l) - y|| = size`.
fn perturbed_datum(y: &Datum, size: f64, seed: u64, name: &str, indices: &[u64]) -> Datum {
    if size == 0.0 {
        return y.clone();
    }
    let mut r = rng::stream(seed, name, indices);
    y + rng::unit_vector(&mut r, y.len()) * size
}

fn perturbed_operator(f: &ForwardOperator, eps: f64, seed: u64, name: &str, indices: &[u64]) -> Result<ForwardOperator> {
    let sub_seed = rng::stream(seed, name, indices).random::<u64>();
    perturb_operator(f, eps, sub_seed)
}

/// Shortest round-trip scientific notation, `.` decimal separator.
fn csv_float(v: f64) -> String {
    format!("{v:e}")
}

fn csv_header(fixed: &[&str], groups: &[(&str, usize)], tail: &[&str]) -> String {
    let mut cols: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    for (name, n) in groups {
        cols.extend((1..=*n).map(|k| format!("{name}_{k}")));
    }
    cols.extend(tail.iter().map(|s| s.to_string()));
    cols.join(",")
}

fn join_floats(values: &[f64]) -> Vec<String> {
    values.iter().copied().map(csv_float).collect()
}

/// Ordinary least-squares slope of `ys` against `xs`.
fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn ols_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 * x - 2.0).collect();
        assert!((ols_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-14);
        assert_eq!(ols_slope(&[1.0], &[1.0]), None);
        assert_eq!(ols_slope(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn datum_perturbation_has_exact_size() {
        let y = dvector![1.0, 2.0, 3.0];
        let yd = perturbed_datum(&y, 0.25, 3, "t", &[1]);
        assert!(((yd - &y).norm() - 0.25).abs() < 1e-15);
        assert_eq!(perturbed_datum(&y, 0.0, 3, "t", &[1]), y);
    }

    #[test]
    fn csv_helpers() {
        assert_eq!(csv_header(&["a"], &[("alpha", 2)], &["z"]), "a,alpha_1,alpha_2,z");
        assert_eq!(csv_float(0.1), "1e-1");
        assert_eq!(csv_float(1.25), "1.25e0");
    }
}
