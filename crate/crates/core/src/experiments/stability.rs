use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{csv_float, csv_header, join_floats, perturbed_datum, perturbed_operator, Schedule, Summary};
use crate::error::{check_dim, Result};
use crate::operators::{d_kl_estimate, ForwardOperator, SampleCloud};
use crate::problem::{Datum, Point, RegVector, TikhonovProblem};
use crate::solver::{solve, SolveOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct StabilitySettings {
    /// Required final displacement.
    pub threshold: f64,
    pub solve: SolveOptions,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        StabilitySettings {
            threshold: 1e-4,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub step: u64,
    /// `S(y, y^(l))`
    pub s_y_yl: f64,
    /// Sampled `d_{K,L}(F^(l), F)` with `K = {x_alpha, x^(l)}`, `L = {y, y^(l)}`.
    pub d_op: f64,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// `S(F(x^(l)), y)`
    pub residual: f64,
    pub penalties: Vec<f64>,
    /// `||x^(l) - x_alpha||`
    pub displacement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Minimiser of the unperturbed problem.
    pub reference: Vec<f64>,
    pub records: Vec<StabilityRecord>,
    /// Largest displacement per decade of steps, `[1, 10)`, `[10, 100)`, ...
    pub decade_maxima: Vec<f64>,
    pub final_displacement: f64,
    pub summary: Summary,
}

impl StabilityReport {
    pub fn to_csv(&self) -> String {
        let k = self.records.first().map_or(0, |r| r.alpha.len());
        let mut out = csv_header(
            &["step", "s_y_yl", "d_op"],
            &[("alpha", k), ("alpha_bar", k)],
            &[],
        );
        out.push_str(&format!(
            ",residual,{},displacement\n",
            (1..=k).map(|i| format!("penalty_{i}")).collect::<Vec<_>>().join(",")
        ));
        for r in &self.records {
            let mut row = vec![r.step.to_string(), csv_float(r.s_y_yl), csv_float(r.d_op)];
            row.extend(join_floats(&r.alpha));
            row.extend(join_floats(&r.alpha_bar));
            row.push(csv_float(r.residual));
            row.extend(join_floats(&r.penalties));
            row.push(csv_float(r.displacement));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Solves the perturbed problems `(y^(l), alpha^(l), F^(l))` of `schedule`
/// and tracks the distance to the minimiser `x_alpha` of `(y, alpha, F)`.
///
/// Meaningful for instances with a unique minimiser. The verdict requires
/// the per-decade maximal displacement to be non-increasing and the final
/// displacement to fall below the threshold.
pub fn run_stability_experiment(
    problem: &TikhonovProblem,
    y: &Datum,
    alpha: &RegVector,
    schedule: &Schedule,
    settings: &StabilitySettings,
) -> Result<StabilityReport> {
    check_dim("schedule parameters", problem.penalty_count(), schedule.alpha_laws.len())?;
    let reference = solve(problem, alpha, y, &settings.solve)?.minimizer;
    let base = problem.operator();
    let records = (0..schedule.len())
        .into_par_iter()
        .map(|i| {
            let step = schedule.steps[i];
            let yl = perturbed_datum(y, schedule.data_noise[i], schedule.seed, "stability-data", &[step]);
            let fl = perturbed_operator(base, schedule.op_noise[i], schedule.seed, "stability-operator", &[step])?;
            let perturbed = problem.with_operator(fl.clone())?;
            let x = solve(&perturbed, &schedule.alphas[i], &yl, &settings.solve)?.minimizer;
            record(problem, y, &reference, &x, &yl, &fl, schedule, i)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut decade_maxima: Vec<f64> = Vec::new();
    for r in &records {
        let decade = (r.step as f64).log10().floor() as usize;
        if decade_maxima.len() <= decade {
            decade_maxima.resize(decade + 1, f64::NAN);
        }
        let slot = &mut decade_maxima[decade];
        *slot = if slot.is_nan() { r.displacement } else { slot.max(r.displacement) };
    }
    decade_maxima.retain(|v| !v.is_nan());
    let increases = decade_maxima.windows(2).filter(|w| w[1] > w[0]).count();
    let final_displacement = records.last().map_or(0.0, |r| r.displacement);
    let violations = increases + usize::from(!(final_displacement < settings.threshold));
    Ok(StabilityReport {
        reference: reference.iter().copied().collect(),
        records,
        decade_maxima,
        final_displacement,
        summary: Summary {
            violations,
            fitted_slope: None,
            verdict: violations == 0,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    problem: &TikhonovProblem,
    y: &Datum,
    reference: &Point,
    x: &Point,
    yl: &Datum,
    fl: &ForwardOperator,
    schedule: &Schedule,
    i: usize,
) -> Result<StabilityRecord> {
    let s = problem.similarity();
    let cloud = SampleCloud::new(vec![reference.clone(), x.clone()], vec![y.clone(), yl.clone()])?;
    let penalties = problem
        .regularizers()
        .iter()
        .map(|r| r.eval(x).map(|v| v.to_f64()))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityRecord {
        step: schedule.steps[i],
        s_y_yl: s.eval(y, yl)?,
        d_op: d_kl_estimate(s, fl, problem.operator(), &cloud)?,
        alpha: schedule.alphas[i].as_slice().to_vec(),
        alpha_bar: schedule.alpha_bar(i)?.as_slice().to_vec(),
        residual: s.eval(&problem.operator().apply(x)?, y)?,
        penalties,
        displacement: (x - reference).norm(),
    })
}
