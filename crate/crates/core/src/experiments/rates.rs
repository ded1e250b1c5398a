use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{csv_float, ols_slope, perturbed_datum, perturbed_operator, Summary};
use crate::analysis::{
    aggregate_rate_bound, bregman_distance, psi, rate_bound, variational_inequality_violation, NoiseQuantities,
    SourceCertificate, ViolationReport,
};
use crate::error::{check_dim, Error, Result};
use crate::operators::{d_kl_estimate, sample_sublevel_cloud};
use crate::problem::{joint_domain_member, Point, RegVector, TikhonovProblem};
use crate::rng;
use crate::solver::{solve, SolveOptions};

/// `coefficient * delta^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePower {
    pub coefficient: f64,
    pub exponent: f64,
}

impl NoisePower {
    pub fn new(coefficient: f64, exponent: f64) -> Self {
        NoisePower {
            coefficient,
            exponent,
        }
    }

    pub fn zero() -> Self {
        NoisePower::new(0.0, 0.0)
    }

    pub fn at(&self, delta: f64) -> f64 {
        if self.coefficient == 0.0 {
            0.0
        } else {
            self.coefficient * delta.powf(self.exponent)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateSettings {
    /// Strictly decreasing data-error norms `||y - y_delta||`.
    pub noise_levels: Vec<f64>,
    /// One rule per penalty: `alpha_k = c_k delta^(e_k)`.
    pub alpha_rule: Vec<NoisePower>,
    /// Operator error `||F_delta - F||_2` as a function of `delta`.
    pub operator_noise: Option<NoisePower>,
    pub trials: usize,
    pub seed: u64,
    /// Penalty (0-based) whose distance is measured.
    pub index: usize,
    /// Extra sublevel-set samples in `K` when estimating the operator error.
    pub cloud_size: usize,
    pub cloud_half_width: f64,
    /// Points on which the certificate is checked before running.
    pub certificate_samples: Vec<Point>,
    pub certificate_tolerance: f64,
    pub solve: SolveOptions,
}

impl RateSettings {
    pub fn new(noise_levels: Vec<f64>, alpha_rule: Vec<NoisePower>, trials: usize, seed: u64) -> Self {
        RateSettings {
            noise_levels,
            alpha_rule,
            operator_noise: None,
            trials,
            seed,
            index: 0,
            cloud_size: 200,
            cloud_half_width: 1.0,
            certificate_samples: Vec::new(),
            certificate_tolerance: 1e-8,
            solve: SolveOptions::default(),
        }
    }

    fn validate(&self, penalties: usize) -> Result<()> {
        if self.noise_levels.is_empty() || self.trials == 0 {
            return Err(Error::InvalidArgument("rate experiment needs noise levels and trials".into()));
        }
        if self.noise_levels.iter().any(|d| !(d.is_finite() && *d >= 0.0))
            || self.noise_levels.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidArgument(
                "noise levels must be finite, nonnegative and strictly decreasing".into(),
            ));
        }
        check_dim("alpha rule", penalties, self.alpha_rule.len())?;
        if self.index >= penalties {
            return Err(Error::InvalidArgument(format!("measured penalty {} does not exist", self.index + 1)));
        }
        for r in self.alpha_rule.iter().chain(&self.operator_noise) {
            if !(r.coefficient.is_finite() && r.coefficient >= 0.0 && r.exponent.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid power rule {r:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub level_index: usize,
    pub trial: usize,
    pub delta_norm: f64,
    pub s_y_ydelta: f64,
    pub s_ydelta_y: f64,
    pub d_op: f64,
    pub alpha: Vec<f64>,
    /// `S(F(x), y)` at the regularised solution.
    pub residual: f64,
    pub psi: f64,
    /// `D^k(x; x_dagger)` for every penalty.
    pub bregman: Vec<f64>,
    pub bregman_j: f64,
    pub bound_j: f64,
    /// The single-index bound with every other parameter set to zero.
    pub bound_j_isolated: f64,
    /// `sum_k alpha_k D^k`
    pub weighted_bregman: f64,
    pub aggregate_bound: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub certificate: ViolationReport,
    pub records: Vec<RateRecord>,
    pub summary: Summary,
}

impl RateReport {
    pub fn to_csv(&self) -> String {
        let n = self.records.first().map_or(0, |r| r.alpha.len());
        let mut cols = vec!["level_index", "trial", "delta_norm", "s_y_ydelta", "s_ydelta_y", "d_op"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend((1..=n).map(|k| format!("alpha_{k}")));
        cols.extend(["residual", "bregman_j", "bound_j", "violation"].map(String::from));
        let mut out = cols.join(",");
        out.push('\n');
        for r in &self.records {
            let mut row = vec![
                r.level_index.to_string(),
                r.trial.to_string(),
                csv_float(r.delta_norm),
                csv_float(r.s_y_ydelta),
                csv_float(r.s_ydelta_y),
                csv_float(r.d_op),
            ];
            row.extend(r.alpha.iter().copied().map(csv_float));
            row.push(csv_float(r.residual));
            row.push(csv_float(r.bregman_j));
            row.push(csv_float(r.bound_j));
            row.push(u8::from(r.violation).to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Relative slack for comparing measured distances with bounds.
const BOUND_SLACK: f64 = 1e-10;

fn exceeds(measured: f64, bound: f64) -> bool {
    measured > bound + BOUND_SLACK * bound.abs().max(1e-300) + 1e-300
}

/// Measures `D^j(x_alpha^delta; x_dagger)` for data `y_delta` at exact
/// distance `delta` from `y = F(x_dagger)`, over all noise levels and trials,
/// and compares with the single-index and aggregate bounds.
///
/// The certificate is checked on `settings.certificate_samples` first and a
/// violation above the tolerance aborts the run. The slope is the
/// least-squares fit of `log D^j` against `log delta` without the two
/// largest levels.
pub fn run_rate_experiment(
    problem: &TikhonovProblem,
    cert: &SourceCertificate,
    settings: &RateSettings,
) -> Result<RateReport> {
    let n = problem.penalty_count();
    settings.validate(n)?;
    let s = problem
        .similarity()
        .quasi_triangle_s()
        .ok_or(Error::MissingTriangleConstant)?;
    let f = problem.operator();
    let x_dagger = &cert.x_dagger;
    let y = f.apply(x_dagger)?;
    cert.check_consistency(problem, &y)?;

    let mut samples = vec![x_dagger.clone()];
    samples.extend(settings.certificate_samples.iter().cloned());
    let certificate = variational_inequality_violation(problem, cert, &y, &samples)?;
    if !certificate.passes(settings.certificate_tolerance) {
        return Err(Error::CertificateViolation {
            violation: certificate.max_violation,
            penalty: certificate.penalty + 1,
            sample: certificate.sample,
        });
    }

    let j = settings.index;
    let trials = settings.trials;
    let records = (0..settings.noise_levels.len() * trials)
        .into_par_iter()
        .map(|idx| {
            let (level, trial) = (idx / trials, idx % trials);
            let delta = settings.noise_levels[level];
            let key = [level as u64, trial as u64];
            let yd = perturbed_datum(&y, delta, settings.seed, "rates-data", &key);
            let alpha = RegVector::new(settings.alpha_rule.iter().map(|r| r.at(delta)).collect())?;
            if alpha.get(j) == 0.0 {
                return Err(Error::ZeroComponent { index: j + 1 });
            }
            let eps = settings.operator_noise.map_or(0.0, |r| r.at(delta));
            let fd = perturbed_operator(f, eps, settings.seed, "rates-operator", &key)?;
            let x = solve(&problem.with_operator(fd.clone())?, &alpha, &yd, &settings.solve)?.minimizer;
            if !joint_domain_member(problem.regularizers(), &x)? {
                return Err(Error::InfiniteValue("regularised solution outside the joint domain".into()));
            }

            let d_op = if eps == 0.0 {
                0.0
            } else {
                let mut r = rng::stream(settings.seed, "rates-cloud", &key);
                let cloud = sample_sublevel_cloud(
                    problem.regularizers(),
                    x_dagger,
                    settings.cloud_half_width,
                    settings.cloud_size,
                    vec![y.clone(), yd.clone()],
                    &mut r,
                )?
                .with_k_points([x.clone()]);
                d_kl_estimate(problem.similarity(), &fd, f, &cloud)?
            };
            let sim = problem.similarity();
            let noise = NoiseQuantities::new(sim.eval(&y, &yd)?, sim.eval(&yd, &y)?, d_op)?;
            let psi_value = psi(&alpha, &cert.phis, s)?;
            let isolated = RegVector::new(
                (0..n).map(|k| if k == j { alpha.get(j) } else { 0.0 }).collect(),
            )?;
            let bregman = problem
                .regularizers()
                .iter()
                .zip(&cert.subgradients)
                .map(|(r, xi)| bregman_distance(r, xi, &x, x_dagger))
                .collect::<Result<Vec<_>>>()?;
            let weighted_bregman: f64 = bregman.iter().zip(alpha.as_slice()).map(|(d, a)| d * a).sum();
            let bound_j = rate_bound(j, &alpha, &noise, s, psi_value)?;
            let aggregate = aggregate_rate_bound(&noise, s, psi_value)?;
            Ok(RateRecord {
                level_index: level,
                trial,
                delta_norm: (&yd - &y).norm(),
                s_y_ydelta: noise.s_y_ydelta,
                s_ydelta_y: noise.s_ydelta_y,
                d_op,
                alpha: alpha.as_slice().to_vec(),
                residual: sim.eval(&f.apply(&x)?, &y)?,
                psi: psi_value,
                bregman_j: bregman[j],
                bound_j,
                bound_j_isolated: rate_bound(j, &isolated, &noise, s, psi(&isolated, &cert.phis, s)?)?,
                violation: exceeds(bregman[j], bound_j) || exceeds(weighted_bregman, aggregate),
                bregman,
                weighted_bregman,
                aggregate_bound: aggregate,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let violations = records.iter().filter(|r| r.violation).count();
    Ok(RateReport {
        certificate,
        summary: Summary {
            violations,
            fitted_slope: fitted_slope(&settings.noise_levels, &records),
            verdict: violations == 0,
        },
        records,
    })
}

fn fitted_slope(levels: &[f64], records: &[RateRecord]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.level_index >= 2 && levels[r.level_index] > 0.0 && r.bregman_j > 0.0)
        .map(|r| (r.delta_norm.ln(), r.bregman_j.ln()))
        .unzip();
    ols_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{flat_source_element, source_condition_construct};
    use crate::operators::make_smoothing_operator;
    use crate::regularizers::{first_difference, Regularizer};
    use crate::similarity::SimilarityMeasure;

    fn levels() -> Vec<f64> {
        (0..8).map(|i| 10f64.powf(-1.0 - 3.0 * i as f64 / 7.0)).collect()
    }

    fn setup(seed: u64) -> (TikhonovProblem, crate::analysis::QuadraticSource) {
        let a = make_smoothing_operator(32, 16).unwrap();
        let mut r = rng::stream(seed, "rates-test", &[]);
        let w = flat_source_element(&a, &mut r).unwrap();
        let smooth = Regularizer::sq_l2(Some(first_difference(16))).unwrap();
        let src = source_condition_construct(&a, &w).unwrap().with_quadratic_penalty(&a, &smooth).unwrap();
        let p = TikhonovProblem::new(a, SimilarityMeasure::sq_norm(), vec![Regularizer::sq_l2(None).unwrap(), smooth]).unwrap();
        (p, src)
    }

    #[test]
    fn source_instance_has_no_violations_and_linear_rate() {
        let (p, src) = setup(1);
        let settings = RateSettings::new(levels(), vec![NoisePower::new(1.0, 1.0), NoisePower::zero()], 5, 1);
        let rep = run_rate_experiment(&p, &src.certificate, &settings).unwrap();
        assert_eq!(rep.records.len(), 40);
        assert_eq!(rep.summary.violations, 0);
        let slope = rep.summary.fitted_slope.unwrap();
        assert!((slope - 1.0).abs() <= 0.2, "slope {slope}");
        for r in &rep.records {
            assert!((r.delta_norm - settings.noise_levels[r.level_index]).abs() <= 1e-15);
            assert!((r.s_y_ydelta - r.delta_norm * r.delta_norm).abs() <= 1e-15);
            assert_eq!(r.bound_j, r.bound_j_isolated);
        }
        let csv = rep.to_csv();
        assert!(csv.starts_with("level_index,trial,delta_norm,s_y_ydelta,s_ydelta_y,d_op,alpha_1,alpha_2,residual,bregman_j,bound_j,violation\n"));
        assert_eq!(csv.lines().count(), 41);
        assert_eq!(csv, run_rate_experiment(&p, &src.certificate, &settings).unwrap().to_csv());
    }

    #[test]
    fn zero_noise_sanity() {
        let (p, src) = setup(2);
        let settings = RateSettings::new(vec![0.0], vec![NoisePower::new(1e-3, 0.0), NoisePower::zero()], 2, 2);
        let rep = run_rate_experiment(&p, &src.certificate, &settings).unwrap();
        for r in &rep.records {
            assert!(r.bound_j > 0.0 && r.bregman_j <= r.bound_j);
        }
        assert_eq!(rep.summary.fitted_slope, None);
    }

    #[test]
    fn operator_noise_and_second_penalty() {
        let (p, src) = setup(3);
        let mut settings = RateSettings::new(levels(), vec![NoisePower::new(1.0, 1.0), NoisePower::new(1.0, 0.75)], 2, 3);
        settings.operator_noise = Some(NoisePower::new(0.1, 1.0));
        settings.cloud_size = 20;
        let rep = run_rate_experiment(&p, &src.certificate, &settings).unwrap();
        assert_eq!(rep.summary.violations, 0);
        assert!(rep.records.iter().all(|r| r.d_op > 0.0 && r.bound_j_isolated <= r.bound_j));
    }

    #[test]
    fn halved_certificate_rejected() {
        let (p, src) = setup(4);
        let mut settings = RateSettings::new(levels(), vec![NoisePower::new(1.0, 1.0), NoisePower::zero()], 1, 4);
        let mut r = rng::stream(4, "probes", &[]);
        settings.certificate_samples = src.probe_samples(p.operator(), 100, 1.0, &mut r).unwrap();
        let halved = src.certificate.with_scaled_phis(0.5).unwrap();
        assert!(matches!(
            run_rate_experiment(&p, &halved, &settings),
            Err(Error::CertificateViolation { .. })
        ));
        let bad = RateSettings::new(vec![0.1, 0.2], vec![NoisePower::new(1.0, 1.0), NoisePower::zero()], 1, 4);
        assert!(run_rate_experiment(&p, &src.certificate, &bad).is_err());
    }
}
