//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use tikhon_core::analysis::{flat_source_element, psi, psi_numeric, source_condition_construct, variational_inequality_violation, PhiFunction, QuadraticSource};
use tikhon_core::experiments::{
    check_schedule, run_convergence_experiment, run_rate_experiment, run_stability_experiment, ConvergenceSettings,
    Decay, NoisePower, RateReport, RateSettings, Schedule, ScheduleClass, SolutionGrid, StabilitySettings,
};
use tikhon_core::operators::make_smoothing_operator;
use tikhon_core::regularizers::first_difference;
use tikhon_core::rng;
use tikhon_core::similarity::quasi_triangle_violation;
use tikhon_core::solver::{solve, solve_prox_grad, solve_quadratic, SolveOptions};
use tikhon_core::{Datum, ForwardOperator, RegVector, Regularizer, SimilarityMeasure, TikhonovProblem};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn(&mut Shared) -> Outcome,
}

/// Rate runs reused by several criteria.
#[derive(Default)]
struct Shared {
    rates: Option<Vec<RateReport>>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: tikhon_core::Error) -> String {
    e.to_string()
}

fn convention_exactness(_: &mut Shared) -> Outcome {
    let a = make_smoothing_operator(24, 12).map_err(err)?;
    let mut r = rng::stream(1, "c1", &[]);
    let y = rng::gaussian_vector(&mut r, 24);
    let boxed = Regularizer::indicator_box(DVector::from_element(12, 0.1), DVector::from_element(12, 0.2), Regularizer::l1())
        .map_err(err)?;
    let mut checked = 0;
    for first in [Regularizer::sq_l2(None).map_err(err)?, Regularizer::l1()] {
        let single = TikhonovProblem::new(a.clone(), SimilarityMeasure::sq_norm(), vec![first.clone()]).map_err(err)?;
        let pair = TikhonovProblem::new(a.clone(), SimilarityMeasure::sq_norm(), vec![first, boxed.clone()]).map_err(err)?;
        let opts = SolveOptions::default();
        let x1 = solve(&single, &RegVector::new(vec![1.0]).map_err(err)?, &y, &opts).map_err(err)?;
        let x2 = solve(&pair, &RegVector::new(vec![1.0, 0.0]).map_err(err)?, &y, &opts).map_err(err)?;
        ensure(x1.minimizer == x2.minimizer, || format!("minimisers differ by {:e}", (&x1.minimizer - &x2.minimizer).norm()))?;
        ensure(x1.objective == x2.objective, || "objective values differ".into())?;
        ensure(!x2.minimizer.iter().all(|v| (0.1..=0.2).contains(v)), || "minimiser unexpectedly inside the box".into())?;
        checked += 1;
    }
    Ok(format!("{checked} instances bit-identical"))
}

fn solver_cross_validation(_: &mut Shared) -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng::stream(seed, "c2", &[]);
        let n = r.random_range(2..=64usize);
        let m = r.random_range(n / 2 + 1..=2 * n);
        let a = DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0)) / (m as f64).sqrt();
        let y = rng::gaussian_vector(&mut r, m);
        let regs = vec![Regularizer::sq_l2(None).map_err(err)?, Regularizer::sq_l2(Some(first_difference(n))).map_err(err)?];
        let alpha = RegVector::new(vec![r.random_range(0.05..1.0), r.random_range(0.0..1.0)]).map_err(err)?;
        let op = ForwardOperator::linear(a);
        let exact = solve_quadratic(&op, &y, &alpha, &regs).map_err(err)?.minimizer;
        let problem = TikhonovProblem::new(op, SimilarityMeasure::sq_norm(), regs).map_err(err)?;
        let iterative = solve_prox_grad(&problem, &alpha, &y, &SolveOptions::default()).map_err(err)?.minimizer;
        worst = worst.max((&iterative - &exact).norm() / exact.norm().max(1e-300));
    }
    ensure(worst <= 1e-6, || format!("max relative error {worst:e}"))?;
    Ok(format!("50 instances, max relative error {worst:.2e}"))
}

fn quasi_triangle(_: &mut Shared) -> Outcome {
    let mut parts = Vec::new();
    for (name, measure, s) in [
        ("sq-norm", SimilarityMeasure::sq_norm(), 2.0),
        ("cubic metric", SimilarityMeasure::power_metric(3.0).map_err(err)?, 4.0),
    ] {
        let mut r = rng::stream(3, "c3", &[s as u64]);
        let triples: Vec<(Datum, Datum, Datum)> = (0..100_000)
            .map(|_| {
                let dim = r.random_range(1..=8usize);
                let scale = 10f64.powf(r.random_range(-3.0..3.0));
                (
                    rng::gaussian_vector(&mut r, dim) * scale,
                    rng::gaussian_vector(&mut r, dim) * scale,
                    rng::gaussian_vector(&mut r, dim) * scale,
                )
            })
            .collect();
        let violations = triples
            .iter()
            .filter(|t| quasi_triangle_violation(&measure, s, std::slice::from_ref(*t)).map_or(true, |v| v > 0.0))
            .count();
        ensure(violations == 0, || format!("{name}: {violations} violations"))?;
        parts.push(format!("{name} s={s}: 0/100000"));
    }
    Ok(parts.join(", "))
}

fn vi_certificate(_: &mut Shared) -> Outcome {
    let a = make_smoothing_operator(32, 16).map_err(err)?;
    let problem = TikhonovProblem::new(a.clone(), SimilarityMeasure::sq_norm(), vec![Regularizer::sq_l2(None).map_err(err)?]).map_err(err)?;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..5u64 {
        let mut r = rng::stream(seed, "c4", &[]);
        let w = rng::gaussian_vector(&mut r, 32);
        let src = source_condition_construct(&a, &w).map_err(err)?;
        let samples = src.probe_samples(&a, 996, 1.0, &mut r).map_err(err)?;
        ensure(samples.len() == 1000, || format!("{} samples", samples.len()))?;
        let rep = variational_inequality_violation(&problem, &src.certificate, &src.data, &samples).map_err(err)?;
        worst = worst.max(rep.max_violation);
    }
    ensure(worst <= 1e-10, || format!("max violation {worst:e}"))?;
    Ok(format!("5 seeds x 1000 samples, max violation {worst:.2e}"))
}

fn psi_consistency(_: &mut Shared) -> Outcome {
    let s = 2.0;
    let c = [1.0, 2.5];
    let phis: Vec<PhiFunction> = c.iter().map(|&ck| PhiFunction::power(ck, 0.5)).collect::<Result<_, _>>().map_err(err)?;
    let axis: Vec<f64> = (0..10).map(|i| 10f64.powf(-3.0 + 3.0 * i as f64 / 9.0)).collect();
    let mut values = vec![vec![0.0; 10]; 10];
    let mut worst = 0.0f64;
    for (i, &a1) in axis.iter().enumerate() {
        for (k, &a2) in axis.iter().enumerate() {
            let alpha = RegVector::new(vec![a1, a2]).map_err(err)?;
            let total = s * s * (a1 * c[0] + a2 * c[1]);
            let formula = total * total / 4.0;
            let closed = psi(&alpha, &phis, s).map_err(err)?;
            let numeric = psi_numeric(&alpha, &phis, s).map_err(err)?;
            worst = worst.max((closed - formula).abs() / formula).max((numeric - formula).abs() / formula);
            values[i][k] = closed;
        }
    }
    ensure(worst <= 1e-8, || format!("max relative deviation {worst:e}"))?;
    for i in 0..10 {
        for k in 1..10 {
            ensure(values[i][k] >= values[i][k - 1] && values[k][i] >= values[k - 1][i], || format!("not monotone at ({i}, {k})"))?;
        }
    }
    Ok(format!("100-point grid, max relative deviation {worst:.2e}, monotone"))
}

fn rate_instance() -> Result<(TikhonovProblem, QuadraticSource), String> {
    let a = make_smoothing_operator(32, 16).map_err(err)?;
    let mut r = rng::stream(6, "rate-instance", &[]);
    let w = flat_source_element(&a, &mut r).map_err(err)?;
    let smooth = Regularizer::sq_l2(Some(first_difference(16))).map_err(err)?;
    let src = source_condition_construct(&a, &w).map_err(err)?.with_quadratic_penalty(&a, &smooth).map_err(err)?;
    let problem = TikhonovProblem::new(a, SimilarityMeasure::sq_norm(), vec![Regularizer::sq_l2(None).map_err(err)?, smooth]).map_err(err)?;
    Ok((problem, src))
}

fn rate_settings(problem: &TikhonovProblem, src: &QuadraticSource, second: NoisePower) -> Result<RateSettings, String> {
    let levels: Vec<f64> = (0..8).map(|i| 10f64.powf(-1.0 - 3.0 * i as f64 / 7.0)).collect();
    let mut settings = RateSettings::new(levels, vec![NoisePower::new(1.0, 1.0), second], 10, 6);
    let mut r = rng::stream(6, "rate-probes", &[]);
    settings.certificate_samples = src.probe_samples(problem.operator(), 1000, 1.0, &mut r).map_err(err)?;
    Ok(settings)
}

const SECOND_RULES: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 1.0), (1.0, 0.75)];

fn rate_runs(shared: &mut Shared) -> Result<&[RateReport], String> {
    if shared.rates.is_none() {
        let (problem, src) = rate_instance()?;
        let mut reports = Vec::new();
        for (c, e) in SECOND_RULES {
            let settings = rate_settings(&problem, &src, NoisePower::new(c, e))?;
            reports.push(run_rate_experiment(&problem, &src.certificate, &settings).map_err(err)?);
        }
        shared.rates = Some(reports);
    }
    Ok(shared.rates.as_deref().unwrap_or_default())
}

fn rate_bound_holds(shared: &mut Shared) -> Outcome {
    let reports = rate_runs(shared)?;
    let mut total = 0;
    let mut violations = 0;
    let mut tightest = 0.0f64;
    for rep in reports {
        for r in &rep.records {
            total += 1;
            let bad = r.bregman_j > r.bound_j || r.weighted_bregman > r.aggregate_bound;
            violations += usize::from(bad || r.violation);
            tightest = tightest.max(r.bregman_j / r.bound_j).max(r.weighted_bregman / r.aggregate_bound);
        }
    }
    ensure(total == 240, || format!("{total} records"))?;
    ensure(violations == 0, || format!("{violations}/{total} violations"))?;
    Ok(format!("0/{total} violations, largest measured/bound ratio {tightest:.3}"))
}

fn empirical_rate(shared: &mut Shared) -> Outcome {
    let reports = rate_runs(shared)?;
    let slope = reports[0].summary.fitted_slope.ok_or("no slope fitted")?;
    ensure((slope - 1.0).abs() <= 0.2, || format!("slope {slope:.4}"))?;
    Ok(format!("fitted slope {slope:.4}"))
}

fn stability(_: &mut Shared) -> Outcome {
    let a = make_smoothing_operator(16, 8).map_err(err)?;
    let regs = vec![Regularizer::sq_l2(None).map_err(err)?, Regularizer::sq_l2(Some(first_difference(8))).map_err(err)?];
    let problem = TikhonovProblem::new(a.clone(), SimilarityMeasure::sq_norm(), regs).map_err(err)?;
    let mut r = rng::stream(8, "c8", &[]);
    let y = a.apply(&rng::gaussian_vector(&mut r, 8)).map_err(err)?;
    let alpha = RegVector::new(vec![0.1, 0.05]).map_err(err)?;
    let schedule = Schedule::from_laws(
        Schedule::log_steps(10_000, 6),
        vec![Decay::approaching(0.1, 0.05, 1.0), Decay::approaching(0.05, 0.05, 1.0)],
        Decay::power(0.1, 1.0),
        Decay::power(0.1, 1.0),
        8,
    )
    .map_err(err)?;
    let rep = run_stability_experiment(&problem, &y, &alpha, &schedule, &StabilitySettings::default()).map_err(err)?;
    let strictly = rep.decade_maxima.windows(2).all(|w| w[1] < w[0]);
    ensure(rep.summary.verdict && strictly, || format!("decade maxima {:?}", rep.decade_maxima))?;
    ensure(rep.final_displacement < 1e-4, || format!("final displacement {:e}", rep.final_displacement))?;
    Ok(format!(
        "decade maxima {}, final {:.2e}",
        rep.decade_maxima.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>().join(" > "),
        rep.final_displacement
    ))
}

fn convergence(_: &mut Shared) -> Outcome {
    let a = ForwardOperator::linear(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
    let regs = vec![Regularizer::sq_l2(None).map_err(err)?, Regularizer::l1()];
    let problem = TikhonovProblem::new(a, SimilarityMeasure::sq_norm(), regs).map_err(err)?;
    let schedule = Schedule::from_laws(
        Schedule::log_steps(10_000, 5),
        vec![Decay::power(1.0, 1.0), Decay::power(1.0, 2.0)],
        Decay::power(1.0, 2.0),
        Decay::power(1.0, 2.0),
        9,
    )
    .map_err(err)?;
    ensure(check_schedule(&schedule) == ScheduleClass::Conv1Satisfied, || "schedule not conv1".into())?;
    let grid = SolutionGrid::line(&DVector::from_vec(vec![0.5, 0.5]), &DVector::from_vec(vec![1.0, -1.0]), -2.0, 2.0, 40_001).map_err(err)?;
    let settings = ConvergenceSettings {
        solutions: Some(grid),
        ..Default::default()
    };
    let y = DVector::from_vec(vec![1.0]);
    let rep = run_convergence_experiment(&problem, &DVector::from_vec(vec![1.0, 0.0]), &y, &schedule, &settings).map_err(err)?;
    let final_residual = rep.records.last().map_or(f64::NAN, |r| r.residual);
    let check = rep.limit_check.as_ref().ok_or("no limit check")?;
    ensure(final_residual < 1e-6, || format!("final residual {final_residual:e}"))?;
    ensure(check.gap.abs() <= 1e-3, || format!("limit gap {:e}", check.gap))?;
    ensure(rep.summary.verdict, || format!("{:?}", rep.summary))?;
    Ok(format!(
        "final residual {final_residual:.2e}, limit ({:.4}, {:.4}), penalty gap {:.2e}",
        rep.limit[0], rep.limit[1], check.gap
    ))
}

fn zero_out(shared: &mut Shared) -> Outcome {
    let reports = rate_runs(shared)?;
    let baseline = &reports[0];
    let mut compared = 0;
    for rep in &reports[1..] {
        for (r, b) in rep.records.iter().zip(&baseline.records) {
            ensure(r.level_index == b.level_index && r.trial == b.trial && r.alpha[0] == b.alpha[0], || "records misaligned".into())?;
            ensure(b.bound_j <= r.bound_j && r.bound_j_isolated <= r.bound_j, || {
                format!("level {} trial {}: {:e} > {:e}", r.level_index, r.trial, b.bound_j, r.bound_j)
            })?;
            compared += 1;
        }
    }
    Ok(format!("{compared} record pairs"))
}

fn determinism(_: &mut Shared) -> Outcome {
    let (problem, src) = rate_instance()?;
    let settings = rate_settings(&problem, &src, NoisePower::new(1.0, 0.75))?;
    let first = run_rate_experiment(&problem, &src.certificate, &settings).map_err(err)?.to_csv();
    let second = run_rate_experiment(&problem, &src.certificate, &settings).map_err(err)?.to_csv();
    ensure(first == second, || "rate CSV differs between runs".into())?;

    let a = make_smoothing_operator(16, 8).map_err(err)?;
    let p = TikhonovProblem::new(a, SimilarityMeasure::sq_norm(), vec![Regularizer::sq_l2(None).map_err(err)?]).map_err(err)?;
    let y = DVector::from_element(16, 0.3);
    let sched = Schedule::from_laws(Schedule::log_steps(1000, 4), vec![Decay::approaching(0.1, 0.1, 1.0)], Decay::power(0.1, 1.0), Decay::power(0.1, 1.0), 11)
        .map_err(err)?;
    let alpha = RegVector::new(vec![0.1]).map_err(err)?;
    let run = || run_stability_experiment(&p, &y, &alpha, &sched, &StabilitySettings::default()).map(|r| r.to_csv());
    ensure(run().map_err(err)? == run().map_err(err)?, || "stability CSV differs between runs".into())?;
    Ok(format!("rate CSV ({} bytes) and stability CSV identical across reruns", first.len()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "convention exactness", budget: Duration::from_secs(1), run: convention_exactness },
        Criterion { id: 2, name: "solver cross-validation", budget: Duration::from_secs(10), run: solver_cross_validation },
        Criterion { id: 3, name: "quasi-triangle inequality", budget: Duration::from_secs(5), run: quasi_triangle },
        Criterion { id: 4, name: "variational-inequality certificate", budget: Duration::from_secs(10), run: vi_certificate },
        Criterion { id: 5, name: "Psi closed form vs numeric", budget: Duration::from_secs(5), run: psi_consistency },
        Criterion { id: 6, name: "rate bound never violated", budget: Duration::from_secs(60), run: rate_bound_holds },
        Criterion { id: 7, name: "empirical rate", budget: Duration::from_secs(60), run: empirical_rate },
        Criterion { id: 8, name: "stability", budget: Duration::from_secs(10), run: stability },
        Criterion { id: 9, name: "convergence and limit selection", budget: Duration::from_secs(10), run: convergence },
        Criterion { id: 10, name: "zero-out", budget: Duration::from_secs(1), run: zero_out },
        Criterion { id: 11, name: "determinism", budget: Duration::from_secs(120), run: determinism },
    ];
    let mut shared = Shared::default();
    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)(&mut shared);
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if elapsed <= c.budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {elapsed:.2?}, budget {:?}", c.budget))
            }
        });
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS  {} ({elapsed:.2?}): {msg}", c.id, c.name),
            Err(msg) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {} ({elapsed:.2?}): {msg}", c.id, c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
