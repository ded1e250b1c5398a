//! Runs one command and writes its report.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use tikhon_core::analysis::{
    flat_source_element, psi, psi_numeric, source_condition_construct, variational_inequality_violation,
    PhiFunction, QuadraticSource,
};
use tikhon_core::experiments::{
    run_convergence_experiment, run_rate_experiment, run_stability_experiment, ConvergenceSettings, Decay, NoisePower,
    RateSettings, Schedule, SolutionGrid, StabilitySettings, Summary,
};
use tikhon_core::rng;
use tikhon_core::similarity::quasi_triangle_violation;
use tikhon_core::solver::{solve, SolveOptions};
use tikhon_core::{Datum, ForwardOperator, RegVector, SimilarityMeasure, TikhonovProblem};

use crate::config::{config_digest, Command, ConfigErrors, Format, RunConfig, SourceKind};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("configuration has no `{0}` block")]
    MissingBlock(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Core(#[from] tikhon_core::Error),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub command: Command,
    pub out_dir: PathBuf,
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub summary: Summary,
    pub report: PathBuf,
    pub record_count: usize,
}

#[derive(Serialize)]
struct JsonReport<'a, R: Serialize, D: Serialize> {
    config_digest: String,
    command: &'static str,
    records: &'a [R],
    summary: Summary,
    details: D,
}

struct Rendered {
    csv: String,
    json: String,
    summary: Summary,
    record_count: usize,
}

fn render<R: Serialize, D: Serialize>(
    config: &RunConfig,
    command: Command,
    csv: String,
    records: &[R],
    summary: Summary,
    details: D,
) -> Rendered {
    let report = JsonReport {
        config_digest: config_digest(config),
        command: command.name(),
        records,
        summary,
        details,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serialises");
    json.push('\n');
    Rendered {
        csv,
        json,
        summary,
        record_count: records.len(),
    }
}

/// Runs `opts.command` and writes `<command>.csv` or `<command>.json` to
/// the output directory.
pub fn dispatch(config: &RunConfig, opts: &RunOptions) -> Result<Outcome, DispatchError> {
    if !config.has_block(opts.command) {
        return Err(DispatchError::MissingBlock(opts.command.name()));
    }
    let problem = config.problem.build()?;
    let rendered = match opts.command {
        Command::Solve => run_solve(config, &problem)?,
        Command::Stability => run_stability(config, &problem)?,
        Command::Convergence => run_convergence(config, &problem)?,
        Command::Rates => run_rates(config, &problem)?,
        Command::Check => run_check(config, &problem)?,
    };
    let (body, ext) = match opts.format {
        Format::Csv => (&rendered.csv, "csv"),
        Format::Json => (&rendered.json, "json"),
    };
    let report = opts.out_dir.join(format!("{}.{ext}", opts.command.name()));
    write(&opts.out_dir, &report, body)?;
    log::info!("wrote {}", report.display());
    Ok(Outcome {
        summary: rendered.summary,
        report,
        record_count: rendered.record_count,
    })
}

fn write(dir: &Path, path: &Path, body: &str) -> Result<(), DispatchError> {
    let io = |source| DispatchError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(path, body).map_err(io)
}

fn csv_float(v: f64) -> String {
    format!("{v:e}")
}

fn exact_data(problem: &TikhonovProblem, data: Option<&Vec<f64>>) -> Result<Datum, DispatchError> {
    Ok(match data {
        Some(d) => DVector::from_vec(d.clone()),
        None => problem
            .operator()
            .apply(&DVector::from_element(problem.operator().input_dim(), 1.0))?,
    })
}

#[derive(Serialize)]
struct SolveRecord {
    index: usize,
    x: f64,
}

#[derive(Serialize)]
struct SolveDetails {
    objective: f64,
    iterations: usize,
    certificate: f64,
    converged: bool,
}

fn run_solve(config: &RunConfig, problem: &TikhonovProblem) -> Result<Rendered, DispatchError> {
    let block = config.solve.as_ref().ok_or(DispatchError::MissingBlock("solve"))?;
    let alpha = RegVector::new(block.alpha.clone())?;
    let y = DVector::from_vec(block.data.clone());
    let opts = SolveOptions {
        max_iterations: block.max_iterations,
        ..SolveOptions::default()
    };
    let res = solve(problem, &alpha, &y, &opts)?;
    let records: Vec<SolveRecord> = res
        .minimizer
        .iter()
        .enumerate()
        .map(|(index, &x)| SolveRecord { index, x })
        .collect();
    let mut csv = String::from("index,x\n");
    for r in &records {
        csv.push_str(&format!("{},{}\n", r.index, csv_float(r.x)));
    }
    let summary = Summary {
        violations: usize::from(!res.converged),
        fitted_slope: None,
        verdict: res.converged,
    };
    let details = SolveDetails {
        objective: res.objective.to_f64(),
        iterations: res.iterations,
        certificate: res.certificate,
        converged: res.converged,
    };
    Ok(render(config, Command::Solve, csv, &records, summary, details))
}

fn run_stability(config: &RunConfig, problem: &TikhonovProblem) -> Result<Rendered, DispatchError> {
    let block = config.stability.as_ref().ok_or(DispatchError::MissingBlock("stability"))?;
    let y = exact_data(problem, block.data.as_ref())?;
    let alpha = RegVector::new(block.alpha.clone())?;
    let schedule = Schedule::from_laws(
        Schedule::log_steps(block.max_step, block.per_decade),
        block
            .alpha
            .iter()
            .zip(&block.alpha_jitter)
            .map(|(&a, j)| Decay::approaching(a, j.coefficient, j.rate))
            .collect(),
        Decay::power(block.data_noise.coefficient, block.data_noise.rate),
        Decay::power(block.operator_noise.coefficient, block.operator_noise.rate),
        config.seed,
    )?;
    let settings = StabilitySettings {
        threshold: block.threshold,
        solve: SolveOptions {
            max_iterations: block.max_iterations,
            ..SolveOptions::default()
        },
    };
    let report = run_stability_experiment(problem, &y, &alpha, &schedule, &settings)?;
    #[derive(Serialize)]
    struct Details<'a> {
        reference: &'a [f64],
        decade_maxima: &'a [f64],
        final_displacement: f64,
    }
    let details = Details {
        reference: &report.reference,
        decade_maxima: &report.decade_maxima,
        final_displacement: report.final_displacement,
    };
    Ok(render(config, Command::Stability, report.to_csv(), &report.records, report.summary, details))
}

fn run_convergence(config: &RunConfig, problem: &TikhonovProblem) -> Result<Rendered, DispatchError> {
    let block = config.convergence.as_ref().ok_or(DispatchError::MissingBlock("convergence"))?;
    let x0 = DVector::from_vec(block.x0.clone());
    let y = problem.operator().apply(&x0)?;
    let schedule = Schedule::from_laws(
        Schedule::log_steps(block.max_step, block.per_decade),
        block.alphas.iter().map(|l| Decay::power(l.coefficient, l.rate)).collect(),
        Decay::power(block.data_noise.coefficient, block.data_noise.rate),
        Decay::power(block.operator_noise.coefficient, block.operator_noise.rate),
        config.seed,
    )?;
    let solutions = block
        .solution_line
        .as_ref()
        .map(|l| {
            SolutionGrid::line(
                &DVector::from_vec(l.particular.clone()),
                &DVector::from_vec(l.direction.clone()),
                l.lo,
                l.hi,
                l.count,
            )
        })
        .transpose()?;
    let settings = ConvergenceSettings {
        solve: SolveOptions {
            max_iterations: block.max_iterations,
            ..SolveOptions::default()
        },
        residual_tolerance: block.residual_tolerance,
        limit_tolerance: block.limit_tolerance,
        solutions,
    };
    let report = run_convergence_experiment(problem, &x0, &y, &schedule, &settings)?;
    #[derive(Serialize)]
    struct Details<'a> {
        classification: tikhon_core::experiments::ScheduleClass,
        limit: &'a [f64],
        cesaro_ratio: f64,
        limit_check: &'a Option<tikhon_core::experiments::LimitCheck>,
    }
    let details = Details {
        classification: report.classification,
        limit: &report.limit,
        cesaro_ratio: report.cesaro_ratio,
        limit_check: &report.limit_check,
    };
    Ok(render(config, Command::Convergence, report.to_csv(), &report.records, report.summary, details))
}

fn source_instance(
    a: &ForwardOperator,
    problem: &TikhonovProblem,
    kind: SourceKind,
    seed: u64,
) -> Result<QuadraticSource, DispatchError> {
    let mut r = rng::stream(seed, "source-element", &[]);
    let w = match kind {
        SourceKind::Flat => flat_source_element(a, &mut r)?,
        SourceKind::Gaussian => rng::gaussian_vector(&mut r, a.output_dim()),
    };
    let mut src = source_condition_construct(a, &w)?;
    for reg in problem.regularizers().iter().skip(1) {
        src = src.with_quadratic_penalty(a, reg)?;
    }
    Ok(src)
}

fn run_rates(config: &RunConfig, problem: &TikhonovProblem) -> Result<Rendered, DispatchError> {
    let block = config.rates.as_ref().ok_or(DispatchError::MissingBlock("rates"))?;
    let a = problem.operator();
    let src = source_instance(a, problem, block.certificate.source, config.seed)?;
    let cert = src.certificate.with_scaled_phis(block.certificate.phi_scale)?;
    let mut r = rng::stream(config.seed, "certificate-probes", &[]);
    let mut settings = RateSettings::new(
        block.noise_levels.clone(),
        block
            .alpha_rule
            .iter()
            .map(|r| NoisePower::new(r.coefficient, r.exponent))
            .collect(),
        block.trials,
        config.seed,
    );
    settings.operator_noise = block.operator_noise.map(|r| NoisePower::new(r.coefficient, r.exponent));
    settings.index = block.index - 1;
    settings.cloud_size = block.cloud_size;
    settings.cloud_half_width = block.cloud_half_width;
    settings.certificate_samples = src.probe_samples(a, block.certificate.samples, 1.0, &mut r)?;
    let report = run_rate_experiment(problem, &cert, &settings)?;
    #[derive(Serialize)]
    struct Details {
        certificate: tikhon_core::analysis::ViolationReport,
    }
    Ok(render(
        config,
        Command::Rates,
        report.to_csv(),
        &report.records,
        report.summary,
        Details {
            certificate: report.certificate,
        },
    ))
}

#[derive(Serialize)]
struct CheckRecord {
    check: String,
    value: f64,
    tolerance: f64,
    pass: bool,
}

fn run_check(config: &RunConfig, problem: &TikhonovProblem) -> Result<Rendered, DispatchError> {
    let block = config.check.clone().unwrap_or_default();
    let mut records = Vec::new();

    let dim = problem.operator().output_dim();
    let mut r = rng::stream(config.seed, "check-triples", &[]);
    let triples: Vec<(Datum, Datum, Datum)> = (0..block.triples)
        .map(|_| {
            let scale = 10f64.powf(r.random_range(-3.0..3.0));
            (
                rng::gaussian_vector(&mut r, dim) * scale,
                rng::gaussian_vector(&mut r, dim) * scale,
                rng::gaussian_vector(&mut r, dim) * scale,
            )
        })
        .collect();
    let mut measures = vec![
        ("sq_norm".to_string(), SimilarityMeasure::sq_norm()),
        ("power_metric_3".to_string(), SimilarityMeasure::power_metric(3.0)?),
    ];
    if let SimilarityMeasure::PowerMetric { p } = problem.similarity() {
        measures.push((format!("power_metric_{p}"), problem.similarity().clone()));
    }
    for (name, m) in measures {
        let s = m.quasi_triangle_s().ok_or(tikhon_core::Error::MissingTriangleConstant)?;
        let v = quasi_triangle_violation(&m, s, &triples)?;
        records.push(CheckRecord {
            check: format!("quasi_triangle_{name}"),
            value: v,
            tolerance: 0.0,
            pass: v <= 0.0,
        });
    }

    if let Some(a) = problem.operator().matrix() {
        let op = ForwardOperator::linear(a.clone());
        let single = TikhonovProblem::new(op.clone(), SimilarityMeasure::sq_norm(), vec![tikhon_core::Regularizer::sq_l2(None)?])?;
        let src = source_instance(&op, &single, SourceKind::Flat, config.seed)?;
        let mut r = rng::stream(config.seed, "check-probes", &[]);
        let samples = src.probe_samples(&op, block.vi_samples, 1.0, &mut r)?;
        let v = variational_inequality_violation(&single, &src.certificate, &src.data, &samples)?.max_violation;
        records.push(CheckRecord {
            check: "vi_certificate".into(),
            value: v,
            tolerance: 1e-10,
            pass: v <= 1e-10,
        });
        let halved = src.certificate.with_scaled_phis(0.5)?;
        let v = variational_inequality_violation(&single, &halved, &src.data, &samples)?.max_violation;
        records.push(CheckRecord {
            check: "vi_certificate_halved_detected".into(),
            value: v,
            tolerance: 0.0,
            pass: v > 0.0,
        });
    }

    let s = 2.0;
    let c = [1.0, 2.5];
    let phis = c
        .iter()
        .map(|&ck| PhiFunction::power(ck, 0.5))
        .collect::<Result<Vec<_>, _>>()?;
    let g = block.psi_grid;
    let axis: Vec<f64> = (0..g)
        .map(|i| 10f64.powf(-3.0 + 3.0 * i as f64 / (g - 1) as f64))
        .collect();
    let mut worst = 0.0f64;
    let mut table = vec![vec![0.0; g]; g];
    for (i, &a1) in axis.iter().enumerate() {
        for (k, &a2) in axis.iter().enumerate() {
            let alpha = RegVector::new(vec![a1, a2])?;
            let total = s * s * (a1 * c[0] + a2 * c[1]);
            let exact = total * total / 4.0;
            let closed = psi(&alpha, &phis, s)?;
            let numeric = psi_numeric(&alpha, &phis, s)?;
            worst = worst.max((closed - exact).abs() / exact).max((numeric - exact).abs() / exact);
            table[i][k] = closed;
        }
    }
    records.push(CheckRecord {
        check: "psi_closed_vs_numeric".into(),
        value: worst,
        tolerance: 1e-8,
        pass: worst <= 1e-8,
    });
    let decreases = (0..g)
        .flat_map(|i| (1..g).map(move |k| (i, k)))
        .filter(|&(i, k)| table[i][k] < table[i][k - 1] || table[k][i] < table[k - 1][i])
        .count();
    records.push(CheckRecord {
        check: "psi_monotone".into(),
        value: decreases as f64,
        tolerance: 0.0,
        pass: decreases == 0,
    });

    let mut csv = String::from("check,value,tolerance,pass\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.check,
            csv_float(r.value),
            csv_float(r.tolerance),
            u8::from(r.pass)
        ));
    }
    let violations = records.iter().filter(|r| !r.pass).count();
    let summary = Summary {
        violations,
        fitted_slope: None,
        verdict: violations == 0,
    };
    Ok(render(config, Command::Check, csv, &records, summary, ()))
}
