//! Minimisation of the Tikhonov functional.
//!
//! Two routes: the normal equations for the classical quadratic case, and a
//! proximal gradient method with backtracking for everything else. Penalties
//! with zero weight are removed before either route runs, so a problem with
//! `alpha = (a, 0)` is solved by exactly the same floating-point operations
//! as the single-penalty problem.
//!
//! With several nonsmooth penalties the proximal step applies the individual
//! prox maps one after another. That sweep is exact only when the prox maps
//! commute or at most one penalty is nonsmooth; otherwise the fixed point is
//! an approximation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operators::ForwardOperator;
use crate::problem::{tikhonov_eval, Datum, ExtReal, Point, RegVector, TikhonovProblem};
use crate::regularizers::Regularizer;
use crate::rng;
use crate::similarity::SimilarityMeasure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Fixed,
    Backtracking,
}

/// Consecutive iterations without relative objective progress before giving up.
const STALL_WINDOW: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Stop once the proximal-gradient mapping norm drops below this.
    pub gradient_tolerance: f64,
    /// Give up once the relative objective decrease stays below this for
    /// a window of iterations.
    pub objective_tolerance: f64,
    /// Starting point, zero when absent.
    pub initial_point: Option<Point>,
    pub step_rule: StepRule,
    /// Keep the objective value of every iterate.
    pub record_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iterations: 200_000,
            gradient_tolerance: 1e-10,
            objective_tolerance: 1e-300,
            initial_point: None,
            step_rule: StepRule::Backtracking,
            record_trace: false,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.gradient_tolerance > 0.0 && self.objective_tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub minimizer: Point,
    pub objective: ExtReal,
    pub iterations: usize,
    /// Optimality residual: normal-equation residual norm for the quadratic
    /// route, proximal-gradient mapping norm for the iterative route.
    pub certificate: f64,
    pub converged: bool,
    /// Objective per iterate when requested (iterative route only).
    pub trace: Vec<ExtReal>,
}

/// Solves `(A^T A + sum_k alpha_k L_k^T L_k) x = A^T y`, the optimality
/// system of `||A x - y||^2 + sum_k alpha_k ||L_k x||^2`.
pub fn solve_quadratic(
    a: &ForwardOperator,
    y: &Datum,
    alpha: &RegVector,
    penalties: &[Regularizer],
) -> Result<SolveResult> {
    let m = a.matrix().ok_or(Error::NonlinearOperator)?;
    check_dim("datum", m.nrows(), y.len())?;
    check_dim("alpha", penalties.len(), alpha.len())?;
    if alpha.is_zero() {
        return Err(Error::ZeroAlpha);
    }
    let n = m.ncols();
    let mut system = m.tr_mul(m);
    for (r, &w) in penalties.iter().zip(alpha.as_slice()) {
        let l = r.quadratic_map(n).ok_or_else(|| {
            Error::Unsupported(format!("closed-form solve needs quadratic penalties, got {r:?}"))
        })?;
        check_dim("penalty map", n, l.ncols())?;
        if w > 0.0 {
            system += l.tr_mul(&l) * w;
        }
    }
    let rhs = m.tr_mul(y);
    let x = cholesky_solve(&system, &rhs)?;
    let certificate = (&system * &x - &rhs).norm();
    let problem = TikhonovProblem::new(a.clone(), SimilarityMeasure::sq_norm(), penalties.to_vec())?;
    let objective = tikhonov_eval(&problem, &x, alpha, y)?;
    Ok(SolveResult {
        minimizer: x,
        objective,
        iterations: 1,
        certificate,
        converged: true,
        trace: Vec::new(),
    })
}

fn cholesky_solve(system: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let singular = || Error::Singular("normal equations are not positive definite".into());
    let chol = system.clone().cholesky().ok_or_else(singular)?;
    let diag = chol.l_dirty().diagonal();
    let (min, max) = (diag.min(), diag.max());
    if !(min > 0.0) || min * min <= 1e-15 * max * max {
        return Err(singular());
    }
    Ok(chol.solve(rhs))
}

/// Whether [`solve_quadratic`] applies: linear operator, squared-norm fit and
/// only quadratic penalties among the active ones.
pub fn is_quadratic(problem: &TikhonovProblem, alpha: &RegVector) -> bool {
    problem.operator().is_linear()
        && *problem.similarity() == SimilarityMeasure::SqNorm
        && problem
            .regularizers()
            .iter()
            .zip(alpha.as_slice())
            .all(|(r, a)| *a == 0.0 || matches!(r, Regularizer::SqL2 { .. }))
}

/// Closed form when [`is_quadratic`], proximal gradient otherwise.
pub fn solve(
    problem: &TikhonovProblem,
    alpha: &RegVector,
    y: &Datum,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    if is_quadratic(problem, alpha) {
        let (reduced, weights) = problem.reduced(alpha)?;
        let mut res = solve_quadratic(reduced.operator(), y, &weights, reduced.regularizers())?;
        res.objective = tikhonov_eval(problem, &res.minimizer, alpha, y)?;
        Ok(res)
    } else {
        solve_prox_grad(problem, alpha, y, opts)
    }
}

struct Split<'a> {
    operator: &'a ForwardOperator,
    similarity: &'a SimilarityMeasure,
    y: &'a Datum,
    smooth: Vec<(&'a Regularizer, f64)>,
    nonsmooth: Vec<(&'a Regularizer, f64)>,
}

impl Split<'_> {
    fn smooth_value(&self, x: &Point) -> Result<f64> {
        let mut v = self.similarity.eval(&self.operator.apply(x)?, self.y)?;
        for (r, a) in &self.smooth {
            v += a * r.eval(x)?.to_f64();
        }
        Ok(v)
    }

    fn smooth_gradient(&self, x: &Point) -> Result<Point> {
        let fx = self.operator.apply(x)?;
        let jac = self
            .operator
            .jacobian_at(x)?
            .ok_or_else(|| Error::Unsupported("operator has no Jacobian".into()))?;
        let mut g = jac.tr_mul(&self.similarity.gradient_first(&fx, self.y)?);
        for (r, a) in &self.smooth {
            g += r.gradient(x)?.expect("smooth penalty has a gradient") * *a;
        }
        Ok(g)
    }

    fn nonsmooth_value(&self, x: &Point) -> Result<ExtReal> {
        let mut v = ExtReal::ZERO;
        for (r, a) in &self.nonsmooth {
            v = v + r.eval(x)?.weighted(*a);
        }
        Ok(v)
    }

    fn prox(&self, step: f64, v: Point) -> Result<Point> {
        self.nonsmooth
            .iter()
            .try_fold(v, |z, (r, a)| r.prox(step * a, &z))
    }

    /// Power-iteration estimate of the gradient Lipschitz constant for the
    /// squared-norm fit; a starting guess otherwise.
    fn lipschitz_estimate(&self, x: &Point) -> Result<f64> {
        let n = x.len();
        let jac = self
            .operator
            .jacobian_at(x)?
            .ok_or_else(|| Error::Unsupported("operator has no Jacobian".into()))?;
        let mut hessian: DMatrix<f64> = jac.tr_mul(&jac) * 2.0;
        for (r, a) in &self.smooth {
            let l = r.quadratic_map(n).expect("smooth penalties are quadratic");
            hessian += l.tr_mul(&l) * (2.0 * a);
        }
        let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
        v /= v.norm();
        let mut est = 0.0;
        for _ in 0..200 {
            let w = &hessian * &v;
            let norm = w.norm();
            if norm == 0.0 {
                break;
            }
            let next = norm;
            v = w / norm;
            if (next - est).abs() <= 1e-6 * next {
                est = next;
                break;
            }
            est = next;
        }
        // power iteration underestimates; the margin keeps the fixed step stable
        Ok((est * 1.01).max(1e-12))
    }
}

/// Proximal gradient descent on `T(.; alpha, y, F)`.
pub fn solve_prox_grad(
    problem: &TikhonovProblem,
    alpha: &RegVector,
    y: &Datum,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    let (reduced, weights) = problem.reduced(alpha)?;
    let n = problem.operator().input_dim();
    check_dim("datum", problem.operator().output_dim(), y.len())?;
    if !reduced.similarity().is_smooth() {
        return Err(Error::Unsupported(format!(
            "similarity {:?} is not smooth along the operator",
            reduced.similarity()
        )));
    }
    let mut smooth = Vec::new();
    let mut nonsmooth = Vec::new();
    for (r, &a) in reduced.regularizers().iter().zip(weights.as_slice()) {
        if r.is_smooth() {
            smooth.push((r, a));
        } else if r.has_prox() {
            nonsmooth.push((r, a));
        } else {
            return Err(Error::Unsupported(format!("penalty {r:?} has no proximal map")));
        }
    }
    let split = Split {
        operator: reduced.operator(),
        similarity: reduced.similarity(),
        y,
        smooth,
        nonsmooth,
    };

    let mut x = match &opts.initial_point {
        Some(p) => {
            check_dim("initial point", n, p.len())?;
            p.clone()
        }
        None => DVector::zeros(n),
    };
    let mut step = 1.0 / split.lipschitz_estimate(&x)?;
    let mut f = split.smooth_value(&x)?;
    let mut objective = ExtReal::new(f)? + split.nonsmooth_value(&x)?;
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(objective);
    }
    let mut certificate = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled_for = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let grad = split.smooth_gradient(&x)?;
        let (next, f_next) = loop {
            let candidate = split.prox(step, &x - &grad * step)?;
            let f_cand = split.smooth_value(&candidate)?;
            if opts.step_rule == StepRule::Fixed {
                break (candidate, f_cand);
            }
            let d = &candidate - &x;
            let model = f + grad.dot(&d) + d.norm_squared() / (2.0 * step);
            if f_cand <= model + 1e-15 * f.abs().max(1.0) || step < 1e-300 {
                break (candidate, f_cand);
            }
            step *= 0.5;
        };
        certificate = (&next - &x).norm() / step;
        let next_objective = ExtReal::new(f_next)? + split.nonsmooth_value(&next)?;
        match (objective, next_objective) {
            (ExtReal::Finite(a), ExtReal::Finite(b))
                if (a - b).abs() <= opts.objective_tolerance * b.abs().max(1.0) =>
            {
                stalled_for += 1
            }
            _ => stalled_for = 0,
        }
        x = next;
        f = f_next;
        objective = next_objective;
        if opts.record_trace {
            trace.push(objective);
        }
        if certificate <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        if stalled_for >= STALL_WINDOW {
            break;
        }
    }
    if !converged {
        log::debug!(
            "proximal gradient stopped after {iterations} iterations with residual {certificate:e}"
        );
    }
    let objective = tikhonov_eval(problem, &x, alpha, y)?;
    Ok(SolveResult {
        minimizer: x,
        objective,
        iterations,
        certificate,
        converged,
        trace,
    })
}

/// Largest `T(candidate) - T(candidate + p)` over random perturbations `p`
/// with norms log-uniform in `[radius * 1e-6, radius]`. A value at or below
/// the solver tolerance means no sampled descent direction exists.
pub fn optimality_check(
    problem: &TikhonovProblem,
    candidate: &Point,
    alpha: &RegVector,
    y: &Datum,
    trial_count: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    if trial_count == 0 {
        return Err(Error::InvalidArgument("trial_count must be >= 1".into()));
    }
    let base = tikhonov_eval(problem, candidate, alpha, y)?;
    let mut r = rng::stream(seed, "optimality-check", &[]);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..trial_count {
        let dir = rng::unit_vector(&mut r, candidate.len());
        let scale = radius * 10f64.powf(-6.0 * r.random::<f64>());
        let trial = tikhonov_eval(problem, &(candidate + dir * scale), alpha, y)?;
        let gain = match (base, trial) {
            (ExtReal::Finite(b), ExtReal::Finite(t)) => b - t,
            (ExtReal::Infinite, ExtReal::Finite(_)) => f64::INFINITY,
            (_, ExtReal::Infinite) => f64::NEG_INFINITY,
        };
        best = best.max(gain);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar(a: f64) -> ForwardOperator {
        ForwardOperator::linear(dmatrix![a])
    }

    #[test]
    fn scalar_normal_equations() {
        let r = solve_quadratic(
            &scalar(1.0),
            &dvector![1.0],
            &RegVector::new(vec![1.0]).unwrap(),
            &[Regularizer::sq_l2(None).unwrap()],
        )
        .unwrap();
        assert!((r.minimizer[0] - 0.5).abs() < 1e-15);
        assert!((r.objective.to_f64() - 0.5).abs() < 1e-15);

        let two = [Regularizer::sq_l2(None).unwrap(), Regularizer::sq_l2(None).unwrap()];
        let r = solve_quadratic(
            &scalar(1.0),
            &dvector![3.0],
            &RegVector::new(vec![1.0, 1.0]).unwrap(),
            &two,
        )
        .unwrap();
        assert!((r.minimizer[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_errors() {
        let regs = [Regularizer::sq_l2(None).unwrap()];
        assert_eq!(
            solve_quadratic(&scalar(1.0), &dvector![1.0], &RegVector::new(vec![0.0]).unwrap(), &regs)
                .unwrap_err(),
            Error::ZeroAlpha
        );
        let a = ForwardOperator::linear(dmatrix![1.0, 1.0]);
        let singular = [Regularizer::sq_l2(Some(dmatrix![1.0, 1.0])).unwrap()];
        assert!(matches!(
            solve_quadratic(&a, &dvector![1.0], &RegVector::new(vec![1.0]).unwrap(), &singular),
            Err(Error::Singular(_))
        ));
        assert!(solve_quadratic(&scalar(1.0), &dvector![1.0], &RegVector::new(vec![1.0]).unwrap(), &[Regularizer::l1()]).is_err());
    }

    #[test]
    fn l1_scalar_subdifferential() {
        // 0.5|x| + (x - 1)^2: optimum 2(x - 1) + 0.5 = 0 -> x = 0.75
        let p = TikhonovProblem::new(scalar(1.0), SimilarityMeasure::sq_norm(), vec![Regularizer::l1()])
            .unwrap();
        let r = solve_prox_grad(&p, &RegVector::new(vec![0.5]).unwrap(), &dvector![1.0], &SolveOptions::default())
            .unwrap();
        assert!(r.converged);
        assert!((r.minimizer[0] - 0.75).abs() < 1e-10);
    }

    #[test]
    fn prox_grad_matches_quadratic() {
        let mut rr = rng::stream(31, "solver", &[]);
        let a = ForwardOperator::linear(DMatrix::from_fn(6, 4, |_, _| rr.random_range(-1.0..1.0)));
        let y = rng::gaussian_vector(&mut rr, 6);
        let regs = vec![
            Regularizer::sq_l2(None).unwrap(),
            Regularizer::sq_l2(Some(crate::regularizers::first_difference(4))).unwrap(),
        ];
        let alpha = RegVector::new(vec![0.3, 0.7]).unwrap();
        let p = TikhonovProblem::new(a.clone(), SimilarityMeasure::sq_norm(), regs.clone()).unwrap();
        let q = solve_quadratic(&a, &y, &alpha, &regs).unwrap();
        let g = solve_prox_grad(&p, &alpha, &y, &SolveOptions::default()).unwrap();
        assert!((&q.minimizer - &g.minimizer).norm() <= 1e-6 * q.minimizer.norm());
        assert!(optimality_check(&p, &q.minimizer, &alpha, &y, 1000, 1.0, 1).unwrap() <= 1e-10);
        let displaced = &q.minimizer + dvector![0.3, 0.0, 0.0, 0.0];
        assert!(optimality_check(&p, &displaced, &alpha, &y, 200, 0.5, 2).unwrap() > 0.0);
        assert!(optimality_check(&p, &q.minimizer, &alpha, &y, 0, 1.0, 1).is_err());
    }

    #[test]
    fn backtracking_is_monotone() {
        let mut rr = rng::stream(32, "mono", &[]);
        let a = ForwardOperator::linear(DMatrix::from_fn(8, 6, |_, _| rr.random_range(-1.0..1.0)));
        let y = rng::gaussian_vector(&mut rr, 8);
        let p = TikhonovProblem::new(
            a,
            SimilarityMeasure::sq_norm(),
            vec![Regularizer::sq_l2(None).unwrap(), Regularizer::l1()],
        )
        .unwrap();
        let opts = SolveOptions {
            record_trace: true,
            ..SolveOptions::default()
        };
        let r = solve_prox_grad(&p, &RegVector::new(vec![0.1, 0.2]).unwrap(), &y, &opts).unwrap();
        assert!(r.converged);
        for w in r.trace.windows(2) {
            assert!(w[1].to_f64() <= w[0].to_f64() + 1e-13 * w[0].to_f64().abs());
        }
        assert!(optimality_check(&p, &r.minimizer, &RegVector::new(vec![0.1, 0.2]).unwrap(), &y, 1000, 1.0, 3).unwrap() <= 1e-9);
    }

    #[test]
    fn penalty_dominated_limit() {
        // strong l1 weight drives the solution to the penalty minimiser 0
        let a = ForwardOperator::linear(DMatrix::identity(3, 3));
        let p = TikhonovProblem::new(a, SimilarityMeasure::sq_norm(), vec![Regularizer::l1()]).unwrap();
        let y = dvector![1.0, -2.0, 0.5];
        let r = solve_prox_grad(&p, &RegVector::new(vec![1e3]).unwrap(), &y, &SolveOptions::default()).unwrap();
        assert_eq!(r.minimizer, DVector::zeros(3));
    }

    #[test]
    fn zero_weight_penalty_is_skipped_exactly() {
        let a = ForwardOperator::linear(dmatrix![1.0, 0.5; 0.2, 1.0; 0.3, 0.3]);
        let y = dvector![1.0, 2.0, -1.0];
        let boxed = Regularizer::indicator_box(dvector![5.0, 5.0], dvector![6.0, 6.0], Regularizer::l1()).unwrap();
        let full = TikhonovProblem::new(a.clone(), SimilarityMeasure::sq_norm(), vec![Regularizer::l1(), boxed]).unwrap();
        let single = TikhonovProblem::new(a, SimilarityMeasure::sq_norm(), vec![Regularizer::l1()]).unwrap();
        let opts = SolveOptions::default();
        let r2 = solve_prox_grad(&full, &RegVector::new(vec![0.4, 0.0]).unwrap(), &y, &opts).unwrap();
        let r1 = solve_prox_grad(&single, &RegVector::new(vec![0.4]).unwrap(), &y, &opts).unwrap();
        assert_eq!(r1.minimizer, r2.minimizer);
        assert_eq!(r1.iterations, r2.iterations);
        assert!(r2.objective.is_finite());
    }

    #[test]
    fn box_constrained_start_outside_domain() {
        let a = ForwardOperator::linear(dmatrix![1.0, 1.0]);
        let boxed = Regularizer::indicator_box(
            dvector![0.6, -1.0],
            dvector![1.0, 1.0],
            Regularizer::sq_l2(None).unwrap(),
        )
        .unwrap();
        let p = TikhonovProblem::new(a, SimilarityMeasure::sq_norm(), vec![boxed]).unwrap();
        let opts = SolveOptions {
            initial_point: Some(dvector![-3.0, 0.0]),
            ..SolveOptions::default()
        };
        let r = solve_prox_grad(&p, &RegVector::new(vec![0.1]).unwrap(), &dvector![1.0], &opts).unwrap();
        assert!(r.objective.is_finite());
        assert!(r.minimizer[0] >= 0.6);
        assert!(optimality_check(&p, &r.minimizer, &RegVector::new(vec![0.1]).unwrap(), &dvector![1.0], 1000, 0.5, 4).unwrap() <= 1e-9);
    }

    #[test]
    fn power_metric_and_tv() {
        let mut rr = rng::stream(33, "pm", &[]);
        let a = ForwardOperator::linear(DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.1 * rr.random_range(-1.0..1.0) }));
        let y = dvector![0.0, 1.0, 1.0, 0.0, 0.5];
        let p = TikhonovProblem::new(
            a,
            SimilarityMeasure::power_metric(3.0).unwrap(),
            vec![Regularizer::tv1d(5).unwrap()],
        )
        .unwrap();
        let alpha = RegVector::new(vec![0.05]).unwrap();
        let r = solve_prox_grad(&p, &alpha, &y, &SolveOptions::default()).unwrap();
        assert!(optimality_check(&p, &r.minimizer, &alpha, &y, 1000, 0.5, 5).unwrap() <= 1e-8);
    }

    #[test]
    fn prox_grad_rejects_bad_inputs() {
        let a = ForwardOperator::linear(DMatrix::identity(2, 2));
        let y = dvector![1.0, 1.0];
        let kl = TikhonovProblem::new(a.clone(), SimilarityMeasure::kl_divergence(), vec![Regularizer::l1()]).unwrap();
        assert!(matches!(
            solve_prox_grad(&kl, &RegVector::new(vec![1.0]).unwrap(), &y, &SolveOptions::default()),
            Err(Error::Unsupported(_))
        ));
        let sq = TikhonovProblem::new(a.clone(), SimilarityMeasure::sq_norm(), vec![Regularizer::l1()]).unwrap();
        assert_eq!(
            solve_prox_grad(&sq, &RegVector::new(vec![0.0]).unwrap(), &y, &SolveOptions::default()).unwrap_err(),
            Error::ZeroAlpha
        );
        let tv_box = Regularizer::indicator_box(dvector![0.0, 0.0], dvector![1.0, 1.0], Regularizer::tv1d(2).unwrap()).unwrap();
        let p = TikhonovProblem::new(a, SimilarityMeasure::sq_norm(), vec![tv_box]).unwrap();
        assert!(solve_prox_grad(&p, &RegVector::new(vec![1.0]).unwrap(), &y, &SolveOptions::default()).is_err());
        let bad = SolveOptions { max_iterations: 0, ..SolveOptions::default() };
        assert!(solve_prox_grad(&sq, &RegVector::new(vec![1.0]).unwrap(), &y, &bad).is_err());
    }
}
