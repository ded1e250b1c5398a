use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{normalize_alpha, RegVector};

/// `offset + coefficient * l^(-rate)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    #[serde(default)]
    pub offset: f64,
    pub coefficient: f64,
    pub rate: f64,
}

impl Decay {
    pub fn power(coefficient: f64, rate: f64) -> Self {
        Decay {
            offset: 0.0,
            coefficient,
            rate,
        }
    }

    pub fn constant(value: f64) -> Self {
        Decay::power(value, 0.0)
    }

    pub fn zero() -> Self {
        Decay::power(0.0, 0.0)
    }

    /// `value -> offset` jittered by `coefficient * l^(-rate)`.
    pub fn approaching(offset: f64, coefficient: f64, rate: f64) -> Self {
        Decay {
            offset,
            coefficient,
            rate,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = self.offset.is_finite()
            && self.offset >= 0.0
            && self.coefficient.is_finite()
            && self.coefficient >= 0.0
            && self.rate.is_finite()
            && self.rate >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Schedule(format!(
                "{what}: offset, coefficient and rate must be finite and nonnegative, got {self:?}"
            )))
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        self.offset + self.coefficient * (step as f64).powf(-self.rate)
    }

    /// `(exponent, coefficient)` of the leading term as `l -> inf`;
    /// the exponent is infinite for the zero sequence.
    fn leading(&self) -> (f64, f64) {
        if self.offset > 0.0 {
            let c = if self.rate == 0.0 { self.coefficient } else { 0.0 };
            (0.0, self.offset + c)
        } else if self.coefficient == 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (self.rate, self.coefficient)
        }
    }
}

/// Parameter, data-noise and operator-noise sequences indexed by steps `l >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: Vec<u64>,
    pub alphas: Vec<RegVector>,
    /// Target `||y - y^(l)||`.
    pub data_noise: Vec<f64>,
    /// Target `||F - F^(l)||_2`.
    pub op_noise: Vec<f64>,
    pub seed: u64,
    pub alpha_laws: Vec<Decay>,
    pub noise_law: Decay,
    pub op_law: Decay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleClass {
    Conv1Satisfied,
    ConvmaxSatisfied,
    Neither,
}

impl Schedule {
    /// Evaluates the decay laws at the given strictly increasing steps.
    pub fn from_laws(steps: Vec<u64>, alpha_laws: Vec<Decay>, noise_law: Decay, op_law: Decay, seed: u64) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Schedule("schedule needs at least one step".into()));
        }
        if steps[0] == 0 || steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schedule("steps must be strictly increasing and start at >= 1".into()));
        }
        if alpha_laws.is_empty() {
            return Err(Error::Schedule("schedule needs at least one parameter law".into()));
        }
        for (k, law) in alpha_laws.iter().enumerate() {
            law.validate(&format!("alpha_{}", k + 1))?;
        }
        noise_law.validate("data noise")?;
        op_law.validate("operator noise")?;
        let mut alphas = Vec::with_capacity(steps.len());
        for &l in &steps {
            let a = RegVector::new(alpha_laws.iter().map(|d| d.at(l)).collect())?;
            if a.is_zero() {
                return Err(Error::Schedule(format!("alpha vanishes at step {l}")));
            }
            alphas.push(a);
        }
        Ok(Schedule {
            data_noise: steps.iter().map(|&l| noise_law.at(l)).collect(),
            op_noise: steps.iter().map(|&l| op_law.at(l)).collect(),
            steps,
            alphas,
            seed,
            alpha_laws,
            noise_law,
            op_law,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Normalised parameters `alpha^(l) / sum_k alpha_k^(l)`.
    pub fn alpha_bar(&self, index: usize) -> Result<RegVector> {
        normalize_alpha(&self.alphas[index]).map(|(a, _)| a)
    }

    /// `lim_l alpha^(l) / sum_k alpha_k^(l)`, from the leading terms.
    pub fn limit_alpha_bar(&self) -> Result<RegVector> {
        let leading: Vec<(f64, f64)> = self.alpha_laws.iter().map(Decay::leading).collect();
        let m = leading.iter().map(|l| l.0).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = leading
            .iter()
            .map(|&(r, c)| if r == m { c } else { 0.0 })
            .collect();
        normalize_alpha(&RegVector::new(weights)?).map(|(a, _)| a)
    }

    /// Steps `1 ..= length`.
    pub fn dense_steps(length: u64) -> Vec<u64> {
        (1..=length).collect()
    }

    /// Roughly `per_decade` log-spaced steps per decade up to `max_step`,
    /// including 1 and `max_step`.
    pub fn log_steps(max_step: u64, per_decade: usize) -> Vec<u64> {
        let max_step = max_step.max(1);
        let per_decade = per_decade.max(1);
        let decades = (max_step as f64).log10();
        let count = (decades * per_decade as f64).ceil() as usize;
        let mut steps: Vec<u64> = (0..=count)
            .map(|i| 10f64.powf(decades * i as f64 / count.max(1) as f64).round() as u64)
            .collect();
        steps.push(max_step);
        steps.sort_unstable();
        steps.dedup();
        steps.retain(|&l| l >= 1);
        steps
    }
}

/// Power-law schedule `alpha_k^(l) = c_k l^(-r_k)`, `l = 1 ..= length`.
pub fn make_schedule(
    length: u64,
    alpha_decays: &[(f64, f64)],
    noise_decay: (f64, f64),
    op_decay: (f64, f64),
    seed: u64,
) -> Result<Schedule> {
    if length == 0 {
        return Err(Error::Schedule("schedule length must be >= 1".into()));
    }
    if alpha_decays.iter().any(|(c, _)| !(*c > 0.0)) {
        return Err(Error::Schedule("parameter coefficients must be positive".into()));
    }
    Schedule::from_laws(
        Schedule::dense_steps(length),
        alpha_decays.iter().map(|&(c, r)| Decay::power(c, r)).collect(),
        Decay::power(noise_decay.0, noise_decay.1),
        Decay::power(op_decay.0, op_decay.1),
        seed,
    )
}

/// Classifies a schedule from the exponents of its decay laws.
pub fn check_schedule(schedule: &Schedule) -> ScheduleClass {
    let rates: Vec<f64> = schedule
        .alpha_laws
        .iter()
        .map(|d| d.leading().0)
        .filter(|r| r.is_finite())
        .collect();
    let m = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let noise = schedule.noise_law.leading().0;
    let op = schedule.op_law.leading().0;
    if !(m.is_finite() && m > 0.0 && noise > m && op > m) {
        return ScheduleClass::Neither;
    }
    if rates.iter().all(|r| *r == m) {
        ScheduleClass::ConvmaxSatisfied
    } else {
        ScheduleClass::Conv1Satisfied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_values() {
        let s = make_schedule(10, &[(1.0, 0.5), (1.0, 1.0)], (1.0, 1.0), (1.0, 1.0), 7).unwrap();
        assert_eq!(s.len(), 10);
        let a10 = s.alphas[9].as_slice();
        assert!((a10[0] - 10f64.powf(-0.5)).abs() < 1e-15);
        assert!((a10[1] - 0.1).abs() < 1e-15);
        assert_eq!(s, make_schedule(10, &[(1.0, 0.5), (1.0, 1.0)], (1.0, 1.0), (1.0, 1.0), 7).unwrap());
        let constant = make_schedule(5, &[(0.3, 0.0), (0.2, 0.0)], (0.0, 0.0), (0.0, 0.0), 1).unwrap();
        assert!(constant.alphas.iter().all(|a| a.as_slice() == [0.3, 0.2]));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(make_schedule(0, &[(1.0, 1.0)], (1.0, 1.0), (1.0, 1.0), 0).is_err());
        assert!(make_schedule(3, &[(0.0, 1.0)], (1.0, 1.0), (1.0, 1.0), 0).is_err());
        assert!(make_schedule(3, &[(1.0, -1.0)], (1.0, 1.0), (1.0, 1.0), 0).is_err());
        assert!(make_schedule(3, &[], (1.0, 1.0), (1.0, 1.0), 0).is_err());
        assert!(Schedule::from_laws(vec![2, 2], vec![Decay::constant(1.0)], Decay::zero(), Decay::zero(), 0).is_err());
    }

    #[test]
    fn classification_examples() {
        let conv1 = make_schedule(5, &[(1.0, 0.5), (1.0, 1.0)], (1.0, 1.0), (1.0, 1.0), 0).unwrap();
        assert_eq!(check_schedule(&conv1), ScheduleClass::Conv1Satisfied);
        let convmax = make_schedule(5, &[(1.0, 1.0), (1.0, 1.0)], (1.0, 2.0), (1.0, 2.0), 0).unwrap();
        assert_eq!(check_schedule(&convmax), ScheduleClass::ConvmaxSatisfied);
        let noisy = make_schedule(5, &[(1.0, 0.5), (1.0, 1.0)], (1.0, 0.3), (1.0, 1.0), 0).unwrap();
        assert_eq!(check_schedule(&noisy), ScheduleClass::Neither);
        let constant = make_schedule(5, &[(1.0, 0.0)], (1.0, 1.0), (1.0, 1.0), 0).unwrap();
        assert_eq!(check_schedule(&constant), ScheduleClass::Neither);
        let exact = make_schedule(5, &[(1.0, 1.0)], (0.0, 0.0), (0.0, 0.0), 0).unwrap();
        assert_eq!(check_schedule(&exact), ScheduleClass::ConvmaxSatisfied);
    }

    #[test]
    fn limit_weights() {
        let s = make_schedule(5, &[(2.0, 1.0), (1.0, 2.0)], (1.0, 2.0), (1.0, 2.0), 0).unwrap();
        assert_eq!(s.limit_alpha_bar().unwrap().as_slice(), [1.0, 0.0]);
        let s = make_schedule(5, &[(3.0, 1.0), (1.0, 1.0)], (1.0, 2.0), (1.0, 2.0), 0).unwrap();
        assert_eq!(s.limit_alpha_bar().unwrap().as_slice(), [0.75, 0.25]);
        let s = Schedule::from_laws(
            vec![1, 10],
            vec![Decay::approaching(0.5, 1.0, 1.0), Decay::power(1.0, 1.0)],
            Decay::zero(),
            Decay::zero(),
            0,
        )
        .unwrap();
        assert_eq!(s.limit_alpha_bar().unwrap().as_slice(), [1.0, 0.0]);
        assert_eq!(s.alphas[1].as_slice(), [0.6, 0.1]);
    }

    #[test]
    fn log_steps_cover_decades() {
        let s = Schedule::log_steps(10_000, 5);
        assert_eq!(s[0], 1);
        assert_eq!(*s.last().unwrap(), 10_000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for d in 0..4 {
            let lo = 10u64.pow(d);
            assert!(s.iter().filter(|&&l| l >= lo && l < lo * 10).count() >= 3);
        }
    }
}
