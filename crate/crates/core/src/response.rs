//! Time-dependent agreement curves and the anchoring-exponent schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{Agent, AgreementMode, BiasError, TrialSource};

/// Slack allowed on the AI-correct agreement trend.
pub const RIGHT_TREND_TOLERANCE: f64 = 0.02;

/// Time points of the first experiment.
pub const EXPERIMENT1_TIMES: [f64; 4] = [10.0, 15.0, 20.0, 25.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("invalid curve: {0}")]
    Invalid(String),
}

/// Conditional agreement probabilities as functions of allotted time.
///
/// `agree_right[i]` is `P(agree | AI right, T = times[i])`, `agree_wrong[i]`
/// the same given the AI is wrong. Values between knots are linearly
/// interpolated; outside the knot range the end values hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct AgreementCurve {
    times: Vec<f64>,
    agree_right: Vec<f64>,
    agree_wrong: Vec<f64>,
}

#[derive(Deserialize)]
struct RawCurve {
    times: Vec<f64>,
    agree_right: Vec<f64>,
    agree_wrong: Vec<f64>,
}

impl TryFrom<RawCurve> for AgreementCurve {
    type Error = CurveError;

    fn try_from(r: RawCurve) -> Result<Self, CurveError> {
        AgreementCurve::new(r.times, r.agree_right, r.agree_wrong)
    }
}

fn check_times(times: &[f64]) -> Result<(), String> {
    if times.is_empty() {
        return Err("at least one knot required".into());
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err("knot times must be finite and nonnegative".into());
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err("knot times must be strictly increasing".into());
    }
    Ok(())
}

/// Piecewise-linear interpolation with constant extrapolation.
pub fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let i = times.partition_point(|&x| x <= t);
    let (t0, t1) = (times[i - 1], times[i]);
    if t == t0 {
        return values[i - 1];
    }
    let w = (t - t0) / (t1 - t0);
    values[i - 1] + w * (values[i] - values[i - 1])
}

impl AgreementCurve {
    pub fn new(times: Vec<f64>, agree_right: Vec<f64>, agree_wrong: Vec<f64>) -> Result<Self, CurveError> {
        check_times(&times).map_err(CurveError::Invalid)?;
        if agree_right.len() != times.len() || agree_wrong.len() != times.len() {
            return Err(CurveError::Invalid("one value per knot required".into()));
        }
        if agree_right
            .iter()
            .chain(&agree_wrong)
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(CurveError::Invalid("agreement values must lie in [0, 1]".into()));
        }
        if agree_wrong.windows(2).any(|w| w[1] > w[0]) {
            return Err(CurveError::Invalid(
                "agreement when the AI is wrong must not increase with time".into(),
            ));
        }
        if agree_right.windows(2).any(|w| w[1] > w[0] + RIGHT_TREND_TOLERANCE) {
            return Err(CurveError::Invalid(format!(
                "agreement when the AI is right may rise by at most {RIGHT_TREND_TOLERANCE} between knots"
            )));
        }
        Ok(Self {
            times,
            agree_right,
            agree_wrong,
        })
    }

    /// Probe disagreement 48% at 10 s and 67% at 25 s; unmodified-trial
    /// disagreement about 10% throughout.
    pub fn experiment1_default() -> Self {
        Self::new(vec![10.0, 25.0], vec![0.90, 0.90], vec![0.52, 0.33]).expect("valid default curve")
    }

    /// Scenario curve for the group that also sees the AI confidence label:
    /// the 25 s knot on AI-wrong trials sits 0.063 below the default.
    pub fn explained_default() -> Self {
        Self::new(vec![10.0, 25.0], vec![0.90, 0.90], vec![0.52, 0.267]).expect("valid explained curve")
    }

    pub fn constant(agree_right: f64, agree_wrong: f64) -> Result<Self, CurveError> {
        Self::new(vec![0.0], vec![agree_right], vec![agree_wrong])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn agree_right_knots(&self) -> &[f64] {
        &self.agree_right
    }

    pub fn agree_wrong_knots(&self) -> &[f64] {
        &self.agree_wrong
    }

    pub fn agree_right(&self, t: f64) -> f64 {
        interpolate(&self.times, &self.agree_right, t).clamp(0.0, 1.0)
    }

    pub fn agree_wrong(&self, t: f64) -> f64 {
        interpolate(&self.times, &self.agree_wrong, t).clamp(0.0, 1.0)
    }

    /// Knot times merged with the four experiment time points.
    pub fn calibration_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.times.iter().copied().chain(EXPERIMENT1_TIMES).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Result<f64, CurveError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(CurveError::Invalid("slope needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CurveError::Invalid("slope needs at least two distinct times".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of AI-wrong disagreement `1 - p_a|w(t)` against time in seconds.
pub fn fitted_slope(curve: &AgreementCurve, times: &[f64]) -> Result<f64, CurveError> {
    let ys: Vec<f64> = times.iter().map(|&t| 1.0 - curve.agree_wrong(t)).collect();
    ols_slope(times, &ys)
}

/// Least-squares projection onto non-increasing sequences (pool adjacent violators).
pub fn isotonic_non_increasing(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("two blocks");
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotFit {
    pub time: f64,
    pub target: f64,
    pub raw_beta: f64,
    pub beta: f64,
    pub achieved: f64,
}

/// Non-increasing map from time to the anchoring exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct BetaSchedule {
    times: Vec<f64>,
    betas: Vec<f64>,
    pub residual_rmse: f64,
    #[serde(default)]
    pub knots: Vec<KnotFit>,
}

#[derive(Deserialize)]
struct RawSchedule {
    times: Vec<f64>,
    betas: Vec<f64>,
    residual_rmse: f64,
    #[serde(default)]
    knots: Vec<KnotFit>,
}

impl TryFrom<RawSchedule> for BetaSchedule {
    type Error = CurveError;

    fn try_from(r: RawSchedule) -> Result<Self, CurveError> {
        let mut s = BetaSchedule::new(r.times, r.betas)?;
        s.residual_rmse = r.residual_rmse;
        s.knots = r.knots;
        Ok(s)
    }
}

impl BetaSchedule {
    pub fn new(times: Vec<f64>, betas: Vec<f64>) -> Result<Self, CurveError> {
        check_times(&times).map_err(CurveError::Invalid)?;
        if betas.len() != times.len() {
            return Err(CurveError::Invalid("one beta per knot required".into()));
        }
        if betas.iter().any(|b| !b.is_finite()) {
            return Err(CurveError::Invalid("beta values must be finite".into()));
        }
        if betas.windows(2).any(|w| w[1] > w[0]) {
            return Err(CurveError::Invalid("beta schedule must be non-increasing in time".into()));
        }
        Ok(Self {
            times,
            betas,
            residual_rmse: 0.0,
            knots: Vec::new(),
        })
    }

    pub fn constant(beta: f64) -> Result<Self, CurveError> {
        Self::new(vec![0.0], vec![beta])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta_at(&self, t: f64) -> f64 {
        interpolate(&self.times, &self.betas, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaGrid {
    pub min: f64,
    pub max: f64,
    #[serde(default = "d_tol")]
    pub tolerance: f64,
    #[serde(default = "d_iter")]
    pub max_iterations: usize,
}

fn d_tol() -> f64 {
    1e-10
}
fn d_iter() -> usize {
    200
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self {
            min: -20.0,
            max: 20.0,
            tolerance: d_tol(),
            max_iterations: d_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error(
        "target agreement {target} at t = {time} s lies outside the achievable interval [{low}, {high}] for beta in [{beta_min}, {beta_max}]"
    )]
    Unreachable {
        time: f64,
        target: f64,
        low: f64,
        high: f64,
        beta_min: f64,
        beta_max: f64,
    },
    #[error("agreement is not monotone in beta: {0}")]
    NotMonotone(String),
    #[error("invalid calibration grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Model(#[from] BiasError),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Fits `beta(t)` so the agent's agreement on `source` tracks `p_a|w(t)`.
///
/// Every knot is solved by bisection on the monotone map beta → agreement,
/// then the knot values are projected onto non-increasing sequences.
pub fn calibrate_beta(
    target: &AgreementCurve,
    agent: &Agent,
    source: &dyn TrialSource,
    grid: &BetaGrid,
    times: &[f64],
    mode: AgreementMode,
) -> Result<BetaSchedule, CalibrationError> {
    if !(grid.min < grid.max) || !grid.min.is_finite() || !grid.max.is_finite() {
        return Err(CalibrationError::Grid(format!("need finite min < max, got [{}, {}]", grid.min, grid.max)));
    }
    if !agent.model.ai.is_diagonally_dominant() {
        return Err(CalibrationError::NotMonotone(
            "the AI output table is not diagonally dominant".into(),
        ));
    }
    check_times(times).map_err(CalibrationError::Grid)?;
    let agreement = |beta: f64| -> Result<f64, CalibrationError> {
        Ok(agent.with_beta(beta).agreement(source, mode)?.probability)
    };
    let low = agreement(grid.min)?;
    let high = agreement(grid.max)?;
    if low > high {
        return Err(CalibrationError::NotMonotone(format!(
            "agreement {low} at beta {} exceeds {high} at beta {}",
            grid.min, grid.max
        )));
    }
    let raw: Vec<Result<(f64, f64), CalibrationError>> = times
        .par_iter()
        .map(|&t| {
            let goal = target.agree_wrong(t);
            if goal < low - 1e-12 || goal > high + 1e-12 {
                return Err(CalibrationError::Unreachable {
                    time: t,
                    target: goal,
                    low,
                    high,
                    beta_min: grid.min,
                    beta_max: grid.max,
                });
            }
            let (mut lo, mut hi) = (grid.min, grid.max);
            let (mut a_lo, mut a_hi) = (low, high);
            for _ in 0..grid.max_iterations {
                if hi - lo <= grid.tolerance {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let a = agreement(mid)?;
                if a < goal {
                    lo = mid;
                    a_lo = a;
                } else {
                    hi = mid;
                    a_hi = a;
                }
            }
            Ok(if (a_lo - goal).abs() <= (a_hi - goal).abs() {
                (lo, goal)
            } else {
                (hi, goal)
            })
        })
        .collect();
    let mut raw_betas = Vec::with_capacity(times.len());
    let mut goals = Vec::with_capacity(times.len());
    for r in raw {
        let (b, g) = r?;
        raw_betas.push(b);
        goals.push(g);
    }
    let betas = isotonic_non_increasing(&raw_betas);
    let achieved: Vec<f64> = betas
        .par_iter()
        .map(|&b| agreement(b))
        .collect::<Result<_, _>>()?;
    let mse = goals
        .iter()
        .zip(&achieved)
        .map(|(g, a)| (g - a).powi(2))
        .sum::<f64>()
        / times.len() as f64;
    let mut schedule = BetaSchedule::new(times.to_vec(), betas.clone())?;
    schedule.residual_rmse = mse.sqrt();
    schedule.knots = times
        .iter()
        .enumerate()
        .map(|(i, &t)| KnotFit {
            time: t,
            target: goals[i],
            raw_beta: raw_betas[i],
            beta: betas[i],
            achieved: achieved[i],
        })
        .collect();
    Ok(schedule)
}
