//! Reduced-form VAR estimation, residuals, pairwise Granger causality and
//! the closed-form AR(2) Yule-Walker solution.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance, solve_normal_equations};
use crate::timeseries::MultichannelSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Ols,
    Kalman,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitMethod::Ols => f.write_str("ols"),
            FitMethod::Kalman => f.write_str("kalman"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarFitMeta {
    pub method: FitMethod,
    pub samples_used: usize,
}

/// `y_t = sum_d M^d y_{t-d} + n_t`, without intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub order: usize,
    /// `M^1..M^D`, each `C x C`.
    pub lag_matrices: Vec<DMatrix<f64>>,
    pub innovation_covariance: DMatrix<f64>,
    pub fit_meta: VarFitMeta,
}

impl VarModel {
    pub fn n_channels(&self) -> usize {
        self.innovation_covariance.nrows()
    }

    /// Stacked coefficients `[M^1 ... M^D]` as a `C x CD` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        stack_lags(&self.lag_matrices)
    }
}

fn stack_lags(lags: &[DMatrix<f64>]) -> DMatrix<f64> {
    let c = lags[0].nrows();
    let mut out = DMatrix::zeros(c, c * lags.len());
    for (d, m) in lags.iter().enumerate() {
        out.view_mut((0, d * c), (c, c)).copy_from(m);
    }
    out
}

fn unstack_lags(stacked: &DMatrix<f64>, order: usize) -> Vec<DMatrix<f64>> {
    let c = stacked.nrows();
    (0..order)
        .map(|d| stacked.view((0, d * c), (c, c)).into_owned())
        .collect()
}

/// Regressor vector `[y_{t-1}; ...; y_{t-D}]` for sample `t`.
fn fill_regressors(series: &MultichannelSeries, order: usize, t: usize, out: &mut [f64]) {
    let c = series.n_channels();
    for d in 1..=order {
        for ch in 0..c {
            out[(d - 1) * c + ch] = series.at(ch, t - d);
        }
    }
}

/// Design matrix (`T x CD`) and targets (`T x C`) for `t = D..N-1`.
fn design(series: &MultichannelSeries, order: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let c = series.n_channels();
    let rows = series.len() - order;
    let x = DMatrix::from_fn(rows, c * order, |r, k| {
        let (d, ch) = (k / c + 1, k % c);
        series.at(ch, r + order - d)
    });
    let y = DMatrix::from_fn(rows, c, |r, ch| series.at(ch, r + order));
    (x, y)
}

fn check_order(series: &MultichannelSeries, order: usize) -> Result<()> {
    if order == 0 {
        return Err(Error::InvalidArgument(
            "VAR order must be at least 1".into(),
        ));
    }
    let needed = series.n_channels() * order + 1;
    if series.len() <= needed {
        return Err(Error::InsufficientData {
            needed,
            got: series.len(),
        });
    }
    Ok(())
}

fn finish_model(
    series: &MultichannelSeries,
    order: usize,
    lag_matrices: Vec<DMatrix<f64>>,
    method: FitMethod,
) -> Result<VarModel> {
    let c = series.n_channels();
    let mut model = VarModel {
        order,
        lag_matrices,
        innovation_covariance: DMatrix::zeros(c, c),
        fit_meta: VarFitMeta {
            method,
            samples_used: series.len() - order,
        },
    };
    let res = residuals(series, &model)?;
    model.innovation_covariance = covariance(&res.data).0;
    Ok(model)
}

/// Batch least-squares VAR fit over `t = D..N-1`.
pub fn fit_var_ols(series: &MultichannelSeries, order: usize) -> Result<VarModel> {
    check_order(series, order)?;
    let (x, y) = design(series, order);
    let gram = x.tr_mul(&x);
    let cross = x.tr_mul(&y);
    // coef is CD x C; column `ch` holds the regression of channel `ch`.
    let coef = solve_normal_equations(&gram, &cross)?;
    let lags = unstack_lags(&coef.transpose(), order);
    finish_model(series, order, lags, FitMethod::Ols)
}

/// Tuning of the recursive coefficient tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    /// Random-walk variance added to every coefficient per step (0 = constant coefficients).
    pub process_noise: f64,
    pub observation_noise: f64,
    /// Prior variance of every coefficient.
    pub initial_covariance: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.0,
            observation_noise: 1.0,
            initial_covariance: 1e6,
        }
    }
}

impl KalmanConfig {
    fn validate(&self) -> Result<()> {
        if !(self.process_noise >= 0.0 && self.process_noise.is_finite()) {
            return Err(Error::InvalidArgument(
                "process noise q must be >= 0".into(),
            ));
        }
        if !(self.observation_noise > 0.0 && self.observation_noise.is_finite()) {
            return Err(Error::InvalidArgument(
                "observation noise r must be > 0".into(),
            ));
        }
        if !(self.initial_covariance > 0.0 && self.initial_covariance.is_finite()) {
            return Err(Error::InvalidArgument(
                "initial covariance p0 must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Kalman filter over the stacked VAR coefficients.
///
/// The state is the `CD x C` coefficient matrix, observed one sample at a
/// time through `y_t = Theta^T x_t + n_t`. Every channel shares the same
/// regressor `x_t`, prior and observation variance, so a single `CD x CD`
/// covariance serves all channels. The covariance update uses the Joseph form.
pub fn fit_var_kalman(
    series: &MultichannelSeries,
    order: usize,
    config: &KalmanConfig,
) -> Result<VarModel> {
    config.validate()?;
    check_order(series, order)?;
    let c = series.n_channels();
    let k = c * order;
    let r = config.observation_noise;

    let mut theta = DMatrix::<f64>::zeros(k, c);
    let mut p = DMatrix::<f64>::identity(k, k) * config.initial_covariance;
    let mut x = DVector::<f64>::zeros(k);
    for t in order..series.len() {
        fill_regressors(series, order, t, x.as_mut_slice());
        let px = &p * &x;
        let s = x.dot(&px) + r;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::NumericalDivergence(format!(
                "innovation variance {s} at sample {t}"
            )));
        }
        let gain = &px / s;
        let pred = theta.tr_mul(&x);
        for ch in 0..c {
            let innov = series.at(ch, t) - pred[ch];
            theta.column_mut(ch).axpy(innov, &gain, 1.0);
        }
        // Joseph form: (I - g x^T) P (I - g x^T)^T + r g g^T.
        let a = &p - &gain * px.transpose();
        let ax = &a * &x;
        p = &a - &ax * gain.transpose() + (&gain * gain.transpose()) * r;
        p = (&p + p.transpose()) * 0.5;
        if config.process_noise > 0.0 {
            for i in 0..k {
                p[(i, i)] += config.process_noise;
            }
        }
        if (0..k).any(|i| !(p[(i, i)] > 0.0 && p[(i, i)].is_finite())) {
            return Err(Error::NumericalDivergence(format!(
                "state covariance lost positive definiteness at sample {t}"
            )));
        }
    }
    if p.clone().cholesky().is_none() {
        return Err(Error::NumericalDivergence(
            "final state covariance is not positive definite".into(),
        ));
    }
    let lags = unstack_lags(&theta.transpose(), order);
    finish_model(series, order, lags, FitMethod::Kalman)
}

/// Reduced-form residuals `n_t = y_t - sum_d M^d y_{t-d}` for `t = D..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// `C x (N - D)`.
    pub data: DMatrix<f64>,
    /// Sample index of the first residual column (equals the VAR order).
    pub start_index: usize,
}

impl Residuals {
    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.row(c).iter().copied().collect()
    }
}

pub fn residuals(series: &MultichannelSeries, model: &VarModel) -> Result<Residuals> {
    let c = series.n_channels();
    if model.lag_matrices.len() != model.order
        || model
            .lag_matrices
            .iter()
            .any(|m| m.nrows() != c || m.ncols() != c)
    {
        return Err(Error::DimensionMismatch(format!(
            "model with {} channels applied to a {c}-channel series",
            model.lag_matrices.first().map_or(0, |m| m.nrows())
        )));
    }
    if model.order >= series.len() {
        return Err(Error::InsufficientData {
            needed: model.order,
            got: series.len(),
        });
    }
    let d = model.order;
    let stacked = model.stacked();
    let mut data = DMatrix::zeros(c, series.len() - d);
    let mut x = DVector::zeros(c * d);
    for t in d..series.len() {
        fill_regressors(series, d, t, x.as_mut_slice());
        let pred = &stacked * &x;
        for ch in 0..c {
            data[(ch, t - d)] = series.at(ch, t) - pred[ch];
        }
    }
    Ok(Residuals {
        data,
        start_index: d,
    })
}

/// Classical two-channel Granger statistic for one ordered pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub source: String,
    pub target: String,
    /// In-sample prediction-error variance of the target from its own lags.
    pub var_restricted: f64,
    /// Same, with the source's lags added.
    pub var_full: f64,
    /// `ln(var_restricted / var_full)`.
    pub f_value: f64,
    pub lags: usize,
}

impl GrangerResult {
    /// Whether the source "Granger-causes" the target at the given threshold on F.
    pub fn granger_causes(&self, threshold: f64) -> bool {
        self.f_value > threshold
    }
}

pub fn granger_f(var_restricted: f64, var_full: f64) -> f64 {
    (var_restricted / var_full).ln()
}

/// Mean squared residual of a no-intercept least-squares fit of `y` on the columns of `x`.
fn ls_residual_variance(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let rhs = x.tr_mul(y);
    let coef = solve_normal_equations(
        &x.tr_mul(x),
        &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()),
    )?;
    let fitted = x * coef;
    let rss: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(rss / y.len() as f64)
}

pub fn pairwise_granger(
    series: &MultichannelSeries,
    source: &str,
    target: &str,
    order: usize,
) -> Result<GrangerResult> {
    let src = series.channel_index(source)?;
    let tgt = series.channel_index(target)?;
    if src == tgt {
        return Err(Error::SelfPair(source.to_string()));
    }
    if order == 0 {
        return Err(Error::InvalidArgument(
            "Granger order must be at least 1".into(),
        ));
    }
    let needed = 2 * order + 1;
    if series.len() <= needed {
        return Err(Error::InsufficientData {
            needed,
            got: series.len(),
        });
    }
    let rows = series.len() - order;
    let y = DVector::from_fn(rows, |r, _| series.at(tgt, r + order));
    let full = DMatrix::from_fn(rows, 2 * order, |r, k| {
        let ch = if k < order { tgt } else { src };
        let d = k % order + 1;
        series.at(ch, r + order - d)
    });
    let restricted = full.columns(0, order).into_owned();
    let var_restricted = ls_residual_variance(&restricted, &y)?;
    let var_full = ls_residual_variance(&full, &y)?;
    if !(var_full > 0.0 && var_restricted > 0.0) {
        return Err(Error::NumericalDivergence(format!(
            "prediction error variance vanished for {source} -> {target}"
        )));
    }
    Ok(GrangerResult {
        source: source.to_string(),
        target: target.to_string(),
        var_restricted,
        var_full,
        f_value: granger_f(var_restricted, var_full),
        lags: order,
    })
}

/// Granger statistics for every ordered pair of distinct channels, in
/// (source, target) row-major order.
pub fn granger_all_pairs(series: &MultichannelSeries, order: usize) -> Result<Vec<GrangerResult>> {
    let labels = series.channels();
    let mut out = Vec::with_capacity(labels.len() * labels.len().saturating_sub(1));
    for source in labels {
        for target in labels {
            if source != target {
                out.push(pairwise_granger(series, source, target, order)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar2Coefficients {
    pub s1: f64,
    pub s2: f64,
}

/// AR(2) coefficients from the lag-1 and lag-2 autocorrelations:
/// `s1 = rho1 (1 - rho2) / (1 - rho1^2)`, `s2 = (rho2 - rho1^2) / (1 - rho1^2)`.
pub fn yule_walker_ar2(rho1: f64, rho2: f64) -> Result<Ar2Coefficients> {
    if rho1.is_nan() || rho1.abs() >= 1.0 {
        return Err(Error::DegenerateCorrelation(rho1.abs()));
    }
    let denom = 1.0 - rho1 * rho1;
    // Grouped so that rho2 == rho1^2 gives s1 == rho1 bit-for-bit.
    Ok(Ar2Coefficients {
        s1: rho1 * ((1.0 - rho2) / denom),
        s2: (rho2 - rho1 * rho1) / denom,
    })
}
