//! Forward simulation of SVAR models and interventional what-if experiments.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ica_lingam::{strictly_lower_in_order, topological_order};
use crate::svar::{Clamp, SvarModel};
use crate::timeseries::{biased_autocorrelation, mean_std, MultichannelSeries};
use crate::var::pairwise_granger;

pub const DEFAULT_BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    #[default]
    Laplace,
    Uniform,
    Gaussian,
}

impl NoiseFamily {
    /// Variance of one draw at the given scale: Laplace(0, b) has `2 b^2`,
    /// Uniform(-a, a) has `a^2 / 3`, Gaussian(0, s) has `s^2`.
    pub fn variance(self, scale: f64) -> f64 {
        match self {
            NoiseFamily::Laplace => 2.0 * scale * scale,
            NoiseFamily::Uniform => scale * scale / 3.0,
            NoiseFamily::Gaussian => scale * scale,
        }
    }

    pub fn scale_for_variance(self, variance: f64) -> f64 {
        match self {
            NoiseFamily::Laplace => (variance / 2.0).sqrt(),
            NoiseFamily::Uniform => (3.0 * variance).sqrt(),
            NoiseFamily::Gaussian => variance.sqrt(),
        }
    }

    fn sample<R: Rng>(self, rng: &mut R, scale: f64) -> f64 {
        match self {
            NoiseFamily::Laplace => {
                // Inverse CDF; u in [-0.5, 0.5).
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseFamily::Uniform => scale * (2.0 * rng.random::<f64>() - 1.0),
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseFamily::Laplace => "laplace",
            NoiseFamily::Uniform => "uniform",
            NoiseFamily::Gaussian => "gaussian",
        })
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(NoiseFamily::Laplace),
            "uniform" => Ok(NoiseFamily::Uniform),
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise family {other:?} (expected laplace, uniform or gaussian)"
            ))),
        }
    }
}

/// Structural noise `e_t`: independent draws per channel and step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scales: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn unit(family: NoiseFamily, channels: usize, seed: u64) -> Self {
        Self {
            family,
            scales: vec![1.0; channels],
            seed,
        }
    }

    /// Scales chosen so each channel's noise has the given variance.
    pub fn with_variances(family: NoiseFamily, variances: &[f64], seed: u64) -> Self {
        Self {
            family,
            scales: variances
                .iter()
                .map(|&v| family.scale_for_variance(v))
                .collect(),
            seed,
        }
    }

    pub fn variances(&self) -> Vec<f64> {
        self.scales
            .iter()
            .map(|&s| self.family.variance(s))
            .collect()
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if self.scales.len() != channels {
            return Err(Error::DimensionMismatch(format!(
                "{} noise scales for {channels} channels",
                self.scales.len()
            )));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(
                "noise scales must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `C x steps` noise matrix. Draw order is step-major, channel-minor, so the
    /// stream depends only on the seed, family and scales.
    pub fn draw(&self, steps: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let c = self.scales.len();
        let mut out = DMatrix::zeros(c, steps);
        for t in 0..steps {
            for (ch, &scale) in self.scales.iter().enumerate() {
                out[(ch, t)] = self.family.sample(&mut rng, scale);
            }
        }
        out
    }
}

/// How the contemporaneous system `(I - S0) y_t = rhs` is solved each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    /// Forward substitution when `S0` is strictly triangular in its causal order, otherwise the inverse.
    #[default]
    Auto,
    ForwardSubstitution,
    ExplicitInverse,
}

/// Model parameters with clamps folded in: a clamped channel's rows are
/// zeroed and its value comes from a constant.
struct Effective {
    s0: DMatrix<f64>,
    lags: Vec<DMatrix<f64>>,
    clamp: Vec<Option<f64>>,
}

impl Effective {
    fn new(model: &SvarModel) -> Self {
        let c = model.n_channels();
        let mut s0 = model.s0.s0.clone();
        let mut lags = model.lagged.clone();
        let mut clamp = vec![None; c];
        for &Clamp { channel, level } in &model.clamps {
            s0.row_mut(channel).fill(0.0);
            for m in &mut lags {
                m.row_mut(channel).fill(0.0);
            }
            clamp[channel] = Some(level);
        }
        Self { s0, lags, clamp }
    }
}

/// Simulates `y_t = S0 y_t + sum_d S^d y_{t-d} + e_t` from zero initial
/// conditions, discarding `burn_in` leading samples.
pub fn simulate_svar(
    model: &SvarModel,
    n_samples: usize,
    noise: &NoiseSpec,
    burn_in: usize,
) -> Result<MultichannelSeries> {
    simulate_svar_with(model, n_samples, noise, burn_in, Solver::Auto)
}

pub fn simulate_svar_with(
    model: &SvarModel,
    n_samples: usize,
    noise: &NoiseSpec,
    burn_in: usize,
    solver: Solver,
) -> Result<MultichannelSeries> {
    model.validate()?;
    let c = model.n_channels();
    noise.validate(c)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "n_samples must be at least 1".into(),
        ));
    }
    let eff = Effective::new(model);

    let a = DMatrix::identity(c, c) - &eff.s0;
    let svd = a.clone().svd(false, false);
    let (lo, hi) = (svd.singular_values.min(), svd.singular_values.max());
    if lo.is_nan() || lo <= 1e-10 * hi.max(1.0) {
        return Err(Error::SingularStructure);
    }
    match model.companion_spectral_radius() {
        Ok(r) if r >= 1.0 => {
            log::warn!("simulating an unstable model (companion spectral radius {r:.4})")
        }
        _ => {}
    }

    let forward_order = if strictly_lower_in_order(&eff.s0, &model.s0.causal_order) {
        Some(model.s0.causal_order.clone())
    } else {
        topological_order(&eff.s0)
    };
    let use_forward = match solver {
        Solver::Auto => forward_order.is_some(),
        Solver::ForwardSubstitution => {
            if forward_order.is_none() {
                return Err(Error::InvalidArgument(
                    "forward substitution needs an acyclic S0".into(),
                ));
            }
            true
        }
        Solver::ExplicitInverse => false,
    };
    let inverse = if use_forward {
        None
    } else {
        Some(a.try_inverse().ok_or(Error::SingularStructure)?)
    };

    let steps = burn_in + n_samples;
    let e = noise.draw(steps);
    let d = model.order;
    let mut y = DMatrix::<f64>::zeros(c, steps);
    let mut rhs = DVector::<f64>::zeros(c);
    for t in 0..steps {
        for ch in 0..c {
            rhs[ch] = match eff.clamp[ch] {
                Some(level) => level,
                None => e[(ch, t)],
            };
        }
        for lag in 1..=d.min(t) {
            rhs.gemv(1.0, &eff.lags[lag - 1], &y.column(t - lag), 1.0);
        }
        match (&inverse, &forward_order) {
            (Some(inv), _) => {
                let out = inv * &rhs;
                y.column_mut(t).copy_from(&out);
            }
            (None, Some(order)) => {
                for (pos, &i) in order.iter().enumerate() {
                    let mut v = rhs[i];
                    for &j in &order[..pos] {
                        v += eff.s0[(i, j)] * y[(j, t)];
                    }
                    y[(i, t)] = v;
                }
            }
            (None, None) => unreachable!("solver selection guarantees one path"),
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalDivergence(
            "simulated values overflowed; the model is unstable".into(),
        ));
    }
    let out = y.columns(burn_in, n_samples).into_owned();
    MultichannelSeries::from_matrix(model.channels.clone(), &out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    ZeroStructuralEdge,
    ZeroGrangerEdge,
    SetEdge,
    ClampChannel,
}

/// An edit of a fitted model. Edges run from `source` (cause) to `target`
/// (effect); lag 0 is the structural matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    ZeroStructuralEdge {
        source: String,
        target: String,
    },
    ZeroGrangerEdge {
        source: String,
        target: String,
        lag: usize,
    },
    SetEdge {
        source: String,
        target: String,
        lag: usize,
        value: f64,
    },
    ClampChannel {
        target: String,
        value: f64,
    },
}

impl Intervention {
    pub fn kind(&self) -> InterventionKind {
        match self {
            Intervention::ZeroStructuralEdge { .. } => InterventionKind::ZeroStructuralEdge,
            Intervention::ZeroGrangerEdge { .. } => InterventionKind::ZeroGrangerEdge,
            Intervention::SetEdge { .. } => InterventionKind::SetEdge,
            Intervention::ClampChannel { .. } => InterventionKind::ClampChannel,
        }
    }

    /// Parses the edit grammar `structural:SRC->DST=V`, `lagK:SRC->DST=V`
    /// (`=0` removes the edge) and `clamp:CH=V`.
    pub fn parse_edit(text: &str) -> Result<Self> {
        const HINT: &str = "expected structural:SRC->DST=V, lagK:SRC->DST=V or clamp:CH=V";
        let bad = || Error::InvalidArgument(format!("malformed edit {text:?}: {HINT}"));
        let (scope, rest) = text.trim().split_once(':').ok_or_else(bad)?;
        let (lhs, value) = rest.rsplit_once('=').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        let scope = scope.trim();
        if scope == "clamp" {
            let target = lhs.trim();
            if target.is_empty() || target.contains("->") {
                return Err(bad());
            }
            return Ok(Intervention::ClampChannel {
                target: target.to_string(),
                value,
            });
        }
        let lag = if scope == "structural" {
            0
        } else if let Some(k) = scope.strip_prefix("lag") {
            match k.parse::<usize>() {
                Ok(k) if k >= 1 => k,
                _ => return Err(bad()),
            }
        } else {
            return Err(bad());
        };
        let (source, target) = lhs.split_once("->").ok_or_else(bad)?;
        let (source, target) = (source.trim().to_string(), target.trim().to_string());
        if source.is_empty() || target.is_empty() {
            return Err(bad());
        }
        Ok(match (lag, value == 0.0) {
            (0, true) => Intervention::ZeroStructuralEdge { source, target },
            (lag, true) => Intervention::ZeroGrangerEdge {
                source,
                target,
                lag,
            },
            (lag, false) => Intervention::SetEdge {
                source,
                target,
                lag,
                value,
            },
        })
    }
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intervention::ZeroStructuralEdge { source, target } => {
                write!(f, "structural:{source}->{target}=0")
            }
            Intervention::ZeroGrangerEdge {
                source,
                target,
                lag,
            } => {
                write!(f, "lag{lag}:{source}->{target}=0")
            }
            Intervention::SetEdge {
                source,
                target,
                lag: 0,
                value,
            } => {
                write!(f, "structural:{source}->{target}={value}")
            }
            Intervention::SetEdge {
                source,
                target,
                lag,
                value,
            } => {
                write!(f, "lag{lag}:{source}->{target}={value}")
            }
            Intervention::ClampChannel { target, value } => write!(f, "clamp:{target}={value}"),
        }
    }
}

impl FromStr for Intervention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Intervention::parse_edit(s)
    }
}

fn edge_indices(model: &SvarModel, source: &str, target: &str) -> Result<(usize, usize)> {
    let lookup = |label: &str| {
        model
            .channel_index(label)
            .map_err(|_| Error::UnknownEdge(format!("no channel {label:?}")))
    };
    Ok((lookup(source)?, lookup(target)?))
}

/// Returns an edited copy of `model`. Edited models no longer satisfy the
/// corrected/uncorrected consistency relation; `fit_meta.edits` records the trail.
pub fn apply_intervention(model: &SvarModel, intervention: &Intervention) -> Result<SvarModel> {
    let mut out = model.clone();
    let check_lag = |lag: usize| {
        if lag > model.order {
            Err(Error::UnknownEdge(format!(
                "lag {lag} exceeds model order {}",
                model.order
            )))
        } else {
            Ok(())
        }
    };
    match intervention {
        Intervention::ZeroStructuralEdge { source, target } => {
            let (src, tgt) = edge_indices(model, source, target)?;
            if src == tgt {
                return Err(Error::SelfEdgeStructural(source.clone()));
            }
            out.s0.s0[(tgt, src)] = 0.0;
        }
        Intervention::ZeroGrangerEdge {
            source,
            target,
            lag,
        } => {
            let (src, tgt) = edge_indices(model, source, target)?;
            if *lag == 0 {
                return Err(Error::UnknownEdge("Granger edges have lag >= 1".into()));
            }
            check_lag(*lag)?;
            if src == tgt {
                return Err(Error::UnknownEdge(format!(
                    "{source}->{source} is an autoregressive term, not a Granger edge"
                )));
            }
            out.lagged[lag - 1][(tgt, src)] = 0.0;
        }
        Intervention::SetEdge {
            source,
            target,
            lag,
            value,
        } => {
            let (src, tgt) = edge_indices(model, source, target)?;
            check_lag(*lag)?;
            if !value.is_finite() {
                return Err(Error::InvalidArgument("edge value must be finite".into()));
            }
            if *lag == 0 {
                if src == tgt {
                    return Err(Error::SelfEdgeStructural(source.clone()));
                }
                out.s0.s0[(tgt, src)] = *value;
                if !out.s0.is_strictly_lower_in_order() {
                    match topological_order(&out.s0.s0) {
                        Some(order) => out.s0.causal_order = order,
                        None => out.s0.pruned = false,
                    }
                }
            } else {
                out.lagged[lag - 1][(tgt, src)] = *value;
            }
        }
        Intervention::ClampChannel { target, value } => {
            let channel = model
                .channel_index(target)
                .map_err(|_| Error::UnknownEdge(format!("no channel {target:?}")))?;
            if !value.is_finite() {
                return Err(Error::InvalidArgument("clamp level must be finite".into()));
            }
            out.clamps.retain(|c| c.channel != channel);
            out.clamps.push(Clamp {
                channel,
                level: *value,
            });
        }
    }
    out.fit_meta.edits.push(intervention.to_string());
    Ok(out)
}

/// A set of interventions applied together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Scenario {
    pub interventions: Vec<Intervention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerEntry {
    pub source: String,
    pub target: String,
    /// `None` when the statistic is undefined (e.g. a clamped, constant channel).
    pub f_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub variances: Vec<f64>,
    pub autocorr1: Vec<Option<f64>>,
    pub granger_f: Vec<GrangerEntry>,
}

impl Metrics {
    pub fn of(series: &MultichannelSeries, order: usize) -> Metrics {
        let variances = series
            .rows()
            .iter()
            .map(|r| mean_std(r).1.powi(2))
            .collect();
        let autocorr1 = series
            .rows()
            .iter()
            .map(|r| {
                if r.len() < 2 {
                    return None;
                }
                biased_autocorrelation(r, 1).map(|rho| rho[0])
            })
            .collect();
        let mut granger_f = Vec::new();
        for source in series.channels() {
            for target in series.channels() {
                if source == target {
                    continue;
                }
                granger_f.push(GrangerEntry {
                    source: source.clone(),
                    target: target.clone(),
                    f_value: pairwise_granger(series, source, target, order)
                        .ok()
                        .map(|g| g.f_value),
                });
            }
        }
        Metrics {
            variances,
            autocorr1,
            granger_f,
        }
    }

    /// `self - baseline`, entry by entry.
    pub fn delta(&self, baseline: &Metrics) -> Metrics {
        let sub = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
        Metrics {
            variances: self
                .variances
                .iter()
                .zip(&baseline.variances)
                .map(|(a, b)| a - b)
                .collect(),
            autocorr1: self
                .autocorr1
                .iter()
                .zip(&baseline.autocorr1)
                .map(|(a, b)| sub(*a, *b))
                .collect(),
            granger_f: self
                .granger_f
                .iter()
                .zip(&baseline.granger_f)
                .map(|(a, b)| GrangerEntry {
                    source: a.source.clone(),
                    target: a.target.clone(),
                    f_value: sub(a.f_value, b.f_value),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub interventions: Vec<Intervention>,
    pub metrics: Metrics,
    pub deltas: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub channels: Vec<String>,
    pub n_samples: usize,
    pub noise: NoiseSpec,
    pub burn_in: usize,
    pub baseline: Metrics,
    pub scenarios: Vec<ScenarioReport>,
}

impl CounterfactualReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::ModelParse(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }
}

/// Simulates the baseline and every scenario with the same noise stream
/// (common random numbers) and compares summary metrics.
pub fn counterfactual_report(
    model: &SvarModel,
    scenarios: &[Scenario],
    n_samples: usize,
    noise: &NoiseSpec,
    burn_in: usize,
) -> Result<CounterfactualReport> {
    let baseline_series = simulate_svar(model, n_samples, noise, burn_in)?;
    let baseline = Metrics::of(&baseline_series, model.order);
    let mut reports = Vec::with_capacity(scenarios.len());
    for scenario in scenarios {
        let mut edited = model.clone();
        for intervention in &scenario.interventions {
            edited = apply_intervention(&edited, intervention)?;
        }
        let series = simulate_svar(&edited, n_samples, noise, burn_in)?;
        let metrics = Metrics::of(&series, model.order);
        reports.push(ScenarioReport {
            interventions: scenario.interventions.clone(),
            deltas: metrics.delta(&baseline),
            metrics,
        });
    }
    Ok(CounterfactualReport {
        channels: model.channels.clone(),
        n_samples,
        noise: noise.clone(),
        burn_in,
        baseline,
        scenarios: reports,
    })
}
