//! The four-stage SVAR fit and the model file format.
//!
//! 1. reduced-form VAR `y_t = sum_d M^d y_{t-d} + n_t` (OLS or Kalman),
//! 2. residuals `n_t`,
//! 3. `S0` from `n_t = S0 n_t + e_t` via FastICA + LiNGAM, pruned to a DAG,
//! 4. corrected lag matrices `S^d = (I - S0) M^d`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ica_lingam::{
    fastica, lingam_from_ica, non_gaussianity_warning, prune_to_dag, topological_order, IcaConfig,
    StructuralMatrix,
};
use crate::linalg::{companion, covariance, from_rows, spectral_radius, to_rows};
use crate::timeseries::{standardize, MultichannelSeries, Preprocessing};
use crate::var::{fit_var_kalman, fit_var_ols, residuals, FitMethod, KalmanConfig, VarModel};

pub const SCHEMA_VERSION: &str = "1";
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarMethod {
    Ols,
    Kalman(KalmanConfig),
}

impl VarMethod {
    pub fn fit_method(&self) -> FitMethod {
        match self {
            VarMethod::Ols => FitMethod::Ols,
            VarMethod::Kalman(_) => FitMethod::Kalman,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvarConfig {
    pub var_method: VarMethod,
    pub ica: IcaConfig,
    pub prune_threshold: f64,
    pub standardize: bool,
}

impl Default for SvarConfig {
    fn default() -> Self {
        Self {
            var_method: VarMethod::Ols,
            ica: IcaConfig::default(),
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub method: FitMethod,
    pub seed: u64,
    pub prune_threshold: f64,
    pub samples: usize,
    pub warnings: Vec<String>,
    /// Interventions applied after fitting, in order.
    pub edits: Vec<String>,
    /// Effective run configuration echoed by front ends.
    pub run_config: Option<BTreeMap<String, String>>,
}

impl Default for FitMeta {
    fn default() -> Self {
        Self {
            method: FitMethod::Ols,
            seed: 0,
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            samples: 0,
            warnings: Vec::new(),
            edits: Vec::new(),
            run_config: None,
        }
    }
}

/// A hard intervention holding one channel at a constant level during simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Clamp {
    pub channel: usize,
    pub level: f64,
}

/// Fitted structural VAR:
/// `y_t = S0 y_t + sum_d S^d y_{t-d} + e_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvarModel {
    pub channels: Vec<String>,
    pub order: usize,
    pub s0: StructuralMatrix,
    /// Corrected lag matrices `S^1..S^D`.
    pub lagged: Vec<DMatrix<f64>>,
    /// Reduced-form lag matrices `M^1..M^D`.
    pub uncorrected_lagged: Vec<DMatrix<f64>>,
    /// Per-channel variance of the structural noise `e_t`.
    pub noise_variances: Vec<f64>,
    pub preprocessing: Preprocessing,
    pub fit_meta: FitMeta,
    pub clamps: Vec<Clamp>,
}

impl SvarModel {
    /// A model with every coefficient zero and unit noise variances.
    pub fn zeros(channels: Vec<String>, order: usize) -> Self {
        let c = channels.len();
        Self {
            order,
            s0: StructuralMatrix::zeros(c),
            lagged: vec![DMatrix::zeros(c, c); order],
            uncorrected_lagged: vec![DMatrix::zeros(c, c); order],
            noise_variances: vec![1.0; c],
            preprocessing: Preprocessing::identity(c),
            fit_meta: FitMeta::default(),
            clamps: Vec::new(),
            channels,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownChannel(label.to_string()))
    }

    /// Recomputes `uncorrected_lagged` as `(I - S0)^{-1} S^d`, making the
    /// model internally consistent after hand edits of `s0` or `lagged`.
    pub fn recompute_uncorrected(&mut self) -> Result<()> {
        let c = self.n_channels();
        let inv = (DMatrix::identity(c, c) - &self.s0.s0)
            .try_inverse()
            .ok_or(Error::SingularStructure)?;
        self.uncorrected_lagged = self.lagged.iter().map(|s| &inv * s).collect();
        Ok(())
    }

    /// Largest deviation from `S^d = (I - S0) M^d` over all lags.
    pub fn correction_residual(&self) -> f64 {
        self.lagged
            .iter()
            .zip(&self.uncorrected_lagged)
            .map(|(s, m)| {
                let expected = corrected_lagged(&self.s0, m).expect("validated shapes");
                crate::linalg::max_abs_diff(s, &expected)
            })
            .fold(0.0, f64::max)
    }

    /// Spectral radius of the companion matrix of the reduced form
    /// `(I - S0)^{-1} S^d`; below 1 means the model is stable.
    pub fn companion_spectral_radius(&self) -> Result<f64> {
        let c = self.n_channels();
        let inv = (DMatrix::identity(c, c) - &self.s0.s0)
            .try_inverse()
            .ok_or(Error::SingularStructure)?;
        let reduced: Vec<DMatrix<f64>> = self.lagged.iter().map(|s| &inv * s).collect();
        Ok(spectral_radius(&companion(&reduced)))
    }

    /// Re-expresses all factors in raw sensor units:
    /// `raw[i][j] = std_i / std_j * standardized[i][j]`. The returned model's
    /// preprocessing keeps the means and has unit stds.
    pub fn in_raw_units(&self) -> SvarModel {
        let stds = &self.preprocessing.stds;
        let rescale = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * stds[i] / stds[j])
        };
        let mut out = self.clone();
        out.s0.s0 = rescale(&self.s0.s0);
        out.lagged = self.lagged.iter().map(rescale).collect();
        out.uncorrected_lagged = self.uncorrected_lagged.iter().map(rescale).collect();
        out.noise_variances = self
            .noise_variances
            .iter()
            .zip(stds)
            .map(|(v, s)| v * s * s)
            .collect();
        out.clamps = self
            .clamps
            .iter()
            .map(|cl| Clamp {
                channel: cl.channel,
                level: cl.level * stds[cl.channel],
            })
            .collect();
        out.preprocessing.stds = vec![1.0; stds.len()];
        out
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_channels();
        if c == 0 {
            return Err(Error::InvalidModel("model has no channels".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if self
            .channels
            .iter()
            .any(|l| l.is_empty() || !seen.insert(l))
        {
            return Err(Error::InvalidModel(
                "channel labels must be unique and nonempty".into(),
            ));
        }
        if self.order == 0 {
            return Err(Error::InvalidModel("order must be at least 1".into()));
        }
        if self.s0.n_channels() != c {
            return Err(Error::InvalidModel(format!("s0 must be {c}x{c}")));
        }
        self.s0.validate()?;
        for (name, mats) in [
            ("lagged", &self.lagged),
            ("uncorrected_lagged", &self.uncorrected_lagged),
        ] {
            if mats.len() != self.order {
                return Err(Error::InvalidModel(format!(
                    "{name} has {} matrices, order is {}",
                    mats.len(),
                    self.order
                )));
            }
            if mats.iter().any(|m| m.shape() != (c, c)) {
                return Err(Error::InvalidModel(format!(
                    "{name} matrices must be {c}x{c}"
                )));
            }
        }
        let all_finite = self.s0.s0.iter().all(|v| v.is_finite())
            && self
                .lagged
                .iter()
                .chain(&self.uncorrected_lagged)
                .all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::InvalidModel("coefficients must be finite".into()));
        }
        if self.noise_variances.len() != c
            || self
                .noise_variances
                .iter()
                .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidModel(format!(
                "noise_variances must hold {c} finite non-negative values"
            )));
        }
        let pre = &self.preprocessing;
        if pre.means.len() != c
            || pre.stds.len() != c
            || pre.stds.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidModel(format!(
                "preprocessing must hold {c} means and positive stds"
            )));
        }
        if self
            .clamps
            .iter()
            .any(|cl| cl.channel >= c || !cl.level.is_finite())
        {
            return Err(Error::InvalidModel("invalid clamp".into()));
        }
        Ok(())
    }
}

/// `(I - S0) M`.
pub fn corrected_lagged(s0: &StructuralMatrix, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = s0.n_channels();
    if m.shape() != (c, c) {
        return Err(Error::DimensionMismatch(format!(
            "S0 is {c}x{c} but the lag matrix is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok((DMatrix::identity(c, c) - &s0.s0) * m)
}

/// Reporting view with Granger diagonals masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalFactors {
    pub structural: DMatrix<f64>,
    pub granger_corrected: Vec<DMatrix<f64>>,
    pub granger_uncorrected: Vec<DMatrix<f64>>,
}

fn mask_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    out.fill_diagonal(0.0);
    out
}

pub fn causal_factors(model: &SvarModel) -> CausalFactors {
    CausalFactors {
        structural: model.s0.s0.clone(),
        granger_corrected: model.lagged.iter().map(mask_diagonal).collect(),
        granger_uncorrected: model.uncorrected_lagged.iter().map(mask_diagonal).collect(),
    }
}

/// Fits the full SVAR.
///
/// Soft problems (Gaussian-looking residuals, an unstable reduced form) are
/// recorded in `fit_meta.warnings` and logged; hard failures are errors.
pub fn fit_svar(
    series: &MultichannelSeries,
    order: usize,
    config: &SvarConfig,
) -> Result<SvarModel> {
    let c = series.n_channels();
    if order == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    let needed = c * order + 50 * c;
    if series.len() <= needed {
        return Err(Error::InsufficientData {
            needed,
            got: series.len(),
        });
    }
    if !(config.prune_threshold >= 0.0 && config.prune_threshold.is_finite()) {
        return Err(Error::InvalidArgument(
            "prune threshold must be >= 0".into(),
        ));
    }

    let (work, preprocessing) = if config.standardize {
        let (z, pre) = standardize(series)?;
        (z, pre)
    } else {
        (series.clone(), Preprocessing::identity(c))
    };

    let var: VarModel = match &config.var_method {
        VarMethod::Ols => fit_var_ols(&work, order)?,
        VarMethod::Kalman(k) => fit_var_kalman(&work, order, k)?,
    };
    let res = residuals(&work, &var)?;

    let mut warnings = Vec::new();
    if let Some(w) = non_gaussianity_warning(&res.data) {
        warnings.push(w);
    }

    let ica = fastica(&res.data, &config.ica)?;
    if !ica.convergence.identifiable() {
        warnings.push(format!(
            "{} of {c} ICA components are Gaussian-like (excess kurtosis {:.3?}); S0 is not identifiable",
            ica.convergence.gaussian_components, ica.convergence.component_kurtosis
        ));
    }
    let s0 = prune_to_dag(&lingam_from_ica(&ica)?, config.prune_threshold);

    let lagged = var
        .lag_matrices
        .iter()
        .map(|m| corrected_lagged(&s0, m))
        .collect::<Result<Vec<_>>>()?;

    let structural_noise = (DMatrix::identity(c, c) - &s0.s0) * &res.data;
    let noise_variances = covariance(&structural_noise)
        .0
        .diagonal()
        .iter()
        .copied()
        .collect();

    let mut model = SvarModel {
        channels: series.channels().to_vec(),
        order,
        s0,
        lagged,
        uncorrected_lagged: var.lag_matrices,
        noise_variances,
        preprocessing,
        fit_meta: FitMeta {
            method: config.var_method.fit_method(),
            seed: config.ica.seed,
            prune_threshold: config.prune_threshold,
            samples: series.len(),
            warnings: Vec::new(),
            edits: Vec::new(),
            run_config: None,
        },
        clamps: Vec::new(),
    };
    let radius = model.companion_spectral_radius()?;
    if radius >= 1.0 {
        warnings.push(format!(
            "fitted model is unstable (companion spectral radius {radius:.4})"
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    model.fit_meta.warnings = warnings;
    Ok(model)
}

// ---- model file ----

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: String,
    channels: Vec<String>,
    order: usize,
    s0: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    causal_order: Option<Vec<usize>>,
    lagged: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uncorrected_lagged: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_variances: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preprocessing: Option<Preprocessing>,
    #[serde(default)]
    fit_meta: FitMetaFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    clamps: Vec<ClampFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct FitMetaFile {
    method: FitMethod,
    seed: u64,
    prune_threshold: f64,
    samples: usize,
    warnings: Vec<String>,
    s0_pruned: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    edits: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    run_config: Option<BTreeMap<String, String>>,
}

impl Default for FitMetaFile {
    fn default() -> Self {
        let meta = FitMeta::default();
        Self {
            method: meta.method,
            seed: meta.seed,
            prune_threshold: meta.prune_threshold,
            samples: meta.samples,
            warnings: meta.warnings,
            s0_pruned: true,
            edits: meta.edits,
            run_config: meta.run_config,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ClampFile {
    channel: String,
    level: f64,
}

fn matrices_from_rows(mats: &[Vec<Vec<f64>>]) -> Result<Vec<DMatrix<f64>>> {
    mats.iter()
        .map(|m| from_rows(m).map_err(|e| Error::InvalidModel(e.to_string())))
        .collect()
}

impl SvarModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            schema_version: SCHEMA_VERSION.to_string(),
            channels: self.channels.clone(),
            order: self.order,
            s0: to_rows(&self.s0.s0),
            causal_order: Some(self.s0.causal_order.clone()),
            lagged: self.lagged.iter().map(to_rows).collect(),
            uncorrected_lagged: Some(self.uncorrected_lagged.iter().map(to_rows).collect()),
            noise_variances: Some(self.noise_variances.clone()),
            preprocessing: Some(self.preprocessing.clone()),
            fit_meta: FitMetaFile {
                method: self.fit_meta.method,
                seed: self.fit_meta.seed,
                prune_threshold: self.fit_meta.prune_threshold,
                samples: self.fit_meta.samples,
                warnings: self.fit_meta.warnings.clone(),
                s0_pruned: self.s0.pruned,
                edits: self.fit_meta.edits.clone(),
                run_config: self.fit_meta.run_config.clone(),
            },
            clamps: self
                .clamps
                .iter()
                .map(|cl| ClampFile {
                    channel: self.channels[cl.channel].clone(),
                    level: cl.level,
                })
                .collect(),
        };
        let mut text =
            serde_json::to_string_pretty(&file).map_err(|e| Error::ModelParse(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    /// Parses a model file. Only `schema_version`, `channels`, `order`, `s0`
    /// and `lagged` are required; missing `uncorrected_lagged` is derived from
    /// `(I - S0)^{-1} S^d`, and missing noise/preprocessing default to unit values.
    pub fn from_json(text: &str) -> Result<SvarModel> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::ModelParse(e.to_string()))?;
        match value.get("schema_version") {
            Some(serde_json::Value::String(v)) if v == SCHEMA_VERSION => {}
            Some(serde_json::Value::String(v)) => {
                return Err(Error::SchemaVersionMismatch(v.clone()))
            }
            Some(other) => return Err(Error::SchemaVersionMismatch(other.to_string())),
            None => return Err(Error::ModelParse("missing schema_version".into())),
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::ModelParse(e.to_string()))?;
        let c = file.channels.len();
        let s0 = from_rows(&file.s0).map_err(|e| Error::InvalidModel(e.to_string()))?;
        if s0.shape() != (c, c) {
            return Err(Error::InvalidModel(format!("s0 must be {c}x{c}")));
        }
        let causal_order = match file.causal_order {
            Some(order) => order,
            None => topological_order(&s0).unwrap_or_else(|| (0..c).collect()),
        };
        let lagged = matrices_from_rows(&file.lagged)?;
        let preprocessing = file
            .preprocessing
            .unwrap_or_else(|| Preprocessing::identity(c));
        let clamps = file
            .clamps
            .iter()
            .map(|cl| {
                let channel = file
                    .channels
                    .iter()
                    .position(|l| *l == cl.channel)
                    .ok_or_else(|| {
                        Error::InvalidModel(format!("clamp on unknown channel {:?}", cl.channel))
                    })?;
                Ok(Clamp {
                    channel,
                    level: cl.level,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = SvarModel {
            channels: file.channels,
            order: file.order,
            s0: StructuralMatrix {
                s0,
                causal_order,
                pruned: file.fit_meta.s0_pruned,
            },
            uncorrected_lagged: Vec::new(),
            lagged,
            noise_variances: file.noise_variances.unwrap_or_else(|| vec![1.0; c]),
            preprocessing,
            fit_meta: FitMeta {
                method: file.fit_meta.method,
                seed: file.fit_meta.seed,
                prune_threshold: file.fit_meta.prune_threshold,
                samples: file.fit_meta.samples,
                warnings: file.fit_meta.warnings,
                edits: file.fit_meta.edits,
                run_config: file.fit_meta.run_config,
            },
            clamps,
        };
        match file.uncorrected_lagged {
            Some(m) => model.uncorrected_lagged = matrices_from_rows(&m)?,
            None => {
                if model.s0.s0.shape() != (c, c) || model.lagged.iter().any(|m| m.shape() != (c, c))
                {
                    return Err(Error::InvalidModel(
                        "matrix shapes disagree with channels".into(),
                    ));
                }
                model.recompute_uncorrected()?;
            }
        }
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model<P: AsRef<Path>>(model: &SvarModel, path: P) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<SvarModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    SvarModel::from_json(&text)
}
