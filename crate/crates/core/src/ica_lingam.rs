//! FastICA and LiNGAM post-processing: recovers the contemporaneous
//! structural matrix `S0` from reduced-form VAR residuals.
//!
//! Under the linear, non-Gaussian, acyclic model the residuals satisfy
//! `n = S0 n + e` with independent non-Gaussian `e`, so `e = (I - S0) n`.
//! ICA recovers `I - S0` up to row permutation and row scaling; LiNGAM
//! resolves both by choosing the permutation with the largest diagonal and
//! normalizing that diagonal to one.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance, excess_kurtosis, hungarian, next_permutation, sym_inv_sqrt};

/// Channel counts up to this size use exhaustive permutation search.
pub const EXHAUSTIVE_MAX_CHANNELS: usize = 8;

/// Unmixing diagonal entries below this magnitude are treated as zero.
const DIAGONAL_FLOOR: f64 = 1e-8;

/// Excess kurtosis below this magnitude counts as Gaussian-like.
pub const KURTOSIS_WARN_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    pub whitened: DMatrix<f64>,
    /// Inverse principal square root of the sample covariance.
    pub whitening_matrix: DMatrix<f64>,
    pub mean: DVector<f64>,
}

/// Centers `data` (`C x T`) and whitens it with `Sigma^{-1/2}`.
pub fn whiten(data: &DMatrix<f64>) -> Result<Whitening> {
    let (cov, mean) = covariance(data);
    let k = sym_inv_sqrt(&cov)?;
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    Ok(Whitening {
        whitened: &k * centered,
        whitening_matrix: k,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    #[default]
    LogCosh,
    Cube,
}

impl Contrast {
    /// Applies the nonlinearity in place and returns the mean derivative.
    fn apply(self, row: &mut [f64]) -> f64 {
        let n = row.len() as f64;
        let mut dsum = 0.0;
        match self {
            Contrast::LogCosh => {
                for v in row.iter_mut() {
                    let t = v.tanh();
                    *v = t;
                    dsum += 1.0 - t * t;
                }
            }
            Contrast::Cube => {
                for v in row.iter_mut() {
                    let u = *v;
                    *v = u * u * u;
                    dsum += 3.0 * u * u;
                }
            }
        }
        dsum / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Symmetric,
    Deflation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcaConfig {
    pub contrast: Contrast,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            contrast: Contrast::LogCosh,
            max_iter: 1000,
            tol: 1e-7,
            seed: 0,
            strategy: Strategy::Symmetric,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub iterations: usize,
    /// Largest sign-invariant max-abs change of an unmixing row in the last iteration.
    pub final_delta: f64,
    /// Excess kurtosis of each recovered component.
    pub component_kurtosis: Vec<f64>,
    /// Number of components whose kurtosis is indistinguishable from Gaussian.
    pub gaussian_components: usize,
}

impl Convergence {
    /// ICA separates sources only when at most one of them is Gaussian.
    pub fn identifiable(&self) -> bool {
        self.gaussian_components <= 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaResult {
    /// `C x C`, applied to the centered input: `components = unmixing * (data - mean)`.
    pub unmixing: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub components: DMatrix<f64>,
    pub convergence: Convergence,
}

fn row_delta(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    (0..new.nrows())
        .map(|i| {
            let (mut plus, mut minus) = (0.0f64, 0.0f64);
            for j in 0..new.ncols() {
                plus = plus.max((new[(i, j)] - old[(i, j)]).abs());
                minus = minus.max((new[(i, j)] + old[(i, j)]).abs());
            }
            plus.min(minus)
        })
        .fold(0.0, f64::max)
}

fn symmetric_decorrelation(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(sym_inv_sqrt(&(w * w.transpose()))? * w)
}

/// One fixed-point step for all rows: `E[z g(w^T z)] - E[g'(w^T z)] w`.
fn fixed_point_step(w: &DMatrix<f64>, z: &DMatrix<f64>, contrast: Contrast) -> DMatrix<f64> {
    let t = z.ncols() as f64;
    let mut y = w * z;
    let mut mean_deriv = vec![0.0; y.nrows()];
    // y is column-major, so gather each row before applying the contrast.
    let mut buf = vec![0.0; y.ncols()];
    for (i, md) in mean_deriv.iter_mut().enumerate() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = y[(i, j)];
        }
        *md = contrast.apply(&mut buf);
        for (j, b) in buf.iter().enumerate() {
            y[(i, j)] = *b;
        }
    }
    let mut out = (y * z.transpose()) / t;
    for (i, md) in mean_deriv.iter().enumerate() {
        for j in 0..w.ncols() {
            out[(i, j)] -= md * w[(i, j)];
        }
    }
    out
}

fn random_matrix(c: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(c, c, |_, _| StandardNormal.sample(&mut rng))
}

fn ica_symmetric(z: &DMatrix<f64>, config: &IcaConfig) -> Result<(DMatrix<f64>, usize, f64)> {
    let c = z.nrows();
    let mut w = symmetric_decorrelation(&random_matrix(c, config.seed))?;
    let mut delta = f64::INFINITY;
    for iter in 1..=config.max_iter {
        let next = symmetric_decorrelation(&fixed_point_step(&w, z, config.contrast))?;
        delta = row_delta(&next, &w);
        w = next;
        if delta < config.tol {
            return Ok((w, iter, delta));
        }
    }
    Err(Error::NoConvergence {
        iterations: config.max_iter,
        final_delta: delta,
    })
}

fn ica_deflation(z: &DMatrix<f64>, config: &IcaConfig) -> Result<(DMatrix<f64>, usize, f64)> {
    let c = z.nrows();
    let init = random_matrix(c, config.seed);
    let mut w = DMatrix::zeros(c, c);
    let (mut total_iter, mut worst_delta) = (0, 0.0f64);
    for p in 0..c {
        let mut row = init.row(p).into_owned();
        let project = |row: &mut nalgebra::RowDVector<f64>, w: &DMatrix<f64>| {
            for k in 0..p {
                let prev = w.row(k);
                let dot = row.dot(&prev);
                *row -= prev * dot;
            }
            let norm = row.norm();
            *row /= norm;
        };
        project(&mut row, &w);
        let mut converged = false;
        let mut delta = f64::INFINITY;
        for iter in 1..=config.max_iter {
            let single = DMatrix::from_row_slice(1, c, row.as_slice());
            let mut next = fixed_point_step(&single, z, config.contrast)
                .row(0)
                .into_owned();
            project(&mut next, &w);
            delta = row_delta(
                &DMatrix::from_row_slice(1, c, next.as_slice()),
                &DMatrix::from_row_slice(1, c, row.as_slice()),
            );
            row = next;
            total_iter = total_iter.max(iter);
            if delta < config.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                iterations: config.max_iter,
                final_delta: delta,
            });
        }
        worst_delta = worst_delta.max(delta);
        w.row_mut(p).copy_from(&row);
    }
    Ok((w, total_iter, worst_delta))
}

/// Kurtosis magnitude below which a component of `t` samples counts as
/// Gaussian: the fixed threshold, widened to three standard errors for short series.
fn gaussian_kurtosis_bound(t: usize) -> f64 {
    KURTOSIS_WARN_THRESHOLD.max(3.0 * (24.0 / t as f64).sqrt())
}

/// FastICA on a `C x T` data matrix. The data are centered and whitened internally.
pub fn fastica(data: &DMatrix<f64>, config: &IcaConfig) -> Result<IcaResult> {
    let (c, t) = data.shape();
    if c == 0 || t < 50 * c {
        return Err(Error::InsufficientData {
            needed: 50 * c,
            got: t,
        });
    }
    let white = whiten(data)?;
    let (rotation, iterations, final_delta) = match config.strategy {
        Strategy::Symmetric => ica_symmetric(&white.whitened, config)?,
        Strategy::Deflation => ica_deflation(&white.whitened, config)?,
    };
    let unmixing = &rotation * &white.whitening_matrix;
    let components = &rotation * &white.whitened;
    let component_kurtosis: Vec<f64> = components
        .row_iter()
        .map(|r| excess_kurtosis(&r.iter().copied().collect::<Vec<_>>()))
        .collect();
    let bound = gaussian_kurtosis_bound(t);
    let gaussian_components = component_kurtosis
        .iter()
        .filter(|k| k.abs() < bound)
        .count();
    Ok(IcaResult {
        unmixing,
        mean: white.mean,
        components,
        convergence: Convergence {
            iterations,
            final_delta,
            component_kurtosis,
            gaussian_components,
        },
    })
}

/// Warning text when every channel of `data` (`C x T`) looks Gaussian.
pub fn non_gaussianity_warning(data: &DMatrix<f64>) -> Option<String> {
    let kurt: Vec<f64> = data
        .row_iter()
        .map(|r| excess_kurtosis(&r.iter().copied().collect::<Vec<_>>()))
        .collect();
    if kurt.iter().all(|k| k.abs() < KURTOSIS_WARN_THRESHOLD) {
        Some(format!(
            "residuals look Gaussian (excess kurtosis {kurt:.3?}); structural factors are likely unidentifiable"
        ))
    } else {
        None
    }
}

/// Amari index of `P = W A`: 0 iff `P` is a scaled permutation matrix, at most 1.
pub fn amari_error(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    if n < 2 {
        return 0.0;
    }
    let a = p.abs();
    let rows: f64 = a.row_iter().map(|r| r.sum() / r.max() - 1.0).sum();
    let cols: f64 = a.column_iter().map(|c| c.sum() / c.max() - 1.0).sum();
    (rows + cols) / (2.0 * n as f64 * (n as f64 - 1.0))
}

/// Contemporaneous causal matrix `S0` with its causal order.
///
/// `s0[(i, j)]` is the effect of channel `j` on channel `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrix {
    pub s0: DMatrix<f64>,
    /// Channel indices, causes first.
    pub causal_order: Vec<usize>,
    pub pruned: bool,
}

impl StructuralMatrix {
    pub fn zeros(c: usize) -> Self {
        Self {
            s0: DMatrix::zeros(c, c),
            causal_order: (0..c).collect(),
            pruned: true,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.s0.nrows()
    }

    /// Squared mass of entries that point against `causal_order`.
    pub fn upper_mass(&self) -> f64 {
        upper_mass(&self.s0, &self.causal_order)
    }

    /// True when `s0` permuted by `causal_order` is strictly lower triangular.
    pub fn is_strictly_lower_in_order(&self) -> bool {
        strictly_lower_in_order(&self.s0, &self.causal_order)
    }

    /// Topological-sort check on the graph with an edge `j -> i` per nonzero `s0[(i, j)]`.
    pub fn is_acyclic(&self) -> bool {
        topological_order(&self.s0).is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_channels();
        if self.s0.ncols() != c {
            return Err(Error::InvalidModel("s0 must be square".into()));
        }
        if (0..c).any(|i| self.s0[(i, i)] != 0.0) {
            return Err(Error::InvalidModel("s0 diagonal must be zero".into()));
        }
        let mut sorted = self.causal_order.clone();
        sorted.sort_unstable();
        if sorted != (0..c).collect::<Vec<_>>() {
            return Err(Error::InvalidModel(
                "causal_order must be a permutation of channel indices".into(),
            ));
        }
        Ok(())
    }
}

/// True when `s0[(order[i], order[j])] == 0` for all `j >= i`.
pub fn strictly_lower_in_order(s0: &DMatrix<f64>, order: &[usize]) -> bool {
    (0..order.len()).all(|i| (i..order.len()).all(|j| s0[(order[i], order[j])] == 0.0))
}

/// Kahn's algorithm; `None` when the structural graph has a cycle.
pub fn topological_order(s0: &DMatrix<f64>) -> Option<Vec<usize>> {
    let c = s0.nrows();
    let mut indegree: Vec<usize> = (0..c)
        .map(|i| (0..c).filter(|&j| j != i && s0[(i, j)] != 0.0).count())
        .collect();
    let mut ready: VecDeque<usize> = (0..c).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(c);
    while let Some(j) = ready.pop_front() {
        order.push(j);
        for i in 0..c {
            if i != j && s0[(i, j)] != 0.0 {
                indegree[i] -= 1;
                if indegree[i] == 0 {
                    ready.push_back(i);
                }
            }
        }
    }
    (order.len() == c).then_some(order)
}

fn upper_mass(s0: &DMatrix<f64>, order: &[usize]) -> f64 {
    let mut mass = 0.0;
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            mass += s0[(order[i], order[j])].powi(2);
        }
    }
    mass
}

/// `perm[i]` is the row of `w` placed at position `i`, maximizing the diagonal.
fn diagonal_permutation(w: &DMatrix<f64>) -> Result<Vec<usize>> {
    let c = w.nrows();
    let best = if c <= EXHAUSTIVE_MAX_CHANNELS {
        let mut perm: Vec<usize> = (0..c).collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        loop {
            let cost: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let v = w[(r, i)].abs();
                    if v < DIAGONAL_FLOOR {
                        f64::INFINITY
                    } else {
                        1.0 / v
                    }
                })
                .sum();
            if cost.is_finite() && best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, perm.clone()));
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        best.map(|(_, p)| p)
    } else {
        // Rows to positions; a large finite cost stands in for forbidden cells.
        let cost = DMatrix::from_fn(c, c, |r, i| {
            let v = w[(r, i)].abs();
            if v < DIAGONAL_FLOOR {
                1e12
            } else {
                -v.ln()
            }
        });
        let assign = hungarian(&cost);
        let mut perm = vec![0; c];
        for (r, &i) in assign.iter().enumerate() {
            perm[i] = r;
        }
        Some(perm)
    };
    match best {
        Some(p)
            if p.iter()
                .enumerate()
                .all(|(i, &r)| w[(r, i)].abs() >= DIAGONAL_FLOOR) =>
        {
            Ok(p)
        }
        _ => Err(Error::PermutationDegenerate),
    }
}

/// Simultaneous row/column permutation of `s0` with the least squared mass above the diagonal.
fn causal_order_of(s0: &DMatrix<f64>) -> Vec<usize> {
    let c = s0.nrows();
    if c <= EXHAUSTIVE_MAX_CHANNELS {
        let mut perm: Vec<usize> = (0..c).collect();
        let mut best = (upper_mass(s0, &perm), perm.clone());
        while next_permutation(&mut perm) {
            let mass = upper_mass(s0, &perm);
            if mass < best.0 {
                best = (mass, perm.clone());
            }
        }
        return best.1;
    }
    // Greedy: repeatedly place the channel with the least incoming mass from
    // the channels not yet placed.
    let mut remaining: Vec<usize> = (0..c).collect();
    let mut order = Vec::with_capacity(c);
    while !remaining.is_empty() {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let incoming: f64 = remaining
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| s0[(i, j)].powi(2))
                    .sum();
                (pos, incoming)
            })
            .fold(
                (0, f64::INFINITY),
                |acc, cur| if cur.1 < acc.1 { cur } else { acc },
            );
        order.push(remaining.remove(pos));
    }
    order
}

/// LiNGAM step on an unmixing matrix `W` (rows = components).
pub fn lingam_from_unmixing(w: &DMatrix<f64>) -> Result<StructuralMatrix> {
    let c = w.nrows();
    if w.ncols() != c {
        return Err(Error::DimensionMismatch(
            "unmixing matrix must be square".into(),
        ));
    }
    let perm = diagonal_permutation(w)?;
    let mut s0 = DMatrix::zeros(c, c);
    for (i, &r) in perm.iter().enumerate() {
        let scale = w[(r, i)];
        for j in 0..c {
            let scaled = w[(r, j)] / scale;
            s0[(i, j)] = if i == j { 0.0 } else { -scaled };
        }
    }
    let causal_order = causal_order_of(&s0);
    Ok(StructuralMatrix {
        s0,
        causal_order,
        pruned: false,
    })
}

pub fn lingam_from_ica(ica: &IcaResult) -> Result<StructuralMatrix> {
    lingam_from_unmixing(&ica.unmixing)
}

/// Zeroes entries below `threshold` in magnitude, then every entry that points
/// against `causal_order`, leaving an acyclic structural graph.
pub fn prune_to_dag(s: &StructuralMatrix, threshold: f64) -> StructuralMatrix {
    let mut s0 = s.s0.map(|v| if v.abs() < threshold { 0.0 } else { v });
    let p = &s.causal_order;
    for i in 0..p.len() {
        s0[(p[i], p[i])] = 0.0;
        for j in i + 1..p.len() {
            s0[(p[i], p[j])] = 0.0;
        }
    }
    StructuralMatrix {
        s0,
        causal_order: s.causal_order.clone(),
        pruned: true,
    }
}
