//! High-dimensional factor model estimation by principal components.
//!
//! The observed matrix is modeled as R = L·F + U: a rank-p common component
//! plus idiosyncratic noise. Removing the top p principal components leaves
//! the p-level residual Û⁽ᵖ⁾ = R − L̂⁽ᵖ⁾·F̂⁽ᵖ⁾ whose covariance spectrum is
//! compared against the Marchenko-Pastur law; the selected factor count is
//! the smallest p whose residual spectrum has no eigenvalue above the bulk
//! edge.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::data::{DataError, DataMatrix};
use crate::mp::{fit_spectrum, MpError, MpLaw, SpectrumFit};

pub use crate::mp::DEFAULT_SPIKE_MARGIN;

/// Default number of mean-pooled segments per temporal factor.
pub const DEFAULT_POOL_LENGTH: usize = 50;

/// Default factor frequencies (cycles per sample) for synthetic data.
pub const DEFAULT_FREQUENCIES: [f64; 3] = [0.02, 0.01, 0.005];

#[derive(Debug, Error)]
pub enum FactorError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mp(#[from] MpError),
    #[error("factor count {p} exceeds min(N, T) = {max}")]
    TooManyFactors { p: usize, max: usize },
    #[error("factor count must be at least 1 for feature extraction")]
    ZeroFactorFeatures,
    #[error("pool length {pool} exceeds the {t} time samples")]
    PoolTooLong { pool: usize, t: usize },
    #[error("pool length must be at least 1")]
    ZeroPool,
    #[error("matrix has no usable rows or columns")]
    EmptyData,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// The result of p-level factor removal.
#[derive(Debug, Clone)]
pub struct FactorFit {
    /// Number of principal components removed.
    pub p: usize,
    /// N'×p loadings (left singular vectors scaled by singular values).
    pub loadings: DMatrix<f64>,
    /// p×T temporal factors (right singular vectors).
    pub factors: DMatrix<f64>,
    /// N'×T residual Û⁽ᵖ⁾ of the demeaned input.
    pub residuals: DMatrix<f64>,
    /// Eigenvalues of Ĉ⁽ᵖ⁾ = Û·Ûᵀ/T, ascending, clamped at zero.
    pub residual_spectrum: Vec<f64>,
    /// trace(Ĉ⁽ᵖ⁾)/N′, the residual-variance estimate.
    pub sigma2_hat: f64,
    /// Bulk/spike split of the residual spectrum against
    /// MpLaw(N′/T, sigma2_hat); `None` when the residual variance is
    /// numerically zero or N′ > T.
    pub fit: Option<SpectrumFit>,
    /// Original indices of rows dropped for having zero variance.
    pub dropped_rows: Vec<usize>,
}

impl FactorFit {
    /// Spikes above the bulk edge; zero when there was nothing to fit.
    pub fn spike_count(&self) -> usize {
        self.fit.as_ref().map_or(0, SpectrumFit::spike_count)
    }

    pub fn ks_distance(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.ks_distance)
    }
}

fn demeaned_retained(data: &DataMatrix) -> Result<(DMatrix<f64>, Vec<usize>), FactorError> {
    let values = data.values();
    let (n, t) = (values.nrows(), values.ncols());
    if n == 0 || t == 0 {
        return Err(FactorError::EmptyData);
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut dropped = Vec::new();
    for r in 0..n {
        let mean = values.row(r).sum() / t as f64;
        let centered: Vec<f64> = (0..t).map(|c| values[(r, c)] - mean).collect();
        let sumsq: f64 = centered.iter().map(|v| v * v).sum();
        let floor = 1e-12 * (1.0 + mean.abs());
        if sumsq <= floor * floor * t as f64 {
            dropped.push(r);
        } else {
            rows.push(centered);
        }
    }
    if rows.is_empty() {
        return Err(FactorError::EmptyData);
    }
    let kept = rows.len();
    let x = DMatrix::from_fn(kept, t, |i, j| rows[i][j]);
    Ok((x, dropped))
}

/// Eigenvalues (descending) and sign-canonicalized eigenvectors of a
/// symmetric matrix. Ties keep the decomposition routine's column order;
/// each eigenvector's largest-magnitude entry is made positive.
fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        let mut arg = 0usize;
        for i in 1..n {
            if v[i].abs() > v[arg].abs() {
                arg = i;
            }
        }
        if v[arg] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Removes the top `p` principal components from the (internally demeaned)
/// data and fits the residual spectrum against the Marchenko-Pastur law.
pub fn remove_factors(
    data: &DataMatrix,
    p: usize,
    spike_margin: f64,
) -> Result<FactorFit, FactorError> {
    let (x, dropped) = demeaned_retained(data)?;
    let (n, t) = (x.nrows(), x.ncols());
    if p > n.min(t) {
        return Err(FactorError::TooManyFactors { p, max: n.min(t) });
    }

    let cov = (&x * x.transpose()) / t as f64;
    let (eigvals, eigvecs) = sorted_symmetric_eigen(cov);

    let u_p = eigvecs.columns(0, p).clone_owned();
    let singulars: Vec<f64> = eigvals[..p]
        .iter()
        .map(|&l| (l.max(0.0) * t as f64).sqrt())
        .collect();
    let mut loadings = DMatrix::zeros(n, p);
    for j in 0..p {
        loadings.set_column(j, &(u_p.column(j) * singulars[j]));
    }
    let projected = u_p.transpose() * &x; // p×T
    let mut factors = DMatrix::zeros(p, t);
    for j in 0..p {
        if singulars[j] > 0.0 {
            factors.set_row(j, &(projected.row(j) / singulars[j]));
        }
    }
    let residuals = &x - &u_p * projected;

    let res_cov = (&residuals * residuals.transpose()) / t as f64;
    let sigma2_hat = res_cov.trace() / n as f64;
    let (mut spectrum, _) = sorted_symmetric_eigen(res_cov);
    spectrum.reverse(); // ascending
    for v in &mut spectrum {
        *v = v.max(0.0);
    }

    let c = n as f64 / t as f64;
    // a residual variance at rounding level of the input is "zero":
    // fitting a law to cancellation noise is meaningless
    let total_var = eigvals.iter().map(|l| l.max(0.0)).sum::<f64>() / n as f64;
    let fit = if sigma2_hat > 1e-20 * total_var && c <= 1.0 {
        let law = MpLaw::new(c, sigma2_hat)?;
        Some(fit_spectrum(&spectrum, &law, spike_margin)?)
    } else {
        None
    };

    Ok(FactorFit {
        p,
        loadings,
        factors,
        residuals,
        residual_spectrum: spectrum,
        sigma2_hat,
        fit,
        dropped_rows: dropped,
    })
}

/// Outcome of the iterative factor-count search.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// Smallest p with a spike-free residual spectrum, or `p_max` if none
    /// qualified.
    pub p_star: usize,
    /// False when the search hit `p_max` without the spikes disappearing.
    pub converged: bool,
    /// Fits for p = 0, 1, … up to and including the stopping point.
    pub fits: Vec<FactorFit>,
}

/// Default search ceiling: min(N, T)/4, capped at 50.
pub fn default_p_max(n: usize, t: usize) -> usize {
    (n.min(t) / 4).min(50)
}

/// Removes factors for p = 0, 1, 2, … until the residual spectrum has no
/// spike above the bulk edge, returning every intermediate fit.
pub fn select_factor_count(
    data: &DataMatrix,
    p_max: usize,
    spike_margin: f64,
) -> Result<SelectionResult, FactorError> {
    let mut fits = Vec::new();
    for p in 0..=p_max {
        let fit = remove_factors(data, p, spike_margin)?;
        let spikes = fit.spike_count();
        fits.push(fit);
        if spikes == 0 {
            return Ok(SelectionResult {
                p_star: p,
                converged: true,
                fits,
            });
        }
    }
    Ok(SelectionResult {
        p_star: p_max,
        converged: false,
        fits,
    })
}

/// Recipe for R = L·F + U with sinusoidal factors and standard-normal
/// loadings and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    pub p_true: usize,
    /// Factor frequencies in cycles per sample, one per factor.
    pub frequencies: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 400,
            t: 1000,
            p_true: 3,
            frequencies: DEFAULT_FREQUENCIES.to_vec(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), FactorError> {
        if self.n < 2 || self.t < 2 {
            return Err(FactorError::InvalidSpec(format!(
                "dimensions {}x{} too small",
                self.n, self.t
            )));
        }
        if self.frequencies.len() != self.p_true {
            return Err(FactorError::InvalidSpec(format!(
                "{} frequencies for {} factors",
                self.frequencies.len(),
                self.p_true
            )));
        }
        for (i, &f) in self.frequencies.iter().enumerate() {
            if !(f > 0.0 && f < 0.5) {
                return Err(FactorError::InvalidSpec(format!(
                    "frequency {f} not in (0, 0.5)"
                )));
            }
            if self.frequencies[..i].contains(&f) {
                return Err(FactorError::InvalidSpec(format!("duplicate frequency {f}")));
            }
        }
        Ok(())
    }
}

/// Draws R = L·F + U from the seeded generator: L and U i.i.d. standard
/// normal (L first, then U, both row-major), F_jt = sin(2π·f_j·t) for
/// t = 1..T. Returns the data and the true factors.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DataMatrix, DMatrix<f64>), FactorError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |rows: usize, cols: usize| {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        m
    };
    let loadings = draw(spec.n, spec.p_true);
    let noise = draw(spec.n, spec.t);
    let factors = DMatrix::from_fn(spec.p_true, spec.t, |j, t| {
        (std::f64::consts::TAU * spec.frequencies[j] * (t + 1) as f64).sin()
    });
    let data = &loadings * &factors + noise;
    Ok((DataMatrix::from_synthetic(data)?, factors))
}

/// Mean-pools each of a fit's temporal factor rows into `pool_length`
/// segments, fixes each pooled row's sign so its largest-magnitude entry is
/// positive, and concatenates.
pub fn pool_factor_rows(fit: &FactorFit, pool_length: usize) -> Result<Vec<f64>, FactorError> {
    let t = fit.factors.ncols();
    if pool_length == 0 {
        return Err(FactorError::ZeroPool);
    }
    if t < pool_length {
        return Err(FactorError::PoolTooLong { pool: pool_length, t });
    }
    let mut out = Vec::with_capacity(fit.p * pool_length);
    for j in 0..fit.p {
        let mut pooled = Vec::with_capacity(pool_length);
        for s in 0..pool_length {
            let lo = s * t / pool_length;
            let hi = (s + 1) * t / pool_length;
            let sum: f64 = (lo..hi).map(|c| fit.factors[(j, c)]).sum();
            pooled.push(sum / (hi - lo) as f64);
        }
        let mut arg = 0usize;
        for i in 1..pool_length {
            if pooled[i].abs() > pooled[arg].abs() {
                arg = i;
            }
        }
        if pooled[arg] < 0.0 {
            for v in &mut pooled {
                *v = -*v;
            }
        }
        out.extend(pooled);
    }
    Ok(out)
}

/// Removes `p` factors and pools their temporal rows into a
/// p·pool_length feature vector.
pub fn extract_features(
    data: &DataMatrix,
    p: usize,
    pool_length: usize,
) -> Result<Vec<f64>, FactorError> {
    if p == 0 {
        return Err(FactorError::ZeroFactorFeatures);
    }
    let fit = remove_factors(data, p, DEFAULT_SPIKE_MARGIN)?;
    pool_factor_rows(&fit, pool_length)
}
