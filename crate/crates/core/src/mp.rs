//! The Marchenko-Pastur law and conformance of empirical spectra to it.
//!
//! For an N×T matrix of i.i.d. zero-mean entries with variance σ² and
//! aspect ratio c = N/T ∈ (0, 1], the eigenvalue distribution of the sample
//! covariance (1/T)·X·Xᵀ converges to a law supported on
//! [σ²(1−√c)², σ²(1+√c)²]. Eigenvalues isolated above the upper edge are
//! treated as signal spikes; the rest form the noise bulk.

use std::f64::consts::PI;

use thiserror::Error;

/// Default multiplicative margin over the upper edge used to absorb
/// finite-size fluctuation when flagging spikes.
pub const DEFAULT_SPIKE_MARGIN: f64 = 0.02;

/// Panel count for the distribution-function quadrature.
const CDF_PANELS: usize = 10_000;

#[derive(Debug, Error)]
pub enum MpError {
    #[error("aspect ratio must satisfy 0 < c <= 1, got {0}")]
    InvalidAspectRatio(f64),
    #[error("variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("empty spectrum")]
    EmptySpectrum,
    #[error("spectrum contains a negative or non-finite eigenvalue: {0}")]
    InvalidEigenvalue(f64),
    #[error("spike margin must be nonnegative and finite, got {0}")]
    InvalidMargin(f64),
}

/// The Marchenko-Pastur distribution for aspect ratio `c` and variance
/// `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpLaw {
    c: f64,
    sigma2: f64,
    a: f64,
    b: f64,
}

impl MpLaw {
    pub fn new(c: f64, sigma2: f64) -> Result<Self, MpError> {
        if !(c > 0.0 && c <= 1.0) || !c.is_finite() {
            return Err(MpError::InvalidAspectRatio(c));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(MpError::InvalidVariance(sigma2));
        }
        let sq = c.sqrt();
        Ok(MpLaw {
            c,
            sigma2,
            a: sigma2 * (1.0 - sq) * (1.0 - sq),
            b: sigma2 * (1.0 + sq) * (1.0 + sq),
        })
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.c
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Lower spectral edge σ²(1−√c)².
    pub fn lower_edge(&self) -> f64 {
        self.a
    }

    /// Upper spectral edge σ²(1+√c)².
    pub fn upper_edge(&self) -> f64 {
        self.b
    }

    /// Probability density at `x`: √((b−x)(x−a)) / (2π·c·σ²·x) inside the
    /// support, zero outside (and at the edges, where the root vanishes).
    pub fn pdf(&self, x: f64) -> f64 {
        if !(x > self.a && x < self.b) {
            return 0.0;
        }
        ((self.b - x) * (x - self.a)).max(0.0).sqrt() / (2.0 * PI * self.c * self.sigma2 * x)
    }

    /// Distribution function at `x`, by composite Simpson quadrature after
    /// the edge-smoothing substitution x = a + (b−a)·sin²(u).
    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_with_panels(x, CDF_PANELS)
    }

    fn cdf_with_panels(&self, x: f64, panels: usize) -> f64 {
        if x <= self.a {
            return 0.0;
        }
        if x >= self.b {
            return 1.0;
        }
        let width = self.b - self.a;
        let frac = ((x - self.a) / width).clamp(0.0, 1.0);
        let upper = frac.sqrt().asin();
        // After the substitution the integrand is smooth on [0, u_x]:
        //   general: (b−a)²·sin²(2u) / (4π·c·σ²·(a + (b−a)·sin²u))
        //   a = 0 (c = 1): the sin²u cancels, leaving b·cos²u / (π·c·σ²).
        let g: Box<dyn Fn(f64) -> f64> = if self.a == 0.0 {
            let k = self.b / (PI * self.c * self.sigma2);
            Box::new(move |u: f64| k * u.cos() * u.cos())
        } else {
            let k = width * width / (4.0 * PI * self.c * self.sigma2);
            let a = self.a;
            Box::new(move |u: f64| {
                let s = u.sin();
                let s2 = (2.0 * u).sin();
                k * s2 * s2 / (a + width * s * s)
            })
        };
        simpson(g.as_ref(), 0.0, upper, panels).min(1.0)
    }

    /// An (x, pdf(x)) table over the support, suitable for overlaying on an
    /// eigenvalue histogram.
    pub fn density_grid(&self, points: usize) -> Vec<(f64, f64)> {
        let n = points.max(2);
        (0..n)
            .map(|i| {
                let x = self.a + (self.b - self.a) * i as f64 / (n - 1) as f64;
                (x, self.pdf(x))
            })
            .collect()
    }
}

/// Composite Simpson rule with `panels` subintervals (made even).
fn simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let n = if panels % 2 == 0 { panels } else { panels + 1 };
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * i as f64);
    }
    acc * h / 3.0
}

/// Partition of an empirical spectrum into Marchenko-Pastur bulk and
/// spikes, with the sup-distance of the bulk from the law.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFit {
    /// Eigenvalues at or below the spike threshold, ascending.
    pub bulk_eigenvalues: Vec<f64>,
    /// Eigenvalues above the spike threshold, ascending.
    pub spike_eigenvalues: Vec<f64>,
    /// Two-sided sup distance between the bulk empirical distribution
    /// function and the law's distribution function; 1.0 if the bulk is
    /// empty.
    pub ks_distance: f64,
    /// b·(1 + spike_margin).
    pub spike_threshold: f64,
}

impl SpectrumFit {
    pub fn spike_count(&self) -> usize {
        self.spike_eigenvalues.len()
    }
}

/// Splits `eigenvalues` at b·(1 + spike_margin) and measures bulk
/// conformance to `law`.
pub fn fit_spectrum(
    eigenvalues: &[f64],
    law: &MpLaw,
    spike_margin: f64,
) -> Result<SpectrumFit, MpError> {
    if eigenvalues.is_empty() {
        return Err(MpError::EmptySpectrum);
    }
    if !(spike_margin >= 0.0) || !spike_margin.is_finite() {
        return Err(MpError::InvalidMargin(spike_margin));
    }
    if let Some(&bad) = eigenvalues.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(MpError::InvalidEigenvalue(bad));
    }
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = law.upper_edge() * (1.0 + spike_margin);
    let split = sorted.partition_point(|v| *v <= threshold);
    let (bulk, spikes) = sorted.split_at(split);

    let n = bulk.len();
    let mut ks: f64 = if n == 0 { 1.0 } else { 0.0 };
    for (i, v) in bulk.iter().enumerate() {
        let f = law.cdf(*v);
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        ks = ks.max((hi - f).abs()).max((lo - f).abs());
    }

    Ok(SpectrumFit {
        bulk_eigenvalues: bulk.to_vec(),
        spike_eigenvalues: spikes.to_vec(),
        ks_distance: ks,
        spike_threshold: threshold,
    })
}
