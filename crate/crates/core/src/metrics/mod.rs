//! Evaluation metrics: the two-mode posterior metric, reconstruction error
//! by forward re-simulation, radial power spectra and score-field error.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InferenceResult;
use crate::physics::spectral::{wavenumber, Fft2};
use crate::score::ScoreField;
use crate::sde::{is_divergent, SdeSpec, TimeGrid};
use crate::tensor::Tensor;

/// Relative distance within which an endpoint takes the label of a mode.
pub const Q_TOLERANCE: f64 = 0.1;

/// Spectral bins at or below this wavenumber carry unit weight.
pub const SPECTRAL_CUTOFF: usize = 10;

/// Lower bound applied to spectral bins before taking logarithms.
pub const SPECTRUM_FLOOR: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QReport {
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub q: f64,
    pub n: usize,
    pub n_divergent: usize,
}

impl QReport {
    pub fn unlabeled(&self) -> f64 {
        1.0 - self.rho_minus - self.rho_plus
    }
}

/// Labels each endpoint `−1` or `+1` when it lies within `tolerance`
/// (relative) of that mode; `None` marks a divergent trajectory, which
/// stays unlabeled but counts in the denominator.
pub fn posterior_metric_q(endpoints: &[Option<f64>], tolerance: f64) -> Result<QReport> {
    if endpoints.is_empty() {
        return Err(Error::invalid("posterior metric of an empty endpoint list"));
    }
    let (mut minus, mut plus, mut divergent) = (0usize, 0usize, 0usize);
    for e in endpoints {
        match e {
            None => divergent += 1,
            Some(x) if (x + 1.0).abs() < tolerance => minus += 1,
            Some(x) if (x - 1.0).abs() < tolerance => plus += 1,
            Some(_) => {}
        }
    }
    let n = endpoints.len() as f64;
    let (rho_minus, rho_plus) = (minus as f64 / n, plus as f64 / n);
    Ok(QReport { rho_minus, rho_plus, q: 2.0 * rho_minus.min(rho_plus), n: endpoints.len(), n_divergent: divergent })
}

/// Scalar endpoints of 1D inference results, `None` for divergent ones.
pub fn endpoints_1d(results: &[InferenceResult]) -> Vec<Option<f64>> {
    results.iter().map(|r| if r.is_divergent() { None } else { Some(r.endpoint()[0]) }).collect()
}

/// Fraction of trajectories with any state outside `[lo, hi]` or divergent.
pub fn escape_fraction(results: &[InferenceResult], lo: f64, hi: f64) -> f64 {
    let out = results
        .iter()
        .filter(|r| r.is_divergent() || r.trajectory.data().iter().any(|&v| v < lo || v > hi))
        .count();
    out as f64 / results.len().max(1) as f64
}

/// Runs `x0` forward without noise over `grid` and returns the mean squared
/// difference to `x_end_ref`.
pub fn reconstruction_mse(x0: &[f64], x_end_ref: &[f64], spec: &dyn SdeSpec, grid: &TimeGrid) -> Result<f64> {
    if x0.len() != spec.dim() || x_end_ref.len() != spec.dim() {
        return Err(Error::ShapeMismatch { op: "reconstruction_mse", lhs: vec![x0.len(), x_end_ref.len()], rhs: vec![spec.dim()] });
    }
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    for m in 0..grid.steps {
        spec.advance(&x, grid.dt, &mut next);
        if is_divergent(&next) {
            return Err(Error::Divergence { step: m, detail: "forward re-simulation of a reconstruction".into() });
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(x.iter().zip(x_end_ref).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

/// Power per radial wavenumber bin of a square field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumProfile {
    /// Mean `|F|²` of the pixels in each bin; empty bins hold 0.
    pub power: Vec<f64>,
    pub counts: Vec<usize>,
}

impl SpectrumProfile {
    pub fn bins(&self) -> usize {
        self.power.len()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().zip(&self.counts).map(|(p, &c)| p * c as f64).sum()
    }

    /// Bin-wise mean over several profiles of equal length.
    pub fn mean(profiles: &[SpectrumProfile]) -> Result<SpectrumProfile> {
        let first = profiles.first().ok_or_else(|| Error::invalid("mean of no spectra"))?;
        let mut power = vec![0.0; first.bins()];
        for p in profiles {
            if p.bins() != power.len() {
                return Err(Error::ShapeMismatch { op: "spectrum mean", lhs: vec![p.bins()], rhs: vec![power.len()] });
            }
            power.iter_mut().zip(&p.power).for_each(|(a, b)| *a += b / profiles.len() as f64);
        }
        Ok(SpectrumProfile { power, counts: first.counts.clone() })
    }
}

/// Radial bin of every pixel of the shifted spectrum of a `d × d` field:
/// the rounded distance to the zero frequency.
pub fn radial_bins(d: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let (ki, kj) = (wavenumber(i, d) as f64, wavenumber(j, d) as f64);
            out.push((ki * ki + kj * kj).sqrt().round() as usize);
        }
    }
    out
}

/// Radially averaged `|F(x)|²` of a square field under the orthonormal FFT.
/// Bins run up to the corner radius so every pixel is counted.
pub fn radial_spectrum(field: &[f64]) -> Result<SpectrumProfile> {
    let d = (field.len() as f64).sqrt().round() as usize;
    if d * d != field.len() || d == 0 {
        return Err(Error::invalid(format!("{} values do not form a square field", field.len())));
    }
    let f = Fft2::new(d).forward(field);
    let bins = radial_bins(d);
    let nb = bins.iter().max().copied().unwrap_or(0) + 1;
    let mut sum = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    for (c, &b) in f.iter().zip(&bins) {
        sum[b] += c.norm_sqr();
        counts[b] += 1;
    }
    let power = sum.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
    Ok(SpectrumProfile { power, counts })
}

/// Unit weights on bins `0..=SPECTRAL_CUTOFF`, zero above.
pub fn default_spectral_weights(bins: usize) -> Vec<f64> {
    (0..bins).map(|k| if k <= SPECTRAL_CUTOFF { 1.0 } else { 0.0 }).collect()
}

/// `Σ_k w_k·|log s1_k − log s2_k|` with bins floored at [`SPECTRUM_FLOOR`].
pub fn spectral_loss(s1: &SpectrumProfile, s2: &SpectrumProfile, weights: &[f64]) -> Result<f64> {
    if s1.bins() != s2.bins() || weights.len() != s1.bins() {
        return Err(Error::ShapeMismatch { op: "spectral_loss", lhs: vec![s1.bins(), s2.bins()], rhs: vec![weights.len()] });
    }
    Ok(s1
        .power
        .iter()
        .zip(&s2.power)
        .zip(weights)
        .map(|((a, b), w)| w * (a.max(SPECTRUM_FLOOR).ln() - b.max(SPECTRUM_FLOOR).ln()).abs())
        .sum())
}

/// Spectral loss between two fields with the default weights.
pub fn field_spectral_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    let (sa, sb) = (radial_spectrum(a)?, radial_spectrum(b)?);
    spectral_loss(&sa, &sb, &default_spectral_weights(sa.bins()))
}

/// Mean over samples `(x_i, t_i)` of `|s(x_i, t_i)/g(t_i)² − ∇log p(x_i, t_i)|²/D`,
/// where `model` follows the `g²·∇log p` convention. Drawing the samples
/// from `p_t` makes this a density-weighted error.
pub fn score_field_error<F>(model: &dyn ScoreField, analytic: F, spec: &dyn SdeSpec, x: &Tensor, t: &[f64]) -> Result<f64>
where
    F: Fn(&[f64], f64, &mut [f64]) -> Result<()> + Sync,
{
    if t.iter().any(|&ti| !(ti > 0.0)) {
        return Err(Error::invalid("score error needs t > 0"));
    }
    let s = crate::inference::eval_parallel(model, x, t)?;
    let d = x.row_len();
    let errs: Vec<Result<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|r| {
            let g2 = spec.diffusion(t[r]).powi(2);
            let mut a = vec![0.0; d];
            analytic(x.row(r), t[r], &mut a)?;
            Ok(s.row(r).iter().zip(&a).map(|(sv, av)| (sv / g2 - av).powi(2)).sum::<f64>() / d as f64)
        })
        .collect();
    let errs = errs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One line of a metric report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub std: f64,
}

impl MetricRow {
    pub fn new(experiment: impl Into<String>, metric: impl Into<String>, value: f64, n: usize, std: f64) -> Self {
        Self { experiment: experiment.into(), metric: metric.into(), value, n, std }
    }

    /// Row carrying the mean and standard deviation of `values`.
    pub fn from_values(experiment: impl Into<String>, metric: impl Into<String>, values: &[f64]) -> Self {
        let (m, s) = mean_std(values);
        Self::new(experiment, metric, m, values.len(), s)
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], w: &mut W) -> Result<()> {
    writeln!(w, "experiment,metric,value,n,std")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.experiment, r.metric, r.value, r.n, r.std)?;
    }
    Ok(())
}

pub fn save_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_metrics_csv(rows, &mut f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
