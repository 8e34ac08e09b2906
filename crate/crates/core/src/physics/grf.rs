//! Gaussian random fields with isotropic power-law spectra.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral::{wavenumber, Fft2};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::sde::InitialSampler;

/// Shape of the power spectrum `P(|k|)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GrfSpectrum {
    /// `P ∝ |k|^(−n)` for `k ≠ 0`.
    #[default]
    PowerLaw,
    /// `P ∝ (1 + |k|)^(−n)`.
    ShiftedPowerLaw,
}

/// Samples a `d × d` field whose power spectrum follows `spectrum`,
/// then rescales it to zero mean and unit standard deviation.
pub fn sample_grf(d: usize, exponent: f64, spectrum: GrfSpectrum, rng: &mut Rng) -> Result<Vec<f64>> {
    if d < 4 || !(exponent > 0.0) {
        return Err(Error::invalid(format!("GRF needs d >= 4 and n > 0 (d={d}, n={exponent})")));
    }
    let fft = Fft2::new(d);
    let mut coeffs = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let (ki, kj) = (wavenumber(i, d) as f64, wavenumber(j, d) as f64);
            let k = (ki * ki + kj * kj).sqrt();
            let amp = if k == 0.0 {
                0.0
            } else {
                match spectrum {
                    GrfSpectrum::PowerLaw => k.powf(-exponent / 2.0),
                    GrfSpectrum::ShiftedPowerLaw => (1.0 + k).powf(-exponent / 2.0),
                }
            };
            let (re, im) = (rng::normal(rng), rng::normal(rng));
            coeffs.push(Complex64::new(re, im) * amp);
        }
    }
    // The real part of the inverse transform equals the inverse transform of
    // the Hermitian-symmetrized coefficients.
    let mut field = fft.inverse_real(coeffs);
    normalize(&mut field);
    Ok(field)
}

fn normalize(field: &mut [f64]) {
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    field.iter_mut().for_each(|v| *v -= mean);
    let std = (field.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if std > 0.0 {
        field.iter_mut().for_each(|v| *v /= std);
    }
    let mean = field.iter().sum::<f64>() / n;
    field.iter_mut().for_each(|v| *v -= mean);
}

/// Initial-state sampler drawing GRFs.
#[derive(Clone, Copy, Debug)]
pub struct GrfSampler {
    pub d: usize,
    pub exponent: f64,
    pub spectrum: GrfSpectrum,
}

impl InitialSampler for GrfSampler {
    fn sample(&self, rng: &mut Rng, out: &mut [f64]) {
        let f = sample_grf(self.d, self.exponent, self.spectrum, rng).expect("validated GRF parameters");
        out.copy_from_slice(&f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;

    /// Radially binned mean power, computed independently of the metrics module.
    fn radial_power(field: &[f64], d: usize) -> Vec<f64> {
        let spec = Fft2::new(d).forward(field);
        let mut sum = vec![0.0; d];
        let mut count = vec![0usize; d];
        for i in 0..d {
            for j in 0..d {
                let (ki, kj) = (wavenumber(i, d) as f64, wavenumber(j, d) as f64);
                let k = (ki * ki + kj * kj).sqrt().round() as usize;
                if k < d {
                    sum[k] += spec[i * d + j].norm_sqr();
                    count[k] += 1;
                }
            }
        }
        sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
    }

    #[test]
    fn spectrum_slope_is_minus_n() {
        let d = 32;
        let mut avg = vec![0.0; d];
        for s in 0..100 {
            let mut rng = rng::stream(5, Domain::Misc, s);
            let f = sample_grf(d, 4.0, GrfSpectrum::PowerLaw, &mut rng).unwrap();
            for (a, p) in avg.iter_mut().zip(radial_power(&f, d)) {
                *a += p / 100.0;
            }
        }
        let ks: Vec<f64> = (2..=10).map(|k| (k as f64).ln()).collect();
        let ps: Vec<f64> = (2..=10).map(|k| avg[k].ln()).collect();
        let slope = crate::sde::fit_slope(&ks, &ps);
        assert!((slope + 4.0).abs() < 0.5, "slope {slope}");
    }

    #[test]
    fn normalized_and_deterministic() {
        for spectrum in [GrfSpectrum::PowerLaw, GrfSpectrum::ShiftedPowerLaw] {
            let f = sample_grf(16, 4.0, spectrum, &mut rng::stream(1, Domain::Misc, 0)).unwrap();
            let g = sample_grf(16, 4.0, spectrum, &mut rng::stream(1, Domain::Misc, 0)).unwrap();
            assert_eq!(f, g);
            let mean = f.iter().sum::<f64>() / 256.0;
            let std = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 256.0).sqrt();
            assert!(mean.abs() < 1e-12);
            assert!((std - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = rng::stream(0, Domain::Misc, 0);
        assert!(sample_grf(3, 4.0, GrfSpectrum::PowerLaw, &mut rng).is_err());
        assert!(sample_grf(8, 0.0, GrfSpectrum::PowerLaw, &mut rng).is_err());
    }
}
