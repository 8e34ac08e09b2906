//! Orthonormal 2D FFT on square periodic grids.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Residual imaginary parts above this after an inverse transform of a
/// Hermitian spectrum indicate a bug.
pub const IMAG_RESIDUE: f64 = 1e-10;

/// Forward and inverse transforms for `d × d` row-major fields, scaled by
/// `1/d` each way so Parseval holds without extra factors.
#[derive(Clone)]
pub struct Fft2 {
    d: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("d", &self.d).finish()
    }
}

impl Fft2 {
    pub fn new(d: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            d,
            forward: planner.plan_fft_forward(d),
            inverse: planner.plan_fft_inverse(d),
        }
    }

    pub fn size(&self) -> usize {
        self.d
    }

    pub fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Inverse transform into `buf`, in place.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.inverse);
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let d = self.d;
        assert_eq!(buf.len(), d * d, "field is not {d}x{d}");
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        let mut col = vec![Complex64::default(); d];
        for j in 0..d {
            for i in 0..d {
                col[i] = buf[i * d + j];
            }
            plan.process_with_scratch(&mut col, &mut scratch);
            for i in 0..d {
                buf[i * d + j] = col[i];
            }
        }
        let s = 1.0 / d as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }
}

/// Absolute wavenumber of index `i` on a periodic axis of length `d`.
pub fn wavenumber(i: usize, d: usize) -> usize {
    i.min(d - i)
}
