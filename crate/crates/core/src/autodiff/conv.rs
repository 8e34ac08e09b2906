//! Periodic ("wrap-around") 2D convolution kernels.
//!
//! Padding is done by copying each plane into a buffer extended by its own
//! periodic images, which is equivalent to tiling the input and cropping.

/// Shape of a periodic convolution from `c_in` to `c_out` channels on
/// `h × w` planes with a square `k × k` kernel. Output position `(y, x)`
/// reads inputs at offsets `-p ..= k-1-p` with `p = (k-1)/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeometry {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    fn lead(&self) -> usize {
        (self.k - 1) / 2
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn padded(&self, src: &[f64], lo: usize) -> Vec<f64> {
        let (h, w, k) = (self.h, self.w, self.k);
        let pw = w + k - 1;
        let ph = h + k - 1;
        let mut out = vec![0.0; ph * pw];
        for py in 0..ph {
            let sy = (py + h * k - lo) % h;
            let row = &src[sy * w..(sy + 1) * w];
            let dst = &mut out[py * pw..(py + 1) * pw];
            for (px, d) in dst.iter_mut().enumerate() {
                *d = row[(px + w * k - lo) % w];
            }
        }
        out
    }

    /// `x: [B, c_in, h, w]` → `[B, c_out, h, w]`.
    pub fn forward(&self, x: &[f64], weight: &[f64]) -> Vec<f64> {
        let (k, w, plane) = (self.k, self.w, self.plane());
        let pw = w + k - 1;
        let mut out = vec![0.0; self.batch * self.c_out * plane];
        for b in 0..self.batch {
            let pads: Vec<Vec<f64>> = (0..self.c_in)
                .map(|ci| {
                    let off = (b * self.c_in + ci) * plane;
                    self.padded(&x[off..off + plane], self.lead())
                })
                .collect();
            for co in 0..self.c_out {
                let off = (b * self.c_out + co) * plane;
                let dst = &mut out[off..off + plane];
                for (ci, pad) in pads.iter().enumerate() {
                    let wbase = (co * self.c_in + ci) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = weight[wbase + ky * k + kx];
                            for y in 0..self.h {
                                let src = &pad[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                                let d = &mut dst[y * w..(y + 1) * w];
                                for (o, s) in d.iter_mut().zip(src) {
                                    *o += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`forward`](Self::forward) with respect to its input:
    /// `g: [B, c_out, h, w]` → `[B, c_in, h, w]`.
    pub fn adjoint(&self, g: &[f64], weight: &[f64]) -> Vec<f64> {
        let (k, w, plane) = (self.k, self.w, self.plane());
        let pw = w + k - 1;
        let lo = k - 1 - self.lead();
        let mut out = vec![0.0; self.batch * self.c_in * plane];
        for b in 0..self.batch {
            let pads: Vec<Vec<f64>> = (0..self.c_out)
                .map(|co| {
                    let off = (b * self.c_out + co) * plane;
                    self.padded(&g[off..off + plane], lo)
                })
                .collect();
            for ci in 0..self.c_in {
                let off = (b * self.c_in + ci) * plane;
                let dst = &mut out[off..off + plane];
                for (co, pad) in pads.iter().enumerate() {
                    let wbase = (co * self.c_in + ci) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = weight[wbase + ky * k + kx];
                            let (sy, sx) = (k - 1 - ky, k - 1 - kx);
                            for y in 0..self.h {
                                let src = &pad[(y + sy) * pw + sx..(y + sy) * pw + sx + w];
                                let d = &mut dst[y * w..(y + 1) * w];
                                for (o, s) in d.iter_mut().zip(src) {
                                    *o += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Gradient of `Σ out_like · forward(in_like, W)` with respect to `W`,
    /// where `out_like` has `c_out` channels and `in_like` has `c_in`.
    pub fn weight_grad(&self, out_like: &[f64], in_like: &[f64]) -> Vec<f64> {
        let (k, w, plane) = (self.k, self.w, self.plane());
        let pw = w + k - 1;
        let mut gw = vec![0.0; self.weight_len()];
        for b in 0..self.batch {
            let pads: Vec<Vec<f64>> = (0..self.c_in)
                .map(|ci| {
                    let off = (b * self.c_in + ci) * plane;
                    self.padded(&in_like[off..off + plane], self.lead())
                })
                .collect();
            for co in 0..self.c_out {
                let off = (b * self.c_out + co) * plane;
                let o = &out_like[off..off + plane];
                for (ci, pad) in pads.iter().enumerate() {
                    let wbase = (co * self.c_in + ci) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0;
                            for y in 0..self.h {
                                let src = &pad[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                                let orow = &o[y * w..(y + 1) * w];
                                for (a, s) in orow.iter().zip(src) {
                                    acc += a * s;
                                }
                            }
                            gw[wbase + ky * k + kx] += acc;
                        }
                    }
                }
            }
        }
        gw
    }

    pub fn add_bias(&self, out: &mut [f64], bias: &[f64], channels: usize) {
        let plane = self.plane();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = bias[i % channels];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }

    pub fn bias_grad(&self, g: &[f64], channels: usize) -> Vec<f64> {
        let mut gb = vec![0.0; channels];
        for (i, chunk) in g.chunks(self.plane()).enumerate() {
            gb[i % channels] += chunk.iter().sum::<f64>();
        }
        gb
    }
}
