//! Linear 2-D convolution with a fixed kernel through zero-padded FFTs.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Smallest 5-smooth integer >= n.
fn good_size(n: usize) -> usize {
    let mut p = n.max(1);
    loop {
        let mut r = p;
        for f in [2, 3, 5] {
            while r % f == 0 {
                r /= f;
            }
        }
        if r == 1 {
            return p;
        }
        p += 1;
    }
}

/// Convolves `b x b` arrays with a kernel given on offsets in (-b, b)^2.
/// Output is `out[x] = Σ_y k(x - y) in[y]` restricted to the window.
pub struct Convolver {
    b: usize,
    p: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("b", &self.b).field("p", &self.p).finish()
    }
}

impl Convolver {
    /// `kernel(di, dj)` is evaluated for |di|, |dj| < b.
    pub fn new<K: Fn(isize, isize) -> f64>(b: usize, kernel: K) -> Self {
        let p = good_size(2 * b - 1);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(p);
        let inverse = planner.plan_fft_inverse(p);
        let mut buf = vec![Complex::new(0.0, 0.0); p * p];
        let bi = b as isize;
        for dj in -(bi - 1)..bi {
            for di in -(bi - 1)..bi {
                let r = dj.rem_euclid(p as isize) as usize;
                let c = di.rem_euclid(p as isize) as usize;
                buf[r * p + c] = Complex::new(kernel(di, dj), 0.0);
            }
        }
        let mut conv = Self {
            b,
            p,
            forward,
            inverse,
            spectrum: Vec::new(),
        };
        conv.forward_2d(&mut buf, p);
        conv.spectrum = buf;
        conv
    }

    pub fn window(&self) -> usize {
        self.b
    }

    fn rows(&self, fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex<f64>], nrows: usize) {
        let p = self.p;
        buf[..nrows * p].par_chunks_mut(p).for_each_init(
            || vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()],
            |scratch, row| fft.process_with_scratch(row, scratch),
        );
    }

    fn transpose(&self, buf: &mut [Complex<f64>]) {
        let p = self.p;
        for r in 0..p {
            for c in (r + 1)..p {
                buf.swap(r * p + c, c * p + r);
            }
        }
    }

    /// Forward transform; only the first `nonzero_rows` rows may be nonzero.
    /// Leaves the spectrum transposed ([kx][ky]).
    fn forward_2d(&self, buf: &mut [Complex<f64>], nonzero_rows: usize) {
        let fwd = self.forward.clone();
        self.rows(&fwd, buf, nonzero_rows);
        self.transpose(buf);
        self.rows(&fwd, buf, self.p);
    }

    pub fn convolve(&self, input: &[f64], output: &mut [f64]) {
        let (b, p) = (self.b, self.p);
        debug_assert_eq!(input.len(), b * b);
        debug_assert_eq!(output.len(), b * b);
        let mut buf = vec![Complex::new(0.0, 0.0); p * p];
        for j in 0..b {
            for i in 0..b {
                buf[j * p + i] = Complex::new(input[j * b + i], 0.0);
            }
        }
        self.forward_2d(&mut buf, b);
        for (x, k) in buf.iter_mut().zip(&self.spectrum) {
            *x *= k;
        }
        let inv = self.inverse.clone();
        self.rows(&inv, &mut buf, p);
        self.transpose(&mut buf);
        self.rows(&inv, &mut buf, b);
        let scale = 1.0 / (p * p) as f64;
        for j in 0..b {
            for i in 0..b {
                output[j * b + i] = buf[j * p + i].re * scale;
            }
        }
    }
}
