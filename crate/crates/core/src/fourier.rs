//! Two-dimensional DFT helpers over row-major square grids.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Planned forward and inverse transforms for one grid size.
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.forward);
    }

    /// Unnormalized inverse transform (`Σ X e^{+2πi…}`), in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.inverse);
    }

    fn apply(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "grid is not {n}x{n}");
        fft.process(data);
        transpose(data, n);
        fft.process(data);
        transpose(data, n);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// Signed integer frequency of DFT bin `k` in an `n`-point transform.
pub fn bin_frequency(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Swaps quadrants so the zero-frequency bin lands at `(n/2, n/2)`.
pub fn fftshift(data: &mut [Complex64], n: usize) {
    let h = n / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            out[((r + h) % n) * n + (c + h) % n] = data[r * n + c];
        }
    }
    data.copy_from_slice(&out);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_parseval() {
        let n = 16;
        let fft = Fft2::new(n);
        let orig: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut d = orig.clone();
        fft.forward(&mut d);
        let e_t: f64 = orig.iter().map(|z| z.norm_sqr()).sum();
        let e_f: f64 = d.iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * n) as f64;
        assert!((e_t - e_f).abs() < 1e-10 * e_t);
        fft.inverse(&mut d);
        for (a, b) in orig.iter().zip(&d) {
            assert!((a - b / (n * n) as f64).norm() < 1e-12);
        }
    }

    #[test]
    fn frequencies() {
        assert_eq!(bin_frequency(0, 8), 0);
        assert_eq!(bin_frequency(3, 8), 3);
        assert_eq!(bin_frequency(4, 8), -4);
        assert_eq!(bin_frequency(7, 8), -1);
    }
}
