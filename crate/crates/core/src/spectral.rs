//! Two-dimensional FFT plumbing on the periodic box.
//!
//! Spectra use the same row-major layout as [`Field`](crate::domain::Field):
//! entry `jy * n + jx` is the mode with integer wavenumbers `(mx, my)` where
//! `m = j` for `j < n/2` and `m = j - n` otherwise, i.e. physical wavenumber
//! `k = π m / L`. Two real transforms are packed into one complex transform
//! wherever a pair is needed.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::domain::DomainSpec;

/// FFT plans, wavenumbers and the dealiasing mask for one grid.
///
/// Plans are immutable and shared; concurrent transforms on distinct buffers
/// are safe.
#[derive(Clone)]
pub struct SpectralGrid {
    domain: DomainSpec,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// Physical wavenumber per axis index, Nyquist included (negative).
    k: Vec<f64>,
    /// Same with the Nyquist entry zeroed, for odd-order derivatives.
    k_deriv: Vec<f64>,
    keep: Vec<bool>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid").field("domain", &self.domain).finish()
    }
}

impl SpectralGrid {
    pub fn new(domain: DomainSpec) -> Self {
        let n = domain.n();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let base = std::f64::consts::PI / domain.half_width();
        let k: Vec<f64> = (0..n).map(|j| base * wavenumber_index(j, n) as f64).collect();
        let mut k_deriv = k.clone();
        k_deriv[n / 2] = 0.0;
        let keep = (0..n).map(|j| 3 * wavenumber_index(j, n).unsigned_abs() < n).collect();
        Self {
            domain,
            fft,
            ifft,
            k,
            k_deriv,
            keep,
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn n(&self) -> usize {
        self.domain.n()
    }

    /// Wavenumber along one axis (Nyquist kept).
    #[inline]
    pub fn k(&self, j: usize) -> f64 {
        self.k[j]
    }

    /// Wavenumber used for first derivatives (Nyquist zeroed).
    #[inline]
    pub fn k_deriv(&self, j: usize) -> f64 {
        self.k_deriv[j]
    }

    /// `|k|²` at flat index.
    #[inline]
    pub fn k_sq(&self, idx: usize) -> f64 {
        let n = self.n();
        let (kx, ky) = (self.k[idx % n], self.k[idx / n]);
        kx * kx + ky * ky
    }

    /// Derivative wavenumbers `(kx, ky)` at flat index.
    #[inline]
    pub fn k_vec(&self, idx: usize) -> (f64, f64) {
        let n = self.n();
        (self.k_deriv[idx % n], self.k_deriv[idx / n])
    }

    /// 2/3-rule mask at flat index.
    #[inline]
    pub fn keeps(&self, idx: usize) -> bool {
        let n = self.n();
        self.keep[idx % n] && self.keep[idx / n]
    }

    pub fn apply_mask(&self, spec: &mut [Complex64]) {
        for (idx, c) in spec.iter_mut().enumerate() {
            if !self.keeps(idx) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.fft);
        buf
    }

    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        self.transform(&mut buf, &self.ifft);
        let norm = 1.0 / self.domain.len() as f64;
        buf.iter().map(|c| c.re * norm).collect()
    }

    /// Forward transforms of two real arrays with one complex FFT.
    pub fn forward_pair(&self, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.transform(&mut buf, &self.fft);
        let n = self.n();
        let mut fa = vec![Complex64::new(0.0, 0.0); buf.len()];
        let mut fb = fa.clone();
        for jy in 0..n {
            let my = (n - jy) % n;
            for jx in 0..n {
                let mx = (n - jx) % n;
                let z = buf[jy * n + jx];
                let zc = buf[my * n + mx].conj();
                fa[jy * n + jx] = (z + zc) * 0.5;
                // (z - zc) / (2i)
                let d = (z - zc) * 0.5;
                fb[jy * n + jx] = Complex64::new(d.im, -d.re);
            }
        }
        (fa, fb)
    }

    /// Inverse transforms of two Hermitian spectra with one complex FFT.
    pub fn inverse_pair(&self, fa: &[Complex64], fb: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex64> = fa
            .iter()
            .zip(fb)
            .map(|(a, b)| a + Complex64::new(-b.im, b.re))
            .collect();
        self.transform(&mut buf, &self.ifft);
        let norm = 1.0 / self.domain.len() as f64;
        let re = buf.iter().map(|c| c.re * norm).collect();
        let im = buf.iter().map(|c| c.im * norm).collect();
        (re, im)
    }

    /// Spectral gradient of a real field given its spectrum.
    pub fn gradient(&self, spec: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let (gx, gy) = self.gradient_spectra(spec);
        self.inverse_pair(&gx, &gy)
    }

    pub fn gradient_spectra(&self, spec: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut gx = Vec::with_capacity(spec.len());
        let mut gy = Vec::with_capacity(spec.len());
        for (idx, c) in spec.iter().enumerate() {
            let (kx, ky) = self.k_vec(idx);
            gx.push(Complex64::new(-kx * c.im, kx * c.re));
            gy.push(Complex64::new(-ky * c.im, ky * c.re));
        }
        (gx, gy)
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n();
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        transpose_in_place(buf, n);
        plan.process_with_scratch(buf, &mut scratch);
        transpose_in_place(buf, n);
    }
}

#[inline]
fn wavenumber_index(j: usize, n: usize) -> isize {
    if j < n / 2 {
        j as isize
    } else {
        j as isize - n as isize
    }
}

fn transpose_in_place(buf: &mut [Complex64], n: usize) {
    const B: usize = 16;
    for bi in (0..n).step_by(B) {
        for bj in (bi..n).step_by(B) {
            for i in bi..(bi + B).min(n) {
                let start = if bi == bj { i + 1 } else { bj };
                for j in start..(bj + B).min(n) {
                    buf.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}
