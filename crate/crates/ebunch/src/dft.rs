//! Discrete Fourier transforms of sampled time traces.
//!
//! The convention throughout the crate is the continuum estimate
//!
//! ```text
//! s_hat(omega_m) = dt / sqrt(2 pi) * sum_k s(t_k) exp(+i omega_m t_k),
//! t_k = t_start + k dt,   omega_m = 2 pi m / (N dt),   m = 0 .. N-1
//! ```
//!
//! i.e. the positive-exponent transform including the absolute start-time
//! phase, so different windows of the same process line up coherently. Bins
//! with m > N/2 alias to negative frequencies. Power-of-two lengths use an
//! iterative radix-2 transform; everything else goes through Bluestein's
//! chirp-z algorithm, so arbitrary sample counts cost O(N log N).

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DFT_CONVENTION: &str = "s_hat(omega_m) = dt/sqrt(2 pi) * sum_k s(t_k) exp(+i omega_m t_k), \
     t_k = t_start + k dt, omega_m = 2 pi m/(N dt); bins m > N/2 alias to negative frequency";

/// A one-sided array of DFT values with the angular frequency of each bin.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Angular frequency of each bin, rad/s.
    pub frequencies: Vec<f64>,
    /// Transform values in the crate convention (units of signal * s / sqrt(rad/s)...
    /// concretely T * s / sqrt(2 pi) per bin for a field trace in tesla).
    pub amplitudes: Vec<Complex64>,
    pub convention_note: &'static str,
}

impl Spectrum {
    /// Bin spacing in rad/s.
    pub fn domega(&self) -> f64 {
        if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            0.0
        }
    }

    /// Index of the bin closest to `omega` among the non-aliased bins
    /// (m <= N/2).
    pub fn bin_near(&self, omega: f64) -> usize {
        let n = self.frequencies.len();
        let top = n / 2;
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (m, &w) in self.frequencies.iter().enumerate().take(top + 1) {
            let d = (w - omega).abs();
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        best
    }
}

/// In-place radix-2 FFT with the exponent sign given by `sign` (+1 or -1),
/// no normalization. Length must be a power of two.
fn fft_pow2(a: &mut [Complex64], sign: f64) {
    let n = a.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    // Bit reversal permutation.
    let mut j = 0usize;
    for i in 0..n - 1 {
        if i < j {
            a.swap(i, j);
        }
        let mut m = n >> 1;
        while m >= 1 && j & m != 0 {
            j ^= m;
            m >>= 1;
        }
        j |= m;
    }
    // Twiddle table for the full size; stages index it with a stride.
    let half = n / 2;
    let mut tw = Vec::with_capacity(half);
    for t in 0..half {
        let ang = sign * 2.0 * std::f64::consts::PI * t as f64 / n as f64;
        tw.push(Complex64::new(ang.cos(), ang.sin()));
    }
    let mut len = 2;
    while len <= n {
        let hl = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for t in 0..hl {
                let w = tw[t * stride];
                let u = a[start + t];
                let v = a[start + t + hl] * w;
                a[start + t] = u + v;
                a[start + t + hl] = u - v;
            }
        }
        len <<= 1;
    }
}

/// DFT of arbitrary length via Bluestein's algorithm, exponent sign `sign`.
fn dft_bluestein(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = x.len();
    let l = (2 * n - 1).next_power_of_two();
    // Chirp phases exp(sign * i pi k^2 / n) with k^2 reduced mod 2n, which is
    // exact for the complex exponential and keeps the angle argument small.
    let chirp = |k: usize| -> Complex64 {
        let k2 = (k as u128 * k as u128) % (2 * n as u128);
        let ang = sign * std::f64::consts::PI * k2 as f64 / n as f64;
        Complex64::new(ang.cos(), ang.sin())
    };
    let mut a = vec![Complex64::new(0.0, 0.0); l];
    for k in 0..n {
        a[k] = x[k] * chirp(k);
    }
    let mut b = vec![Complex64::new(0.0, 0.0); l];
    for k in 0..n {
        let c = chirp(k).conj();
        b[k] = c;
        if k > 0 {
            b[l - k] = c;
        }
    }
    fft_pow2(&mut a, -1.0);
    fft_pow2(&mut b, -1.0);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    fft_pow2(&mut a, 1.0);
    let scale = 1.0 / l as f64;
    (0..n).map(|m| a[m] * chirp(m) * scale).collect()
}

/// Plain positive-exponent DFT X_m = sum_k x_k exp(+2 pi i m k / N), no
/// prefactors. Used internally and by the spectrum wrappers.
pub fn dft_raw(x: &[Complex64]) -> Vec<Complex64> {
    if x.is_empty() {
        return Vec::new();
    }
    if x.len().is_power_of_two() {
        let mut a = x.to_vec();
        fft_pow2(&mut a, 1.0);
        a
    } else {
        dft_bluestein(x, 1.0)
    }
}

/// Transform of a complex sample array in the crate convention.
pub fn dft_complex(samples: &[Complex64], dt: f64, t_start: f64) -> Result<Spectrum> {
    if samples.len() < 2 {
        return Err(Error::invalid("dft: need at least 2 samples"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dft: dt must be positive"));
    }
    let n = samples.len();
    let raw = dft_raw(samples);
    let pref = dt / (2.0 * std::f64::consts::PI).sqrt();
    let domega = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let mut frequencies = Vec::with_capacity(n);
    let mut amplitudes = Vec::with_capacity(n);
    for (m, x) in raw.into_iter().enumerate() {
        let omega = domega * m as f64;
        let phase = omega * t_start;
        let rot = Complex64::new(phase.cos(), phase.sin());
        frequencies.push(omega);
        amplitudes.push(x * rot * pref);
    }
    Ok(Spectrum {
        frequencies,
        amplitudes,
        convention_note: DFT_CONVENTION,
    })
}

/// Transform of a real sample array in the crate convention.
pub fn dft_real(samples: &[f64], dt: f64, t_start: f64) -> Result<Spectrum> {
    let buf: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    dft_complex(&buf, dt, t_start)
}

/// Direct evaluation of the transform at one arbitrary angular frequency
/// (not restricted to a bin). Same convention as [`dft_real`].
pub fn single_bin(samples: &[f64], dt: f64, t_start: f64, omega: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    // Phase recurrence with periodic resynchronisation against roundoff.
    let dphi = omega * dt;
    let step = Complex64::new(dphi.cos(), dphi.sin());
    let mut rot = Complex64::new((omega * t_start).cos(), (omega * t_start).sin());
    for (k, &s) in samples.iter().enumerate() {
        if k % 4096 == 0 {
            let phi = omega * (t_start + k as f64 * dt);
            rot = Complex64::new(phi.cos(), phi.sin());
        }
        acc += s * rot;
        rot *= step;
    }
    acc * dt / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|m| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &v) in x.iter().enumerate() {
                    let ang = 2.0 * std::f64::consts::PI * (m * k % n) as f64 / n as f64;
                    acc += v * Complex64::new(ang.cos(), ang.sin());
                }
                acc
            })
            .collect()
    }

    fn test_signal(n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                let t = k as f64;
                Complex64::new((0.3 * t).sin() + 0.1, (0.7 * t).cos() * 0.4)
            })
            .collect()
    }

    #[test]
    fn radix2_matches_naive() {
        for n in [2usize, 8, 128] {
            let x = test_signal(n);
            let got = dft_raw(&x);
            let want = naive_dft(&x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() < 1e-9 * n as f64, "n = {n}");
            }
        }
    }

    #[test]
    fn bluestein_matches_naive() {
        for n in [3usize, 96, 100, 255] {
            let x = test_signal(n);
            let got = dft_raw(&x);
            let want = naive_dft(&x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() < 1e-9 * n as f64, "n = {n}");
            }
        }
    }

    #[test]
    fn on_bin_cosine_amplitude_and_phase() {
        let n = 64usize;
        let dt = 0.05;
        let t_start = 3.7;
        let j = 5usize;
        let omega_j = 2.0 * std::f64::consts::PI * j as f64 / (n as f64 * dt);
        let samples: Vec<f64> = (0..n)
            .map(|k| (omega_j * (t_start + k as f64 * dt)).cos())
            .collect();
        let spec = dft_real(&samples, dt, t_start).unwrap();
        // cos contributes N/2 to its own bin; with the start-time phase folded
        // in, the bin value is purely real.
        let expect = dt * n as f64 / (2.0 * (2.0 * std::f64::consts::PI).sqrt());
        let got = spec.amplitudes[j];
        assert!((got.re - expect).abs() < 1e-12 * n as f64, "{got}");
        assert!(got.im.abs() < 1e-12 * n as f64);
        assert!((spec.frequencies[j] - omega_j).abs() < 1e-12 * omega_j);
        assert_eq!(spec.bin_near(omega_j * 1.02), j);
    }

    #[test]
    fn parseval_identity() {
        // sum |s|^2 dt = sum |s_hat|^2 domega, exact for this convention.
        for n in [128usize, 200] {
            let samples: Vec<f64> = (0..n)
                .map(|k| (0.4 * k as f64).sin() + 0.2 * (1.3 * k as f64).cos())
                .collect();
            let dt = 0.01;
            let spec = dft_real(&samples, dt, 0.0).unwrap();
            let lhs: f64 = samples.iter().map(|s| s * s * dt).sum();
            let rhs: f64 = spec
                .amplitudes
                .iter()
                .map(|a| a.norm_sqr() * spec.domega())
                .sum();
            assert!(
                ((lhs - rhs) / lhs).abs() < 1e-12,
                "n = {n}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn single_bin_matches_fft_bins() {
        let n = 200usize;
        let dt = 2e-3;
        let t0 = -0.13;
        let samples: Vec<f64> = (0..n).map(|k| ((0.9 * k as f64).sin()).powi(3)).collect();
        let spec = dft_real(&samples, dt, t0).unwrap();
        for m in [0usize, 1, 17, 99] {
            let direct = single_bin(&samples, dt, t0, spec.frequencies[m]);
            assert!(
                (direct - spec.amplitudes[m]).norm() < 1e-12 * n as f64,
                "bin {m}"
            );
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(dft_real(&[1.0], 0.1, 0.0).is_err());
        assert!(dft_real(&[1.0, 2.0], 0.0, 0.0).is_err());
    }
}
