//! Quadrature rules: Gauss-Legendre, Gauss-Hermite and a globally adaptive
//! Gauss-Kronrod 7/15 scheme.
//!
//! The adaptive driver keeps a heap of panels ordered by error estimate and
//! always bisects the worst one, so irregular integrands (near-poles,
//! oscillation) get resolution where it is needed. A bundle variant evaluates
//! several integrands that share the expensive part of the evaluation in one
//! pass.

use num_complex::Complex64;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Newton iteration on the Legendre recurrence; accurate to a few ulp for the
/// orders used here (n <= a few hundred).
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "gauss_legendre: order must be at least 1");
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess for the i-th root (descending).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        // The middle node is exactly zero; recompute its weight cleanly.
        let mut p0 = 1.0;
        let mut p1 = 0.0;
        for k in 2..=n {
            let kf = k as f64;
            let p2 = (-(kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * p0; // P'_n(0) = n * P_{n-1}(0) / (0 - ... ) reduced
        out[m - 1] = (0.0, 2.0 / (dp * dp));
    }
    out
}

/// Nodes and weights of the n-point Gauss-Hermite rule with weight
/// exp(-x^2) on the whole real line.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "gauss_hermite: order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        // Initial guesses from Numerical Recipes' gauher.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut hm1 = 0.0;
        for _ in 0..100 {
            // Orthonormal Hermite functions h_k (weight exp(-x^2)).
            let mut h0 = std::f64::consts::PI.powf(-0.25);
            let mut h1 = std::f64::consts::SQRT_2 * z * h0;
            for k in 1..n {
                let kf = k as f64;
                let h2 = z * (2.0 / (kf + 1.0)).sqrt() * h1 - (kf / (kf + 1.0)).sqrt() * h0;
                h0 = h1;
                h1 = h2;
            }
            hm1 = h0;
            let dh = (2.0 * nf).sqrt() * h0; // h'_n = sqrt(2n) h_{n-1}
            let dz = h1 / dh;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = 1.0 / (nf * hm1 * hm1);
    }
    let mut out = vec![(0.0, 0.0); n];
    for i in 0..m {
        out[n - 1 - i] = (nodes[i], weights[i]);
        out[i] = (-nodes[i], weights[i]);
    }
    if n % 2 == 1 {
        out[m - 1].0 = 0.0;
    }
    out
}

// Gauss-Kronrod 7/15 nodes and weights (QUADPACK dqk15 constants).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_33,
    0.949_107_912_342_758_524_526_189_684_047_85,
    0.864_864_423_359_769_072_789_712_788_640_93,
    0.741_531_185_599_394_439_863_864_773_280_79,
    0.586_087_235_467_691_130_294_144_838_258_73,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_24,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_52,
    0.140_653_259_715_525_918_745_189_590_510_24,
    0.169_004_726_639_267_902_826_583_426_598_55,
    0.190_350_578_064_785_409_913_256_402_421_01,
    0.204_432_940_075_298_892_414_161_999_234_65,
    0.209_482_141_084_727_828_012_999_174_891_71,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_08,
    0.279_705_391_489_276_667_901_467_771_423_78,
    0.381_830_050_505_118_944_950_369_775_488_97,
    0.417_959_183_673_469_387_755_102_040_816_33,
];

/// One Gauss-Kronrod 7/15 pass over [a, b] for a bundle of complex
/// integrands. Returns (Kronrod values, error estimate).
fn gk15_bundle<const NB: usize, F>(f: &mut F, a: f64, b: f64) -> ([Complex64; NB], f64)
where
    F: FnMut(f64) -> [Complex64; NB],
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [Complex64::new(0.0, 0.0); NB];
    let mut gauss = [Complex64::new(0.0, 0.0); NB];

    let fc = f(c);
    for i in 0..NB {
        kron[i] += WGK[7] * fc[i];
        gauss[i] += WG[3] * fc[i];
    }
    for j in 0..7 {
        let x = h * XGK[j];
        let fp = f(c + x);
        let fm = f(c - x);
        for i in 0..NB {
            let s = fp[i] + fm[i];
            kron[i] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }
    let mut err = 0.0;
    for i in 0..NB {
        kron[i] *= h;
        gauss[i] *= h;
        err += (kron[i] - gauss[i]).norm();
    }
    (kron, err)
}

#[derive(Debug)]
struct Panel<const NB: usize> {
    err: f64,
    a: f64,
    b: f64,
    value: [Complex64; NB],
}

impl<const NB: usize> PartialEq for Panel<NB> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<const NB: usize> Eq for Panel<NB> {}
impl<const NB: usize> PartialOrd for Panel<NB> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const NB: usize> Ord for Panel<NB> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadEstimate<const NB: usize> {
    pub value: [Complex64; NB],
    pub est_error: f64,
    pub evaluations: usize,
}

/// Globally adaptive Gauss-Kronrod 7/15 integration of a bundle of complex
/// integrands over [a, b].
///
/// `seeds` lists interior points where the integrand is known to change
/// character (near-singularities, oscillation onsets); they become initial
/// panel boundaries. Stops when the summed error estimate drops below
/// `max(abs_tol, rel_tol * |value|)` (L1 norm over the bundle) or errs with
/// the partial result once `max_panels` panels have been created.
pub fn adaptive_gk15<const NB: usize, F>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_panels: usize,
    seeds: &[f64],
) -> Result<QuadEstimate<NB>>
where
    F: FnMut(f64) -> [Complex64; NB],
{
    if !(a < b) {
        return Err(Error::invalid(format!(
            "adaptive_gk15: need a < b, got [{a}, {b}]"
        )));
    }
    let mut bounds: Vec<f64> = std::iter::once(a)
        .chain(seeds.iter().copied().filter(|s| *s > a && *s < b))
        .chain(std::iter::once(b))
        .collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();

    let mut heap: BinaryHeap<Panel<NB>> = BinaryHeap::new();
    let mut evals = 0usize;
    for w in bounds.windows(2) {
        let (v, e) = gk15_bundle(&mut f, w[0], w[1]);
        evals += 15;
        heap.push(Panel {
            err: e,
            a: w[0],
            b: w[1],
            value: v,
        });
    }

    loop {
        let mut total = [Complex64::new(0.0, 0.0); NB];
        let mut total_err = 0.0;
        for p in heap.iter() {
            for i in 0..NB {
                total[i] += p.value[i];
            }
            total_err += p.err;
        }
        let norm: f64 = total.iter().map(|v| v.norm()).sum();
        if total_err <= abs_tol.max(rel_tol * norm) {
            return Ok(QuadEstimate {
                value: total,
                est_error: total_err,
                evaluations: evals,
            });
        }
        if heap.len() >= max_panels {
            return Err(Error::NoConvergence {
                reason: format!(
                    "adaptive_gk15: {} panels reached, error {total_err:.3e} above tolerance",
                    heap.len()
                ),
                value: norm,
                error: total_err,
            });
        }
        let worst = heap.pop().expect("heap cannot be empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval at floating-point resolution; accept its estimate.
            heap.push(Panel {
                err: 0.0,
                ..worst
            });
            continue;
        }
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (v, e) = gk15_bundle(&mut f, lo, hi);
            evals += 15;
            heap.push(Panel {
                err: e,
                a: lo,
                b: hi,
                value: v,
            });
        }
    }
}

/// Scalar real-valued convenience wrapper around [`adaptive_gk15`].
pub fn adaptive_gk15_real<F>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_panels: usize,
    seeds: &[f64],
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let est = adaptive_gk15::<1, _>(
        |x| [Complex64::new(f(x), 0.0)],
        a,
        b,
        rel_tol,
        abs_tol,
        max_panels,
        seeds,
    )?;
    Ok((est.value[0].re, est.est_error))
}
