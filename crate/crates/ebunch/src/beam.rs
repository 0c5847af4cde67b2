//! Klystron beam physics: electron kinematics, velocity-modulation bunching,
//! the analytic bunched-current waveform and its Fourier coefficients, mean
//! magnetic near fields of thin and Gaussian beams, and Rabi-frequency
//! profiles for a position-modulated beam.
//!
//! Conventions: the quantum system sits at the origin; beam positions and
//! transverse offsets are coordinates of the beam (or of an electron) in the
//! plane perpendicular to the propagation axis z. A line current at (x, y)
//! produces the field direction (y, -x, 0) at the origin.

use num_complex::Complex64;

use crate::consts;
use crate::error::{Error, Result};
use crate::quad::adaptive_gk15;
use crate::special::bessel_j;

/// Velocity and Lorentz factor of an electron of given kinetic energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectronKinematics {
    /// Kinetic energy, eV.
    pub kinetic_energy: f64,
    /// Speed, m/s.
    pub velocity: f64,
    /// Lorentz factor.
    pub gamma: f64,
}

/// Relativistic kinematics from the kinetic energy in eV.
pub fn kinematics_from_energy(kinetic_energy_ev: f64) -> Result<ElectronKinematics> {
    if !(kinetic_energy_ev >= 0.0) {
        return Err(Error::invalid(format!(
            "kinematics_from_energy: kinetic energy must be >= 0 eV, got {kinetic_energy_ev}"
        )));
    }
    let gamma = 1.0 + kinetic_energy_ev * consts::E_CHARGE / consts::M_E_C2;
    // 1 - 1/gamma^2 evaluated stably for gamma near 1.
    let beta2 = (gamma * gamma - 1.0) / (gamma * gamma);
    let velocity = consts::C * beta2.max(0.0).sqrt();
    Ok(ElectronKinematics {
        kinetic_energy: kinetic_energy_ev,
        velocity,
        gamma,
    })
}

/// Full parameter set of a current-modulated electron beam.
#[derive(Debug, Clone, Copy)]
pub struct BeamSpec {
    /// Mean beam current I0, A.
    pub mean_current: f64,
    /// Modulation angular frequency omega0, rad/s.
    pub mod_angular_freq: f64,
    /// Fractional kinetic-energy modulation depth dE/E.
    pub mod_depth: f64,
    /// Drift length l between modulation and interaction regions, m.
    pub drift_length: f64,
    pub kinematics: ElectronKinematics,
    /// Beam waist radius w (1/e^2 intensity radius), m.
    pub waist: f64,
    /// Distance d from beam axis to the quantum system, m.
    pub impact_distance: f64,
    /// FWHM linewidth of the modulation oscillator, rad/s.
    pub linewidth: f64,
    /// Kinetic energy spread of the source, eV.
    pub energy_spread: f64,
}

impl BeamSpec {
    /// Checks the structural invariants, including that the derived bunching
    /// parameter stays below the overtaking threshold.
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_current > 0.0) {
            return Err(Error::invalid("BeamSpec: mean_current must be > 0"));
        }
        if !(self.mod_angular_freq > 0.0) {
            return Err(Error::invalid("BeamSpec: mod_angular_freq must be > 0"));
        }
        if !(self.mod_depth >= 0.0 && self.mod_depth < 1.0) {
            return Err(Error::invalid(format!(
                "BeamSpec: mod_depth must be in [0, 1), got {}",
                self.mod_depth
            )));
        }
        if !(self.drift_length > 0.0) {
            return Err(Error::invalid("BeamSpec: drift_length must be > 0"));
        }
        if !(self.waist > 0.0) {
            return Err(Error::invalid("BeamSpec: waist must be > 0"));
        }
        if !(self.impact_distance > 0.0) {
            return Err(Error::invalid("BeamSpec: impact_distance must be > 0"));
        }
        if !(self.linewidth >= 0.0) {
            return Err(Error::invalid("BeamSpec: linewidth must be >= 0"));
        }
        if !(self.energy_spread >= 0.0) {
            return Err(Error::invalid("BeamSpec: energy_spread must be >= 0"));
        }
        if !(self.kinematics.velocity > 0.0) {
            return Err(Error::invalid("BeamSpec: beam velocity must be > 0"));
        }
        bunching_parameter(self).map(|_| ())
    }
}

/// Velocity modulation amplitude v1 = dE_kin / (gamma^3 m_e v0), m/s.
pub fn velocity_modulation_amplitude(spec: &BeamSpec) -> f64 {
    let de = spec.mod_depth * spec.kinematics.kinetic_energy * consts::E_CHARGE;
    let g = spec.kinematics.gamma;
    de / (g * g * g * consts::M_E * spec.kinematics.velocity)
}

/// Bunching parameter r_b = l omega0 v1 / v0^2 after the drift length.
pub fn bunching_parameter(spec: &BeamSpec) -> Result<f64> {
    let v0 = spec.kinematics.velocity;
    if !(v0 > 0.0) {
        return Err(Error::invalid(
            "bunching_parameter: beam velocity must be > 0",
        ));
    }
    let v1 = velocity_modulation_amplitude(spec);
    let r_b = spec.drift_length * spec.mod_angular_freq * v1 / (v0 * v0);
    if r_b >= 1.0 {
        return Err(Error::Overtaking(format!(
            "bunching parameter r_b = {r_b:.4} >= 1: electrons overtake within the drift, \
             the analytic current model does not apply"
        )));
    }
    Ok(r_b)
}

/// Parameters of the analytic bunched-current waveform at a fixed plane z.
///
/// Constructed through [`ModulatedCurrent::new`] so the no-overtaking
/// invariant 0 <= r_b < 1 always holds and evaluation cannot fail.
#[derive(Debug, Clone, Copy)]
pub struct ModulatedCurrent {
    r_b: f64,
    i0: f64,
    omega0: f64,
    v0: f64,
    z0: f64,
}

impl ModulatedCurrent {
    pub fn new(r_b: f64, i0: f64, omega0: f64, v0: f64, z0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r_b) {
            return Err(Error::invalid(format!(
                "ModulatedCurrent: r_b must be in [0, 1), got {r_b}"
            )));
        }
        if !(i0 > 0.0) || !(omega0 > 0.0) || !(v0 > 0.0) {
            return Err(Error::invalid(
                "ModulatedCurrent: I0, omega0 and v0 must be > 0",
            ));
        }
        Ok(ModulatedCurrent {
            r_b,
            i0,
            omega0,
            v0,
            z0,
        })
    }

    /// The waveform at the end of the drift of a validated beam, with the
    /// modulation plane at z0.
    pub fn from_beam(spec: &BeamSpec, z0: f64) -> Result<Self> {
        spec.validate()?;
        ModulatedCurrent::new(
            bunching_parameter(spec)?,
            spec.mean_current,
            spec.mod_angular_freq,
            spec.kinematics.velocity,
            z0,
        )
    }

    pub fn r_b(&self) -> f64 {
        self.r_b
    }
    pub fn i0(&self) -> f64 {
        self.i0
    }
    pub fn omega0(&self) -> f64 {
        self.omega0
    }
    pub fn v0(&self) -> f64 {
        self.v0
    }
    pub fn z0(&self) -> f64 {
        self.z0
    }
}

/// Solves theta - r_b sin(theta) = tau for theta (Kepler-type equation).
///
/// Newton iteration seeded at theta = tau with a bisection fallback; the
/// residual of the returned root is below 1e-12.
pub fn kepler_theta(tau: f64, r_b: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r_b) {
        return Err(Error::invalid(format!(
            "kepler_theta: r_b must be in [0, 1), got {r_b}"
        )));
    }
    if r_b == 0.0 {
        return Ok(tau);
    }
    // theta(tau + 2 pi k) = theta(tau) + 2 pi k, so reduce to [-pi, pi] and
    // shift back; this keeps the residual at machine precision even when
    // tau is many periods out. The 2 pi is split for an exact reduction.
    const TWO_PI_HI: f64 = 6.283_185_307_179_586;
    const TWO_PI_LO: f64 = 2.449_293_598_294_706_4e-16;
    let k = (tau / TWO_PI_HI).round();
    let tau_red = (tau - k * TWO_PI_HI) - k * TWO_PI_LO;

    let f = |th: f64| th - r_b * th.sin() - tau_red;
    // The root lies within r_b of tau since |r_b sin theta| <= r_b.
    let mut lo = tau_red - r_b;
    let mut hi = tau_red + r_b;
    let mut theta = tau_red;
    let mut converged = false;
    for _ in 0..100 {
        let fv = f(theta);
        if fv.abs() <= 1e-13 {
            converged = true;
            break;
        }
        if fv > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        let step = fv / (1.0 - r_b * theta.cos());
        let next = theta - step;
        theta = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    if !converged && f(theta).abs() > 1e-12 {
        return Err(Error::NoConvergence {
            reason: format!("kepler_theta stalled at tau = {tau}, r_b = {r_b}"),
            value: theta + k * TWO_PI_HI,
            error: f(theta).abs(),
        });
    }
    Ok(theta + k * TWO_PI_HI)
}

/// The bunched current I(z, t) = I0 / (1 - r_b cos(theta)).
///
/// Infallible: the no-overtaking invariant is enforced at construction and
/// the Kepler solve cannot fail for r_b < 1.
pub fn analytic_current(mc: &ModulatedCurrent, z: f64, t: f64) -> f64 {
    let tau = mc.omega0 * (t - (z - mc.z0) / mc.v0);
    let theta = kepler_theta(tau, mc.r_b).expect("r_b < 1 holds by construction");
    mc.i0 / (1.0 - mc.r_b * theta.cos())
}

/// Amplitude of the n-th harmonic of the bunched current, I_{n omega0} =
/// 2 I0 J_n(n r_b).
pub fn fourier_coefficient(n: u32, r_b: f64, i0: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid(
            "fourier_coefficient: n = 0 is the DC component, equal to I0 by charge conservation",
        ));
    }
    if !(0.0..1.0).contains(&r_b) {
        return Err(Error::invalid(format!(
            "fourier_coefficient: r_b must be in [0, 1), got {r_b}"
        )));
    }
    let j = bessel_j(n, n as f64 * r_b)?;
    Ok(2.0 * i0 * j.value)
}

/// Relative bunching-parameter spread caused by the source energy spread,
/// Delta r_b / r_b = Delta E_kin / E_kin.
pub fn velocity_spread_effect(spec: &BeamSpec) -> Result<f64> {
    if !(spec.energy_spread >= 0.0) {
        return Err(Error::invalid(
            "velocity_spread_effect: energy_spread must be >= 0",
        ));
    }
    if !(spec.kinematics.kinetic_energy > 0.0) {
        return Err(Error::invalid(
            "velocity_spread_effect: kinetic energy must be > 0",
        ));
    }
    Ok(spec.energy_spread / spec.kinematics.kinetic_energy)
}

/// Mean magnetic field of an infinitely thin beam at transverse position
/// (x, y) relative to the field point: B = mu0 I / (2 pi d^2) * (y, -x, 0).
pub fn thin_beam_field(current: f64, x: f64, y: f64) -> Result<[f64; 3]> {
    let d2 = x * x + y * y;
    if d2 == 0.0 {
        return Err(Error::invalid(
            "thin_beam_field: field point on the beam axis",
        ));
    }
    let pref = consts::MU_0 * current / (2.0 * std::f64::consts::PI * d2);
    Ok([pref * y, -pref * x, 0.0])
}

/// Mean magnetic field of a non-divergent Gaussian-profile beam of waist
/// radius `waist` whose axis crosses the transverse plane at `offset`
/// relative to the field point.
///
/// Evaluated as a 2-D quadrature of the profile-weighted thin-beam kernel in
/// polar coordinates centered on the beam, to relative accuracy 1e-6 (inner
/// tolerance 1e-8).
pub fn gaussian_beam_field(current: f64, waist: f64, offset: (f64, f64)) -> Result<[f64; 3]> {
    if !(waist > 0.0) {
        return Err(Error::invalid("gaussian_beam_field: waist must be > 0"));
    }
    let (bx, by) = offset;
    let d = (bx * bx + by * by).sqrt();
    if current == 0.0 || d == 0.0 {
        // On the axis every ring of sources cancels by symmetry.
        return Ok([0.0, 0.0, 0.0]);
    }
    // Beyond s_max the profile weight is below 2.6e-18 of its peak.
    let s_max = 4.5 * waist;
    // Angle from the beam center towards the field point; the kernel is
    // nearly singular around it when the ring radius s approaches d.
    let phi0 = (-by).atan2(-bx);
    let w2 = waist * waist;
    let mut evaluations = 0usize;

    let mut ring = |s: f64| -> Result<Complex64> {
        // Integral over the ring of radius s around the beam center, packing
        // the field components as B_x + i B_y.
        let f = |phi: f64| -> [Complex64; 1] {
            let (sp, cp) = phi.sin_cos();
            let x = bx + s * cp;
            let y = by + s * sp;
            let r2 = x * x + y * y;
            [Complex64::new(y / r2, -x / r2)]
        };
        // Rings outside the field point integrate to exactly zero (shell
        // cancellation), so an absolute floor tied to the inside-ring value
        // 2 pi / d^2 is needed for the tolerance test to terminate there.
        let est = adaptive_gk15(
            f,
            phi0 - std::f64::consts::PI,
            phi0 + std::f64::consts::PI,
            1e-9,
            1e-11 * 2.0 * std::f64::consts::PI / (d * d),
            4000,
            &[phi0],
        )?;
        evaluations += est.evaluations;
        Ok(est.value[0])
    };

    let mut inner_err: Option<Error> = None;
    let outer = adaptive_gk15(
        |s| match ring(s) {
            Ok(v) => [v * s * (-2.0 * s * s / w2).exp()],
            Err(e) => {
                inner_err = Some(e);
                [Complex64::new(f64::NAN, f64::NAN)]
            }
        },
        0.0,
        s_max,
        1e-8,
        0.0,
        20_000,
        &[d.min(s_max * 0.999_999)],
    );
    if let Some(e) = inner_err {
        return Err(e);
    }
    let outer = outer?;
    let pref = consts::MU_0 * current / (std::f64::consts::PI * std::f64::consts::PI * w2);
    let v = outer.value[0] * pref;
    Ok([v.re, v.im, 0.0])
}

/// Rabi frequency per unit beam current at each target for a beam whose
/// center follows `beam_center(t)` with period 2 pi / omega0, driven by the
/// chosen harmonic of the resulting field modulation.
///
/// `moment_over_hbar` is the transition-moment factor divided by hbar
/// (rad/s per tesla); the field harmonic is the single-bin discrete Fourier
/// component of the thin-beam field sampled over one period.
pub fn rabi_profile<F>(
    beam_center: F,
    omega0: f64,
    targets: &[(f64, f64)],
    harmonic: u32,
    moment_over_hbar: f64,
    samples_per_period: usize,
) -> Result<Vec<f64>>
where
    F: Fn(f64) -> (f64, f64),
{
    if harmonic == 0 {
        return Err(Error::invalid(
            "rabi_profile: harmonic must be >= 1 (0 is the static component)",
        ));
    }
    if !(omega0 > 0.0) {
        return Err(Error::invalid("rabi_profile: omega0 must be > 0"));
    }
    let n = samples_per_period.max(1024);
    let period = 2.0 * std::f64::consts::PI / omega0;
    // Sample the trajectory once; it is shared by all targets.
    let path: Vec<(f64, f64)> = (0..n)
        .map(|k| beam_center(period * k as f64 / n as f64))
        .collect();
    let mut out = Vec::with_capacity(targets.len());
    for &(tx, ty) in targets {
        let mut acc_x = Complex64::new(0.0, 0.0);
        let mut acc_y = Complex64::new(0.0, 0.0);
        let mut r2_min = f64::INFINITY;
        let mut r2_max = 0.0f64;
        for (k, &(bx, by)) in path.iter().enumerate() {
            let dx = bx - tx;
            let dy = by - ty;
            let r2 = dx * dx + dy * dy;
            r2_min = r2_min.min(r2);
            r2_max = r2_max.max(r2);
            if r2 == 0.0 {
                break;
            }
            let ang = -(harmonic as f64) * 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let ph = Complex64::new(ang.cos(), ang.sin());
            // Thin-beam kernel per ampere.
            let pref = consts::MU_0 / (2.0 * std::f64::consts::PI * r2);
            acc_x += ph * (pref * dy);
            acc_y += ph * (pref * -dx);
        }
        if r2_min == 0.0 || r2_min < 1e-18 * r2_max {
            return Err(Error::invalid(format!(
                "rabi_profile: target ({tx:.3e}, {ty:.3e}) lies on the beam trajectory"
            )));
        }
        let scale = 2.0 / n as f64;
        let amp = ((acc_x * scale).norm_sqr() + (acc_y * scale).norm_sqr()).sqrt();
        out.push(moment_over_hbar * amp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_gk15_real;

    fn k41_beam() -> BeamSpec {
        BeamSpec {
            mean_current: 100e-6,
            mod_angular_freq: 2.0 * std::f64::consts::PI * 254e6,
            mod_depth: 0.05,
            drift_length: 1.0,
            kinematics: kinematics_from_energy(18e3).unwrap(),
            waist: 50e-6,
            impact_distance: 250e-6,
            linewidth: 2.0 * std::f64::consts::PI * 25.0,
            energy_spread: 1.0,
        }
    }

    fn nv_beam() -> BeamSpec {
        BeamSpec {
            mean_current: 24.2e-9,
            mod_angular_freq: 2.0 * std::f64::consts::PI * 2.87e9,
            mod_depth: 0.05,
            drift_length: 0.03,
            kinematics: kinematics_from_energy(2e3).unwrap(),
            waist: 14e-9,
            impact_distance: 70e-9,
            linewidth: 0.0,
            energy_spread: 0.2,
        }
    }

    #[test]
    fn kinematics_frozen_values() {
        // 40-digit evaluation of gamma = 1 + E e/(m_e c^2), v = c sqrt(1 - 1/gamma^2).
        let k = kinematics_from_energy(18e3).unwrap();
        assert!((k.gamma - 1.035_225_121_304_329_7).abs() < 1e-14);
        assert!((k.velocity - 77_538_675.221_950_5).abs() < 1e-4);
        let k2 = kinematics_from_energy(2e3).unwrap();
        assert!((k2.velocity - 26_446_533.679_131_348).abs() < 1e-5);
        let k200 = kinematics_from_energy(200.0).unwrap();
        assert!((k200.velocity - 8_385_196.412_469_890_2).abs() < 1e-6);
        // Modulation wavelength at 2.87 GHz is about 9.2 mm.
        let lambda0 = k2.velocity / 2.87e9;
        assert!((lambda0 - 9.2e-3).abs() < 0.1e-3);
    }

    #[test]
    fn kinematics_edge_cases() {
        let k = kinematics_from_energy(0.0).unwrap();
        assert_eq!(k.gamma, 1.0);
        assert_eq!(k.velocity, 0.0);
        assert!(kinematics_from_energy(-1.0).is_err());
    }

    #[test]
    fn bunching_parameter_frozen_values() {
        // Closed-form r_b = l w0 v1/v0^2 at the two headline parameter sets,
        // frozen from a 40-digit evaluation.
        let r_k = bunching_parameter(&k41_beam()).unwrap();
        assert!(
            (r_k - 0.488_447_572_743_824_27).abs() < 1e-12,
            "K beam r_b = {r_k}"
        );
        let r_nv = bunching_parameter(&nv_beam()).unwrap();
        assert!(
            (r_nv - 0.508_403_743_709_328_84).abs() < 1e-12,
            "NV beam r_b = {r_nv}"
        );
    }

    #[test]
    fn bunching_zero_depth_and_overtaking() {
        let mut b = k41_beam();
        b.mod_depth = 0.0;
        assert_eq!(bunching_parameter(&b).unwrap(), 0.0);
        b.mod_depth = 0.05;
        b.drift_length = 3.0;
        assert!(matches!(
            bunching_parameter(&b),
            Err(Error::Overtaking(_))
        ));
        assert!(b.validate().is_err());
    }

    #[test]
    fn kepler_frozen_roots() {
        // Bisection oracle to 1e-10 on theta - r_b sin theta = tau.
        let cases = [
            (std::f64::consts::FRAC_PI_2, 0.5, 2.020_979_938_089_770_2),
            (1.0, 0.3, 1.288_091_313_211_837_7),
            (2.0, 0.9, 2.522_365_434_000_244_9),
            (0.3, 0.95, 1.177_450_104_709_831_1),
            (4.0, 0.7, 3.655_743_213_231_546_9),
            (-1.2, 0.5, -1.696_081_063_752_149_4),
            (7.0, 0.5, 7.462_095_085_192_774_2),
        ];
        for (tau, rb, want) in cases {
            let th = kepler_theta(tau, rb).unwrap();
            assert!((th - want).abs() < 1e-10, "theta({tau}, {rb}) = {th}");
            assert!((th - rb * th.sin() - tau).abs() <= 1e-12 * (1.0 + tau.abs()));
        }
    }

    #[test]
    fn kepler_trivial_and_monotone() {
        assert_eq!(kepler_theta(0.7, 0.0).unwrap(), 0.7);
        assert_eq!(kepler_theta(0.0, 0.5).unwrap(), 0.0);
        assert!(kepler_theta(0.0, 1.0).is_err());
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let tau = -3.0 + 6.0 * i as f64 / 199.0;
            let th = kepler_theta(tau, 0.93).unwrap();
            assert!(th > prev);
            prev = th;
        }
    }

    #[test]
    fn analytic_current_values_and_average() {
        let mc = ModulatedCurrent::new(0.5, 1e-4, 1e9, 7.7e7, 0.0).unwrap();
        // tau = 0 gives theta = 0 and I = I0/(1 - r_b).
        assert!((analytic_current(&mc, 0.0, 0.0) - 2e-4).abs() < 1e-18);
        let flat = ModulatedCurrent::new(0.0, 1e-4, 1e9, 7.7e7, 0.0).unwrap();
        assert_eq!(analytic_current(&flat, 0.3, 1e-7), 1e-4);
        // Charge conservation: period average equals I0.
        for rb in [0.1, 0.5, 0.9] {
            let mc = ModulatedCurrent::new(rb, 1e-4, 1e9, 7.7e7, 0.0).unwrap();
            let period = 2.0 * std::f64::consts::PI / 1e9;
            let (avg, _) = adaptive_gk15_real(
                |t| analytic_current(&mc, 0.0, t),
                0.0,
                period,
                1e-11,
                0.0,
                4000,
                &[],
            )
            .unwrap();
            assert!(
                ((avg / period) / 1e-4 - 1.0).abs() < 1e-9,
                "r_b = {rb}: average {avg}"
            );
        }
    }

    #[test]
    fn current_is_periodic() {
        let mc = ModulatedCurrent::new(0.7, 3e-5, 2e9, 5e7, 0.1).unwrap();
        let period = 2.0 * std::f64::consts::PI / 2e9;
        for k in 0..7 {
            let t = 1e-10 + 0.137e-9 * k as f64;
            let a = analytic_current(&mc, 0.02, t);
            let b = analytic_current(&mc, 0.02, t + 3.0 * period);
            assert!((a - b).abs() < 1e-9 * a);
        }
    }

    #[test]
    fn fourier_coefficient_values() {
        // 2 J_n(n/2) frozen from the power-series oracle.
        let i0 = 1e-4;
        let coeffs = [
            0.484_536_915_349_747_77,
            0.229_806_969_863_800_96,
            0.121_927_902_282_279_26,
            0.067_991_439_615_136_868,
            0.039_003_250_269_006_44,
        ];
        for (i, want) in coeffs.iter().enumerate() {
            let n = i as u32 + 1;
            let got = fourier_coefficient(n, 0.5, i0).unwrap();
            assert!(
                (got - want * i0).abs() < 1e-15,
                "I_{n} = {got:e}"
            );
        }
        // Headline number: the first harmonic of a 100 uA beam is ~48 uA.
        assert!((fourier_coefficient(1, 0.5, 100e-6).unwrap() - 48.45e-6).abs() < 0.01e-6);
        assert_eq!(fourier_coefficient(3, 0.0, i0).unwrap(), 0.0);
        assert!(fourier_coefficient(0, 0.5, i0).is_err());
    }

    #[test]
    fn velocity_spread_examples() {
        let mut b = k41_beam();
        assert!((velocity_spread_effect(&b).unwrap() - 5.555_555e-5).abs() < 1e-9);
        b.energy_spread = 2.0;
        assert!((velocity_spread_effect(&b).unwrap() - 1.111_111e-4).abs() < 1e-9);
        b.energy_spread = 0.0;
        assert_eq!(velocity_spread_effect(&b).unwrap(), 0.0);
    }

    #[test]
    fn thin_beam_field_magnitude_and_direction() {
        let b = thin_beam_field(48.45e-6, 0.0, 250e-6).unwrap();
        let mag = (b[0] * b[0] + b[1] * b[1]).sqrt();
        assert!((mag - 3.876e-8).abs() < 0.002e-8, "|B| = {mag:e}");
        // Beam at +y from the target: B points along +x.
        assert!(b[0] > 0.0 && b[1].abs() < 1e-30 && b[2] == 0.0);
        // 1/d scaling.
        let b2 = thin_beam_field(48.45e-6, 0.0, 500e-6).unwrap();
        assert!((b[0] / b2[0] - 2.0).abs() < 1e-12);
        assert!(thin_beam_field(1.0, 0.0, 0.0).is_err());
        let z = thin_beam_field(0.0, 1e-4, 0.0).unwrap();
        assert_eq!(z, [0.0, 0.0, 0.0]);
    }

    // Closed form by the circulation law: only the current enclosed within
    // radius d contributes, so |B| = mu0 I (1 - exp(-2 d^2/w^2)) / (2 pi d).
    fn ampere_gaussian(current: f64, waist: f64, d: f64) -> f64 {
        let enc = 1.0 - (-2.0 * d * d / (waist * waist)).exp();
        consts::MU_0 * current * enc / (2.0 * std::f64::consts::PI * d)
    }

    #[test]
    fn gaussian_field_matches_circulation_law() {
        let w = 50e-6;
        let i0 = 20e-6;
        for frac in [0.5, 1.0, 2.0, 5.0] {
            let d = frac * w;
            // Oblique offset to exercise both components.
            let off = (d * 0.6, d * 0.8);
            let b = gaussian_beam_field(i0, w, off).unwrap();
            let mag = (b[0] * b[0] + b[1] * b[1]).sqrt();
            let want = ampere_gaussian(i0, w, d);
            assert!(
                ((mag - want) / want).abs() < 1e-6,
                "d = {frac} w: {mag:e} vs {want:e}"
            );
            // Tangential direction: B parallel to (y, -x), perpendicular to the offset.
            let dot = b[0] * off.0 + b[1] * off.1;
            assert!(dot.abs() < 1e-8 * mag * d);
            let cross = b[0] * (-off.1) + b[1] * off.0;
            assert!(cross < 0.0, "field winds the wrong way");
        }
    }

    #[test]
    fn gaussian_field_limits() {
        let w = 50e-6;
        let i0 = 20e-6;
        assert_eq!(gaussian_beam_field(i0, w, (0.0, 0.0)).unwrap(), [0.0; 3]);
        // d = 5w: thin-beam approximation good to 0.5%.
        let d = 5.0 * w;
        let g = gaussian_beam_field(i0, w, (0.0, d)).unwrap();
        let t = thin_beam_field(i0, 0.0, d).unwrap();
        let rel = (g[0] - t[0]).abs() / t[0].abs();
        assert!(rel < 5e-3, "d=5w rel {rel}");
        // d = 2w: within 2%.
        let d = 2.0 * w;
        let g = gaussian_beam_field(i0, w, (d, 0.0)).unwrap();
        let t = thin_beam_field(i0, d, 0.0).unwrap();
        let rel = (g[1] - t[1]).abs() / t[1].abs();
        assert!(rel < 2e-2, "d=2w rel {rel}");
        // Narrow beam limit: ratio to thin beam within 1e-4 at w = d/100.
        let d = 1e-4;
        let g = gaussian_beam_field(i0, d / 100.0, (0.0, d)).unwrap();
        let t = thin_beam_field(i0, 0.0, d).unwrap();
        assert!((g[0] / t[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rabi_profile_static_beam_has_no_harmonics() {
        let out = rabi_profile(
            |_t| (3e-4, 0.0),
            1e9,
            &[(0.0, 0.0), (1e-4, 1e-4)],
            1,
            1.0,
            1024,
        )
        .unwrap();
        assert!(out.iter().all(|&v| v.abs() < 1e-18));
    }

    #[test]
    fn rabi_profile_rotating_beam_analytic() {
        // Beam center circling the target at fixed radius R: both field
        // components oscillate at omega0 with amplitude mu0/(2 pi R), so the
        // first-harmonic magnitude is sqrt(2) times that.
        let r = 2e-4;
        let w0 = 1e9;
        let out = rabi_profile(
            |t| (r * (w0 * t).cos(), r * (w0 * t).sin()),
            w0,
            &[(0.0, 0.0)],
            1,
            1.0,
            2048,
        )
        .unwrap();
        let want = std::f64::consts::SQRT_2 * consts::MU_0 / (2.0 * std::f64::consts::PI * r);
        assert!(
            ((out[0] - want) / want).abs() < 1e-9,
            "{} vs {want}",
            out[0]
        );
    }

    #[test]
    fn rabi_profile_rejections() {
        assert!(rabi_profile(|_t| (1e-4, 0.0), 1e9, &[(0.0, 0.0)], 0, 1.0, 1024).is_err());
        // Target sitting on the path.
        let r = 1e-4;
        let res = rabi_profile(
            |t| (r * (1e9 * t).cos(), r * (1e9 * t).sin()),
            1e9,
            &[(r, 0.0)],
            1,
            1.0,
            1024,
        );
        assert!(res.is_err());
    }

    #[test]
    fn rabi_profile_linear_trajectory_slope() {
        // Beam center oscillating along x around 3 d0 with amplitude 2 d0;
        // for targets far from the trajectory the first harmonic falls off
        // as (distance to the oscillation center)^-2.
        let w0 = 1e9;
        let d0 = 1e-5;
        let targets: Vec<(f64, f64)> = [8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&u| (-u * d0, 0.0))
            .collect();
        let vals = rabi_profile(
            |t| (d0 * (3.0 + 2.0 * (w0 * t).cos()), 0.0),
            w0,
            &targets,
            1,
            1.0,
            2048,
        )
        .unwrap();
        let logs: Vec<(f64, f64)> = targets
            .iter()
            .zip(&vals)
            .map(|(t, v)| ((-t.0 + 3.0 * d0).ln(), v.ln()))
            .collect();
        // Least-squares slope over the doubling sequence.
        let n = logs.len() as f64;
        let mx: f64 = logs.iter().map(|p| p.0).sum::<f64>() / n;
        let my: f64 = logs.iter().map(|p| p.1).sum::<f64>() / n;
        let slope: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / logs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 2.0).abs() < 0.05, "slope {slope}");
    }
}
