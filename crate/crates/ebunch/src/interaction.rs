//! Single-electron interaction physics: transition probabilities from one
//! passing electron, the single-scattering density-matrix update, and the
//! small recoil/loss estimates that bound the regime of validity.

use num_complex::Complex64;

use crate::beam::ElectronKinematics;
use crate::bloch::BlochState;
use crate::consts;
use crate::error::{Error, Result};
use crate::special::bessel_k0k1;

/// Extrapolated total electron-atom scattering cross section used for the
/// incoherent-loss estimate, m^2.
pub const TOTAL_SCATTERING_CROSS_SECTION: f64 = 1.5e-21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    K41Hyperfine,
    NvSpin,
    Generic,
}

/// A driven two-level system with its transition moments and decay rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelSystem {
    /// Transition angular frequency, rad/s.
    pub omega0: f64,
    pub kind: SystemKind,
    /// Magnetic transition moment vector, J/T.
    pub magnetic_moment: [f64; 3],
    /// Electric transition dipole vector, C m.
    pub electric_moment: Option<[f64; 3]>,
    /// Population decay rate, 1/s.
    pub gamma1: f64,
    /// Coherence decay rate, 1/s.
    pub gamma2: f64,
}

impl TwoLevelSystem {
    /// The hyperfine clock transition of 41K: effective moment g_S mu_B / 2
    /// along the field axis.
    pub fn k41_hyperfine(omega0: f64, gamma1: f64, gamma2: f64) -> Self {
        TwoLevelSystem {
            omega0,
            kind: SystemKind::K41Hyperfine,
            magnetic_moment: [consts::G_S * consts::MU_B / 2.0, 0.0, 0.0],
            electric_moment: None,
            gamma1,
            gamma2,
        }
    }

    /// The NV- ground-state spin transition: effective moment
    /// g_S mu_B / sqrt(2) along the field axis.
    pub fn nv_spin(omega0: f64, gamma1: f64, gamma2: f64) -> Self {
        TwoLevelSystem {
            omega0,
            kind: SystemKind::NvSpin,
            magnetic_moment: [consts::G_S * consts::MU_B / std::f64::consts::SQRT_2, 0.0, 0.0],
            electric_moment: None,
            gamma1,
            gamma2,
        }
    }

    pub fn generic(
        omega0: f64,
        magnetic_moment: [f64; 3],
        electric_moment: Option<[f64; 3]>,
        gamma1: f64,
        gamma2: f64,
    ) -> Self {
        TwoLevelSystem {
            omega0,
            kind: SystemKind::Generic,
            magnetic_moment,
            electric_moment,
            gamma1,
            gamma2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 > 0.0) {
            return Err(Error::invalid("TwoLevelSystem: omega0 must be > 0"));
        }
        if !(self.gamma1 >= 0.0) || !(self.gamma2 >= self.gamma1 / 2.0) {
            return Err(Error::invalid(
                "TwoLevelSystem: need gamma2 >= gamma1/2 >= 0",
            ));
        }
        Ok(())
    }
}

/// One scattering event: excitation probability and electron-state overlaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterChannel {
    /// Transition probability per electron.
    pub p: f64,
    /// Overlap of scattered with incoming electron state (phase factor for
    /// a coherent beam).
    pub lambda1: Complex64,
    /// Overlap between the two scattered states.
    pub lambda2: Complex64,
}

impl ScatterChannel {
    /// Coherent channel of an electron arriving at modulation phase phi:
    /// unit-modulus overlaps.
    pub fn coherent(p: f64, phi: f64) -> Self {
        ScatterChannel {
            p,
            lambda1: Complex64::from_polar(1.0, phi),
            lambda2: Complex64::from_polar(1.0, -2.0 * phi),
        }
    }

    /// Incoherent channel: scattered electron states orthogonal to the
    /// incoming one and to each other.
    pub fn incoherent(p: f64) -> Self {
        ScatterChannel {
            p,
            lambda1: Complex64::new(0.0, 0.0),
            lambda2: Complex64::new(0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid("ScatterChannel: P must be in [0, 1]"));
        }
        if self.lambda1.norm() > 1.0 + 1e-12 || self.lambda2.norm() > 1.0 + 1e-12 {
            return Err(Error::invalid("ScatterChannel: overlaps must have |.| <= 1"));
        }
        Ok(())
    }
}

/// Magnetic transition probability from a single electron passing at
/// transverse position (x, y) relative to the system.
///
/// P = (mu0 e |y mu_x - x mu_y| omega K1(xi) / (2 pi hbar r gamma v))^2
/// with xi = omega r / (gamma v). Symmetric in e <-> g.
pub fn magnetic_transition_probability(
    sys: &TwoLevelSystem,
    kin: &ElectronKinematics,
    x: f64,
    y: f64,
) -> Result<f64> {
    sys.validate()?;
    let r2 = x * x + y * y;
    if r2 == 0.0 {
        return Err(Error::invalid(
            "magnetic_transition_probability: electron on top of the system",
        ));
    }
    let r = r2.sqrt();
    let cross = (y * sys.magnetic_moment[0] - x * sys.magnetic_moment[1]).abs();
    if cross == 0.0 {
        return Ok(0.0);
    }
    let xi = sys.omega0 * r / (kin.gamma * kin.velocity);
    if xi > 600.0 {
        return Ok(0.0);
    }
    let (_, k1) = bessel_k0k1(xi);
    let amp = consts::MU_0 * consts::E_CHARGE * cross * sys.omega0 * k1
        / (2.0 * std::f64::consts::PI * consts::HBAR * r * kin.gamma * kin.velocity);
    Ok(amp * amp)
}

/// Electric-dipole transition probability from a single passing electron,
/// with an optional local-field reduction factor for a system embedded in a
/// dielectric (factor 1 in vacuum).
pub fn electric_transition_probability(
    sys: &TwoLevelSystem,
    kin: &ElectronKinematics,
    x: f64,
    y: f64,
    dielectric_factor: f64,
) -> Result<f64> {
    sys.validate()?;
    if !(dielectric_factor > 0.0 && dielectric_factor <= 1.0) {
        return Err(Error::invalid(
            "electric_transition_probability: dielectric factor must be in (0, 1]",
        ));
    }
    let dvec = sys.electric_moment.ok_or_else(|| {
        Error::invalid("electric_transition_probability: system has no electric moment")
    })?;
    let r2 = x * x + y * y;
    if r2 == 0.0 {
        return Err(Error::invalid(
            "electric_transition_probability: electron on top of the system",
        ));
    }
    let r = r2.sqrt();
    let xi = sys.omega0 * r / (kin.gamma * kin.velocity);
    if xi > 600.0 {
        return Ok(0.0);
    }
    let (k0, k1) = bessel_k0k1(xi);
    let d_rad = (dvec[0] * x + dvec[1] * y) / r;
    let pref = consts::E_CHARGE * sys.omega0
        / (2.0
            * std::f64::consts::PI
            * consts::HBAR
            * consts::EPS_0
            * kin.gamma
            * kin.velocity
            * kin.velocity);
    let radial = d_rad * k1;
    let axial = dvec[2] / kin.gamma * k0;
    Ok(pref * pref * (radial * radial + axial * axial) * dielectric_factor * dielectric_factor)
}

/// Change of the reduced density matrix from one scattering event.
///
/// The update is linear in (rho_eg, rho_ge, rho_ee, rho_gg); the populations
/// change by 2 sqrt(P) Im(L1 rho_eg) + P (rho_gg - rho_ee) and the coherence
/// by -P rho_eg + P L2 rho_ge + i sqrt(P) conj(L1) (rho_gg - rho_ee).
/// The result is repaired only when within 1e-12 of a valid state.
pub fn single_scatter_update(rho: &BlochState, ch: &ScatterChannel) -> Result<BlochState> {
    ch.validate()?;
    rho.validate()?;
    let sp = ch.p.sqrt();
    let reg = rho.rho_eg;
    let rge = reg.conj();
    let pop_diff = rho.rho_gg - rho.rho_ee;
    let d_ee = 2.0 * sp * (ch.lambda1 * reg).im + ch.p * pop_diff;
    let d_eg = -ch.p * reg
        + ch.p * ch.lambda2 * rge
        + Complex64::i() * ch.lambda1.conj() * sp * pop_diff;
    BlochState {
        rho_ee: rho.rho_ee + d_ee,
        rho_gg: rho.rho_gg - d_ee,
        rho_eg: reg + d_eg,
    }
    .repaired(1e-12)
}

/// Longitudinal recoil ratio delta_p / Delta_p_z = 4 pi Delta_z0 / lambda0,
/// which must be small for the scattering to leave no which-path record in
/// the electron's longitudinal state.
pub fn momentum_shift_check(
    sys: &TwoLevelSystem,
    kin: &ElectronKinematics,
    delta_z0: f64,
) -> Result<f64> {
    sys.validate()?;
    if !(delta_z0 > 0.0) {
        return Err(Error::invalid("momentum_shift_check: Delta_z0 must be > 0"));
    }
    Ok(2.0 * delta_z0 * sys.omega0 / kin.velocity)
}

/// Lamb-Dicke parameter eta = delta_p_perp / sqrt(2 m hbar omega_trap) for a
/// trapped target.
pub fn lamb_dicke_bound(dp_perp: f64, mass: f64, trap_freq: f64) -> Result<f64> {
    if !(dp_perp >= 0.0) || !(mass > 0.0) || !(trap_freq > 0.0) {
        return Err(Error::invalid(
            "lamb_dicke_bound: need dp >= 0, mass > 0, trap_freq > 0",
        ));
    }
    Ok(dp_perp / (2.0 * mass * consts::HBAR * trap_freq).sqrt())
}

/// Fraction of targets incoherently scattered out of the two-level manifold
/// after time t in a current density j: 1 - exp(-sigma j t / e).
pub fn incoherent_loss_fraction(sigma_tot: f64, current_density: f64, t: f64) -> Result<f64> {
    if !(sigma_tot >= 0.0) || !(current_density >= 0.0) || !(t >= 0.0) {
        return Err(Error::invalid(
            "incoherent_loss_fraction: all inputs must be non-negative",
        ));
    }
    Ok(-(-sigma_tot * current_density * t / consts::E_CHARGE).exp_m1())
}

/// First-order Doppler detuning v_atom f0 / v_beam of the effective drive
/// seen by a moving target.
pub fn doppler_detuning(v_atom: f64, f0: f64, v_beam: f64) -> Result<f64> {
    if !(v_beam > 0.0) {
        return Err(Error::invalid("doppler_detuning: beam velocity must be > 0"));
    }
    if v_atom.abs() >= 0.1 * v_beam {
        return Err(Error::invalid(
            "doppler_detuning: atom velocity must be small against the beam",
        ));
    }
    Ok(v_atom * f0 / v_beam)
}
