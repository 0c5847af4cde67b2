//! Two-level density-matrix evolution under the bunched-beam drive.
//!
//! Three drive models are implemented. The mean-field model applies the
//! rotating-wave approximation to the average current and adds the
//! oscillator phase noise as extra coherence damping b. The shot-noise model
//! keeps the same structure with additional damping a = P I0/e and a
//! second-harmonic cross coupling. The spike-train model drives the system
//! with individual electron pulses in the rotating frame without the RWA,
//! with analytic free evolution between pulses.

use num_complex::Complex64;

use crate::beam::{BeamSpec, ElectronKinematics};
use crate::consts;
use crate::ensemble::{ElectronSample, ElectronStream};
use crate::error::{Error, Result};
use crate::interaction::{magnetic_transition_probability, SystemKind, TwoLevelSystem};
use crate::ode::{integrate_ode, OdeOptions};

/// Reduced density matrix of a two-level system in the basis {e, g}.
///
/// The Bloch-vector convention is u = 2 Re rho_eg, v = 2 Im rho_eg,
/// w = rho_ee - rho_gg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochState {
    pub rho_ee: f64,
    pub rho_gg: f64,
    /// Coherence <e|rho|g>.
    pub rho_eg: Complex64,
}

impl BlochState {
    pub fn ground() -> Self {
        BlochState {
            rho_ee: 0.0,
            rho_gg: 1.0,
            rho_eg: Complex64::new(0.0, 0.0),
        }
    }

    pub fn excited() -> Self {
        BlochState {
            rho_ee: 1.0,
            rho_gg: 0.0,
            rho_eg: Complex64::new(0.0, 0.0),
        }
    }

    pub fn from_bloch_vector(u: f64, v: f64, w: f64) -> Self {
        BlochState {
            rho_ee: 0.5 * (1.0 + w),
            rho_gg: 0.5 * (1.0 - w),
            rho_eg: Complex64::new(0.5 * u, 0.5 * v),
        }
    }

    pub fn bloch_vector(&self) -> (f64, f64, f64) {
        (
            2.0 * self.rho_eg.re,
            2.0 * self.rho_eg.im,
            self.rho_ee - self.rho_gg,
        )
    }

    pub fn inversion(&self) -> f64 {
        self.rho_ee - self.rho_gg
    }

    fn min_eigenvalue(&self) -> f64 {
        let half_tr = 0.5 * (self.rho_ee + self.rho_gg);
        let half_dw = 0.5 * (self.rho_ee - self.rho_gg);
        half_tr - (half_dw * half_dw + self.rho_eg.norm_sqr()).sqrt()
    }

    /// Largest deviation from a valid density matrix: trace error or
    /// negative-eigenvalue magnitude, whichever is worse.
    pub fn violation(&self) -> f64 {
        let trace_err = (self.rho_ee + self.rho_gg - 1.0).abs();
        trace_err.max((-self.min_eigenvalue()).max(0.0))
    }

    /// Checks trace within 1e-9 and positivity down to -1e-9.
    pub fn validate(&self) -> Result<()> {
        let v = self.violation();
        if v <= 1e-9 {
            Ok(())
        } else {
            Err(Error::UnphysicalState(format!(
                "density matrix violates trace/positivity by {v:.3e}"
            )))
        }
    }

    /// Projects onto the nearest valid density matrix when the violation is
    /// below `tol`; larger violations indicate a contract breach and error.
    pub fn repaired(self, tol: f64) -> Result<Self> {
        let v = self.violation();
        if v == 0.0 {
            return Ok(self);
        }
        if v >= tol {
            return Err(Error::UnphysicalState(format!(
                "density matrix violates trace/positivity by {v:.3e} (tolerance {tol:.1e})"
            )));
        }
        let mut ee = self.rho_ee.max(0.0);
        let mut gg = self.rho_gg.max(0.0);
        let tr = ee + gg;
        if tr > 0.0 {
            ee /= tr;
            gg /= tr;
        } else {
            ee = 0.5;
            gg = 0.5;
        }
        let mut eg = self.rho_eg;
        let max_coh2 = ee * gg;
        if eg.norm_sqr() > max_coh2 {
            eg *= (max_coh2 / eg.norm_sqr()).sqrt();
        }
        Ok(BlochState {
            rho_ee: ee,
            rho_gg: gg,
            rho_eg: eg,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveVariant {
    MeanRwa,
    ShotNoise,
    SpikeTrain,
}

/// Parameters of the continuous drive models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSpec {
    pub variant: DriveVariant,
    /// Rabi frequency, rad/s.
    pub rabi: f64,
    /// Phase-noise dephasing b = (FWHM linewidth)/2, rad/s.
    pub dephasing: f64,
    /// Shot-noise damping a = P I0/e, 1/s.
    pub shot_damping: f64,
    /// I_{2 omega0} / (2 I0).
    pub second_harmonic_ratio: f64,
}

impl DriveSpec {
    pub fn mean_rwa(rabi: f64, dephasing: f64) -> Self {
        DriveSpec {
            variant: DriveVariant::MeanRwa,
            rabi,
            dephasing,
            shot_damping: 0.0,
            second_harmonic_ratio: 0.0,
        }
    }

    pub fn shot_noise(rabi: f64, dephasing: f64, shot_damping: f64, chi: f64) -> Self {
        DriveSpec {
            variant: DriveVariant::ShotNoise,
            rabi,
            dephasing,
            shot_damping,
            second_harmonic_ratio: chi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi >= 0.0) || !(self.dephasing >= 0.0) || !(self.shot_damping >= 0.0) {
            return Err(Error::invalid("DriveSpec: Omega, b, a must all be >= 0"));
        }
        if !(self.second_harmonic_ratio.abs() <= 1.0) {
            return Err(Error::invalid(
                "DriveSpec: |I_2w0/(2 I0)| cannot exceed 1",
            ));
        }
        Ok(())
    }
}

/// Half the FWHM linewidth: the dephasing rate contributed by oscillator
/// phase noise.
pub fn linewidth_to_b(delta_omega_fwhm: f64) -> Result<f64> {
    if !(delta_omega_fwhm >= 0.0) {
        return Err(Error::invalid("linewidth_to_b: linewidth must be >= 0"));
    }
    Ok(delta_omega_fwhm / 2.0)
}

/// Signed coupling energy -mu . B for a given magnetic field, with the
/// kind-specific effective moment baked into the system.
pub fn transition_moment(sys: &TwoLevelSystem, field: [f64; 3]) -> Result<f64> {
    sys.validate()?;
    if sys.kind == SystemKind::Generic && sys.magnetic_moment == [0.0; 3] {
        return Err(Error::invalid(
            "transition_moment: generic system needs an explicit moment vector",
        ));
    }
    Ok(-(sys.magnetic_moment[0] * field[0]
        + sys.magnetic_moment[1] * field[1]
        + sys.magnetic_moment[2] * field[2]))
}

/// Rabi frequency |mu| B_amp / hbar of the harmonic current component
/// I_w0 at impact distance d, using the thin-beam field amplitude
/// B_amp = mu0 I_w0 / (2 pi d).
pub fn rabi_from_current(sys: &TwoLevelSystem, i_omega0: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid("rabi_from_current: d must be > 0"));
    }
    if !(i_omega0 >= 0.0) {
        return Err(Error::invalid("rabi_from_current: current must be >= 0"));
    }
    let b_amp = consts::MU_0 * i_omega0 / (2.0 * std::f64::consts::PI * d);
    // The thin-beam field at the system points along the moment axis.
    let t = transition_moment(sys, [b_amp, 0.0, 0.0])?;
    Ok(t.abs() / consts::HBAR)
}

/// Generator of the mean-field RWA master equation on the vector
/// (rho_eg, rho_ge, rho_ee, rho_gg).
pub fn mean_rwa_generator(sys: &TwoLevelSystem, drive: &DriveSpec) -> [[Complex64; 4]; 4] {
    let g2b = Complex64::new(-(sys.gamma2 + drive.dephasing), 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let half = Complex64::new(0.0, drive.rabi / 2.0);
    let g1 = Complex64::new(sys.gamma1, 0.0);
    [
        [g2b, zero, -half, half],
        [zero, g2b, half, -half],
        [-half, half, -g1, zero],
        [half, -half, g1, zero],
    ]
}

/// Generator of the shot-noise master equation on (rho_eg, rho_ge, rho_ee,
/// rho_gg): mean-field terms plus damping a on all entries and the
/// second-harmonic cross coupling a chi on the coherences.
pub fn shot_noise_generator(sys: &TwoLevelSystem, drive: &DriveSpec) -> [[Complex64; 4]; 4] {
    let mut m = mean_rwa_generator(sys, drive);
    let a = drive.shot_damping;
    let chi = drive.second_harmonic_ratio;
    m[0][0] += Complex64::new(-a, 0.0);
    m[0][1] += Complex64::new(a * chi, 0.0);
    m[1][0] += Complex64::new(a * chi, 0.0);
    m[1][1] += Complex64::new(-a, 0.0);
    m[2][2] += Complex64::new(-a, 0.0);
    m[2][3] += Complex64::new(a, 0.0);
    m[3][2] += Complex64::new(a, 0.0);
    m[3][3] += Complex64::new(-a, 0.0);
    m
}

fn solve_linear_bloch(
    sys: &TwoLevelSystem,
    drive: &DriveSpec,
    rho0: &BlochState,
    t_grid: &[f64],
    shot: bool,
) -> Result<Vec<BlochState>> {
    sys.validate()?;
    drive.validate()?;
    rho0.validate()?;
    if t_grid.is_empty() {
        return Err(Error::invalid("solver: empty time grid"));
    }
    let omega = drive.rabi;
    let g1 = sys.gamma1;
    let g2b = sys.gamma2 + drive.dephasing;
    let (a, chi) = if shot {
        (drive.shot_damping, drive.second_harmonic_ratio)
    } else {
        (0.0, 0.0)
    };
    let (u0, v0, w0) = rho0.bloch_vector();
    let t0 = t_grid[0];
    let t_end = *t_grid.last().unwrap();
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (u, v, w) = (y[0], y[1], y[2]);
        dy[0] = -(g2b + a - a * chi) * u;
        dy[1] = -(g2b + a + a * chi) * v - omega * w;
        dy[2] = omega * v - g1 * (w + 1.0) - 2.0 * a * w;
    };
    let states = integrate_ode(
        rhs,
        t0,
        t_end,
        &[u0, v0, w0],
        t_grid,
        &OdeOptions::default(),
    )?;
    Ok(states
        .into_iter()
        .map(|y| BlochState::from_bloch_vector(y[0], y[1], y[2]))
        .collect())
}

/// Mean-field RWA evolution: coherences damped at gamma2 + b, populations
/// at gamma1, resonant drive Omega.
pub fn solve_mean_rwa(
    sys: &TwoLevelSystem,
    drive: &DriveSpec,
    rho0: &BlochState,
    t_grid: &[f64],
) -> Result<Vec<BlochState>> {
    if drive.variant != DriveVariant::MeanRwa {
        return Err(Error::invalid("solve_mean_rwa: drive variant mismatch"));
    }
    solve_linear_bloch(sys, drive, rho0, t_grid, false)
}

/// Ratio a/Omega and whether the shot-noise correction is comfortably
/// perturbative (a <= Omega/100).
pub fn shot_noise_validity(drive: &DriveSpec) -> (f64, bool) {
    if drive.rabi == 0.0 {
        return (f64::INFINITY, drive.shot_damping == 0.0);
    }
    let ratio = drive.shot_damping / drive.rabi;
    (ratio, ratio <= 0.01)
}

/// Shot-noise-corrected evolution; reduces exactly to the mean-field
/// equations when a = 0.
pub fn solve_shot_noise(
    sys: &TwoLevelSystem,
    drive: &DriveSpec,
    rho0: &BlochState,
    t_grid: &[f64],
) -> Result<Vec<BlochState>> {
    if drive.variant != DriveVariant::ShotNoise {
        return Err(Error::invalid("solve_shot_noise: drive variant mismatch"));
    }
    solve_linear_bloch(sys, drive, rho0, t_grid, true)
}

/// Rotating-frame Bloch equations without the RWA, for an arbitrary
/// time-dependent coupling energy T(t) (in J). Intended for validity checks
/// of the averaged models against the full oscillatory drive.
pub fn solve_rotating_frame<F>(
    sys: &TwoLevelSystem,
    mut coupling: F,
    rho0: &BlochState,
    t_grid: &[f64],
) -> Result<Vec<BlochState>>
where
    F: FnMut(f64) -> f64,
{
    sys.validate()?;
    rho0.validate()?;
    if t_grid.is_empty() {
        return Err(Error::invalid("solver: empty time grid"));
    }
    let (u0, v0, w0) = rho0.bloch_vector();
    let w0_freq = sys.omega0;
    let g1 = sys.gamma1;
    let g2 = sys.gamma2;
    let rhs = move |t: f64, y: &[f64], dy: &mut [f64]| {
        let g = 2.0 * coupling(t) / consts::HBAR;
        let (s, c) = (w0_freq * t).sin_cos();
        let (u, v, w) = (y[0], y[1], y[2]);
        dy[0] = -g2 * u - g * w * s;
        dy[1] = -g2 * v + g * w * c;
        dy[2] = -g * (v * c - u * s) - g1 * (w + 1.0);
    };
    let states = integrate_ode(
        rhs,
        t_grid[0],
        *t_grid.last().unwrap(),
        &[u0, v0, w0],
        t_grid,
        &OdeOptions::default(),
    )?;
    Ok(states
        .into_iter()
        .map(|y| BlochState::from_bloch_vector(y[0], y[1], y[2]))
        .collect())
}

/// How each electron pulse is applied in the spike-train solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeMethod {
    /// Impulse rotation about the in-plane axis at the arrival phase, by the
    /// full first-order pulse angle 2 sqrt(P(r_perp)). Exact in the
    /// short-pulse limit and cheap enough for billions of electrons.
    AnalyticKick,
    /// Non-RWA integration of each pulse over a window of
    /// 2 half_widths d/(gamma v) on either side of the arrival, fixed
    /// substep (window length)/substeps, overlapping windows merged.
    WindowedRk { half_widths: f64, substeps: usize },
}

impl Default for SpikeMethod {
    fn default() -> Self {
        SpikeMethod::AnalyticKick
    }
}

/// Beam-to-target geometry for the spike solver: the beam axis passes at
/// distance d from the system, with nominal kinematics for window sizing.
#[derive(Debug, Clone, Copy)]
pub struct SpikeGeometry {
    pub impact_distance: f64,
    pub kinematics: ElectronKinematics,
}

fn free_evolve(state: &mut (f64, f64, f64), g1: f64, g2: f64, dt: f64) {
    if dt <= 0.0 {
        return;
    }
    let c = (-g2 * dt).exp();
    state.0 *= c;
    state.1 *= c;
    state.2 = -1.0 + (state.2 + 1.0) * (-g1 * dt).exp();
}

fn kin_from_velocity(v: f64) -> ElectronKinematics {
    let beta2 = (v / consts::C) * (v / consts::C);
    let gamma = 1.0 / (1.0 - beta2).sqrt();
    ElectronKinematics {
        kinetic_energy: (gamma - 1.0) * consts::M_E_C2 / consts::E_CHARGE,
        velocity: v,
        gamma,
    }
}

struct GridRecorder<'a> {
    t_grid: &'a [f64],
    next: usize,
    out: Vec<BlochState>,
}

impl<'a> GridRecorder<'a> {
    fn new(t_grid: &'a [f64]) -> Self {
        GridRecorder {
            t_grid,
            next: 0,
            out: Vec::with_capacity(t_grid.len()),
        }
    }

    /// Records every grid point in [t_cur, t_stop] using analytic free
    /// evolution from `state` at t_cur, without mutating the caller's state.
    fn record_free_until(
        &mut self,
        state: &(f64, f64, f64),
        t_cur: f64,
        t_stop: f64,
        g1: f64,
        g2: f64,
    ) {
        while self.next < self.t_grid.len() && self.t_grid[self.next] <= t_stop {
            let mut s = *state;
            free_evolve(&mut s, g1, g2, self.t_grid[self.next] - t_cur);
            self.out.push(BlochState::from_bloch_vector(s.0, s.1, s.2));
            self.next += 1;
        }
    }

    fn record_at(&mut self, state: &(f64, f64, f64), t: f64) {
        while self.next < self.t_grid.len() && self.t_grid[self.next] <= t {
            self.out
                .push(BlochState::from_bloch_vector(state.0, state.1, state.2));
            self.next += 1;
        }
    }
}

/// Rotation of the Bloch vector about the equatorial axis (cos phi, sin phi)
/// by angle theta.
fn apply_kick(state: &mut (f64, f64, f64), phi: f64, theta: f64) {
    let (s, c) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (u, v, w) = *state;
    let proj = c * u + s * v;
    state.0 = u * ct + s * w * st + c * proj * (1.0 - ct);
    state.1 = v * ct - c * w * st + s * proj * (1.0 - ct);
    state.2 = w * ct + (c * v - s * u) * st;
}

fn pulse_coupling(sys: &TwoLevelSystem, el: &ElectronSample, d: f64) -> (f64, f64, f64, f64) {
    // Returns (x, y_abs, cross, gamma) for the electron in target-centred
    // coordinates.
    let x = el.transverse_offset.0;
    let y = d + el.transverse_offset.1;
    let cross = y * sys.magnetic_moment[0] - x * sys.magnetic_moment[1];
    let v = el.velocity;
    let beta2 = (v / consts::C) * (v / consts::C);
    let gamma = 1.0 / (1.0 - beta2).sqrt();
    (x, y, cross, gamma)
}

/// Drives one trajectory with an explicit electron sequence (times sorted by
/// arrival). Records the state on `t_grid`; electrons outside the grid span
/// still kick the state while evolution passes them.
pub fn solve_spike_train_single<I>(
    sys: &TwoLevelSystem,
    electrons: I,
    geometry: &SpikeGeometry,
    rho0: &BlochState,
    t_grid: &[f64],
    method: SpikeMethod,
) -> Result<Vec<BlochState>>
where
    I: IntoIterator<Item = ElectronSample>,
{
    sys.validate()?;
    rho0.validate()?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("spike solver: time grid must be ascending"));
    }
    let period = 2.0 * std::f64::consts::PI / sys.omega0;
    let d = geometry.impact_distance;
    let gv = geometry.kinematics.gamma * geometry.kinematics.velocity;
    if let SpikeMethod::WindowedRk {
        half_widths,
        substeps,
    } = method
    {
        if !(half_widths > 0.0) || substeps == 0 {
            return Err(Error::invalid(
                "spike solver: window half-widths and substeps must be positive",
            ));
        }
        let window = 2.0 * half_widths * d / gv;
        if window > period {
            return Err(Error::invalid(format!(
                "spike solver: interaction window {window:.3e} s exceeds the \
                 oscillation period {period:.3e} s; the pulse is not impulsive"
            )));
        }
    }
    let order_tol = 1e-6 * period;

    let g1 = sys.gamma1;
    let g2 = sys.gamma2;
    let mut state = {
        let (u, v, w) = rho0.bloch_vector();
        (u, v, w)
    };
    let mut rec = GridRecorder::new(t_grid);
    let mut t_cur = t_grid[0];
    let mut prev_arrival = f64::NEG_INFINITY;
    let mut check_order = |t_arrive: f64| -> Result<()> {
        if t_arrive < prev_arrival - order_tol {
            return Err(Error::Overtaking(format!(
                "spike solver: electron at t = {t_arrive:.6e} s arrives out of order"
            )));
        }
        prev_arrival = prev_arrival.max(t_arrive);
        if t_arrive < t_grid[0] - order_tol {
            return Err(Error::invalid(format!(
                "spike solver: electron at t = {t_arrive:.6e} s precedes the output grid"
            )));
        }
        Ok(())
    };

    match method {
        SpikeMethod::AnalyticKick => {
            for el in electrons {
                check_order(el.t_arrive)?;
                let t_k = el.t_arrive.max(t_cur);
                rec.record_free_until(&state, t_cur, t_k.min(*t_grid.last().unwrap()), g1, g2);
                free_evolve(&mut state, g1, g2, t_k - t_cur);
                t_cur = t_k;
                let (x, y, cross, _) = pulse_coupling(sys, &el, d);
                if cross != 0.0 {
                    let kin = kin_from_velocity(el.velocity);
                    let p = magnetic_transition_probability(sys, &kin, x, y)?;
                    // Coupling energy -mu.B has sign -cross; the rotation
                    // axis phase absorbs it as a pi offset.
                    let phi = if cross > 0.0 {
                        sys.omega0 * t_k + std::f64::consts::PI
                    } else {
                        sys.omega0 * t_k
                    };
                    apply_kick(&mut state, phi, 2.0 * p.sqrt());
                }
            }
        }
        SpikeMethod::WindowedRk {
            half_widths,
            substeps,
        } => {
            let half = half_widths * d / gv;
            let h0 = 2.0 * half / substeps as f64;
            let mut members: Vec<ElectronSample> = Vec::new();
            let mut win: Option<(f64, f64)> = None;
            let mut windows_done = 0usize;
            let mut it = electrons.into_iter();
            loop {
                let el = it.next();
                if let Some(e) = &el {
                    check_order(e.t_arrive)?;
                }
                let extend = match (&el, &win) {
                    (Some(e), Some((_, hi))) => e.t_arrive - half <= *hi,
                    _ => false,
                };
                if extend {
                    if let (Some(e), Some((_, hi))) = (&el, &mut win) {
                        *hi = hi.max(e.t_arrive + half);
                    }
                    members.push(el.unwrap());
                    continue;
                }
                // Flush the current merged window.
                if let Some((lo, hi)) = win.take() {
                    let start = lo.max(t_cur);
                    rec.record_free_until(
                        &state,
                        t_cur,
                        start.min(*t_grid.last().unwrap()),
                        g1,
                        g2,
                    );
                    free_evolve(&mut state, g1, g2, start - t_cur);
                    t_cur = start;
                    integrate_window(
                        sys,
                        &members,
                        d,
                        &mut state,
                        &mut t_cur,
                        hi,
                        h0,
                        &mut rec,
                        windows_done % 4096 == 0,
                    )?;
                    windows_done += 1;
                    members.clear();
                }
                match el {
                    Some(e) => {
                        win = Some((e.t_arrive - half, e.t_arrive + half));
                        members.push(e);
                    }
                    None => break,
                }
            }
        }
    }
    let t_last = *t_grid.last().unwrap();
    rec.record_free_until(&state, t_cur, t_last, g1, g2);
    debug_assert_eq!(rec.out.len(), t_grid.len());
    Ok(rec.out)
}

fn spike_field_coupling(sys: &TwoLevelSystem, members: &[ElectronSample], d: f64, t: f64) -> f64 {
    // Coupling energy T(t) = -mu.B(t) summed over the window's electrons.
    let mut acc = 0.0;
    for el in members {
        let (x, y, cross, gamma) = pulse_coupling(sys, el, d);
        if cross == 0.0 {
            continue;
        }
        let r2 = x * x + y * y;
        let gv = gamma * el.velocity;
        let u = gv * (t - el.t_arrive);
        let q = r2 + u * u;
        acc -= consts::MU_0 * consts::E_CHARGE * gv * cross
            / (4.0 * std::f64::consts::PI * q * q.sqrt());
    }
    acc
}

#[allow(clippy::too_many_arguments)]
fn integrate_window(
    sys: &TwoLevelSystem,
    members: &[ElectronSample],
    d: f64,
    state: &mut (f64, f64, f64),
    t_cur: &mut f64,
    t_end: f64,
    h0: f64,
    rec: &mut GridRecorder<'_>,
    richardson: bool,
) -> Result<()> {
    let g1 = sys.gamma1;
    let g2 = sys.gamma2;
    let w0 = sys.omega0;
    let deriv = |t: f64, y: &(f64, f64, f64)| -> (f64, f64, f64) {
        let g = 2.0 * spike_field_coupling(sys, members, d, t) / consts::HBAR;
        let (s, c) = (w0 * t).sin_cos();
        (
            -g2 * y.0 - g * y.2 * s,
            -g2 * y.1 + g * y.2 * c,
            -g * (y.1 * c - y.0 * s) - g1 * (y.2 + 1.0),
        )
    };
    let rk4_step = |t: f64, y: &(f64, f64, f64), h: f64| -> (f64, f64, f64) {
        let k1 = deriv(t, y);
        let y2 = (y.0 + 0.5 * h * k1.0, y.1 + 0.5 * h * k1.1, y.2 + 0.5 * h * k1.2);
        let k2 = deriv(t + 0.5 * h, &y2);
        let y3 = (y.0 + 0.5 * h * k2.0, y.1 + 0.5 * h * k2.1, y.2 + 0.5 * h * k2.2);
        let k3 = deriv(t + 0.5 * h, &y3);
        let y4 = (y.0 + h * k3.0, y.1 + h * k3.1, y.2 + h * k3.2);
        let k4 = deriv(t + h, &y4);
        (
            y.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            y.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            y.2 + h / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
        )
    };
    let run = |state0: (f64, f64, f64), h_base: f64| -> (f64, f64, f64) {
        let mut y = state0;
        let mut t = *t_cur;
        while t < t_end - 1e-18 {
            let h = h_base.min(t_end - t);
            y = rk4_step(t, &y, h);
            t += h;
        }
        y
    };
    if richardson {
        let coarse = run(*state, h0);
        let fine = run(*state, h0 / 2.0);
        let err = (coarse.0 - fine.0)
            .abs()
            .max((coarse.1 - fine.1).abs())
            .max((coarse.2 - fine.2).abs());
        if err > 1e-5 {
            return Err(Error::NoConvergence {
                reason: format!(
                    "spike window integration not converged (Richardson error {err:.2e})"
                ),
                value: fine.2,
                error: err,
            });
        }
    }
    // Step through, landing exactly on grid times that fall inside the
    // window so the recorded states carry no substep offset.
    let mut t = *t_cur;
    while t < t_end - 1e-18 {
        let mut t_next = (t + h0).min(t_end);
        if rec.next < rec.t_grid.len() {
            let tg = rec.t_grid[rec.next];
            if tg > t && tg < t_next {
                t_next = tg;
            }
        }
        *state = rk4_step(t, state, t_next - t);
        t = t_next;
        rec.record_at(state, t);
    }
    *t_cur = t_end.max(*t_cur);
    Ok(())
}

/// Fully stochastic spike-train drive of the Fig. 4b kind: generates
/// `n_realizations` independent electron streams from the beam description
/// (Poisson arrivals, bunching, transverse spread, oscillator phase noise in
/// the arrival times), drives one trajectory each, and averages.
///
/// Arrival times are re-referenced to the interaction plane, so the drive
/// and the output grid both start at t = 0.
pub fn solve_spike_train(
    sys: &TwoLevelSystem,
    beam: &BeamSpec,
    rho0: &BlochState,
    t_grid: &[f64],
    n_realizations: usize,
    seed: u64,
    method: SpikeMethod,
) -> Result<Vec<BlochState>> {
    if n_realizations == 0 {
        return Err(Error::invalid("solve_spike_train: need >= 1 realization"));
    }
    beam.validate()?;
    if t_grid.is_empty() {
        return Err(Error::invalid("solve_spike_train: empty time grid"));
    }
    let tof = beam.drift_length / beam.kinematics.velocity;
    let t_end = *t_grid.last().unwrap();
    let period = 2.0 * std::f64::consts::PI / beam.mod_angular_freq;
    let geometry = SpikeGeometry {
        impact_distance: beam.impact_distance,
        kinematics: beam.kinematics,
    };
    let mut acc: Vec<(f64, f64, f64, f64)> = vec![(0.0, 0.0, 0.0, 0.0); t_grid.len()];
    for k in 0..n_realizations {
        let stream = ElectronStream::new_with_stream(
            beam,
            t_end + tof + period,
            seed,
            1000 + k as u64,
        )?
        .filter_map(|mut el| {
            el.t_arrive -= tof;
            el.t_emit -= tof;
            (el.t_arrive >= 0.0 && el.t_arrive <= t_end).then_some(el)
        });
        let traj = solve_spike_train_single(sys, stream, &geometry, rho0, t_grid, method)?;
        for (slot, st) in acc.iter_mut().zip(&traj) {
            slot.0 += st.rho_ee;
            slot.1 += st.rho_gg;
            slot.2 += st.rho_eg.re;
            slot.3 += st.rho_eg.im;
        }
    }
    let n = n_realizations as f64;
    Ok(acc
        .into_iter()
        .map(|(ee, gg, re, im)| BlochState {
            rho_ee: ee / n,
            rho_gg: gg / n,
            rho_eg: Complex64::new(re / n, im / n),
        })
        .collect())
}
