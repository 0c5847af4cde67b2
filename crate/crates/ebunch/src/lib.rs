//! Near-field interaction of a current-modulated electron beam with two-level
//! quantum systems.
//!
//! The crate covers the full pipeline from beam kinematics to driven-system
//! dynamics:
//!
//! * [`beam`]: ballistic-bunching current model (velocity modulation, drift,
//!   Kepler-type time inversion, harmonic content) and static field profiles
//!   of a thin or Gaussian beam.
//! * [`ensemble`]: stochastic electron ensembles (Poisson arrivals, transverse
//!   sampling, oscillator phase noise) and synthesis of magnetic field traces
//!   at a probe position.
//! * [`interaction`]: single-electron scattering channels, semiclassical
//!   transition probabilities for magnetic and electric dipole transitions,
//!   and small validity estimators.
//! * [`bloch`]: two-level density-matrix evolution for the mean-field drive,
//!   the shot-noise-corrected drive, and the spike-train (electron by
//!   electron) picture.
//! * [`qed`]: scattering-theory treatment of a single wave-packet electron
//!   passing the system, giving transition probabilities and the coherence
//!   overlap of the scattered electron state.
//! * [`special`], [`quad`], [`ode`], [`dft`], [`rng`], [`consts`]: supporting
//!   numerics (Bessel functions, quadrature, a Dormand-Prince integrator,
//!   discrete Fourier transforms, a counter-seeded RNG and physical
//!   constants).

pub mod beam;
pub mod bloch;
pub mod consts;
pub mod dft;
pub mod ensemble;
pub mod error;
pub mod interaction;
pub mod ode;
pub mod qed;
pub mod quad;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
