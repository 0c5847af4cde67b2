//! Physical constants, CODATA 2018.
//!
//! All quantities are SI. Derived values at the bottom are computed from the
//! table so every module agrees bit for bit.

/// Speed of light in vacuum, m/s (exact).
pub const C: f64 = 299_792_458.0;

/// Elementary charge, C (exact).
pub const E_CHARGE: f64 = 1.602_176_634e-19;

/// Electron mass, kg.
pub const M_E: f64 = 9.109_383_7015e-31;

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Vacuum magnetic permeability, N/A^2.
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Vacuum electric permittivity, F/m.
pub const EPS_0: f64 = 8.854_187_8128e-12;

/// Bohr magneton, J/T.
pub const MU_B: f64 = 9.274_010_0783e-24;

/// Electron spin g-factor magnitude.
pub const G_S: f64 = 2.002_319_304_362_56;

/// Bohr radius, m.
pub const A_0: f64 = 5.291_772_109_03e-11;

/// Atomic mass constant, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

/// Mass of a potassium-41 atom, kg (41K relative atomic mass 40.96182526).
pub const M_K41: f64 = 40.961_825_26 * AMU;

/// Classical electron radius e^2 / (4 pi eps0 m_e c^2), m.
pub const R_E: f64 =
    E_CHARGE * E_CHARGE / (4.0 * std::f64::consts::PI * EPS_0 * M_E * C * C);

/// Electron rest energy, J.
pub const M_E_C2: f64 = M_E * C * C;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_electron_radius() {
        // mpmath from the same table: 2.8179403262048068e-15
        let want = 2.817_940_326_204_806_8e-15;
        assert!((R_E - want).abs() / want < 1e-13);
    }

    #[test]
    fn k41_mass() {
        let want = 6.801_871_108_347_270_2e-26;
        assert!((M_K41 - want).abs() / want < 1e-15);
    }
}
