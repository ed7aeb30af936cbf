//! Physical constants. Everything internal is atomic units (Bohr, Hartree);
//! kcal/mol only appears when reporting.

pub const BOHR_PER_ANGSTROM: f64 = 1.8897259886;
pub const KCAL_PER_HARTREE: f64 = 627.5094740631;
/// Equilibrium H-H distance used to parameterize the dissociation scan.
pub const H2_EQUILIBRIUM_BOHR: f64 = 1.400;

#[inline]
pub fn hartree_to_kcal(e: f64) -> f64 {
    e * KCAL_PER_HARTREE
}

#[inline]
pub fn angstrom_to_bohr(x: f64) -> f64 {
    x * BOHR_PER_ANGSTROM
}
