//! Contracted s-type Gaussian basis sets for hydrogen.

mod integrals;
mod ongrid;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use integrals::{
    boys_f0, eri, eri_index, kinetic, nuclear_attraction, one_electron, overlap, two_electron, Eri, OneElectron,
    MAX_DENSE_BASIS,
};
pub use ongrid::{basis_on_grid, BasisOnGrid};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Vec3};

/// One contracted s shell: (exponent, coefficient) pairs for unnormalized
/// primitives as published.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    pub exponents: Vec<f64>,
    pub coefficients: Vec<f64>,
}

const H_631G: &str = "\
H     S   3
     18.7311370              0.03349460
      2.8253937              0.23472695
      0.6401217              0.81375733
H     S   1
      0.1612778              1.0000000
****
";

const H_STO3G: &str = "\
H     S   3
      3.42525091             0.15432897
      0.62391373             0.53532814
      0.16885540             0.44463454
****
";

/// Parses the hydrogen s shells of a Gaussian-style basis text block.
pub fn parse_basis_text(text: &str) -> Result<Vec<ShellSpec>> {
    let mut shells = Vec::new();
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('!'));
    while let Some(line) = lines.next() {
        if line.starts_with("****") {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 3 {
            return Err(Error::Parse(format!("expected 'element shell count', got '{line}'")));
        }
        if !tok[0].eq_ignore_ascii_case("H") {
            return Err(Error::Config(format!("element '{}' not supported (hydrogen only)", tok[0])));
        }
        if !tok[1].eq_ignore_ascii_case("S") {
            return Err(Error::Config(format!("shell type '{}' not supported (s only)", tok[1])));
        }
        let n: usize = tok[2].parse().map_err(|_| Error::Parse(format!("bad primitive count '{}'", tok[2])))?;
        let mut spec = ShellSpec { exponents: Vec::with_capacity(n), coefficients: Vec::with_capacity(n) };
        for _ in 0..n {
            let l = lines.next().ok_or_else(|| Error::Parse("basis text ended inside a shell".into()))?;
            let nums: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.replace(['D', 'd'], "E").parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("bad primitive line '{l}'")))?;
            if nums.len() != 2 || nums[0] <= 0.0 {
                return Err(Error::Parse(format!("bad primitive line '{l}'")));
            }
            spec.exponents.push(nums[0]);
            spec.coefficients.push(nums[1]);
        }
        shells.push(spec);
    }
    if shells.is_empty() {
        return Err(Error::Parse("no shells found".into()));
    }
    Ok(shells)
}

/// Embedded hydrogen shells for a named basis.
pub fn builtin_shells(name: &str) -> Result<Vec<ShellSpec>> {
    match name.to_ascii_uppercase().as_str() {
        "6-31G" => parse_basis_text(H_631G),
        "STO-3G" => parse_basis_text(H_STO3G),
        _ => Err(Error::Config(format!("unknown basis '{name}' (expected 6-31G or STO-3G)"))),
    }
}

/// Normalized contracted s function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contracted {
    pub atom: usize,
    pub center: Vec3,
    pub exponents: Vec<f64>,
    /// Coefficients multiplying bare exp(-a r^2), so that the function has
    /// unit norm.
    pub coefficients: Vec<f64>,
}

impl Contracted {
    fn new(atom: usize, center: Vec3, spec: &ShellSpec) -> Self {
        let mut c: Vec<f64> = spec
            .exponents
            .iter()
            .zip(&spec.coefficients)
            .map(|(&a, &d)| d * (2.0 * a / PI).powf(0.75))
            .collect();
        let mut norm = 0.0;
        for (i, &a) in spec.exponents.iter().enumerate() {
            for (j, &b) in spec.exponents.iter().enumerate() {
                norm += c[i] * c[j] * (PI / (a + b)).powf(1.5);
            }
        }
        let s = norm.sqrt();
        c.iter_mut().for_each(|x| *x /= s);
        Contracted { atom, center, exponents: spec.exponents.clone(), coefficients: c }
    }

    pub fn primitives(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.exponents.iter().copied().zip(self.coefficients.iter().copied())
    }

    pub fn value(&self, p: &Vec3) -> f64 {
        let r2 = sq_dist(p, &self.center);
        self.primitives().map(|(a, c)| c * (-a * r2).exp()).sum()
    }
}

pub(crate) fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub name: String,
    pub functions: Vec<Contracted>,
}

impl BasisSet {
    pub fn n_basis(&self) -> usize {
        self.functions.len()
    }

    pub fn from_shells(name: &str, shells: &[ShellSpec], geometry: &Geometry) -> Result<Self> {
        geometry.check_distinct()?;
        let mut functions = Vec::new();
        for (atom, center) in geometry.positions.iter().enumerate() {
            for spec in shells {
                if spec.exponents.iter().any(|&a| !(a > 0.0)) {
                    return Err(Error::Config("basis exponents must be positive".into()));
                }
                functions.push(Contracted::new(atom, *center, spec));
            }
        }
        Ok(BasisSet { name: name.to_string(), functions })
    }
}

/// Places the named basis on every atom of `geometry`.
pub fn load_basis(name: &str, geometry: &Geometry) -> Result<BasisSet> {
    BasisSet::from_shells(name, &builtin_shells(name)?, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes() {
        assert_eq!(load_basis("6-31G", &Geometry::h2(1.4)).unwrap().n_basis(), 4);
        assert_eq!(load_basis("sto-3g", &Geometry::hydrogen_atom()).unwrap().n_basis(), 1);
        assert_eq!(load_basis("6-31G", &Geometry::h4(45.0, 2.0)).unwrap().n_basis(), 8);
        assert!(matches!(load_basis("cc-pVDZ", &Geometry::hydrogen_atom()), Err(Error::Config(_))));
    }

    #[test]
    fn text_format_errors() {
        assert!(matches!(parse_basis_text("He S 1\n 1.0 1.0\n"), Err(Error::Config(_))));
        assert!(matches!(parse_basis_text("H P 1\n 1.0 1.0\n"), Err(Error::Config(_))));
        assert!(matches!(parse_basis_text("H S 2\n 1.0 1.0\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_basis_text("H S 1\n -1.0 1.0\n"), Err(Error::Parse(_))));
        let s = parse_basis_text("! comment\nH S 1\n 0.5D+00 1.0\n****\n").unwrap();
        assert_eq!(s[0].exponents, vec![0.5]);
    }

    #[test]
    fn contracted_functions_have_unit_norm() {
        let b = load_basis("6-31G", &Geometry::hydrogen_atom()).unwrap();
        for f in &b.functions {
            let mut s = 0.0;
            for (a, ca) in f.primitives() {
                for (b, cb) in f.primitives() {
                    s += ca * cb * (PI / (a + b)).powf(1.5);
                }
            }
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
