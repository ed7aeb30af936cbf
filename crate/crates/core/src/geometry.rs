//! Hydrogen-only molecular geometries and XYZ input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{angstrom_to_bohr, BOHR_PER_ANGSTROM, H2_EQUILIBRIUM_BOHR};

pub type Vec3 = [f64; 3];

/// Nuclear positions in Bohr plus the electronic state of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub positions: Vec<Vec3>,
    #[serde(default)]
    pub charge: i32,
    /// 2S+1.
    #[serde(default = "default_multiplicity")]
    pub multiplicity: u32,
}

fn default_multiplicity() -> u32 {
    1
}

impl Geometry {
    /// Builds a neutral geometry with the lowest multiplicity compatible with
    /// the electron count.
    pub fn new(positions: Vec<Vec3>) -> Self {
        let multiplicity = if positions.len() % 2 == 0 { 1 } else { 2 };
        Geometry { positions, charge: 0, multiplicity }
    }

    pub fn hydrogen_atom() -> Self {
        Self::new(vec![[0.0; 3]])
    }

    /// H2 along z with bond length `r` (Bohr).
    pub fn h2(r: f64) -> Self {
        Self::new(vec![[0.0, 0.0, 0.0], [0.0, 0.0, r]])
    }

    /// H2 at scale factor `s` of the 1.4 Bohr equilibrium distance.
    pub fn h2_scaled(s: f64) -> Self {
        Self::h2(s * H2_EQUILIBRIUM_BOHR)
    }

    /// Planar rectangular H4 with all nuclei on a circle of radius `r`,
    /// at (±r cos θ, ±r sin θ). θ = 45° is the square.
    pub fn h4(theta_deg: f64, r: f64) -> Self {
        let t = theta_deg.to_radians();
        let (c, s) = (r * t.cos(), r * t.sin());
        Self::new(vec![[c, s, 0.0], [-c, s, 0.0], [-c, -s, 0.0], [c, -s, 0.0]])
    }

    /// Linear chain of `n` atoms with uniform spacing.
    pub fn chain(n: usize, spacing: f64) -> Self {
        Self::new((0..n).map(|i| [0.0, 0.0, i as f64 * spacing]).collect())
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn n_electrons(&self) -> Result<usize> {
        let n = self.n_atoms() as i64 - self.charge as i64;
        if n < 0 {
            return Err(Error::Geometry(format!("charge {} exceeds nuclear charge", self.charge)));
        }
        Ok(n as usize)
    }

    /// (N_alpha, N_beta) from charge and multiplicity.
    pub fn spin_counts(&self) -> Result<(usize, usize)> {
        let n = self.n_electrons()?;
        let unpaired = self.multiplicity.checked_sub(1).ok_or_else(|| {
            Error::Geometry("multiplicity must be at least 1".into())
        })? as usize;
        if unpaired > n || (n - unpaired) % 2 != 0 {
            return Err(Error::Geometry(format!(
                "multiplicity {} incompatible with {} electrons",
                self.multiplicity, n
            )));
        }
        let n_beta = (n - unpaired) / 2;
        Ok((n_beta + unpaired, n_beta))
    }

    pub fn nuclear_repulsion(&self) -> Result<f64> {
        self.check_distinct()?;
        let mut e = 0.0;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[..i] {
                e += 1.0 / distance(a, b);
            }
        }
        Ok(e)
    }

    /// Rejects coincident nuclei (closer than 1e-8 Bohr).
    pub fn check_distinct(&self) -> Result<()> {
        for (i, a) in self.positions.iter().enumerate() {
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::Geometry(format!("atom {i} has a non-finite coordinate")));
            }
            for (j, b) in self.positions[..i].iter().enumerate() {
                if distance(a, b) < 1e-8 {
                    return Err(Error::Geometry(format!("atoms {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Parses an XYZ file (count line, comment line, `H x y z` in Angstrom).
    pub fn from_xyz(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let count: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("empty XYZ input".into()))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad atom count: {e}")))?;
        let comment = lines.next().unwrap_or("");
        let mut positions = Vec::with_capacity(count);
        for line in lines.filter(|l| !l.trim().is_empty()).take(count) {
            let mut fields = line.split_whitespace();
            let symbol = fields.next().unwrap_or("");
            if !symbol.eq_ignore_ascii_case("H") {
                return Err(Error::Geometry(format!("unsupported element '{symbol}' (hydrogen only)")));
            }
            let mut xyz = [0.0; 3];
            for x in xyz.iter_mut() {
                let f = fields
                    .next()
                    .ok_or_else(|| Error::Parse(format!("missing coordinate in '{line}'")))?;
                *x = angstrom_to_bohr(
                    f.parse::<f64>().map_err(|e| Error::Parse(format!("bad coordinate '{f}': {e}")))?,
                );
            }
            positions.push(xyz);
        }
        if positions.len() != count {
            return Err(Error::Parse(format!("expected {count} atoms, found {}", positions.len())));
        }
        let mut geom = Geometry::new(positions);
        // Optional "charge=<q> mult=<m>" tokens in the comment line.
        for tok in comment.split_whitespace() {
            if let Some(v) = tok.strip_prefix("charge=") {
                geom.charge = v.parse().map_err(|_| Error::Parse(format!("bad charge '{v}'")))?;
            } else if let Some(v) = tok.strip_prefix("mult=") {
                geom.multiplicity = v.parse().map_err(|_| Error::Parse(format!("bad multiplicity '{v}'")))?;
            }
        }
        geom.check_distinct()?;
        Ok(geom)
    }

    pub fn to_xyz(&self) -> String {
        let mut s = format!("{}\ncharge={} mult={}\n", self.n_atoms(), self.charge, self.multiplicity);
        for p in &self.positions {
            s.push_str(&format!(
                "H {:.10} {:.10} {:.10}\n",
                p[0] / BOHR_PER_ANGSTROM,
                p[1] / BOHR_PER_ANGSTROM,
                p[2] / BOHR_PER_ANGSTROM
            ));
        }
        s
    }
}

#[inline]
pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
