//! Per-species free-atom reference data and the derived per-atom quantities
//! entering the interaction matrix.

use std::collections::HashMap;
use std::path::Path;

use crate::geometry::{Species, SpeciesTable};
use crate::{Error, Result};

/// Free-atom reference data for one species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesDispersion {
    /// Static polarizability, Bohr^3.
    pub alpha0_free: f64,
    /// Dispersion coefficient, Hartree * Bohr^6.
    pub c6_free: f64,
    /// Effective-to-free volume ratio, dimensionless.
    pub volume_ratio: f64,
}

impl SpeciesDispersion {
    fn validate(&self, symbol: &str) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParam {
                    name: format!("{symbol}.{name}"),
                    reason: format!("value {v} out of range"),
                })
            }
        };
        check("alpha0_free", self.alpha0_free, self.alpha0_free > 0.0)?;
        check("c6_free", self.c6_free, self.c6_free > 0.0)?;
        check(
            "volume_ratio",
            self.volume_ratio,
            self.volume_ratio > 0.0 && self.volume_ratio <= 2.0,
        )
    }
}

/// Global constants plus the per-species table for the MBD engine.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionParams {
    species: HashMap<String, SpeciesDispersion>,
    /// Range-separation constant of the modified Coulomb potential.
    pub beta: f64,
    pub bohr_per_angstrom: f64,
}

impl DispersionParams {
    pub fn new(beta: f64) -> Result<Self> {
        if beta <= 0.0 {
            return Err(Error::InvalidParam {
                name: "beta".into(),
                reason: format!("must be positive, got {beta}"),
            });
        }
        Ok(Self {
            species: HashMap::new(),
            beta,
            bohr_per_angstrom: crate::BOHR_PER_ANGSTROM,
        })
    }

    /// Synthetic unit parameters (alpha = 1, C6 = 1, ratio = 1) for every
    /// species in the default organic table; used throughout the test suite.
    pub fn synthetic(beta: f64) -> Self {
        let mut p = Self::new(beta).unwrap();
        for sym in ["H", "C", "Cl"] {
            p.insert(
                sym,
                SpeciesDispersion {
                    alpha0_free: 1.0,
                    c6_free: 1.0,
                    volume_ratio: 1.0,
                },
            )
            .unwrap();
        }
        p
    }

    pub fn insert(&mut self, symbol: &str, sd: SpeciesDispersion) -> Result<()> {
        sd.validate(symbol)?;
        self.species.insert(symbol.to_string(), sd);
        Ok(())
    }

    pub fn get(&self, symbol: &str) -> Result<&SpeciesDispersion> {
        self.species
            .get(symbol)
            .ok_or_else(|| Error::MissingSpecies(symbol.to_string()))
    }

    pub fn for_species(&self, table: &SpeciesTable, sp: Species) -> Result<&SpeciesDispersion> {
        self.get(table.symbol(sp))
    }

    /// Parse the plain-text parameter file format:
    /// `beta = <f>`, `bohr_per_angstrom = <f>`,
    /// `species <symbol> alpha0_free=<f> c6_free=<f> volume_ratio=<f>`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::ParamFile {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut beta = None;
        let mut bohr = None;
        let mut species = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ln = i + 1;
            if let Some(rest) = line.strip_prefix("species ") {
                let mut toks = rest.split_whitespace();
                let symbol = toks
                    .next()
                    .ok_or_else(|| err(ln, "species line needs a symbol".into()))?;
                let mut fields: HashMap<&str, f64> = HashMap::new();
                for tok in toks {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| err(ln, format!("expected key=value, got '{tok}'")))?;
                    let v: f64 = v
                        .parse()
                        .map_err(|_| err(ln, format!("bad float '{v}'")))?;
                    if !matches!(k, "alpha0_free" | "c6_free" | "volume_ratio") {
                        return Err(err(ln, format!("unknown key '{k}'")));
                    }
                    fields.insert(k, v);
                }
                let need = |k: &str| {
                    fields
                        .get(k)
                        .copied()
                        .ok_or_else(|| err(ln, format!("missing key '{k}'")))
                };
                let sd = SpeciesDispersion {
                    alpha0_free: need("alpha0_free")?,
                    c6_free: need("c6_free")?,
                    volume_ratio: need("volume_ratio")?,
                };
                sd.validate(symbol)
                    .map_err(|e| err(ln, e.to_string()))?;
                species.insert(symbol.to_string(), sd);
            } else if let Some((k, v)) = line.split_once('=') {
                let k = k.trim();
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| err(ln, format!("bad float '{}'", v.trim())))?;
                match k {
                    "beta" => beta = Some(v),
                    "bohr_per_angstrom" => bohr = Some(v),
                    other => return Err(err(ln, format!("unknown key '{other}'"))),
                }
            } else {
                return Err(err(ln, format!("unrecognized line '{line}'")));
            }
        }
        let beta = beta.ok_or_else(|| err(0, "missing 'beta'".into()))?;
        let mut p = Self::new(beta)?;
        if let Some(bohr) = bohr {
            p.bohr_per_angstrom = bohr;
        }
        for (sym, sd) in species {
            p.insert(&sym, sd)?;
        }
        Ok(p)
    }
}

/// alpha^{0,eff} = alpha^{0,free} * (V_eff / V_free).
pub fn effective_polarizability(sd: &SpeciesDispersion) -> f64 {
    sd.alpha0_free * sd.volume_ratio
}

/// Gaussian width of the fluctuating dipole, sigma = (sqrt(2/(9 pi)) * alpha)^{1/3}.
pub fn gaussian_width(alpha0_eff: f64) -> Result<f64> {
    if alpha0_eff <= 0.0 {
        return Err(Error::InvalidParam {
            name: "alpha0_eff".into(),
            reason: format!("must be positive, got {alpha0_eff}"),
        });
    }
    Ok(((2.0 / (9.0 * std::f64::consts::PI)).sqrt() * alpha0_eff).powf(1.0 / 3.0))
}

/// omega = 4 C6_free / (3 (alpha0_free)^2).
pub fn characteristic_frequency(sd: &SpeciesDispersion) -> f64 {
    4.0 * sd.c6_free / (3.0 * sd.alpha0_free * sd.alpha0_free)
}

/// Per-atom derived quantities for one cluster, in atom order.
#[derive(Debug, Clone)]
pub(crate) struct AtomDispersion {
    pub omega: Vec<f64>,
    pub alpha_eff: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub(crate) fn atom_dispersion(
    species: &[Species],
    table: &SpeciesTable,
    params: &DispersionParams,
) -> Result<AtomDispersion> {
    let mut omega = Vec::with_capacity(species.len());
    let mut alpha_eff = Vec::with_capacity(species.len());
    let mut sigma = Vec::with_capacity(species.len());
    for &sp in species {
        let sd = params.for_species(table, sp)?;
        let a = effective_polarizability(sd);
        omega.push(characteristic_frequency(sd));
        alpha_eff.push(a);
        sigma.push(gaussian_width(a)?);
    }
    Ok(AtomDispersion {
        omega,
        alpha_eff,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn effective_polarizability_scales() {
        let sd = SpeciesDispersion {
            alpha0_free: 1.0,
            c6_free: 1.0,
            volume_ratio: 1.0,
        };
        assert_eq!(effective_polarizability(&sd), 1.0);
        let sd = SpeciesDispersion {
            alpha0_free: 2.0,
            c6_free: 1.0,
            volume_ratio: 0.9,
        };
        assert_relative_eq!(effective_polarizability(&sd), 1.8, epsilon = 1e-15);
    }

    #[test]
    fn zero_volume_ratio_rejected() {
        let sd = SpeciesDispersion {
            alpha0_free: 1.0,
            c6_free: 1.0,
            volume_ratio: 0.0,
        };
        let mut p = DispersionParams::new(2.56).unwrap();
        assert!(p.insert("H", sd).is_err());
    }

    #[test]
    fn gaussian_width_values() {
        assert_relative_eq!(gaussian_width(1.0).unwrap(), 0.6431, epsilon = 1e-4);
        // Cube-root homogeneity.
        assert_relative_eq!(
            gaussian_width(8.0).unwrap(),
            2.0 * gaussian_width(1.0).unwrap(),
            epsilon = 1e-12
        );
        assert!(gaussian_width(-1.0).is_err());
        // Monotone toward zero.
        let mut prev = gaussian_width(1.0).unwrap();
        for a in [0.1, 0.01, 0.001] {
            let s = gaussian_width(a).unwrap();
            assert!(s < prev && s > 0.0);
            prev = s;
        }
    }

    #[test]
    fn characteristic_frequency_values() {
        let sd = SpeciesDispersion {
            alpha0_free: 1.0,
            c6_free: 1.0,
            volume_ratio: 1.0,
        };
        assert_relative_eq!(characteristic_frequency(&sd), 4.0 / 3.0, epsilon = 1e-15);
        let doubled_c6 = SpeciesDispersion { c6_free: 2.0, ..sd };
        assert_relative_eq!(
            characteristic_frequency(&doubled_c6),
            2.0 * characteristic_frequency(&sd),
            epsilon = 1e-15
        );
        let doubled_alpha = SpeciesDispersion { alpha0_free: 2.0, ..sd };
        assert_relative_eq!(
            characteristic_frequency(&doubled_alpha),
            characteristic_frequency(&sd) / 4.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn param_file_round_trip_and_unknown_key() {
        let text = "# test parameters\nbeta = 2.56\nbohr_per_angstrom = 1.88972612\nspecies H alpha0_free=4.5 c6_free=6.5 volume_ratio=1.0\nspecies C alpha0_free=12.0 c6_free=46.6 volume_ratio=0.91\n";
        let p = DispersionParams::parse(text, Path::new("inline")).unwrap();
        assert_eq!(p.beta, 2.56);
        assert_relative_eq!(p.get("C").unwrap().volume_ratio, 0.91);
        assert!(p.get("Cl").is_err());

        let bad = "beta = 2.0\nspecies H alpha0_free=1 c6_free=1 volume_ratio=1 banana=2\n";
        assert!(matches!(
            DispersionParams::parse(bad, Path::new("inline")),
            Err(Error::ParamFile { line: 2, .. })
        ));
        let bad2 = "beta = 2.0\ngamma = 1.0\n";
        assert!(DispersionParams::parse(bad2, Path::new("inline")).is_err());
    }
}
