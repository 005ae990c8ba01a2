//! Pairwise -C6/r^6 baseline with a pluggable damping function.

use super::params::DispersionParams;
use crate::geometry::{norm, sub, Cluster, SpeciesTable};
use crate::{Error, Result};

/// Short-range damping for the pairwise sum. The default is no damping
/// (f = 1 everywhere); the Fermi form switches off smoothly below `r_switch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    None,
    Fermi { r_switch: f64, steepness: f64 },
}

impl Damping {
    /// (f, df/dr)
    fn eval(&self, r: f64) -> (f64, f64) {
        match *self {
            Damping::None => (1.0, 0.0),
            Damping::Fermi { r_switch, steepness } => {
                let x = -steepness * (r / r_switch - 1.0);
                // Logistic with overflow-safe tails.
                if x > 40.0 {
                    (0.0, 0.0)
                } else if x < -40.0 {
                    (1.0, 0.0)
                } else {
                    let e = x.exp();
                    let f = 1.0 / (1.0 + e);
                    let df = f * f * e * steepness / r_switch;
                    (f, df)
                }
            }
        }
    }
}

/// E = -sum_{j>i} f(r_ij) C6_ij / r_ij^6 with C6_ij = sqrt(C6_i C6_j),
/// plus the analytic forces.
pub fn pw_energy_forces(
    cluster: &Cluster,
    table: &SpeciesTable,
    params: &DispersionParams,
    damping: Damping,
) -> Result<(f64, Vec<[f64; 3]>)> {
    let n = cluster.len();
    let c6: Vec<f64> = cluster
        .species
        .iter()
        .map(|&sp| params.for_species(table, sp).map(|sd| sd.c6_free))
        .collect::<Result<_>>()?;
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sub(cluster.positions[i], cluster.positions[j]);
            let r = norm(d);
            if r == 0.0 {
                return Err(Error::InvalidParam {
                    name: format!("r_{i}{j}"),
                    reason: "coincident atoms in pairwise sum".into(),
                });
            }
            let c6_ij = (c6[i] * c6[j]).sqrt();
            let (f, df) = damping.eval(r);
            let r6 = r.powi(6);
            energy -= f * c6_ij / r6;
            // dE/dr for this pair; force on i is -dE/dr * d_hat.
            let de_dr = -df * c6_ij / r6 + 6.0 * f * c6_ij / (r6 * r);
            for k in 0..3 {
                let fk = -de_dr * d[k] / r;
                forces[i][k] += fk;
                forces[j][k] -= fk;
            }
        }
    }
    Ok((energy, forces))
}
