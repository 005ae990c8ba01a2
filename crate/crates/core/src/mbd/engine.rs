//! Interaction-matrix assembly, eigendecomposition, and the analytic MBD
//! energy and forces.

use nalgebra::DMatrix;

use super::params::{atom_dispersion, AtomDispersion, DispersionParams};
use super::tensor::{dipole_tensor, dipole_tensor_gradient};
use crate::geometry::{sub, Cluster, SpeciesTable};
use crate::{Error, Result};

/// Relative residual allowed for ||S diag(l) S^T - C||_F / ||C||_F,
/// per matrix dimension; roundoff in the decomposition grows with size.
const EIGEN_RESIDUAL_TOL_PER_DIM: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors; S^T C S = diag(eigenvalues).
    pub eigenvectors: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct MbdResult {
    /// Hartree.
    pub energy: f64,
    /// Hartree/Bohr, one row per atom.
    pub forces: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceTarget {
    All,
    CenterOnly,
}

/// Assemble the 3N x 3N coupling matrix: diagonal blocks omega_i^2 I,
/// off-diagonal blocks omega_i omega_j sqrt(alpha_i alpha_j) T_ij.
pub fn build_interaction_matrix(
    cluster: &Cluster,
    table: &SpeciesTable,
    params: &DispersionParams,
) -> Result<DMatrix<f64>> {
    let disp = atom_dispersion(&cluster.species, table, params)?;
    Ok(assemble(cluster, params, &disp))
}

fn assemble(cluster: &Cluster, params: &DispersionParams, d: &AtomDispersion) -> DMatrix<f64> {
    let n = cluster.len();
    let mut c = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        let w2 = d.omega[i] * d.omega[i];
        for a in 0..3 {
            c[(3 * i + a, 3 * i + a)] = w2;
        }
        for j in (i + 1)..n {
            let pref = d.omega[i] * d.omega[j] * (d.alpha_eff[i] * d.alpha_eff[j]).sqrt();
            let t = dipole_tensor(
                sub(cluster.positions[i], cluster.positions[j]),
                d.sigma[i],
                d.sigma[j],
                params.beta,
            );
            for a in 0..3 {
                for b in 0..3 {
                    let val = pref * t[a][b];
                    c[(3 * i + a, 3 * j + b)] = val;
                    c[(3 * j + b, 3 * i + a)] = val;
                }
            }
        }
    }
    c
}

fn decompose(c: &DMatrix<f64>) -> Result<SpectralData> {
    let eig = nalgebra::SymmetricEigen::new(c.clone());
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_min <= 0.0 {
        return Err(Error::NonPositiveEigenvalue(lambda_min));
    }
    // Reconstruction residual guards against solver breakdown.
    let recon = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues)
        * eig.eigenvectors.transpose();
    let residual = (&recon - c).norm() / c.norm();
    let tol = EIGEN_RESIDUAL_TOL_PER_DIM * c.nrows().max(1) as f64;
    if residual > tol {
        return Err(Error::EigenResidual { residual, tol });
    }
    Ok(SpectralData {
        eigenvalues: eig.eigenvalues.iter().cloned().collect(),
        eigenvectors: eig.eigenvectors,
    })
}

/// E = 1/2 sum sqrt(lambda_l) - 3/2 sum omega_i.
pub fn mbd_energy(
    cluster: &Cluster,
    table: &SpeciesTable,
    params: &DispersionParams,
) -> Result<(f64, SpectralData)> {
    let d = atom_dispersion(&cluster.species, table, params)?;
    let c = assemble(cluster, params, &d);
    let spectral = decompose(&c)?;
    let coupled: f64 = spectral.eigenvalues.iter().map(|l| l.sqrt()).sum();
    let free: f64 = d.omega.iter().sum();
    Ok((0.5 * coupled - 1.5 * free, spectral))
}

/// F_{r_k} = -1/4 Tr[ Lambda^{-1/2} S^T (grad_{r_k} C) S ], assembled from
/// the analytic tensor gradient. Collapsing the trace gives, with
/// G = S Lambda^{-1/2} S^T,
/// F_k^c = -1/2 sum_{j != k} pref_kj sum_{ab} dT_kj^{abc} G[3k+a, 3j+b].
pub fn mbd_forces(
    cluster: &Cluster,
    table: &SpeciesTable,
    params: &DispersionParams,
    target: ForceTarget,
) -> Result<MbdResult> {
    let d = atom_dispersion(&cluster.species, table, params)?;
    let c = assemble(cluster, params, &d);
    let spectral = decompose(&c)?;
    let coupled: f64 = spectral.eigenvalues.iter().map(|l| l.sqrt()).sum();
    let free: f64 = d.omega.iter().sum();
    let energy = 0.5 * coupled - 1.5 * free;

    let n = cluster.len();
    let inv_sqrt = nalgebra::DVector::from_iterator(
        3 * n,
        spectral.eigenvalues.iter().map(|l| 1.0 / l.sqrt()),
    );
    let g = &spectral.eigenvectors
        * DMatrix::from_diagonal(&inv_sqrt)
        * spectral.eigenvectors.transpose();

    let atoms: Vec<usize> = match target {
        ForceTarget::All => (0..n).collect(),
        ForceTarget::CenterOnly => vec![0],
    };
    let mut forces = Vec::with_capacity(atoms.len());
    for &k in &atoms {
        let mut f = [0.0; 3];
        for j in 0..n {
            if j == k {
                continue;
            }
            let pref = d.omega[k] * d.omega[j] * (d.alpha_eff[k] * d.alpha_eff[j]).sqrt();
            let dt = dipole_tensor_gradient(
                sub(cluster.positions[k], cluster.positions[j]),
                d.sigma[k],
                d.sigma[j],
                params.beta,
            );
            for cx in 0..3 {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        acc += dt[a][b][cx] * g[(3 * k + a, 3 * j + b)];
                    }
                }
                f[cx] -= 0.5 * pref * acc;
            }
        }
        forces.push(f);
    }
    Ok(MbdResult { energy, forces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Species;
    use crate::mbd::params::{characteristic_frequency, effective_polarizability};
    use approx::assert_relative_eq;

    fn synthetic() -> (SpeciesTable, DispersionParams) {
        (SpeciesTable::default_organic(), DispersionParams::synthetic(2.56))
    }

    use crate::mbd::test_cluster as random_cluster;

    #[test]
    fn single_atom_energy_is_zero() {
        let (table, params) = synthetic();
        let cl = Cluster {
            positions: vec![[0.0; 3]],
            species: vec![Species(1)],
            center_source_index: 0,
        };
        let (e, spectral) = mbd_energy(&cl, &table, &params).unwrap();
        assert!(e.abs() < 1e-12, "E = {e}");
        // lambda = omega^2, triply degenerate.
        let omega = 4.0 / 3.0;
        for l in &spectral.eigenvalues {
            assert_relative_eq!(*l, omega * omega, epsilon = 1e-12);
        }
    }

    #[test]
    fn interaction_matrix_symmetric_and_blocks_match() {
        let (table, params) = synthetic();
        let cl = random_cluster(5, 2, 4.0);
        let c = build_interaction_matrix(&cl, &table, &params).unwrap();
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                assert!((c[(i, j)] - c[(j, i)]).abs() < 1e-14);
            }
        }
        // Dimer block composed from the three scalar oracles.
        let sd = params.get("H").unwrap();
        let omega = characteristic_frequency(sd);
        let alpha = effective_polarizability(sd);
        let sigma = crate::mbd::gaussian_width(alpha).unwrap();
        let dimer = Cluster {
            positions: vec![[0.0; 3], [3.0, 0.5, -1.0]],
            species: vec![Species(0), Species(0)],
            center_source_index: 0,
        };
        let cm = build_interaction_matrix(&dimer, &table, &params).unwrap();
        let t = dipole_tensor(sub(dimer.positions[0], dimer.positions[1]), sigma, sigma, params.beta);
        for a in 0..3 {
            for b in 0..3 {
                assert_relative_eq!(
                    cm[(a, 3 + b)],
                    omega * omega * alpha * t[a][b],
                    epsilon = 1e-14
                );
            }
        }
    }

    #[test]
    fn eigen_reconstruction_is_tight() {
        let (table, params) = synthetic();
        let cl = random_cluster(8, 3, 5.0);
        let c = build_interaction_matrix(&cl, &table, &params).unwrap();
        let (_, s) = mbd_energy(&cl, &table, &params).unwrap();
        let recon = &s.eigenvectors
            * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.eigenvalues.clone()))
            * s.eigenvectors.transpose();
        assert!((recon - &c).norm() / c.norm() < 1e-12);
    }

    #[test]
    fn dimer_recovers_london_limit() {
        let (table, params) = synthetic();
        let sd = params.get("H").unwrap();
        let omega = characteristic_frequency(sd);
        let alpha = effective_polarizability(sd);
        let sigma = crate::mbd::gaussian_width(alpha).unwrap();
        let c6_london = 0.75 * alpha * alpha * omega;
        // Log-spaced sweep starting at 10x the width scale, capped where the
        // interaction energy stays resolvable in double precision.
        for k in 0..5 {
            let r = 10.0 * sigma * params.beta * 1.4f64.powi(k);
            let cl = Cluster {
                positions: vec![[0.0; 3], [0.0, 0.0, r]],
                species: vec![Species(0), Species(0)],
                center_source_index: 0,
            };
            let (e, _) = mbd_energy(&cl, &table, &params).unwrap();
            let london = -c6_london / r.powi(6);
            assert!(
                (e / london - 1.0).abs() < 0.01,
                "r = {r}: E = {e}, London = {london}"
            );
        }
    }

    #[test]
    fn energy_rotation_invariant() {
        let (table, params) = synthetic();
        let cl = random_cluster(6, 9, 4.0);
        let (e0, _) = mbd_energy(&cl, &table, &params).unwrap();
        // Rotation about z then x.
        let (s1, c1) = (0.3f64.sin(), 0.3f64.cos());
        let (s2, c2) = (1.1f64.sin(), 1.1f64.cos());
        let rot = |p: [f64; 3]| {
            let q = [c1 * p[0] - s1 * p[1], s1 * p[0] + c1 * p[1], p[2]];
            [q[0], c2 * q[1] - s2 * q[2], s2 * q[1] + c2 * q[2]]
        };
        let rotated = Cluster {
            positions: cl.positions.iter().map(|p| rot(*p)).collect(),
            ..cl.clone()
        };
        let (e1, _) = mbd_energy(&rotated, &table, &params).unwrap();
        assert!((e0 - e1).abs() < 1e-10 * e0.abs().max(1.0));
    }

    #[test]
    fn forces_sum_to_zero() {
        let (table, params) = synthetic();
        let cl = random_cluster(7, 21, 4.0);
        let res = mbd_forces(&cl, &table, &params, ForceTarget::All).unwrap();
        let mut total = [0.0; 3];
        let mut scale: f64 = 0.0;
        for f in &res.forces {
            for k in 0..3 {
                total[k] += f[k];
                scale = scale.max(f[k].abs());
            }
        }
        for k in 0..3 {
            assert!(total[k].abs() < 1e-8 * scale.max(1e-30), "sum = {:?}", total);
        }
    }

    #[test]
    fn symmetric_dimer_forces_oppose_along_bond() {
        let (table, params) = synthetic();
        let cl = Cluster {
            positions: vec![[0.0; 3], [0.0, 0.0, 4.0]],
            species: vec![Species(1), Species(1)],
            center_source_index: 0,
        };
        let res = mbd_forces(&cl, &table, &params, ForceTarget::All).unwrap();
        let f1 = res.forces[0];
        let f2 = res.forces[1];
        for k in 0..3 {
            assert!((f1[k] + f2[k]).abs() < 1e-12);
        }
        assert!(f1[0].abs() < 1e-12 && f1[1].abs() < 1e-12);
        // Attractive: center atom pulled toward +z.
        assert!(f1[2] > 0.0);
    }

    #[test]
    fn forces_match_energy_finite_differences() {
        let (table, params) = synthetic();
        for seed in [1u64, 2, 3] {
            let cl = random_cluster(8, seed, 4.5);
            let res = mbd_forces(&cl, &table, &params, ForceTarget::All).unwrap();
            let step = 1e-2;
            for atom in 0..cl.len() {
                for cx in 0..3 {
                    // 5-point central difference of the energy.
                    let e_at = |s: f64| {
                        let mut m = cl.clone();
                        m.positions[atom][cx] += s;
                        mbd_energy(&m, &table, &params).unwrap().0
                    };
                    let fd = (e_at(-2.0 * step) - 8.0 * e_at(-step) + 8.0 * e_at(step)
                        - e_at(2.0 * step))
                        / (12.0 * step);
                    let force = res.forces[atom][cx];
                    let scale = force.abs().max(1e-8);
                    assert!(
                        (force + fd).abs() / scale < 1e-6,
                        "atom {atom} comp {cx}: analytic {force}, -fd {}",
                        -fd
                    );
                }
            }
        }
    }

    #[test]
    fn permuting_neighbors_permutes_forces() {
        let (table, params) = synthetic();
        let cl = random_cluster(6, 31, 4.0);
        let res = mbd_forces(&cl, &table, &params, ForceTarget::All).unwrap();
        // Swap atoms 2 and 4.
        let mut p = cl.clone();
        p.positions.swap(2, 4);
        p.species.swap(2, 4);
        let res2 = mbd_forces(&p, &table, &params, ForceTarget::All).unwrap();
        for (orig, perm) in [(2usize, 4usize), (4, 2), (0, 0), (1, 1)] {
            for k in 0..3 {
                assert_relative_eq!(
                    res.forces[orig][k],
                    res2.forces[perm][k],
                    epsilon = 1e-10,
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn center_only_matches_full() {
        let (table, params) = synthetic();
        let cl = random_cluster(6, 5, 4.0);
        let full = mbd_forces(&cl, &table, &params, ForceTarget::All).unwrap();
        let center = mbd_forces(&cl, &table, &params, ForceTarget::CenterOnly).unwrap();
        assert_eq!(center.forces.len(), 1);
        assert_eq!(center.forces[0], full.forces[0]);
    }
}
