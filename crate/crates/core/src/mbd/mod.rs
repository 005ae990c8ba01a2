//! Analytical many-body dispersion (MBD) energy/force engine and the
//! pairwise-C6 baseline. All math is in atomic units.

mod engine;
mod pairwise;
mod params;
mod tensor;

pub use engine::{build_interaction_matrix, mbd_energy, mbd_forces, ForceTarget, MbdResult, SpectralData};
pub use pairwise::{pw_energy_forces, Damping};
pub use params::{
    characteristic_frequency, effective_polarizability, gaussian_width, DispersionParams,
    SpeciesDispersion,
};
pub use tensor::{coulomb_gg, dipole_tensor, dipole_tensor_gradient};

/// Random well-separated cluster shared across the crate's test suites:
/// center at the origin, min separation 1.8 Bohr, species alternating H/C.
#[cfg(test)]
pub(crate) fn test_cluster(n: usize, seed: u64, spread: f64) -> crate::geometry::Cluster {
    use crate::geometry::{norm, sub, Cluster, Species};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<[f64; 3]> = vec![[0.0; 3]];
    while positions.len() < n {
        let p = [
            (rng.gen::<f64>() * 2.0 - 1.0) * spread,
            (rng.gen::<f64>() * 2.0 - 1.0) * spread,
            (rng.gen::<f64>() * 2.0 - 1.0) * spread,
        ];
        if positions.iter().all(|q| norm(sub(p, *q)) > 1.8) {
            positions.push(p);
        }
    }
    let species = (0..n).map(|i| Species((i % 2) as u8)).collect();
    Cluster {
        positions,
        species,
        center_source_index: 0,
    }
}
