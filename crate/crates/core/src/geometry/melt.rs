//! Synthetic polymer melt generation: self-avoiding backbone random walks
//! with idealized bond lengths and tetrahedral-like substituent placement.
//! Geometry realism is not the goal; the structures exist to exercise the
//! dispersion math and the surrogate pipeline deterministically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{add3, cross, minimum_image, norm, scale3, sub, AtomicSystem, PeriodicCell, Species, SpeciesTable};
use crate::{Error, Result, BOHR_PER_ANGSTROM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolymerKind {
    Pe,
    Pp,
    Pvc,
}

impl PolymerKind {
    /// Atoms in the smallest repeating unit: CH2 for PE, C3H6 for PP,
    /// C2H3Cl for PVC.
    pub fn unit_size(self) -> usize {
        match self {
            PolymerKind::Pe => 3,
            PolymerKind::Pp => 9,
            PolymerKind::Pvc => 6,
        }
    }

    /// Backbone carbons per monomer unit.
    fn backbone_per_unit(self) -> usize {
        match self {
            PolymerKind::Pe => 1,
            PolymerKind::Pp => 2,
            PolymerKind::Pvc => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pe" => Ok(PolymerKind::Pe),
            "pp" => Ok(PolymerKind::Pp),
            "pvc" => Ok(PolymerKind::Pvc),
            other => Err(Error::InvalidParam {
                name: "polymer".into(),
                reason: format!("unknown kind '{other}' (expected pe, pp, pvc)"),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeltSpec {
    pub kind: PolymerKind,
    pub chains: usize,
    pub monomers_per_chain: usize,
    pub cell: PeriodicCell,
    pub seed: u64,
    /// Minimum allowed distance between non-bonded atoms (Bohr).
    pub exclusion_radius: f64,
    /// Retries per chain before giving up.
    pub max_retries: usize,
}

impl MeltSpec {
    pub fn new(kind: PolymerKind, chains: usize, monomers_per_chain: usize, cell: PeriodicCell, seed: u64) -> Self {
        Self {
            kind,
            chains,
            monomers_per_chain,
            cell,
            seed,
            exclusion_radius: 1.2 * BOHR_PER_ANGSTROM,
            max_retries: 200,
        }
    }
}

const BOND_CC: f64 = 1.54 * BOHR_PER_ANGSTROM;
const BOND_CH: f64 = 1.09 * BOHR_PER_ANGSTROM;
const BOND_CCL: f64 = 1.79 * BOHR_PER_ANGSTROM;
/// Angle between consecutive backbone bond vectors (180 - 109.47 degrees).
const BACKBONE_TURN: f64 = 70.53 * std::f64::consts::PI / 180.0;
const TETRA_HALF: f64 = 54.735 * std::f64::consts::PI / 180.0;

struct Builder<'a> {
    spec: &'a MeltSpec,
    positions: Vec<[f64; 3]>,
    species: Vec<Species>,
    unit_ids: Vec<u32>,
    chain_ids: Vec<u32>,
}

impl<'a> Builder<'a> {
    fn clash(&self, p: [f64; 3], chain: u32, unit: u32) -> bool {
        for i in 0..self.positions.len() {
            if self.chain_ids[i] == chain && self.unit_ids[i].abs_diff(unit) <= 1 {
                continue;
            }
            let d = minimum_image(p, self.positions[i], Some(&self.spec.cell)).unwrap();
            if norm(d) < self.spec.exclusion_radius {
                return true;
            }
        }
        false
    }

    fn push(&mut self, p: [f64; 3], sp: Species, chain: u32, unit: u32) {
        self.positions.push(p);
        self.species.push(sp);
        self.chain_ids.push(chain);
        self.unit_ids.push(unit);
    }
}

fn unit_perp(d: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let trial = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = cross(d, trial);
    let u = scale3(u, 1.0 / norm(u));
    let v = cross(d, u);
    let v = scale3(v, 1.0 / norm(v));
    (u, v)
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        ];
        let n = norm(v);
        if n > 1e-3 && n <= 1.0 {
            return scale3(v, 1.0 / n);
        }
    }
}

/// Next backbone direction: fixed turn angle from the previous bond with a
/// random dihedral.
fn turn(prev: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let (u, v) = unit_perp(prev);
    let phi = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
    let d = add3(
        scale3(prev, BACKBONE_TURN.cos()),
        add3(
            scale3(u, BACKBONE_TURN.sin() * phi.cos()),
            scale3(v, BACKBONE_TURN.sin() * phi.sin()),
        ),
    );
    scale3(d, 1.0 / norm(d))
}

/// The two tetrahedral directions remaining at a carbon whose bonded
/// neighbors lie along `d1` and (optionally) `d2`.
fn remaining_tetrahedral(d1: [f64; 3], d2: Option<[f64; 3]>) -> ([f64; 3], [f64; 3]) {
    match d2 {
        Some(d2) => {
            let m = sub([0.0; 3], add3(d1, d2));
            let m = scale3(m, 1.0 / norm(m));
            let w = cross(d1, d2);
            let w = scale3(w, 1.0 / norm(w));
            let a = add3(scale3(m, TETRA_HALF.cos()), scale3(w, TETRA_HALF.sin()));
            let b = add3(scale3(m, TETRA_HALF.cos()), scale3(w, -TETRA_HALF.sin()));
            (a, b)
        }
        None => {
            let (u, v) = unit_perp(d1);
            let back = scale3(d1, -1.0);
            let a = add3(scale3(back, TETRA_HALF.cos()), scale3(u, TETRA_HALF.sin()));
            let b = add3(scale3(back, TETRA_HALF.cos()), scale3(v, TETRA_HALF.sin()));
            (scale3(a, 1.0 / norm(a)), scale3(b, 1.0 / norm(b)))
        }
    }
}

/// Generate a deterministic synthetic melt for the given spec.
pub fn generate_synthetic_melt(spec: &MeltSpec) -> Result<AtomicSystem> {
    let table = SpeciesTable::default_organic();
    let h = table.code("H")?;
    let c = table.code("C")?;
    let cl = table.code("Cl")?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut b = Builder {
        spec,
        positions: Vec::new(),
        species: Vec::new(),
        unit_ids: Vec::new(),
        chain_ids: Vec::new(),
    };

    let n_backbone = spec.monomers_per_chain * spec.kind.backbone_per_unit();
    let mut next_unit = 0u32;

    for chain in 0..spec.chains as u32 {
        let mut placed = false;
        'attempt: for attempt in 0..spec.max_retries {
            let _ = attempt;
            let checkpoint = b.positions.len();
            // Backbone walk.
            let lat = &spec.cell.lattice;
            let start = {
                let f = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = f[0] * lat[0][k] + f[1] * lat[1][k] + f[2] * lat[2][k];
                }
                p
            };
            let mut backbone = vec![start];
            let mut dir = random_unit(&mut rng);
            for step in 1..n_backbone {
                let mut ok = false;
                for _ in 0..30 {
                    let cand = add3(backbone[step - 1], scale3(dir, BOND_CC));
                    let unit = next_unit + (step / spec.kind.backbone_per_unit()) as u32;
                    if !b.clash(cand, chain, unit)
                        && backbone[..step.saturating_sub(1)]
                            .iter()
                            .all(|p| norm(minimum_image(cand, *p, Some(&spec.cell)).unwrap()) >= spec.exclusion_radius)
                    {
                        backbone.push(cand);
                        ok = true;
                        break;
                    }
                    dir = turn(dir, &mut rng);
                }
                if !ok {
                    b.positions.truncate(checkpoint);
                    b.species.truncate(checkpoint);
                    b.unit_ids.truncate(checkpoint);
                    b.chain_ids.truncate(checkpoint);
                    continue 'attempt;
                }
                dir = turn(dir, &mut rng);
            }
            // Substituents, emitted monomer by monomer so unit atom order is
            // fixed: PE [C,H,H]; PP [C,H,H,C,H,C,H,H,H]; PVC [C,H,H,C,H,Cl].
            let bond_dirs = |i: usize| -> ([f64; 3], Option<[f64; 3]>) {
                let prev = if i > 0 {
                    Some(scale3(sub(backbone[i - 1], backbone[i]), 1.0 / norm(sub(backbone[i - 1], backbone[i]))))
                } else {
                    None
                };
                let next = if i + 1 < backbone.len() {
                    Some(scale3(sub(backbone[i + 1], backbone[i]), 1.0 / norm(sub(backbone[i + 1], backbone[i]))))
                } else {
                    None
                };
                match (prev, next) {
                    (Some(p), n) => (p, n),
                    (None, Some(n)) => (n, None),
                    (None, None) => ([1.0, 0.0, 0.0], None),
                }
            };
            let mut emit: Vec<([f64; 3], Species, u32)> = Vec::new();
            for m in 0..spec.monomers_per_chain {
                let unit = next_unit + m as u32;
                let i0 = m * spec.kind.backbone_per_unit();
                match spec.kind {
                    PolymerKind::Pe => {
                        let (d1, d2) = bond_dirs(i0);
                        let (ha, hb) = remaining_tetrahedral(d1, d2);
                        emit.push((backbone[i0], c, unit));
                        emit.push((add3(backbone[i0], scale3(ha, BOND_CH)), h, unit));
                        emit.push((add3(backbone[i0], scale3(hb, BOND_CH)), h, unit));
                    }
                    PolymerKind::Pp | PolymerKind::Pvc => {
                        let i1 = i0 + 1;
                        let (d1, d2) = bond_dirs(i0);
                        let (ha, hb) = remaining_tetrahedral(d1, d2);
                        emit.push((backbone[i0], c, unit));
                        emit.push((add3(backbone[i0], scale3(ha, BOND_CH)), h, unit));
                        emit.push((add3(backbone[i0], scale3(hb, BOND_CH)), h, unit));
                        let (e1, e2) = bond_dirs(i1);
                        let (sa, sb) = remaining_tetrahedral(e1, e2);
                        emit.push((backbone[i1], c, unit));
                        emit.push((add3(backbone[i1], scale3(sa, BOND_CH)), h, unit));
                        match spec.kind {
                            PolymerKind::Pvc => {
                                emit.push((add3(backbone[i1], scale3(sb, BOND_CCL)), cl, unit));
                            }
                            _ => {
                                // Methyl group: carbon plus three hydrogens.
                                let cm = add3(backbone[i1], scale3(sb, BOND_CC));
                                emit.push((cm, c, unit));
                                let axis = scale3(sb, -1.0);
                                let (u, v) = unit_perp(axis);
                                for k in 0..3 {
                                    let phi = k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                                    let d = add3(
                                        scale3(axis, -(109.47f64.to_radians()).cos()),
                                        add3(
                                            scale3(u, (109.47f64.to_radians()).sin() * phi.cos()),
                                            scale3(v, (109.47f64.to_radians()).sin() * phi.sin()),
                                        ),
                                    );
                                    let d = scale3(d, 1.0 / norm(d));
                                    emit.push((add3(cm, scale3(d, BOND_CH)), h, unit));
                                }
                            }
                        }
                    }
                }
            }
            // Clash-check every non-backbone atom before committing.
            let mut ok = true;
            for (p, sp, unit) in &emit {
                if *sp != c || !backbone.contains(p) {
                    if b.clash(*p, chain, *unit) {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue 'attempt;
            }
            for (p, sp, unit) in emit {
                b.push(p, sp, chain, unit);
            }
            next_unit += spec.monomers_per_chain as u32;
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::ChainPlacement {
                chain: chain as usize,
                retries: spec.max_retries,
            });
        }
    }

    Ok(AtomicSystem {
        positions: b.positions,
        species: b.species,
        cell: Some(spec.cell.clone()),
        unit_ids: b.unit_ids,
        chain_ids: b.chain_ids,
        table,
    })
}

/// Recompute monomer-unit labels from chain membership and atom order.
/// Returns the labels plus the ids of residual end-group units (chains whose
/// atom count is not divisible by the unit size).
pub fn assign_units(sys: &AtomicSystem, kind: PolymerKind) -> (Vec<u32>, Vec<u32>) {
    let u = kind.unit_size();
    let mut unit_ids = vec![0u32; sys.len()];
    let mut flagged = Vec::new();
    let mut next_unit = 0u32;
    let mut i = 0;
    while i < sys.len() {
        let chain = sys.chain_ids[i];
        let mut j = i;
        while j < sys.len() && sys.chain_ids[j] == chain {
            j += 1;
        }
        let chain_len = j - i;
        for (k, id) in unit_ids[i..j].iter_mut().enumerate() {
            *id = next_unit + (k / u) as u32;
        }
        let full = chain_len / u;
        let used = if chain_len % u == 0 { full } else { full + 1 };
        if chain_len % u != 0 {
            flagged.push(next_unit + full as u32);
        }
        next_unit += used as u32;
        i = j;
    }
    (unit_ids, flagged)
}
