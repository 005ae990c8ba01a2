//! Periodic-cell handling, minimum-image distances, and fixed-size cluster
//! extraction around a target atom.

mod melt;
mod xyz;

pub use melt::{assign_units, generate_synthetic_melt, MeltSpec, PolymerKind};
pub use xyz::{read_xyz, write_xyz};

use crate::{Error, Result};

/// Compact species id. Codes are dense `0..S-1` and map bijectively onto
/// symbols through a [`SpeciesTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Species(pub u8);

/// Bijective symbol <-> code map. Order of insertion fixes the codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeciesTable {
    symbols: Vec<String>,
}

impl SpeciesTable {
    pub fn new() -> Self {
        Self { symbols: Vec::new() }
    }

    /// H, C, Cl — the three elements of the polymer systems handled here.
    pub fn default_organic() -> Self {
        let mut t = Self::new();
        t.intern("H");
        t.intern("C");
        t.intern("Cl");
        t
    }

    pub fn intern(&mut self, symbol: &str) -> Species {
        if let Some(i) = self.symbols.iter().position(|s| s == symbol) {
            return Species(i as u8);
        }
        self.symbols.push(symbol.to_string());
        Species((self.symbols.len() - 1) as u8)
    }

    pub fn code(&self, symbol: &str) -> Result<Species> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .map(|i| Species(i as u8))
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn symbol(&self, sp: Species) -> &str {
        &self.symbols[sp.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

impl Default for SpeciesTable {
    fn default() -> Self {
        Self::default_organic()
    }
}

/// Simulation cell: three lattice vectors (rows, Bohr) and per-axis
/// periodicity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicCell {
    pub lattice: [[f64; 3]; 3],
    pub periodic: [bool; 3],
}

impl PeriodicCell {
    pub fn cubic(edge: f64) -> Self {
        Self {
            lattice: [[edge, 0.0, 0.0], [0.0, edge, 0.0], [0.0, 0.0, edge]],
            periodic: [true; 3],
        }
    }

    pub fn volume(&self) -> f64 {
        let a = self.lattice[0];
        let b = self.lattice[1];
        let c = self.lattice[2];
        let bc = cross(b, c);
        dot(a, bc)
    }

    fn validate(&self) -> Result<()> {
        if self.volume().abs() < 1e-12 {
            return Err(Error::DegenerateLattice);
        }
        Ok(())
    }

    /// Inverse of the lattice matrix (rows are lattice vectors), used to map
    /// Cartesian displacements to fractional coordinates.
    fn inverse(&self) -> Result<[[f64; 3]; 3]> {
        self.validate()?;
        let m = &self.lattice;
        let det = self.volume();
        // Inverse of the 3x3 with rows a,b,c: columns are the reciprocal vectors.
        let inv_t = [
            cross(m[1], m[2]),
            cross(m[2], m[0]),
            cross(m[0], m[1]),
        ];
        let mut inv = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                inv[i][j] = inv_t[j][i] / det;
            }
        }
        Ok(inv)
    }

    /// Perpendicular width of the cell along lattice direction `axis`.
    fn width(&self, axis: usize) -> f64 {
        let others = [(1, 2), (2, 0), (0, 1)][axis];
        let face = cross(self.lattice[others.0], self.lattice[others.1]);
        self.volume().abs() / norm(face)
    }

    /// Half the smallest periodic width: the radius inside which the
    /// minimum-image convention is unambiguous.
    pub fn safe_radius(&self) -> f64 {
        let mut r = f64::INFINITY;
        for axis in 0..3 {
            if self.periodic[axis] {
                r = r.min(self.width(axis) / 2.0);
            }
        }
        r
    }
}

/// A raw melt structure: positions (Bohr), species codes, optional cell,
/// monomer-unit and chain labels.
#[derive(Debug, Clone)]
pub struct AtomicSystem {
    pub positions: Vec<[f64; 3]>,
    pub species: Vec<Species>,
    pub cell: Option<PeriodicCell>,
    pub unit_ids: Vec<u32>,
    pub chain_ids: Vec<u32>,
    pub table: SpeciesTable,
}

impl AtomicSystem {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Fixed-size, distance-ordered neighborhood around one target atom,
/// recentered so the center sits at the origin (index 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub positions: Vec<[f64; 3]>,
    pub species: Vec<Species>,
    pub center_source_index: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.positions.iter().map(|p| norm(*p)).collect()
    }
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Shortest periodic image of `a - b`. Without a cell this is plain `a - b`.
pub fn minimum_image(a: [f64; 3], b: [f64; 3], cell: Option<&PeriodicCell>) -> Result<[f64; 3]> {
    let d = sub(a, b);
    let Some(cell) = cell else { return Ok(d) };
    let inv = cell.inverse()?;
    // Fractional coordinates of the displacement.
    let mut frac = [0.0; 3];
    for i in 0..3 {
        frac[i] = d[0] * inv[0][i] + d[1] * inv[1][i] + d[2] * inv[2][i];
    }
    // Wrap into [-0.5, 0.5) on periodic axes, then scan the 27 neighboring
    // images so skewed cells are handled correctly.
    let mut wrapped = frac;
    for i in 0..3 {
        if cell.periodic[i] {
            wrapped[i] -= frac[i].round();
        }
    }
    let mut best = [f64::INFINITY; 3];
    let mut best_n2 = f64::INFINITY;
    let shifts = |p: bool| if p { vec![-1.0, 0.0, 1.0] } else { vec![0.0] };
    for &sa in &shifts(cell.periodic[0]) {
        for &sb in &shifts(cell.periodic[1]) {
            for &sc in &shifts(cell.periodic[2]) {
                let f = [wrapped[0] + sa, wrapped[1] + sb, wrapped[2] + sc];
                let mut cart = [0.0; 3];
                for k in 0..3 {
                    cart[k] = f[0] * cell.lattice[0][k]
                        + f[1] * cell.lattice[1][k]
                        + f[2] * cell.lattice[2][k];
                }
                let n2 = dot(cart, cart);
                if n2 < best_n2 {
                    best_n2 = n2;
                    best = cart;
                }
            }
        }
    }
    Ok(best)
}

/// Extract the `n_cut` nearest atoms (minimum-image metric) around
/// `center`, recentered to the origin and sorted by ascending distance with
/// ties broken by original atom index.
pub fn extract_cluster(sys: &AtomicSystem, center: usize, n_cut: usize) -> Result<Cluster> {
    if center >= sys.len() {
        return Err(Error::AtomIndex {
            index: center,
            len: sys.len(),
        });
    }
    let safe = sys
        .cell
        .as_ref()
        .map(|c| c.safe_radius())
        .unwrap_or(f64::INFINITY);
    let c = sys.positions[center];
    let mut cand: Vec<(f64, usize, [f64; 3])> = Vec::with_capacity(sys.len());
    for (j, &p) in sys.positions.iter().enumerate() {
        let disp = minimum_image(p, c, sys.cell.as_ref())?;
        let d = norm(disp);
        if d <= safe {
            cand.push((d, j, disp));
        }
    }
    if cand.len() < n_cut {
        return Err(Error::InsufficientAtoms {
            center,
            needed: n_cut,
            found: cand.len(),
            radius: safe,
        });
    }
    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    cand.truncate(n_cut);
    Ok(Cluster {
        positions: cand.iter().map(|x| x.2).collect(),
        species: cand.iter().map(|x| sys.species[x.1]).collect(),
        center_source_index: center,
    })
}
