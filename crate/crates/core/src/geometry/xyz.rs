//! Extended-XYZ-style structure I/O. Positions are Angstrom in the file and
//! Bohr in memory.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{AtomicSystem, PeriodicCell, SpeciesTable};
use crate::{Error, Result, BOHR_PER_ANGSTROM};

pub fn write_xyz(sys: &AtomicSystem, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{}\n", sys.len()));
    match &sys.cell {
        Some(cell) => {
            let l = &cell.lattice;
            let mut lat = String::new();
            for row in l {
                for v in row {
                    lat.push_str(&format!("{:.10} ", v / BOHR_PER_ANGSTROM));
                }
            }
            let pbc: Vec<&str> = cell.periodic.iter().map(|&p| if p { "T" } else { "F" }).collect();
            out.push_str(&format!(
                "Lattice=\"{}\" pbc=\"{}\" Properties=species:S:1:pos:R:3:chain:I:1:unit:I:1\n",
                lat.trim_end(),
                pbc.join(" ")
            ));
        }
        None => {
            out.push_str("Properties=species:S:1:pos:R:3:chain:I:1:unit:I:1\n");
        }
    }
    for i in 0..sys.len() {
        let p = sys.positions[i];
        out.push_str(&format!(
            "{} {:.10} {:.10} {:.10} {} {}\n",
            sys.table.symbol(sys.species[i]),
            p[0] / BOHR_PER_ANGSTROM,
            p[1] / BOHR_PER_ANGSTROM,
            p[2] / BOHR_PER_ANGSTROM,
            sys.chain_ids[i],
            sys.unit_ids[i],
        ));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::XyzParse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Extract a quoted `key="..."` value from the metadata line.
fn quoted_value(meta: &str, key: &str) -> Option<String> {
    let pat = format!("{key}=\"");
    let start = meta.find(&pat)? + pat.len();
    let end = meta[start..].find('"')? + start;
    Some(meta[start..end].to_string())
}

pub fn read_xyz(path: &Path) -> Result<AtomicSystem> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let n: usize = first
        .trim()
        .parse()
        .map_err(|_| parse_err(path, 1, "expected atom count"))?;
    let (_, meta) = lines.next().ok_or_else(|| parse_err(path, 2, "missing metadata line"))?;

    let cell = match quoted_value(meta, "Lattice") {
        Some(lat) => {
            let vals: Vec<f64> = lat
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(path, 2, "bad Lattice values"))?;
            if vals.len() != 9 {
                return Err(parse_err(path, 2, format!("Lattice needs 9 floats, got {}", vals.len())));
            }
            let mut lattice = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    lattice[i][j] = vals[3 * i + j] * BOHR_PER_ANGSTROM;
                }
            }
            let periodic = match quoted_value(meta, "pbc") {
                Some(p) => {
                    let flags: Vec<bool> = p
                        .split_whitespace()
                        .map(|t| matches!(t, "T" | "t" | "true" | "1"))
                        .collect();
                    if flags.len() != 3 {
                        return Err(parse_err(path, 2, "pbc needs 3 flags"));
                    }
                    [flags[0], flags[1], flags[2]]
                }
                None => [true; 3],
            };
            Some(PeriodicCell { lattice, periodic })
        }
        None => None,
    };

    let mut table = SpeciesTable::default_organic();
    let mut positions = Vec::with_capacity(n);
    let mut species = Vec::with_capacity(n);
    let mut unit_ids = Vec::with_capacity(n);
    let mut chain_ids = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, n + 2, format!("expected {n} atom lines")))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(parse_err(path, ln + 1, "atom line needs: symbol x y z [chain unit]"));
        }
        species.push(table.intern(tok[0]));
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = tok[1 + k]
                .parse::<f64>()
                .map_err(|_| parse_err(path, ln + 1, "bad coordinate"))?
                * BOHR_PER_ANGSTROM;
        }
        positions.push(p);
        chain_ids.push(tok.get(4).and_then(|t| t.parse().ok()).unwrap_or(0));
        unit_ids.push(tok.get(5).and_then(|t| t.parse().ok()).unwrap_or(0));
    }
    Ok(AtomicSystem {
        positions,
        species,
        cell,
        unit_ids,
        chain_ids,
        table,
    })
}
