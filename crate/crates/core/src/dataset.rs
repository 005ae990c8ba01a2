//! Dataset file format and the parallel generation driver. Records store
//! positions in Bohr and forces unscaled in Hartree/Bohr; the training
//! scale factor is applied at load time by the trainer, never baked into
//! the file.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{extract_cluster, AtomicSystem, Cluster, Species, SpeciesTable};
use crate::mbd::{mbd_forces, DispersionParams, ForceTarget};
use crate::parallel::par_map;
use crate::train::DatasetRecord;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MBDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct DatasetHeader {
    pub n_cut: usize,
    pub table: SpeciesTable,
    pub record_count: usize,
    /// True if forces were stored pre-scaled; this writer always stores
    /// physical values (flag 0).
    pub force_scaled: bool,
}

pub fn write_dataset(
    path: &Path,
    n_cut: usize,
    table: &SpeciesTable,
    records: &[DatasetRecord],
) -> Result<()> {
    for r in records {
        if r.cluster.len() != n_cut {
            return Err(Error::ShapeMismatch {
                context: "dataset record cluster".into(),
                expected: vec![n_cut],
                got: vec![r.cluster.len()],
            });
        }
        if r.target_force.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target_force".into()));
        }
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(n_cut as u32)?;
    w.write_u8(table.len() as u8)?;
    for i in 0..table.len() {
        let symbol = table.symbol(Species(i as u8)).as_bytes();
        w.write_u8(symbol.len() as u8)?;
        w.write_all(symbol)?;
    }
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    w.write_u8(0)?; // force_scaled flag: stored values are physical
    for r in records {
        for sp in &r.cluster.species {
            w.write_u8(sp.0)?;
        }
        for p in &r.cluster.positions {
            for &v in p {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        for &v in &r.target_force {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u32::<LittleEndian>(r.unit_id)?;
        w.write_u32::<LittleEndian>(r.source)?;
    }
    w.flush()?;
    Ok(())
}

/// Byte-offset-tracking reader so truncation errors can say where.
struct Counted<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Read for Counted<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetRecord>)> {
    let file = std::fs::File::open(path)?;
    let mut r = Counted {
        inner: BufReader::new(file),
        offset: 0,
    };
    macro_rules! bad {
        ($r:expr, $reason:expr) => {
            Error::DatasetFormat {
                path: path.to_path_buf(),
                reason: $reason.into(),
                offset: $r.offset,
            }
        };
    }
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad!(r, "file shorter than the magic bytes"))?;
    if &magic != MAGIC {
        return Err(bad!(r, "magic bytes are not MBDS"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad!(r, "missing version"))?;
    if version != VERSION {
        return Err(bad!(r, format!("unsupported version {version}")));
    }
    let n_cut = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad!(r, "missing n_cut"))? as usize;
    let n_species = r.read_u8().map_err(|_| bad!(r, "missing species count"))?;
    let mut table = SpeciesTable::new();
    for _ in 0..n_species {
        let len = r.read_u8().map_err(|_| bad!(r, "missing symbol length"))?;
        let mut buf = vec![0u8; len as usize];
        r.read_exact(&mut buf)
            .map_err(|_| bad!(r, "truncated species symbol"))?;
        let symbol =
            String::from_utf8(buf).map_err(|_| bad!(r, "species symbol is not UTF-8"))?;
        table.intern(&symbol);
    }
    let record_count = r
        .read_u64::<LittleEndian>()
        .map_err(|_| bad!(r, "missing record count"))? as usize;
    let force_scaled = r.read_u8().map_err(|_| bad!(r, "missing scale flag"))? != 0;

    let mut records = Vec::with_capacity(record_count);
    for i in 0..record_count {
        let mut species = Vec::with_capacity(n_cut);
        for _ in 0..n_cut {
            let code = r
                .read_u8()
                .map_err(|_| bad!(r, format!("record {i}: truncated species codes")))?;
            if code as usize >= table.len() {
                return Err(bad!(r, format!("record {i}: species code {code} not in table")));
            }
            species.push(Species(code));
        }
        let mut positions = Vec::with_capacity(n_cut);
        for _ in 0..n_cut {
            let mut p = [0.0; 3];
            for v in p.iter_mut() {
                *v = r
                    .read_f64::<LittleEndian>()
                    .map_err(|_| bad!(r, format!("record {i}: truncated positions")))?;
            }
            positions.push(p);
        }
        let mut target_force = [0.0; 3];
        for v in target_force.iter_mut() {
            *v = r
                .read_f64::<LittleEndian>()
                .map_err(|_| bad!(r, format!("record {i}: truncated force")))?;
        }
        let unit_id = r
            .read_u32::<LittleEndian>()
            .map_err(|_| bad!(r, format!("record {i}: truncated unit id")))?;
        let source = r
            .read_u32::<LittleEndian>()
            .map_err(|_| bad!(r, format!("record {i}: truncated source tag")))?;
        records.push(DatasetRecord {
            cluster: Cluster {
                positions,
                species,
                center_source_index: source as usize,
            },
            target_force,
            unit_id,
            source,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad!(r, "trailing bytes after the last record"));
    }
    Ok((
        DatasetHeader {
            n_cut,
            table,
            record_count,
            force_scaled,
        },
        records,
    ))
}

#[derive(Debug)]
pub struct GenDataOutcome {
    pub records: Vec<DatasetRecord>,
    /// Center atoms skipped because cluster extraction failed.
    pub skipped: Vec<(usize, String)>,
}

/// Build records for every atom of the structure, or for `sample` centers
/// chosen by seed. Work fans out in parallel; output order is fixed by
/// source atom index regardless of worker count.
pub fn generate_dataset(
    system: &AtomicSystem,
    params: &DispersionParams,
    n_cut: usize,
    sample: Option<usize>,
    seed: u64,
) -> Result<GenDataOutcome> {
    let mut centers: Vec<usize> = (0..system.len()).collect();
    if let Some(k) = sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        centers.shuffle(&mut rng);
        centers.truncate(k.min(centers.len()));
        centers.sort_unstable();
    }
    let results: Vec<(usize, std::result::Result<DatasetRecord, String>)> =
        par_map(&centers, |&center| {
            let run = || -> Result<DatasetRecord> {
                let cluster = extract_cluster(system, center, n_cut)?;
                let result =
                    mbd_forces(&cluster, &system.table, params, ForceTarget::CenterOnly)?;
                Ok(DatasetRecord {
                    cluster,
                    target_force: result.forces[0],
                    unit_id: system.unit_ids[center],
                    source: center as u32,
                })
            };
            (center, run().map_err(|e| e.to_string()))
        });
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (center, outcome) in results {
        match outcome {
            Ok(record) => records.push(record),
            Err(reason) => skipped.push((center, reason)),
        }
    }
    Ok(GenDataOutcome { records, skipped })
}
