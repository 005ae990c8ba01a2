//! Checkpoint serialization: a structured text header (config, tensor
//! names and shapes) followed by raw little-endian f64 payloads in header
//! order. Round trips are bit-exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ModelConfig, ModelParams};
use crate::diff::{ParameterSet, ValueBuffer};
use crate::{Error, Result};

const MAGIC: &str = "mbdnet-checkpoint";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    config.validate()?;
    params.validate_shapes(config)?;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "embed_width {}", config.embed_width)?;
    writeln!(w, "n_rbf {}", config.n_rbf)?;
    writeln!(w, "p {}", config.p)?;
    writeln!(w, "n_extra {}", config.n_extra)?;
    writeln!(w, "n_cut {}", config.n_cut)?;
    writeln!(w, "rbf_trainable {}", config.rbf_trainable as u8)?;
    // Hex float notation keeps the header round trip exact.
    writeln!(w, "rbf_gamma_init {}", hexf(config.rbf_gamma_init))?;
    writeln!(w, "rbf_mu_max {}", hexf(config.rbf_mu_max))?;
    writeln!(w, "proj_hidden {}", config.proj_hidden)?;
    writeln!(w, "force_scale {}", hexf(config.force_scale))?;
    writeln!(w, "n_species {}", config.n_species)?;
    writeln!(w, "tensors {}", params.set.tensor_count())?;
    for (name, buf) in params.set.iter() {
        writeln!(w, "tensor {name} {} {}", buf.rows, buf.cols)?;
    }
    writeln!(w, "end")?;
    for (_, buf) in params.set.iter() {
        for &v in &buf.data {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let bad = |reason: String| Error::CheckpointFormat {
        path: path.to_path_buf(),
        reason,
    };

    let mut header = String::new();
    // Read the text header byte-wise up to the terminating "end" line so
    // the binary payload position is exact.
    loop {
        let mut line = String::new();
        let mut byte = [0u8; 1];
        loop {
            let n = r.read(&mut byte)?;
            if n == 0 {
                return Err(bad("unexpected end of file in header".into()));
            }
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0] as char);
        }
        let done = line.trim() == "end";
        header.push_str(&line);
        header.push('\n');
        if done {
            break;
        }
        if header.len() > 1 << 20 {
            return Err(bad("header exceeds 1 MiB; missing 'end'".into()));
        }
    }

    let mut lines = header.lines();
    let first = lines.next().ok_or_else(|| bad("empty header".into()))?;
    let mut toks = first.split_whitespace();
    if toks.next() != Some(MAGIC) {
        return Err(bad("magic string mismatch".into()));
    }
    let version: u32 = toks
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing version".into()))?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }

    let mut fields = std::collections::HashMap::new();
    let mut tensors: Vec<(String, usize, usize)> = Vec::new();
    for line in lines {
        let line = line.trim();
        if line == "end" {
            break;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().ok_or_else(|| bad("blank header line".into()))?;
        if key == "tensor" {
            let name = toks
                .next()
                .ok_or_else(|| bad("tensor line needs a name".into()))?;
            let rows: usize = toks
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("tensor '{name}': bad rows")))?;
            let cols: usize = toks
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("tensor '{name}': bad cols")))?;
            tensors.push((name.to_string(), rows, cols));
        } else {
            let value = toks
                .next()
                .ok_or_else(|| bad(format!("field '{key}' has no value")))?;
            fields.insert(key.to_string(), value.to_string());
        }
    }

    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .map(|s| s.as_str())
            .ok_or_else(|| bad(format!("missing field '{k}'")))
    };
    let int = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| bad(format!("field '{k}': bad integer")))
    };
    let float = |k: &str| -> Result<f64> {
        parse_hexf(get(k)?).ok_or_else(|| bad(format!("field '{k}': bad float")))
    };

    let config = ModelConfig {
        embed_width: int("embed_width")?,
        n_rbf: int("n_rbf")?,
        p: int("p")?,
        n_extra: int("n_extra")?,
        n_cut: int("n_cut")?,
        rbf_trainable: int("rbf_trainable")? != 0,
        rbf_gamma_init: float("rbf_gamma_init")?,
        rbf_mu_max: float("rbf_mu_max")?,
        proj_hidden: int("proj_hidden")?,
        force_scale: float("force_scale")?,
        n_species: int("n_species")?,
    };
    config.validate().map_err(|e| bad(e.to_string()))?;

    let count: usize = int("tensors")?;
    if count != tensors.len() {
        return Err(bad(format!(
            "declared {count} tensors, listed {}",
            tensors.len()
        )));
    }

    let mut set = ParameterSet::new();
    for (name, rows, cols) in tensors {
        let mut data = vec![0.0f64; rows * cols];
        for v in data.iter_mut() {
            *v = r
                .read_f64::<LittleEndian>()
                .map_err(|_| bad(format!("payload truncated in tensor '{name}'")))?;
        }
        set.push(&name, ValueBuffer::new(rows, cols, data));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after final tensor".into()));
    }

    let params = ModelParams { set };
    params
        .validate_shapes(&config)
        .map_err(|e| bad(e.to_string()))?;
    Ok((config, params))
}

/// Exact decimal-free f64 formatting via bit pattern.
fn hexf(v: f64) -> String {
    format!("0x{:016x}", v.to_bits())
}

fn parse_hexf(s: &str) -> Option<f64> {
    if let Some(hex) = s.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok().map(f64::from_bits)
    } else {
        s.parse().ok()
    }
}
