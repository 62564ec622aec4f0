//! Little-endian binary persistence for path ensembles.
//!
//! Layout:
//!   magic   "LSMC"          4 bytes
//!   version u32             currently 1
//!   n       u32             dimension
//!   N       u32             grid steps
//!   M       u64             path count
//!   seed    u64             master seed
//!   payload M * n * (N+1) f64, path-major; within a path the coordinate
//!           arrays are contiguous (same layout as BrownianPath).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::path::{BrownianPath, PathEnsemble};
use crate::rng::RngSpec;

const MAGIC: &[u8; 4] = b"LSMC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleHeader {
    pub dim: usize,
    pub steps: usize,
    pub num_paths: usize,
    pub master_seed: u64,
}

fn write_header(w: &mut impl Write, h: &EnsembleHeader) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(h.dim as u32).to_le_bytes())?;
    w.write_all(&(h.steps as u32).to_le_bytes())?;
    w.write_all(&(h.num_paths as u64).to_le_bytes())?;
    w.write_all(&h.master_seed.to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<EnsembleHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let steps = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let num_paths = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let master_seed = u64::from_le_bytes(b8);
    if dim == 0 || steps < 2 || num_paths == 0 {
        return Err(Error::Format(format!(
            "implausible shape: n={dim}, N={steps}, M={num_paths}"
        )));
    }
    Ok(EnsembleHeader {
        dim,
        steps,
        num_paths,
        master_seed,
    })
}

/// Writes the fully generated ensemble, batch by batch.
pub fn persist_ensemble(ensemble: &PathEnsemble, file: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(file)?);
    write_header(
        &mut w,
        &EnsembleHeader {
            dim: ensemble.dim(),
            steps: ensemble.grid().steps(),
            num_paths: ensemble.num_paths(),
            master_seed: ensemble.rng_spec().master_seed,
        },
    )?;
    for b in 0..ensemble.num_batches() {
        for path in ensemble.sample_batch(b) {
            for &v in path.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads header and payload back into materialized paths.
pub fn load_ensemble(file: &Path) -> Result<(EnsembleHeader, Vec<BrownianPath>)> {
    let mut r = BufReader::new(File::open(file)?);
    let header = read_header(&mut r)?;
    let grid = TimeGrid::new(header.steps)?;
    let per_path = header.dim * grid.num_nodes();
    let mut paths = Vec::with_capacity(header.num_paths);
    let mut buf = vec![0u8; per_path * 8];
    for _ in 0..header.num_paths {
        r.read_exact(&mut buf).map_err(|_| Error::Format("truncated payload".into()))?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        paths.push(BrownianPath::from_values(grid, header.dim, values)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok((header, paths))
}

/// Header only, without touching the payload.
pub fn describe_ensemble(file: &Path) -> Result<EnsembleHeader> {
    let mut r = BufReader::new(File::open(file)?);
    read_header(&mut r)
}

/// Rebuilds the generator spec for a header (paths regenerate bit-identically
/// when the batch size matches the original run).
pub fn ensemble_from_header(header: &EnsembleHeader, batch_size: usize) -> Result<PathEnsemble> {
    PathEnsemble::with_batch_size(
        header.dim,
        TimeGrid::new(header.steps)?,
        header.num_paths,
        RngSpec::new(header.master_seed),
        batch_size,
    )
}
