//! Raw path dumps: one JSON header line, then little-endian `f64` payload
//! (states, Brownian increments, Poisson counts if present), each dense
//! row-major over `[path, step, dim]`.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{PathBatch, TimeGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format: String,
    pub n_paths: usize,
    pub n_states: usize,
    pub n_increments: usize,
    pub dim: usize,
    pub has_jumps: bool,
    pub seed: u64,
    pub path_offset: u64,
    pub first_date: usize,
    pub grid: TimeGrid,
}

const FORMAT: &str = "deepswitch-paths-v1";

pub fn write_dump<W: Write>(batch: &PathBatch, mut out: W) -> Result<()> {
    let (n_paths, n_states, dim) = batch.states.dim();
    let header = DumpHeader {
        format: FORMAT.to_string(),
        n_paths,
        n_states,
        n_increments: batch.n_steps(),
        dim,
        has_jumps: batch.dn.is_some(),
        seed: batch.seed,
        path_offset: batch.path_offset,
        first_date: batch.first_date,
        grid: batch.grid,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut write_array = |a: &Array3<f64>| -> Result<()> {
        for v in a.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    write_array(&batch.states)?;
    write_array(&batch.dw)?;
    if let Some(dn) = &batch.dn {
        write_array(dn)?;
    }
    Ok(())
}

pub fn read_dump<R: Read>(input: R) -> Result<PathBatch> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: DumpHeader = serde_json::from_str(line.trim_end())?;
    if header.format != FORMAT {
        return Err(Error::config(format!("unknown dump format {:?}", header.format)));
    }
    let mut read_array = |shape: (usize, usize, usize)| -> Result<Array3<f64>> {
        let len = shape.0 * shape.1 * shape.2;
        let mut bytes = vec![0u8; len * 8];
        reader.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Array3::from_shape_vec(shape, data).map_err(|e| Error::shape(e.to_string()))
    };
    let states = read_array((header.n_paths, header.n_states, header.dim))?;
    let dw = read_array((header.n_paths, header.n_increments, header.dim))?;
    let dn = if header.has_jumps {
        Some(read_array((header.n_paths, header.n_increments, header.dim))?)
    } else {
        None
    };
    Ok(PathBatch {
        grid: header.grid,
        first_date: header.first_date,
        seed: header.seed,
        path_offset: header.path_offset,
        states,
        dw,
        dn,
    })
}
