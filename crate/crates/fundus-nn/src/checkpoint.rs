//! Flat binary checkpoint format: magic, version, then one record per
//! parameter (name, shape, little-endian f32 payload) in traversal order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::param::ParamSource;
use crate::NnError;

const MAGIC: &[u8; 4] = b"FNCK";
const VERSION: u8 = 1;

pub fn save_checkpoint<S: ParamSource + ?Sized>(src: &S, path: &Path) -> Result<(), NnError> {
    let io_err = |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let params = src.params();
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&[VERSION]).map_err(io_err)?;
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io_err)?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        let shape = p.value.shape();
        w.write_all(&[shape.len() as u8]).map_err(io_err)?;
        for d in shape {
            w.write_all(&(*d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for v in p.value.as_slice().expect("standard layout") {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads all records from a checkpoint file.
pub fn read_records(path: &Path) -> Result<Vec<(String, ArrayD<f32>)>, NnError> {
    let io_err = |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let fmt_err = |msg: &str| NnError::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let file = File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let mut ver = [0u8; 1];
    r.read_exact(&mut ver).map_err(io_err)?;
    if ver[0] != VERSION {
        return Err(fmt_err("unsupported version"));
    }
    let mut nb = [0u8; 4];
    r.read_exact(&mut nb).map_err(io_err)?;
    let count = u32::from_le_bytes(nb) as usize;

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut nb).map_err(io_err)?;
        let name_len = u32::from_le_bytes(nb) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|_| fmt_err("non-utf8 name"))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim).map_err(io_err)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            r.read_exact(&mut nb).map_err(io_err)?;
            shape.push(u32::from_le_bytes(nb) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut buf = vec![0u8; numel * 4];
        r.read_exact(&mut buf).map_err(io_err)?;
        let data: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|_| fmt_err("shape/data mismatch"))?;
        records.push((name, arr));
    }
    Ok(records)
}

/// Loads a checkpoint into an existing network; every parameter must be
/// present with a matching shape.
pub fn load_checkpoint<S: ParamSource + ?Sized>(src: &mut S, path: &Path) -> Result<(), NnError> {
    let loaded = load_checkpoint_partial(&mut *src, path, |_| false)?;
    let expected = src.params().len();
    if loaded != expected {
        return Err(NnError::Format {
            path: path.to_path_buf(),
            msg: format!("loaded {loaded} of {expected} parameters"),
        });
    }
    Ok(())
}

/// Loads matching records, skipping parameters for which `skip` returns
/// true (e.g. a replaced classification head). Returns how many parameters
/// were filled. Missing non-skipped parameters are an error.
pub fn load_checkpoint_partial<S: ParamSource + ?Sized>(
    src: &mut S,
    path: &Path,
    skip: impl Fn(&str) -> bool,
) -> Result<usize, NnError> {
    let records = read_records(path)?;
    let map: std::collections::HashMap<String, ArrayD<f32>> = records.into_iter().collect();
    let mut loaded = 0usize;
    for p in src.params_mut() {
        if skip(&p.name) {
            continue;
        }
        match map.get(&p.name) {
            Some(arr) if arr.shape() == p.value.shape() => {
                p.value.assign(arr);
                loaded += 1;
            }
            Some(arr) => {
                return Err(NnError::ParamMismatch {
                    name: p.name.clone(),
                    msg: format!("shape {:?} vs checkpoint {:?}", p.value.shape(), arr.shape()),
                });
            }
            None => {
                return Err(NnError::ParamMismatch {
                    name: p.name.clone(),
                    msg: "missing from checkpoint".into(),
                });
            }
        }
    }
    Ok(loaded)
}
