//! Length-prefixed binary checkpoints: header (magic, version, spec hash),
//! then parameter records in declaration order as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::adam::OptState;
use super::params::{NetworkParams, ParamRecord};
use super::NeuralError;

const MAGIC: &[u8; 8] = b"ATHRLNET";
const VERSION: u32 = 1;

pub fn save_params(path: &Path, params: &NetworkParams, spec_hash: u64) -> Result<(), NeuralError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, spec_hash)?;
    write_records(&mut w, params)?;
    Ok(())
}

pub fn load_params(path: &Path, expected_hash: u64) -> Result<NetworkParams, NeuralError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, expected_hash)?;
    read_records(&mut r)
}

pub fn save_opt_state(path: &Path, opt: &OptState, spec_hash: u64) -> Result<(), NeuralError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, spec_hash)?;
    w.write_u64::<LittleEndian>(opt.step)?;
    write_records(&mut w, &opt.m)?;
    write_records(&mut w, &opt.v)?;
    Ok(())
}

pub fn load_opt_state(path: &Path, expected_hash: u64) -> Result<OptState, NeuralError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, expected_hash)?;
    let step = r.read_u64::<LittleEndian>()?;
    let m = read_records(&mut r)?;
    let v = read_records(&mut r)?;
    Ok(OptState { m, v, step })
}

fn write_header<W: Write>(w: &mut W, spec_hash: u64) -> Result<(), NeuralError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(spec_hash)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, expected_hash: u64) -> Result<(), NeuralError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NeuralError::Format("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(NeuralError::Format(format!("unknown version {version}")));
    }
    let found = r.read_u64::<LittleEndian>()?;
    if found != expected_hash {
        return Err(NeuralError::SpecHash {
            expected: expected_hash,
            found,
        });
    }
    Ok(())
}

fn write_records<W: Write>(w: &mut W, params: &NetworkParams) -> Result<(), NeuralError> {
    w.write_u32::<LittleEndian>(params.records.len() as u32)?;
    for rec in &params.records {
        w.write_u32::<LittleEndian>(rec.name.len() as u32)?;
        w.write_all(rec.name.as_bytes())?;
        w.write_u64::<LittleEndian>(rec.data.nrows() as u64)?;
        w.write_u64::<LittleEndian>(rec.data.ncols() as u64)?;
        for &v in rec.data.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_records<R: Read>(r: &mut R) -> Result<NetworkParams, NeuralError> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        if name_len > 64 {
            return Err(NeuralError::Format("record name too long".into()));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| NeuralError::Format("record name not utf-8".into()))?;
        let name = known_name(&name)
            .ok_or_else(|| NeuralError::Format(format!("unknown record {name}")))?;
        let rows = r.read_u64::<LittleEndian>()? as usize;
        let cols = r.read_u64::<LittleEndian>()? as usize;
        if rows.saturating_mul(cols) > 64 * 1024 * 1024 {
            return Err(NeuralError::Format("record too large".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.read_f64::<LittleEndian>()?);
        }
        let data = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| NeuralError::Format(e.to_string()))?;
        records.push(ParamRecord { name, data });
    }
    Ok(NetworkParams { records })
}

fn known_name(name: &str) -> Option<&'static str> {
    const NAMES: &[&str] = &[
        "pre_lidar_w",
        "pre_lidar_b",
        "pre_bev_w",
        "pre_bev_b",
        "in_w",
        "in_b",
        "lstm_wx",
        "lstm_wh",
        "lstm_b",
        "out_w",
        "out_b",
        "head_w",
        "head_b",
    ];
    NAMES.iter().find(|&&n| n == name).copied()
}
