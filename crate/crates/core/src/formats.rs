//! On-disk formats: the canonical log CSV with its JSON sidecar, the
//! ground-truth CTR matrix binary, and model checkpoints.
//!
//! All binary formats are little-endian. Matrices are row-major `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{LoggedDataset, LoggedInteraction, Matrix, Provenance};
use crate::error::{Error, Result};

pub const LOG_HEADER: [&str; 4] = ["user", "item", "reward", "propensity"];

/// Formats a float with 17 significant digits, enough for an exact round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_log_csv<W: Write>(records: &[LoggedInteraction], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.user.to_string(),
            r.item.to_string(),
            r.reward.to_string(),
            fmt_f64(r.propensity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv<R: Read>(input: R) -> Result<Vec<LoggedInteraction>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "log header must be `{}`, found `{}`",
            LOG_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (idx, row) in rdr.deserialize::<LoggedInteraction>().enumerate() {
        let rec = row.map_err(|e| Error::Parse {
            line: idx + 2,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// JSON sidecar stored next to a log CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_users: usize,
    pub num_items: usize,
    pub num_records: usize,
    pub provenance: Provenance,
    /// Ground-truth CTR matrix binary, relative to the sidecar's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_ctr: Option<String>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes `<path>` (CSV) and `<path>.json` (sidecar).
pub fn save_dataset(dataset: &LoggedDataset, path: &Path, ground_truth_ctr: Option<&str>) -> Result<()> {
    write_log_csv(&dataset.records, BufWriter::new(File::create(path)?))?;
    let meta = DatasetMeta {
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        num_records: dataset.records.len(),
        provenance: dataset.provenance.clone(),
        ground_truth_ctr: ground_truth_ctr.map(str::to_string),
    };
    write_json(&meta, &sidecar_path(path))
}

/// Loads a log CSV. Dimensions come from the sidecar when present, otherwise
/// they are inferred as one past the largest index seen.
pub fn load_dataset(path: &Path) -> Result<(LoggedDataset, Option<DatasetMeta>)> {
    let records = read_log_csv(BufReader::new(File::open(path)?))?;
    let side = sidecar_path(path);
    let meta: Option<DatasetMeta> = if side.exists() {
        Some(read_json(&side)?)
    } else {
        None
    };
    let dataset = match &meta {
        Some(m) => LoggedDataset::new(m.num_users, m.num_items, records)
            .with_provenance(m.provenance.clone()),
        None => {
            let num_users = records.iter().map(|r| r.user + 1).max().unwrap_or(0);
            let num_items = records.iter().map(|r| r.item + 1).max().unwrap_or(0);
            LoggedDataset::new(num_users, num_items, records)
        }
    };
    Ok((dataset, meta))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_u64s<W: Write>(w: &mut W, values: &[u64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("expected {n} f64 values, file is truncated")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn ensure_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

/// CTR matrix binary: `U, I` as two u64 followed by `U*I` row-major f64.
pub fn write_matrix_bin<W: Write>(m: &Matrix, mut out: W) -> Result<()> {
    write_u64s(&mut out, &[m.rows() as u64, m.cols() as u64])?;
    write_f64s(&mut out, m.as_slice())?;
    out.flush()?;
    Ok(())
}

pub fn read_matrix_bin<R: Read>(mut input: R) -> Result<Matrix> {
    let rows = read_u64(&mut input)? as usize;
    let cols = read_u64(&mut input)? as usize;
    let data = read_f64s(&mut input, rows * cols)?;
    ensure_eof(&mut input)?;
    Matrix::from_vec(rows, cols, data)
}

pub const CHECKPOINT_MAGIC: u64 = u64::from_le_bytes(*b"LGCNCKPT");
pub const CHECKPOINT_VERSION: u64 = 1;

/// Raw checkpoint payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub num_layers: usize,
    pub users: Matrix,
    pub items: Matrix,
}

/// Header `magic, version, U, I, d, K` (u64 each), then the user table and
/// the item table as row-major f64.
pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    if ckpt.users.cols() != ckpt.items.cols() {
        return Err(Error::DimensionMismatch(
            "user and item embedding widths differ".into(),
        ));
    }
    write_u64s(
        &mut out,
        &[
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            ckpt.users.rows() as u64,
            ckpt.items.rows() as u64,
            ckpt.users.cols() as u64,
            ckpt.num_layers as u64,
        ],
    )?;
    write_f64s(&mut out, ckpt.users.as_slice())?;
    write_f64s(&mut out, ckpt.items.as_slice())?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    if read_u64(&mut input)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u64(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let u = read_u64(&mut input)? as usize;
    let i = read_u64(&mut input)? as usize;
    let d = read_u64(&mut input)? as usize;
    let k = read_u64(&mut input)? as usize;
    let users = Matrix::from_vec(u, d, read_f64s(&mut input, u * d)?)?;
    let items = Matrix::from_vec(i, d, read_f64s(&mut input, i * d)?)?;
    ensure_eof(&mut input)?;
    Ok(Checkpoint {
        num_layers: k,
        users,
        items,
    })
}
