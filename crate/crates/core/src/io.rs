//! On-disk formats: the dataset and results JSON documents and the binary
//! matrix sidecars that hold per-draw output.
//!
//! Every document carries `format` and `version` fields; readers accept any
//! minor version of major version 1. Sidecars start with a 16-byte header:
//! the 7-byte magic `GPFDRAW` and a major-version byte, then the row and
//! column counts as little-endian `u32`. The payload is little-endian `f64`
//! in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datagen::{Curve, FunctionalDataset, SimConfig};
use crate::diagnostics::ResidualDraws;
use crate::error::{Error, Result};
use crate::summary::{from_rows, to_rows, Rows, RunDraws, SmoothResult};

pub const DATASET_FORMAT: &str = "bfsmooth-dataset";
pub const RESULTS_FORMAT: &str = "bfsmooth-results";
pub const FORMAT_VERSION: &str = "1.0";
pub const SIDECAR_MAGIC: &[u8; 7] = b"GPFDRAW";
pub const SIDECAR_VERSION: u8 = b'1';
pub const SIDECAR_HEADER: usize = 16;

fn check_header(expected: &str, format: &str, version: &str) -> Result<()> {
    if format != expected {
        return Err(Error::format(format!("expected a '{expected}' document, found '{format}'")));
    }
    let major = version.split('.').next().unwrap_or("");
    if major != "1" {
        return Err(Error::format(format!(
            "unsupported {expected} version {version} (this build reads 1.x)"
        )));
    }
    Ok(())
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::param(format!("'{}' is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sim_config: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_cov: Option<Rows>,
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    format: String,
    version: String,
    curves: Vec<Curve>,
    #[serde(default)]
    meta: Option<DatasetMeta>,
}

pub fn dataset_to_json(data: &FunctionalDataset) -> Result<String> {
    let doc = DatasetDoc {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION.into(),
        curves: data.curves.clone(),
        meta: Some(DatasetMeta {
            domain: data.domain,
            sim_config: data.sim_config.clone(),
            truth_grid: data.truth_grid.clone(),
            true_mean: data.true_mean.clone(),
            true_cov: data.true_cov.as_ref().map(to_rows),
        }),
    };
    Ok(serde_json::to_string(&doc)?)
}

/// Parses and validates a dataset document. The pooled grid is rebuilt
/// from the curves.
pub fn dataset_from_json(text: &str) -> Result<FunctionalDataset> {
    let doc: DatasetDoc = serde_json::from_str(text)?;
    check_header(DATASET_FORMAT, &doc.format, &doc.version)?;
    let mut data = FunctionalDataset::new(doc.curves)?;
    if let Some(meta) = doc.meta {
        data.domain = meta.domain;
        data.sim_config = meta.sim_config;
        data.truth_grid = meta.truth_grid;
        data.true_mean = meta.true_mean;
        data.true_cov = meta.true_cov.as_ref().map(from_rows).transpose()?;
    }
    data.validate()?;
    Ok(data)
}

pub fn save_dataset(path: &Path, data: &FunctionalDataset) -> Result<()> {
    write_atomic(path, dataset_to_json(data)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<FunctionalDataset> {
    dataset_from_json(&fs::read_to_string(path)?)
}

/// Names and shapes of the sidecars written next to a results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarInfo {
    /// File name of the trace sidecar: one row per retained draw, columns
    /// `chain, scalar_1, ..., scalar_k`.
    pub draws: String,
    pub monitor_names: Vec<String>,
    /// File name of the residual sidecar: one row per stored draw, columns
    /// `sigma_eps2, r_1, ..., r_N`.
    pub residuals: String,
    pub residual_lengths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub format: String,
    pub version: String,
    /// Settings that reproduce the run.
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub runtime_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecars: Option<SidecarInfo>,
    pub result: SmoothResult,
}

impl ResultsFile {
    pub fn new(config: RunConfig, dataset: Option<String>, runtime_secs: f64, result: SmoothResult) -> Self {
        ResultsFile {
            format: RESULTS_FORMAT.into(),
            version: FORMAT_VERSION.into(),
            config,
            dataset,
            runtime_secs,
            sidecars: None,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: String,
        }
        let h: Header = serde_json::from_str(text)?;
        check_header(RESULTS_FORMAT, &h.format, &h.version)?;
        Ok(serde_json::from_str(text)?)
    }
}

pub fn sidecar_paths(results: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = results.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".draws.bin"), with(".resid.bin"))
}

/// Writes the results document and, when `draws` is given, both sidecars.
pub fn save_results(path: &Path, results: &mut ResultsFile, draws: Option<&RunDraws>) -> Result<()> {
    if let Some(d) = draws {
        let (dp, rp) = sidecar_paths(path);
        write_atomic(&dp, &encode_traces(d)?)?;
        write_atomic(&rp, &encode_residuals(&d.residuals)?)?;
        let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        results.sidecars = Some(SidecarInfo {
            draws: name(&dp),
            monitor_names: d.monitor_names.clone(),
            residuals: name(&rp),
            residual_lengths: d.residuals.lengths.clone(),
        });
    }
    write_atomic(path, results.to_json()?.as_bytes())
}

pub fn load_results(path: &Path) -> Result<ResultsFile> {
    ResultsFile::from_json(&fs::read_to_string(path)?)
}

/// Reads the sidecars listed in a results file, resolved relative to it.
pub fn load_draws(path: &Path, results: &ResultsFile) -> Result<RunDraws> {
    let info = results.sidecars.as_ref().ok_or_else(|| {
        Error::param(format!(
            "{} has no draw sidecars; rerun smooth without --no-draws",
            path.display()
        ))
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let traces = decode_matrix(&fs::read(dir.join(&info.draws))?)?;
    let resid = decode_matrix(&fs::read(dir.join(&info.residuals))?)?;
    Ok(RunDraws {
        monitor_names: info.monitor_names.clone(),
        traces: traces_from_matrix(&traces, info.monitor_names.len())?,
        residuals: residuals_from_matrix(&resid, info.residual_lengths.clone())?,
    })
}

/// Row-major matrix as stored in a sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixBlock {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixBlock {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

pub fn encode_matrix(m: &MatrixBlock) -> Result<Vec<u8>> {
    if m.rows.checked_mul(m.cols) != Some(m.data.len()) {
        return Err(Error::shape("matrix data length differs from rows x cols"));
    }
    let rows = u32::try_from(m.rows).map_err(|_| Error::param("too many rows for a sidecar"))?;
    let cols = u32::try_from(m.cols).map_err(|_| Error::param("too many columns for a sidecar"))?;
    let mut out = Vec::with_capacity(SIDECAR_HEADER + 8 * m.data.len());
    out.extend_from_slice(SIDECAR_MAGIC);
    out.push(SIDECAR_VERSION);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<MatrixBlock> {
    if bytes.len() < SIDECAR_HEADER || &bytes[..7] != SIDECAR_MAGIC {
        return Err(Error::format("not a draws sidecar (bad magic)"));
    }
    if bytes[7] != SIDECAR_VERSION {
        return Err(Error::format(format!(
            "unsupported sidecar version byte {:#04x}",
            bytes[7]
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (u32_at(8), u32_at(12));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(SIDECAR_HEADER))
        .ok_or_else(|| Error::format("sidecar dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "sidecar holds {} bytes, header promises {expected}",
            bytes.len()
        )));
    }
    let data = bytes[SIDECAR_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(MatrixBlock { rows, cols, data })
}

pub fn encode_traces(d: &RunDraws) -> Result<Vec<u8>> {
    let k = d.monitor_names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (chain, scalars) in d.traces.iter().enumerate() {
        if scalars.len() != k {
            return Err(Error::shape("trace count differs from monitor names"));
        }
        let len = scalars.first().map_or(0, |s| s.len());
        for draw in 0..len {
            data.push(chain as f64);
            data.extend(scalars.iter().map(|s| s[draw]));
        }
        rows += len;
    }
    encode_matrix(&MatrixBlock { rows, cols: k + 1, data })
}

fn traces_from_matrix(m: &MatrixBlock, k: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    if m.cols != k + 1 {
        return Err(Error::format(format!("trace sidecar has {} columns, expected {}", m.cols, k + 1)));
    }
    let mut traces: Vec<Vec<Vec<f64>>> = Vec::new();
    for i in 0..m.rows {
        let row = m.row(i);
        let chain = row[0];
        if !(chain >= 0.0 && chain.fract() == 0.0 && (chain as usize) < m.rows.max(1)) {
            return Err(Error::format(format!("trace row {i} has invalid chain index {chain}")));
        }
        let chain = chain as usize;
        if chain + 1 < traces.len() || chain > traces.len() {
            return Err(Error::format("trace rows are not grouped by chain"));
        }
        if chain == traces.len() {
            traces.push(vec![Vec::new(); k]);
        }
        for (s, v) in traces[chain].iter_mut().zip(&row[1..]) {
            s.push(*v);
        }
    }
    Ok(traces)
}

pub fn encode_residuals(r: &ResidualDraws) -> Result<Vec<u8>> {
    let total = r.total();
    let mut data = Vec::with_capacity(r.draws() * (total + 1));
    for d in 0..r.draws() {
        data.push(r.sigma2[d]);
        data.extend_from_slice(r.draw(d));
    }
    encode_matrix(&MatrixBlock { rows: r.draws(), cols: total + 1, data })
}

fn residuals_from_matrix(m: &MatrixBlock, lengths: Vec<usize>) -> Result<ResidualDraws> {
    let total = lengths
        .iter()
        .try_fold(0usize, |a, &l| a.checked_add(l))
        .ok_or_else(|| Error::format("residual lengths overflow"))?;
    if m.cols != total.saturating_add(1) {
        return Err(Error::format(format!(
            "residual sidecar has {} columns, expected {}",
            m.cols,
            total.saturating_add(1)
        )));
    }
    let mut r = ResidualDraws::new(lengths);
    for i in 0..m.rows {
        let row = m.row(i);
        r.push(row[0], &row[1..]);
    }
    Ok(r)
}
