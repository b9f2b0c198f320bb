//! On-disk formats for trajectory bundles and network checkpoints.
//!
//! Both are a single file: one line of JSON manifest, a newline, then the
//! raw little-endian `f64` payload. The manifest declares the payload size
//! and every array's shape, so readers in any language can slice the
//! payload without further conventions.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior_net::{NetDims, PriorNetParams};
use crate::series::Series;
use crate::ssm::{BundleMetadata, TrajectoryBundle};

pub const FORMAT_VERSION: u32 = 1;
const BUNDLE_MAGIC: &str = "danse-bundle";
const CHECKPOINT_MAGIC: &str = "danse-checkpoint";
const DTYPE: &str = "f64le";

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    magic: String,
    format_version: u32,
    dtype: String,
    m: usize,
    n: usize,
    #[serde(rename = "N")]
    count: usize,
    lengths: Vec<usize>,
    has_states: bool,
    payload_bytes: usize,
    metadata: BundleMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    magic: String,
    format_version: u32,
    dtype: String,
    meas_dim: usize,
    state_dim: usize,
    hidden: usize,
    ff: usize,
    payload_bytes: usize,
    tensors: Vec<TensorEntry>,
}

fn encode(manifest: &impl Serialize, payload: &[f64]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(manifest).map_err(|e| Error::Parse(e.to_string()))?;
    out.push(b'\n');
    out.reserve(payload.len() * 8);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Splits a file into its manifest line and payload, checking the declared
/// payload size before anything is built.
fn split(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse("missing manifest terminator".into()))?;
    Ok((&bytes[..nl], &bytes[nl + 1..]))
}

fn check_header(magic: &str, expect: &str, version: u32, dtype: &str) -> Result<()> {
    if magic != expect {
        return Err(Error::Parse(format!("expected a {expect} file, found magic {magic:?}")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported format version {version}")));
    }
    if dtype != DTYPE {
        return Err(Error::Parse(format!("unsupported dtype {dtype:?}")));
    }
    Ok(())
}

fn decode_payload(payload: &[u8], declared: usize, expected_values: usize) -> Result<Vec<f64>> {
    if declared != expected_values * 8 {
        return Err(Error::Parse(format!(
            "manifest declares {declared} payload bytes but its shapes need {}",
            expected_values * 8
        )));
    }
    if payload.len() != declared {
        return Err(Error::Parse(format!("payload has {} bytes, manifest declares {declared}", payload.len())));
    }
    Ok(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File { path: path.to_path_buf(), source }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(file_error(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(file_error(path))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(file_error(path))
}

/// Writes through a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let written = fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    written.map_err(file_error(&tmp))?;
    fs::rename(&tmp, path).map_err(file_error(path))
}

pub fn encode_bundle(bundle: &TrajectoryBundle) -> Result<Vec<u8>> {
    bundle.validate()?;
    let mut payload: Vec<f64> = bundle.measurements.iter().flat_map(|y| y.as_slice().iter().copied()).collect();
    if let Some(states) = &bundle.states {
        payload.extend(states.iter().flat_map(|x| x.as_slice().iter().copied()));
    }
    let manifest = BundleManifest {
        magic: BUNDLE_MAGIC.into(),
        format_version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        m: bundle.state_dim(),
        n: bundle.meas_dim(),
        count: bundle.len(),
        lengths: bundle.lengths(),
        has_states: bundle.states.is_some(),
        payload_bytes: payload.len() * 8,
        metadata: bundle.metadata.clone(),
    };
    encode(&manifest, &payload)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<TrajectoryBundle> {
    let (head, payload) = split(bytes)?;
    let man: BundleManifest = serde_json::from_slice(head).map_err(|e| Error::Parse(format!("bundle manifest: {e}")))?;
    check_header(&man.magic, BUNDLE_MAGIC, man.format_version, &man.dtype)?;
    if man.lengths.len() != man.count || man.count == 0 {
        return Err(Error::Parse(format!("{} lengths for N = {}", man.lengths.len(), man.count)));
    }
    let steps: usize = man.lengths.iter().sum();
    let per_step = man.n + if man.has_states { man.m } else { 0 };
    let values = decode_payload(payload, man.payload_bytes, steps * per_step)?;

    let mut cursor = 0;
    let mut take = |dim: usize, len: usize| {
        let s = Series::new(dim, values[cursor..cursor + dim * len].to_vec());
        cursor += dim * len;
        s
    };
    let measurements = man.lengths.iter().map(|&t| take(man.n, t)).collect::<Result<Vec<_>>>()?;
    let states = if man.has_states {
        Some(man.lengths.iter().map(|&t| take(man.m, t)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let bundle = TrajectoryBundle::new(states, measurements, man.metadata).map_err(|e| Error::Parse(e.to_string()))?;
    if bundle.state_dim() != man.m {
        return Err(Error::Parse(format!("manifest m = {} but H implies {}", man.m, bundle.state_dim())));
    }
    Ok(bundle)
}

pub fn write_bundle(path: &Path, bundle: &TrajectoryBundle) -> Result<()> {
    write_atomic(path, &encode_bundle(bundle)?)
}

pub fn read_bundle(path: &Path) -> Result<TrajectoryBundle> {
    decode_bundle(&read_file(path)?)
}

pub fn encode_checkpoint(params: &PriorNetParams) -> Result<Vec<u8>> {
    let d = params.dims();
    let tensors = params
        .tensors()
        .iter()
        .map(|t| TensorEntry { name: t.name.to_string(), shape: [t.rows, t.cols], offset: t.offset * 8 })
        .collect();
    let manifest = CheckpointManifest {
        magic: CHECKPOINT_MAGIC.into(),
        format_version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        meas_dim: d.meas_dim,
        state_dim: d.state_dim,
        hidden: d.hidden,
        ff: d.ff,
        payload_bytes: params.len() * 8,
        tensors,
    };
    encode(&manifest, params.as_slice())
}

/// Rebuilds parameters by tensor name; manifest order is irrelevant.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<PriorNetParams> {
    let (head, payload) = split(bytes)?;
    let man: CheckpointManifest =
        serde_json::from_slice(head).map_err(|e| Error::Parse(format!("checkpoint manifest: {e}")))?;
    check_header(&man.magic, CHECKPOINT_MAGIC, man.format_version, &man.dtype)?;
    let dims = NetDims::with_sizes(man.meas_dim, man.state_dim, man.hidden, man.ff);
    let mut params = PriorNetParams::zeros(dims);
    let values = decode_payload(payload, man.payload_bytes, params.len())?;

    let mut entries: HashMap<&str, &TensorEntry> = HashMap::new();
    for e in &man.tensors {
        if entries.insert(e.name.as_str(), e).is_some() {
            return Err(Error::Parse(format!("tensor {} listed twice", e.name)));
        }
    }
    if entries.len() != params.tensors().len() {
        return Err(Error::Parse(format!("{} tensors listed, {} expected", entries.len(), params.tensors().len())));
    }
    for info in params.tensors() {
        let e = entries.get(info.name).ok_or_else(|| Error::Parse(format!("tensor {} missing", info.name)))?;
        if e.shape != [info.rows, info.cols] {
            return Err(Error::Parse(format!("tensor {} has shape {:?}, expected {}x{}", info.name, e.shape, info.rows, info.cols)));
        }
        if e.offset % 8 != 0 || e.offset / 8 + info.len() > values.len() {
            return Err(Error::Parse(format!("tensor {} offset {} out of range", info.name, e.offset)));
        }
        let src = &values[e.offset / 8..e.offset / 8 + info.len()];
        params.tensor_mut(info.name).expect("layout tensor").copy_from_slice(src);
    }
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &PriorNetParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params)?)
}

pub fn read_checkpoint(path: &Path) -> Result<PriorNetParams> {
    decode_checkpoint(&read_file(path)?)
}
