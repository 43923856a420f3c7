//! Single-file checkpoints: parameters, embedding state and run metadata.
//!
//! Layout: the 8-byte magic `TRAJCKPT`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then raw little-endian
//! `f64` data. The header lists every tensor with its shape in the order the
//! data follows. Absent timestamps are stored as NaN and absent previous
//! items as `u64::MAX`, so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DeltaScale;
use crate::error::{Error, Result};
use crate::eval::Task;
use crate::model::{Dims, EmbeddingState, ModelParams, TENSOR_NAMES};
use crate::numkit::Mat;

pub const MAGIC: &[u8; 8] = b"TRAJCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// How the checkpointed model was trained and selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub task: Task,
    pub train_pct: f64,
    pub val_pct: f64,
    /// Set when validation and test are fixed windows after training.
    pub test_pct: Option<f64>,
    pub delta_scale: DeltaScale,
    pub seed: u64,
    pub epoch: usize,
    pub validation_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub state: EmbeddingState,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dims: Dims,
    state_uses_static: bool,
    tensors: Vec<(String, [usize; 2])>,
    meta: CheckpointMeta,
}

fn put(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    ck.params.validate()?;
    if !ck.state.dims_match(&ck.params.dims) {
        return Err(Error::shape("checkpoint state", "parameter dimensions"));
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        dims: ck.params.dims,
        state_uses_static: ck.params.state_uses_static,
        tensors: TENSOR_NAMES
            .iter()
            .zip(ck.params.tensors())
            .map(|(n, m)| (n.to_string(), [m.rows(), m.cols()]))
            .collect(),
        meta: ck.meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;

    let mut body = Vec::new();
    for m in ck.params.tensors() {
        put(&mut body, m.as_slice());
    }
    put(&mut body, ck.state.user_dyn.as_slice());
    put(&mut body, ck.state.item_dyn.as_slice());
    let times = |v: &[Option<f64>]| v.iter().map(|t| t.unwrap_or(f64::NAN)).collect::<Vec<_>>();
    put(&mut body, &times(&ck.state.last_time_user));
    put(&mut body, &times(&ck.state.last_time_item));
    for k in &ck.state.prev_item {
        body.extend_from_slice(&k.map_or(u64::MAX, |k| k as u64).to_le_bytes());
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>, bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(&mut w, MAGIC)?;
    write(&mut w, &FORMAT_VERSION.to_le_bytes())?;
    write(&mut w, &(json.len() as u64).to_le_bytes())?;
    write(&mut w, &json)?;
    write(&mut w, &body)?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::BadCheckpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::BadCheckpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        Mat::from_vec(rows, cols, self.f64s(rows * cols)?)
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &buf, pos: 0 };

    if c.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::BadCheckpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::BadCheckpoint(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = usize::try_from(c.u64()?).map_err(|_| Error::BadCheckpoint("header too large".into()))?;
    let header: Header =
        serde_json::from_slice(c.take(hlen)?).map_err(|e| Error::BadCheckpoint(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(Error::BadCheckpoint("header version disagrees with preamble".into()));
    }

    let mut params = ModelParams::zeros(header.dims);
    params.state_uses_static = header.state_uses_static;
    if header.tensors.len() != TENSOR_NAMES.len() {
        return Err(Error::BadCheckpoint("unexpected tensor list".into()));
    }
    for ((name, [r, cols]), (want, slot)) in header
        .tensors
        .iter()
        .zip(TENSOR_NAMES.iter().zip(params.tensors_mut()))
    {
        if name != want || (*r, *cols) != slot.shape() {
            return Err(Error::BadCheckpoint(format!("tensor {name} {r}x{cols} does not fit {want}")));
        }
        *slot = c.mat(*r, *cols)?;
    }
    let d = header.dims;
    let user_dyn = c.mat(d.num_users, d.n)?;
    let item_dyn = c.mat(d.num_items, d.n)?;
    let times = |v: Vec<f64>| v.into_iter().map(|t| (!t.is_nan()).then_some(t)).collect();
    let last_time_user = times(c.f64s(d.num_users)?);
    let last_time_item = times(c.f64s(d.num_items)?);
    let mut prev_item = Vec::with_capacity(d.num_users);
    for _ in 0..d.num_users {
        let k = c.u64()?;
        prev_item.push(if k == u64::MAX {
            None
        } else if (k as usize) < d.num_items {
            Some(k as usize)
        } else {
            return Err(Error::BadCheckpoint(format!("previous item {k} out of range")));
        });
    }
    if c.pos != buf.len() {
        return Err(Error::BadCheckpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params,
        state: EmbeddingState {
            user_dyn,
            item_dyn,
            last_time_user,
            last_time_item,
            prev_item,
        },
        meta: header.meta,
    })
}
