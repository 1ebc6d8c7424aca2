//! Network dictionaries: a binary parameter container plus a JSON sidecar.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_network, NetworkConfig, NetworkHandle};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CROPNET1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub name: String,
    pub config: NetworkConfig,
    pub epoch: usize,
    pub validation_iou: Option<f64>,
    pub creation_date: String,
    pub parameter_count: usize,
}

/// `net_dic_<tag>_<epoch>`, epoch zero-padded to five digits.
pub fn checkpoint_name(tag: &str, epoch: usize) -> String {
    format!("net_dic_{tag}_{epoch:05}")
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `<dir>/<name>.bin` and `<dir>/<name>.json`; returns the binary path.
pub fn save_checkpoint(
    net: &mut NetworkHandle,
    dir: &Path,
    tag: &str,
    epoch: usize,
    validation_iou: Option<f64>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = checkpoint_name(tag, epoch);
    let bin = dir.join(format!("{name}.bin"));
    let tensors = net.state_tensors();

    let mut w = BufWriter::new(File::create(&bin).map_err(|e| Error::io(&bin, e))?);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(&bin, e));
    put(MAGIC)?;
    put(&(tensors.len() as u64).to_le_bytes())?;
    for t in &tensors {
        put(&(t.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(&bin, e))?;

    let meta = CheckpointMeta {
        name,
        config: *net.config(),
        epoch,
        validation_iou,
        creation_date: chrono::Local::now().to_rfc3339(),
        parameter_count: net.parameter_count(),
    };
    let side = sidecar_path(&bin);
    let json = serde_json::to_string_pretty(&meta).expect("metadata serialises");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(bin)
}

/// Load a checkpoint written by [`save_checkpoint`]. When `expected` is
/// given, the stored architecture must match it.
pub fn load_checkpoint(path: &Path, expected: Option<&NetworkConfig>) -> Result<(NetworkHandle, CheckpointMeta)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: side.clone(),
        field: String::new(),
        message: e.to_string(),
    })?;
    if let Some(want) = expected {
        let got = &meta.config;
        if (got.depth, got.base_width, got.use_batch_norm, got.batch_norm_affine)
            != (want.depth, want.base_width, want.use_batch_norm, want.batch_norm_affine)
            || got.input_side != want.input_side
        {
            return Err(Error::Checkpoint(format!(
                "{} holds depth {} / base {} / side {}, requested depth {} / base {} / side {}",
                path.display(),
                got.depth,
                got.base_width,
                got.input_side,
                want.depth,
                want.base_width,
                want.input_side
            )));
        }
    }

    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a network dictionary", path.display())));
    }
    let read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
        Ok(u64::from_le_bytes(b))
    };
    let count = read_u64(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u64(&mut r)? as usize;
        let mut buf = vec![0u8; len * 4];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        tensors.push(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
    }

    let mut net = build_network(meta.config, 0)?;
    net.load_state_tensors(tensors)?;
    Ok((net, meta))
}
