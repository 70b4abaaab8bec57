//! SDNZ checkpoint container plus JSON metadata sidecar.
//!
//! Binary layout (little-endian): `"SDNZ"`, `u32` version, eight `u32`
//! architecture fields (in_channels, channels, blocks, groups, cond_dim,
//! time_features, pos_features, fusion), `u64` parameter count, then the
//! parameters as `f64` in declared layer order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Architecture, ConditionMode, LearnedDenoiser, Network};
use crate::dataset::Normalization;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const MAGIC: &[u8; 4] = b"SDNZ";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub condition_mode: ConditionMode,
    pub has_text_stream: bool,
    pub fusion_weights: bool,
    pub schedule: NoiseSchedule,
    pub architecture: Architecture,
    pub iteration: usize,
    /// Cascade stage index (0 for single-stage models).
    pub stage: usize,
    /// Square output resolution of this stage.
    pub resolution: usize,
    pub normalization: Option<Normalization>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_checkpoint(model: &LearnedDenoiser) -> Vec<u8> {
    let arch = model.network().architecture();
    let params = model.network().params();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        arch.in_channels,
        arch.channels,
        arch.blocks,
        arch.groups,
        arch.cond_dim,
        arch.time_features,
        arch.pos_features,
        arch.fusion as usize,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected SDNZ"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let f: Vec<usize> = (0..8).map(|i| u32_at(8 + 4 * i) as usize).collect();
    let arch = Architecture {
        in_channels: f[0],
        channels: f[1],
        blocks: f[2],
        groups: f[3],
        cond_dim: f[4],
        time_features: f[5],
        pos_features: f[6],
        fusion: match f[7] {
            0 => false,
            1 => true,
            v => return Err(format_err(36, format!("fusion flag must be 0/1, got {v}"))),
        },
    };
    arch.validate().map_err(|e| format_err(8, e.to_string()))?;
    let count = u64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")) as usize;
    if count != arch.param_count() {
        return Err(format_err(
            40,
            format!(
                "parameter count {count} does not match architecture ({})",
                arch.param_count()
            ),
        ));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 8 {
        return Err(format_err(
            HEADER_LEN + body.len().min(count * 8),
            format!(
                "expected {} parameter bytes, found {}",
                count * 8,
                body.len()
            ),
        ));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(format_err(HEADER_LEN + 8 * i, "non-finite parameter"));
    }
    Network::from_params(arch, params)
}

pub fn write_checkpoint(path: &Path, model: &LearnedDenoiser, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).expect("metadata serialises");
    fs::write(&side, json).map_err(|e| Error::io(side, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(LearnedDenoiser, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let network = decode_checkpoint(&bytes)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: side, source })?;
    if meta.architecture != *network.architecture() {
        return Err(Error::Format {
            offset: 8,
            message: "sidecar architecture disagrees with checkpoint header".into(),
        });
    }
    let model = LearnedDenoiser::new(network, meta.schedule, meta.condition_mode)?;
    Ok((model, meta))
}
