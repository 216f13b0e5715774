//! Self-describing binary checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic        8 bytes  "MDCKPT\0\0"
//! version      u32      1
//! config       str      JSON-encoded model configuration
//! norm         7 × f64 array, then length_scale f64
//! params       f64 array, flattened network
//! has_opt      u8
//! optimizer    lr0 lr_min beta1 beta2 eps weight_decay f64,
//!              total_steps u64, step u64, m f64 array, v f64 array
//! ```
//!
//! Arrays are a u64 length followed by the values; `str` is a u32 length
//! followed by UTF-8 bytes.

use std::path::Path;

use crate::bytes::{Reader, Writer};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};

use super::adamw::AdamW;
use super::model::{ModelConfig, ModelParams, Network, Normalization};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub optimizer: Option<AdamW>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let config = serde_json::to_string(&ck.model.config).map_err(|e| Error::Format(e.to_string()))?;
    w.str(&config);
    let n = &ck.model.norm;
    for v in [
        &n.state_mean,
        &n.state_std,
        &n.grad_scale,
        &n.lap_scale,
        &n.out_scale,
        &n.global_mean,
        &n.global_std,
    ] {
        w.f64s(v);
    }
    w.f64(n.length_scale);
    w.f64s(&ck.model.net.flatten());
    match &ck.optimizer {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            for v in [o.lr0, o.lr_min, o.beta1, o.beta2, o.eps, o.weight_decay] {
                w.f64(v);
            }
            w.u64(o.total_steps);
            w.u64(o.step);
            w.f64s(&o.m);
            w.f64s(&o.v);
        }
    }
    Ok(w.0)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig =
        serde_json::from_str(&r.str()?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let norm = Normalization {
        state_mean: r.f64s()?,
        state_std: r.f64s()?,
        grad_scale: r.f64s()?,
        lap_scale: r.f64s()?,
        out_scale: r.f64s()?,
        global_mean: r.f64s()?,
        global_std: r.f64s()?,
        length_scale: r.f64()?,
    };
    let flat = r.f64s()?;
    let mut net = Network::new(&config, 0)?;
    net.unflatten(&flat)?;
    let model = ModelParams::from_parts(config, norm, net)?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let mut f = || r.f64();
            let (lr0, lr_min, beta1, beta2, eps, weight_decay) = (f()?, f()?, f()?, f()?, f()?, f()?);
            let total_steps = r.u64()?;
            let step = r.u64()?;
            let m = r.f64s()?;
            let v = r.f64s()?;
            if m.len() != flat.len() || v.len() != flat.len() {
                return Err(Error::Format("optimizer moments do not match the parameters".into()));
            }
            Some(AdamW {
                lr0,
                lr_min,
                beta1,
                beta2,
                eps,
                weight_decay,
                total_steps,
                step,
                m,
                v,
            })
        }
        other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
    };
    if !r.finished() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { model, optimizer })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
