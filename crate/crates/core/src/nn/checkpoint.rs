//! Model files: a `u32` little-endian header length, a JSON header, then
//! every parameter tensor followed by every buffer as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, Network};
use super::train::{TrainConfig, TrainedModel};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    loss_curve: Vec<f64>,
    params: Vec<usize>,
    buffers: Vec<usize>,
}

pub fn to_bytes(m: &TrainedModel) -> Result<Vec<u8>> {
    let header = Header {
        model: m.network.config().clone(),
        train: m.train.clone(),
        epoch: m.epochs(),
        loss_curve: m.loss_curve.clone(),
        params: m.network.params().iter().map(|p| p.len()).collect(),
        buffers: m.network.buffers().iter().map(|p| p.len()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(4 + json.len() + 4 * m.network.n_params());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in m.network.params().into_iter().chain(m.network.buffers()) {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < 4 {
        return Err(Error::format(0, "missing header length"));
    }
    let hlen = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let json = bytes
        .get(4..4 + hlen)
        .ok_or_else(|| Error::format(4, format!("header of {hlen} bytes is truncated")))?;
    let header: Header = serde_json::from_slice(json)?;
    let mut net = Network::new(header.model.clone(), header.train.seed)?;
    let mut pos = 4 + hlen;
    let take = |dst: &mut [f64], pos: &mut usize| -> Result<()> {
        let need = dst.len() * 4;
        let src = bytes.get(*pos..*pos + need).ok_or_else(|| {
            Error::format(
                *pos as u64,
                format!("expected {need} more bytes of weights"),
            )
        })?;
        for (d, c) in dst.iter_mut().zip(src.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
        *pos += need;
        Ok(())
    };
    {
        let mut params = net.params_mut();
        let lens: Vec<usize> = params.iter().map(|p| p.value.len()).collect();
        if lens != header.params {
            return Err(Error::shape(format!(
                "checkpoint tensors {:?} do not match the model {lens:?}",
                header.params
            )));
        }
        for p in params.iter_mut() {
            take(p.value, &mut pos)?;
        }
    }
    let mut buffers = net.buffers_mut();
    let lens: Vec<usize> = buffers.iter().map(|b| b.len()).collect();
    if lens != header.buffers {
        return Err(Error::shape(format!(
            "checkpoint buffers {:?} do not match the model {lens:?}",
            header.buffers
        )));
    }
    for b in buffers.iter_mut() {
        take(b, &mut pos)?;
    }
    if pos != bytes.len() {
        return Err(Error::format(pos as u64, "trailing bytes after weights"));
    }
    Ok(TrainedModel {
        network: net,
        train: header.train,
        loss_curve: header.loss_curve,
    })
}

pub fn save(path: &Path, m: &TrainedModel) -> Result<()> {
    fs::write(path, to_bytes(m)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
