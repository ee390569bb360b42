//! Checkpoint format: one file holding a version tag, named parameter
//! tensors (name → shape → raw little-endian f64 data), the model
//! architecture needed to rebuild it, and the optimizer state.
//!
//! Layout: 8-byte magic `STRCKPT1`, u32 JSON header length, UTF-8 JSON
//! header, then the raw f64 blobs in header order (parameters first, then
//! Adam first and second moments when present).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnergyModel, LearnablePhysical, StringPHNN};
use crate::nn::adam::AdamState;
use crate::nn::baseline::BaselineNet;
use crate::nn::energy::EnergyNetwork;
use crate::nn::{Shape, Tensor};
use crate::sav::SavConfig;
use crate::types::GridSpec;
use std::path::Path;

pub const CKPT_MAGIC: &[u8; 8] = b"STRCKPT1";
pub const CKPT_VERSION: u32 = 1;

/// Everything needed to rebuild a model before loading its tensors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelArch {
    Phnn {
        n: usize,
        l0: f64,
        c0: f64,
        lambda_dr: f64,
        dt: f64,
        /// Hidden widths of the energy network; empty means the analytic
        /// quartic energy.
        hidden: Vec<usize>,
        alpha: f64,
    },
    Baseline {
        n: usize,
        l0: f64,
        hidden: Vec<usize>,
        alpha: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CkptHeader {
    version: u32,
    arch: ModelArch,
    entries: Vec<EntryHeader>,
    adam_step: Option<u64>,
    /// Free-form provenance (config hash, seed, training step).
    meta: serde_json::Value,
}

/// A checkpoint in memory.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: ModelArch,
    pub entries: Vec<(String, Tensor, bool)>,
    pub adam: Option<AdamState>,
    pub meta: serde_json::Value,
}

fn shape_dims(s: Shape) -> Vec<usize> {
    match s {
        Shape::Scalar => vec![],
        Shape::Vector(n) => vec![n],
        Shape::Matrix(r, c) => vec![r, c],
    }
}

fn dims_shape(d: &[usize]) -> Result<Shape> {
    match d {
        [] => Ok(Shape::Scalar),
        [n] => Ok(Shape::Vector(*n)),
        [r, c] => Ok(Shape::Matrix(*r, *c)),
        _ => Err(Error::format("tensor rank above 2 in checkpoint")),
    }
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = CkptHeader {
        version: CKPT_VERSION,
        arch: ckpt.arch.clone(),
        entries: ckpt
            .entries
            .iter()
            .map(|(name, t, trainable)| EntryHeader {
                name: name.clone(),
                shape: shape_dims(t.shape),
                trainable: *trainable,
            })
            .collect(),
        adam_step: ckpt.adam.as_ref().map(|a| a.t),
        meta: ckpt.meta.clone(),
    };
    let json =
        serde_json::to_vec(&header).map_err(|e| Error::format(format!("header encode: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t, _) in &ckpt.entries {
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(adam) = &ckpt.adam {
        for blob in adam.m.iter().chain(adam.v.iter()) {
            for &v in blob {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn read_f64_block(buf: &[u8], offset: &mut usize, count: usize) -> Result<Vec<f64>> {
    let bytes = count
        .checked_mul(8)
        .ok_or_else(|| Error::format("tensor size overflow"))?;
    let end = offset
        .checked_add(bytes)
        .ok_or_else(|| Error::format("tensor offset overflow"))?;
    if end > buf.len() {
        return Err(Error::format("checkpoint truncated"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = *offset + 8 * i;
        out.push(f64::from_le_bytes(buf[at..at + 8].try_into().unwrap()));
    }
    *offset = end;
    Ok(out)
}

/// Parses a checkpoint; never panics on malformed input.
pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < 12 || &buf[..8] != CKPT_MAGIC {
        return Err(Error::format("not a checkpoint file (bad magic)"));
    }
    let json_len = u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]) as usize;
    let json_end = 12usize
        .checked_add(json_len)
        .ok_or_else(|| Error::format("header length overflow"))?;
    if json_end > buf.len() {
        return Err(Error::format("checkpoint header truncated"));
    }
    let header: CkptHeader = serde_json::from_slice(&buf[12..json_end])
        .map_err(|e| Error::format(format!("header decode: {e}")))?;
    if header.version != CKPT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    if header.entries.len() > 10_000 {
        return Err(Error::format("implausible entry count"));
    }
    let mut offset = json_end;
    let mut entries = Vec::with_capacity(header.entries.len());
    for e in &header.entries {
        let shape = dims_shape(&e.shape)?;
        if shape.len() > 100_000_000 {
            return Err(Error::format("implausible tensor size"));
        }
        let data = read_f64_block(buf, &mut offset, shape.len())?;
        entries.push((e.name.clone(), Tensor { shape, data }, e.trainable));
    }
    let adam = match header.adam_step {
        None => None,
        Some(t) => {
            let trainable: Vec<usize> = entries
                .iter()
                .filter(|(_, _, tr)| *tr)
                .map(|(_, t, _)| t.data.len())
                .collect();
            let mut m = Vec::with_capacity(trainable.len());
            for &len in &trainable {
                m.push(read_f64_block(buf, &mut offset, len)?);
            }
            let mut v = Vec::with_capacity(trainable.len());
            for &len in &trainable {
                v.push(read_f64_block(buf, &mut offset, len)?);
            }
            Some(AdamState { m, v, t })
        }
    };
    if offset != buf.len() {
        return Err(Error::format("trailing bytes after checkpoint payload"));
    }
    Ok(Checkpoint {
        arch: header.arch,
        entries,
        adam,
        meta: header.meta,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint conversion
// ---------------------------------------------------------------------------

pub fn phnn_checkpoint(
    model: &StringPHNN,
    adam: Option<&AdamState>,
    meta: serde_json::Value,
) -> Checkpoint {
    let hidden = match &model.energy {
        EnergyModel::Analytic => vec![],
        EnergyModel::Network(net) => net.widths.clone(),
    };
    let alpha = match &model.energy {
        EnergyModel::Analytic => 0.0,
        EnergyModel::Network(net) => net.alpha,
    };
    let arch = ModelArch::Phnn {
        n: model.grid.n,
        l0: model.grid.l0,
        c0: model.sav.c0,
        lambda_dr: model.sav.lambda_dr,
        dt: model.sav.dt,
        hidden,
        alpha,
    };
    let names = model.trainable_names();
    let tensors = model.trainable_tensors();
    let entries = names
        .into_iter()
        .zip(tensors)
        .map(|(n, t)| (n, t.clone(), true))
        .collect();
    Checkpoint {
        arch,
        entries,
        adam: adam.cloned(),
        meta,
    }
}

pub fn build_phnn(ckpt: &Checkpoint) -> Result<StringPHNN> {
    let (n, l0, c0, lambda_dr, dt, hidden, alpha) = match &ckpt.arch {
        ModelArch::Phnn {
            n,
            l0,
            c0,
            lambda_dr,
            dt,
            hidden,
            alpha,
        } => (*n, *l0, *c0, *lambda_dr, *dt, hidden.clone(), *alpha),
        _ => return Err(Error::format("checkpoint does not hold a StringPHNN")),
    };
    let grid = GridSpec::new(n, l0)?;
    let sav = SavConfig::new(c0, lambda_dr, dt)?;
    let get = |name: &str| -> Result<&Tensor> {
        ckpt.entries
            .iter()
            .find(|(en, _, _)| en == name)
            .map(|(_, t, _)| t)
            .ok_or_else(|| Error::format(format!("checkpoint missing tensor {name}")))
    };
    let phi = get("phi")?;
    if phi.data.len() != 6 {
        return Err(Error::format("phi must have 6 components"));
    }
    let physical = LearnablePhysical { phi: phi.clone() };

    let energy = if hidden.is_empty() {
        EnergyModel::Analytic
    } else {
        let mut net = EnergyNetwork::with_widths(grid.h(), 0, &hidden);
        net.alpha = alpha;
        net.kernel = get("energy.kernel")?.clone();
        if net.kernel.data.len() != 2 {
            return Err(Error::format("energy kernel must have 2 components"));
        }
        for l in 0..net.weights.len() {
            let w = get(&format!("energy.w{l}"))?;
            let b = get(&format!("energy.b{l}"))?;
            if w.shape != net.weights[l].shape || b.shape != net.biases[l].shape {
                return Err(Error::format(format!("layer {l} shape mismatch")));
            }
            net.weights[l] = w.clone();
            net.biases[l] = b.clone();
        }
        EnergyModel::Network(net)
    };
    Ok(StringPHNN::new(physical, energy, grid, sav))
}

pub fn baseline_checkpoint(
    net: &BaselineNet,
    grid: &GridSpec,
    adam: Option<&AdamState>,
    meta: serde_json::Value,
) -> Checkpoint {
    let arch = ModelArch::Baseline {
        n: grid.n,
        l0: grid.l0,
        hidden: net.widths.clone(),
        alpha: net.alpha,
    };
    let mut entries = Vec::new();
    for l in 0..net.weights.len() {
        entries.push((format!("w{l}"), net.weights[l].clone(), true));
        entries.push((format!("b{l}"), net.biases[l].clone(), true));
    }
    entries.push((
        "input_mean".to_string(),
        Tensor::vector(net.input_mean.clone()),
        false,
    ));
    entries.push((
        "input_std".to_string(),
        Tensor::vector(net.input_std.clone()),
        false,
    ));
    Checkpoint {
        arch,
        entries,
        adam: adam.cloned(),
        meta,
    }
}

pub fn build_baseline(ckpt: &Checkpoint) -> Result<(BaselineNet, GridSpec)> {
    let (n, l0, hidden, alpha) = match &ckpt.arch {
        ModelArch::Baseline {
            n,
            l0,
            hidden,
            alpha,
        } => (*n, *l0, hidden.clone(), *alpha),
        _ => return Err(Error::format("checkpoint does not hold a baseline")),
    };
    let grid = GridSpec::new(n, l0)?;
    let mut net = BaselineNet::with_widths(grid.interior(), 0, &hidden);
    net.alpha = alpha;
    let get = |name: &str| -> Result<&Tensor> {
        ckpt.entries
            .iter()
            .find(|(en, _, _)| en == name)
            .map(|(_, t, _)| t)
            .ok_or_else(|| Error::format(format!("checkpoint missing tensor {name}")))
    };
    for l in 0..net.weights.len() {
        let w = get(&format!("w{l}"))?;
        let b = get(&format!("b{l}"))?;
        if w.shape != net.weights[l].shape || b.shape != net.biases[l].shape {
            return Err(Error::format(format!("layer {l} shape mismatch")));
        }
        net.weights[l] = w.clone();
        net.biases[l] = b.clone();
    }
    let mean = get("input_mean")?.data.clone();
    let std = get("input_std")?.data.clone();
    if mean.len() != net.in_dim || std.len() != net.in_dim {
        return Err(Error::format("standardization vector length mismatch"));
    }
    net.set_input_stats(mean, std);
    Ok((net, grid))
}
