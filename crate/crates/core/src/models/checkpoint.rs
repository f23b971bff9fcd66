//! Self-describing model container.
//!
//! Layout: magic `LGCK`, `u32` version, `u64` header length, UTF-8 JSON
//! header, then every tensor listed in the header as little-endian `f32`, in
//! header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, Gan, Vae};
use crate::nn::{Adam, AdamConfig, Sequential, Tensor};
use crate::projection::NormStats;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Vae(Vae<f32>),
    Gan(Gan<f32>),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Vae(_) => "vae",
            Model::Gan(_) => "gan",
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        match self {
            Model::Vae(m) => &m.arch,
            Model::Gan(m) => &m.arch,
        }
    }

    pub fn networks(&self) -> [(&'static str, &Sequential<f32>); 2] {
        match self {
            Model::Vae(m) => [("encoder", &m.encoder), ("decoder", &m.decoder)],
            Model::Gan(m) => [("generator", &m.generator), ("discriminator", &m.discriminator)],
        }
    }

    fn networks_mut(&mut self) -> [&mut Sequential<f32>; 2] {
        match self {
            Model::Vae(m) => [&mut m.encoder, &mut m.decoder],
            Model::Gan(m) => [&mut m.generator, &mut m.discriminator],
        }
    }

    fn fresh(kind: &str, arch: ArchSpec) -> Result<Self> {
        match kind {
            "vae" => Ok(Model::Vae(Vae::init(arch, 0)?)),
            "gan" => Ok(Model::Gan(Gan::init(arch, 0)?)),
            other => Err(Error::Format(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Normalization of the model's own representation.
    pub stats: NormStats,
    /// Normalization of the Cartesian grids the model was trained from; the
    /// scale used when corrupting inputs.
    pub cartesian_stats: NormStats,
    pub config: serde_json::Value,
    pub step: u64,
    /// One optimizer per network, in `Model::networks` order, or none.
    pub optimizers: Vec<Adam<f32>>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    arch: ArchSpec,
    config: serde_json::Value,
    stats: NormStats,
    cartesian_stats: NormStats,
    step: u64,
    optimizers: Vec<OptimizerHeader>,
    tensors: Vec<TensorEntry>,
}

fn optimizer_tensors<'a>(net: &str, net_ref: &Sequential<f32>, adam: &'a Adam<f32>) -> Vec<(String, &'a Tensor<f32>)> {
    let mut out = Vec::new();
    for (moment, store) in [("adam_m", &adam.m), ("adam_v", &adam.v)] {
        for (i, layer) in net_ref.layers.iter().enumerate() {
            for (n, t) in layer.kind.param_names().iter().zip(&store[i]) {
                out.push((format!("{net}.{moment}.{i}.{n}"), t));
            }
        }
    }
    out
}

impl Checkpoint {
    pub fn new(model: Model, stats: NormStats, cartesian_stats: NormStats) -> Self {
        Self { model, stats, cartesian_stats, config: serde_json::Value::Null, step: 0, optimizers: Vec::new() }
    }

    pub fn arch(&self) -> &ArchSpec {
        self.model.arch()
    }

    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let nets = self.model.networks();
        let mut out = Vec::new();
        for (name, net) in nets {
            for (n, t) in net.named_tensors() {
                out.push((format!("{name}.{n}"), t));
            }
        }
        for ((name, net), adam) in nets.iter().zip(&self.optimizers) {
            out.extend(optimizer_tensors(name, net, adam));
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if self.optimizers.len() > 2 {
            return Err(Error::Precondition("at most one optimizer per network".into()));
        }
        let tensors = self.tensors();
        let header = Header {
            kind: self.model.kind().into(),
            arch: self.arch().clone(),
            config: self.config.clone(),
            stats: self.stats.clone(),
            cartesian_stats: self.cartesian_stats.clone(),
            step: self.step,
            optimizers: self.optimizers.iter().map(|a| OptimizerHeader { config: a.config, step: a.step }).collect(),
            tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape.clone() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in tensors {
            buf.clear();
            buf.extend(t.data.iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut fixed = [0u8; 16];
        r.read_exact(&mut fixed).map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        if &fixed[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(fixed[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(fixed[8..16].try_into().expect("8 bytes"));
        if len > 1 << 30 {
            return Err(Error::Format(format!("implausible header length {len}")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json).map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(&json)?;

        let mut model = Model::fresh(&header.kind, header.arch.clone())?;
        let mut optimizers: Vec<Adam<f32>> = model
            .networks()
            .iter()
            .zip(&header.optimizers)
            .map(|((_, net), h)| {
                let mut a = Adam::new(h.config, net);
                a.step = h.step;
                a
            })
            .collect();
        if optimizers.len() != header.optimizers.len() {
            return Err(Error::Format("more optimizers than networks".into()));
        }
        let mut ckpt = Checkpoint {
            model: model.clone(),
            stats: header.stats,
            cartesian_stats: header.cartesian_stats,
            config: header.config,
            step: header.step,
            optimizers: optimizers.clone(),
        };
        let expected: Vec<(String, Vec<usize>)> = ckpt.tensors().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
        let listed: Vec<(String, Vec<usize>)> = header.tensors.into_iter().map(|e| (e.name, e.shape)).collect();
        if expected != listed {
            return Err(Error::Format("checkpoint tensor directory does not match its architecture".into()));
        }

        let mut targets: Vec<&mut Tensor<f32>> = Vec::new();
        let [a, b] = model.networks_mut();
        targets.extend(a.named_tensors_mut().into_iter().map(|(_, t)| t));
        targets.extend(b.named_tensors_mut().into_iter().map(|(_, t)| t));
        for adam in optimizers.iter_mut() {
            let Adam { m, v, .. } = adam;
            targets.extend(m.iter_mut().flatten());
            targets.extend(v.iter_mut().flatten());
        }
        let mut bytes = Vec::new();
        for t in targets {
            bytes.resize(t.len() * 4, 0);
            r.read_exact(&mut bytes).map_err(|_| Error::Format("truncated checkpoint tensors".into()))?;
            for (v, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                if !v.is_finite() {
                    return Err(Error::Format("checkpoint holds non-finite values".into()));
                }
            }
        }
        ckpt.model = model;
        ckpt.optimizers = optimizers;
        Ok(ckpt)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
