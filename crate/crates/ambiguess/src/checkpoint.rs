//! Model checkpoints: a binary container of named dense stacks plus a JSON
//! sidecar with everything that is not a weight.
//!
//! Container layout (little-endian):
//!
//! ```text
//! "AMBG" | version u16 | net count u16
//! per net:   name length u16 | name (UTF-8) | layer count u16
//! per layer: in u32 | out u32 | activation u8 | weights f64[out·in] | bias f64[out]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ambiguess_core::models::{AutoencoderModel, ClassifierModel};
use ambiguess_core::nn::{Activation, DenseLayer, Mlp};
use ambiguess_core::raae::{ClassPair, LatentPrior, RaaeModel, Verdict};
use ambiguess_core::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"AMBG";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("{path}: sidecar: {source}")]
    Sidecar {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Mismatch { path: String, message: String },
}

/// Sidecar metadata, tagged by model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelMeta {
    Classifier {
        config_digest: String,
        dropout: Vec<f64>,
    },
    Autoencoder {
        config_digest: String,
    },
    Raae {
        config_digest: String,
        pair: ClassPair,
        prior: LatentPrior,
        verdict: Option<Verdict>,
    },
}

impl ModelMeta {
    pub fn config_digest(&self) -> &str {
        match self {
            ModelMeta::Classifier { config_digest, .. }
            | ModelMeta::Autoencoder { config_digest }
            | ModelMeta::Raae { config_digest, .. } => config_digest,
        }
    }
}

pub fn encode(nets: &[(&str, &Mlp)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u16).to_le_bytes());
    for (name, net) in nets {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(net.layers.len() as u16).to_le_bytes());
        for layer in &net.layers {
            out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            out.push(layer.activation.code());
            for v in layer.weights.data().iter().chain(layer.bias.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Format {
                offset: self.pos,
                message: format!("truncated {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, CheckpointError> {
        let len = n.checked_mul(8).ok_or_else(|| CheckpointError::Format {
            offset: self.pos,
            message: format!("{what} size overflows"),
        })?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn fail(&self, offset: usize, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Format {
            offset,
            message: message.into(),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Mlp)>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let count = r.u16("net count")?;
    let mut nets = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.fail(at + 2, "name is not UTF-8"))?
            .to_string();
        let layer_count = r.u16("layer count")?;
        let mut layers = Vec::with_capacity(layer_count as usize);
        for _ in 0..layer_count {
            let at = r.pos;
            let inp = r.u32("layer input size")? as usize;
            let out = r.u32("layer output size")? as usize;
            let code = r.take(1, "activation")?[0];
            let activation = Activation::from_code(code).ok_or_else(|| r.fail(at + 8, format!("unknown activation {code}")))?;
            let w = r.f64s(inp.saturating_mul(out), "weights")?;
            let b = r.f64s(out, "bias")?;
            let layer = Tensor::new(vec![out, inp], w)
                .and_then(|w| DenseLayer::new(w, Tensor::new(vec![out], b)?, activation))
                .map_err(|e| r.fail(at, e.to_string()))?;
            layers.push(layer);
        }
        nets.push((name, Mlp::new(layers).map_err(|e| r.fail(at, e.to_string()))?));
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes"));
    }
    Ok(nets)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write(path: &Path, nets: &[(&str, &Mlp)], meta: &ModelMeta) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, encode(nets)).map_err(io(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
    fs::write(&side, json).map_err(io(&side))
}

fn read(path: &Path) -> Result<(Vec<(String, Mlp)>, ModelMeta), CheckpointError> {
    let nets = decode(&fs::read(path).map_err(io(path))?)?;
    let side = sidecar_path(path);
    let raw = fs::read(&side).map_err(io(&side))?;
    let meta = serde_json::from_slice(&raw).map_err(|source| CheckpointError::Sidecar {
        path: side.display().to_string(),
        source,
    })?;
    Ok((nets, meta))
}

fn take_net(path: &Path, nets: &mut Vec<(String, Mlp)>, name: &str) -> Result<Mlp, CheckpointError> {
    let i = nets.iter().position(|(n, _)| n == name).ok_or_else(|| CheckpointError::Mismatch {
        path: path.display().to_string(),
        message: format!("missing network '{name}'"),
    })?;
    Ok(nets.remove(i).1)
}

fn wrong_kind(path: &Path, want: &str) -> CheckpointError {
    CheckpointError::Mismatch {
        path: path.display().to_string(),
        message: format!("sidecar does not describe a {want}"),
    }
}

pub fn save_classifier(path: &Path, model: &ClassifierModel, config_digest: &str) -> Result<(), CheckpointError> {
    let meta = ModelMeta::Classifier {
        config_digest: config_digest.into(),
        dropout: model.dropout.clone(),
    };
    write(path, &[("net", &model.net)], &meta)
}

pub fn load_classifier(path: &Path) -> Result<(ClassifierModel, ModelMeta), CheckpointError> {
    let (mut nets, meta) = read(path)?;
    let ModelMeta::Classifier { dropout, .. } = &meta else {
        return Err(wrong_kind(path, "classifier"));
    };
    let model = ClassifierModel {
        net: take_net(path, &mut nets, "net")?,
        dropout: dropout.clone(),
    };
    Ok((model, meta))
}

pub fn save_autoencoder(path: &Path, model: &AutoencoderModel, config_digest: &str) -> Result<(), CheckpointError> {
    let meta = ModelMeta::Autoencoder {
        config_digest: config_digest.into(),
    };
    write(path, &[("encoder", &model.encoder), ("decoder", &model.decoder)], &meta)
}

pub fn load_autoencoder(path: &Path) -> Result<(AutoencoderModel, ModelMeta), CheckpointError> {
    let (mut nets, meta) = read(path)?;
    if !matches!(meta, ModelMeta::Autoencoder { .. }) {
        return Err(wrong_kind(path, "autoencoder"));
    }
    let model = AutoencoderModel {
        encoder: take_net(path, &mut nets, "encoder")?,
        decoder: take_net(path, &mut nets, "decoder")?,
    };
    Ok((model, meta))
}

pub fn save_raae(path: &Path, model: &RaaeModel, config_digest: &str) -> Result<(), CheckpointError> {
    let meta = ModelMeta::Raae {
        config_digest: config_digest.into(),
        pair: model.pair.clone(),
        prior: model.prior.clone(),
        verdict: model.verdict,
    };
    let nets = [
        ("encoder", &model.autoencoder.encoder),
        ("decoder", &model.autoencoder.decoder),
        ("discriminator", &model.discriminator),
    ];
    write(path, &nets, &meta)
}

pub fn load_raae(path: &Path) -> Result<(RaaeModel, ModelMeta), CheckpointError> {
    let (mut nets, meta) = read(path)?;
    let ModelMeta::Raae { pair, prior, verdict, .. } = &meta else {
        return Err(wrong_kind(path, "rAAE"));
    };
    let model = RaaeModel {
        pair: pair.clone(),
        autoencoder: AutoencoderModel {
            encoder: take_net(path, &mut nets, "encoder")?,
            decoder: take_net(path, &mut nets, "decoder")?,
        },
        discriminator: take_net(path, &mut nets, "discriminator")?,
        prior: prior.clone(),
        verdict: *verdict,
    };
    Ok((model, meta))
}
