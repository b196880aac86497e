//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `DRAGPART`, a little-endian `u32` version, a
//! little-endian `u64` header length, the JSON header (config, schedule,
//! codec, training metadata and the parameter index), then every parameter
//! as little-endian `f32` in index order.

use std::io::{Read, Write};
use std::path::Path;

use candle_core::DType;
use dragpart_core::NoiseSchedule;
use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::config::DenoiserConfig;
use crate::error::{Error, Result};
use crate::model::Denoiser;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRAGPART";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance of a trained model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub iterations: usize,
    pub dataset_hash: String,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DenoiserConfig,
    schedule: NoiseSchedule,
    codec: Codec,
    meta: TrainingMeta,
    params: Vec<ParamEntry>,
}

/// Everything needed to denoise, sample and extract features.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub denoiser: Denoiser,
    pub codec: Codec,
    pub schedule: NoiseSchedule,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(denoiser: Denoiser, codec: Codec, schedule: NoiseSchedule, meta: TrainingMeta) -> Result<Self> {
        let c = denoiser.config();
        codec.validate()?;
        if codec.factor != c.codec_factor
            || codec.latent_channels != c.latent_channels
            || codec.image_channels != c.image_channels
        {
            return Err(Error::Config("codec does not match the denoiser configuration".into()));
        }
        Ok(Self { denoiser, codec, schedule, meta })
    }

    pub fn config(&self) -> &DenoiserConfig {
        self.denoiser.config()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let params = self.denoiser.params();
        let header = Header {
            config: self.config().clone(),
            schedule: self.schedule.clone(),
            codec: self.codec.clone(),
            meta: self.meta.clone(),
            params: params.named().map(|(n, v)| ParamEntry { name: n.to_string(), shape: v.dims().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for (_, var) in params.named() {
            let values: Vec<f32> = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
            let mut bytes = Vec::with_capacity(values.len() * 4);
            values.iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
            out.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let denoiser = Denoiser::new(header.config, 0, DType::F32)?;
        let store = denoiser.params();
        if header.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, configuration defines {}",
                header.params.len(),
                store.len()
            )));
        }
        for entry in &header.params {
            let n: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            input.read_exact(&mut bytes)?;
            let values: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            store.assign(&entry.name, &entry.shape, &values)?;
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes after parameters", rest.len())));
        }
        Self::new(denoiser, header.codec, header.schedule, header.meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
