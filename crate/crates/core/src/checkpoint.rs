//! Versioned binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    b"SWCKPT\0\0"          8 bytes
//! version  u32
//! hlen     u64                    length of the JSON header
//! header   JSON (metadata + blob table with SHA-256 per blob)
//! blobs    f64 arrays, concatenated in blob-table order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Ganomaly, NetworkConfig};
use crate::nn::Sequential;
use crate::trainer::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SWCKPT\0\0";

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub region_index: usize,
    pub epoch: usize,
    pub train_config: TrainConfig,
    /// Held-out E_rec (percent) at each measured epoch.
    pub e_rec_history: Vec<f64>,
    pub e_rec_epochs: Vec<usize>,
    /// Mean generator total loss per epoch.
    pub loss_history: Vec<f64>,
    pub dataset_fingerprint: String,
    pub model: Ganomaly,
}

impl ModelCheckpoint {
    pub fn network_config(&self) -> &NetworkConfig {
        &self.model.config
    }

    pub fn final_e_rec(&self) -> Option<f64> {
        self.e_rec_history.last().copied()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    len: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    region_index: usize,
    epoch: usize,
    network_config: NetworkConfig,
    train_config: TrainConfig,
    e_rec_history: Vec<f64>,
    e_rec_epochs: Vec<usize>,
    loss_history: Vec<f64>,
    dataset_fingerprint: String,
    blobs: Vec<BlobEntry>,
}

fn networks(model: &Ganomaly) -> [(&'static str, &Sequential); 5] {
    [
        ("generator.encoder", &model.generator.encoder),
        ("generator.decoder", &model.generator.decoder),
        ("aux_encoder", &model.aux_encoder.encoder),
        ("discriminator.features", &model.discriminator.features),
        ("discriminator.head", &model.discriminator.head),
    ]
}

fn networks_mut(model: &mut Ganomaly) -> [(&'static str, &mut Sequential); 5] {
    [
        ("generator.encoder", &mut model.generator.encoder),
        ("generator.decoder", &mut model.generator.decoder),
        ("aux_encoder", &mut model.aux_encoder.encoder),
        ("discriminator.features", &mut model.discriminator.features),
        ("discriminator.head", &mut model.discriminator.head),
    ]
}

fn blob_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn sha_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn encode_checkpoint(c: &ModelCheckpoint) -> Result<Vec<u8>> {
    let mut blobs = Vec::new();
    let mut payload = Vec::new();
    for (prefix, net) in networks(&c.model) {
        for (name, values) in net.named_arrays() {
            let bytes = blob_bytes(values);
            blobs.push(BlobEntry {
                name: format!("{prefix}.{name}"),
                len: values.len(),
                sha256: sha_hex(&bytes),
            });
            payload.extend_from_slice(&bytes);
        }
    }
    let header = Header {
        region_index: c.region_index,
        epoch: c.epoch,
        network_config: c.model.config.clone(),
        train_config: c.train_config.clone(),
        e_rec_history: c.e_rec_history.clone(),
        e_rec_epochs: c.e_rec_epochs.clone(),
        loss_history: c.loss_history.clone(),
        dataset_fingerprint: c.dataset_fingerprint.clone(),
        blobs,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize.checked_add(hlen).ok_or_else(|| corrupt("header length overflow"))?;
    if bytes.len() < header_end {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
    let mut model = Ganomaly::new(header.network_config.clone(), 0)?;

    let mut offset = header_end;
    let mut blobs = header.blobs.iter();
    for (prefix, net) in networks_mut(&mut model) {
        for (name, values) in net.named_arrays_mut() {
            let full = format!("{prefix}.{name}");
            let entry = blobs.next().ok_or_else(|| corrupt("missing blob"))?;
            if entry.name != full || entry.len != values.len() {
                return Err(corrupt(&format!("blob {} does not match architecture ({full})", entry.name)));
            }
            let end = offset + entry.len * 8;
            let raw = bytes.get(offset..end).ok_or_else(|| corrupt("truncated blob data"))?;
            if sha_hex(raw) != entry.sha256 {
                return Err(corrupt(&format!("checksum mismatch in {full}")));
            }
            for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            offset = end;
        }
    }
    if blobs.next().is_some() || offset != bytes.len() {
        return Err(corrupt("trailing data"));
    }
    Ok(ModelCheckpoint {
        format_version: version,
        region_index: header.region_index,
        epoch: header.epoch,
        train_config: header.train_config,
        e_rec_history: header.e_rec_history,
        e_rec_epochs: header.e_rec_epochs,
        loss_history: header.loss_history,
        dataset_fingerprint: header.dataset_fingerprint,
        model,
    })
}

pub fn save_checkpoint(c: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(c)?;
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;

    fn sample() -> ModelCheckpoint {
        let cfg = NetworkConfig {
            input_width: 16,
            input_height: 16,
            latent_dim: 4,
            base_channels: 2,
            n_down_blocks: 2,
            ..NetworkConfig::default()
        };
        ModelCheckpoint {
            format_version: FORMAT_VERSION,
            region_index: 3,
            epoch: 7,
            train_config: TrainConfig::default(),
            e_rec_history: vec![5.0, 1.25],
            e_rec_epochs: vec![1, 7],
            loss_history: vec![3.0; 7],
            dataset_fingerprint: "abc".into(),
            model: Ganomaly::new(cfg, 42).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let back = decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap();
        assert_eq!(back.region_index, 3);
        assert_eq!(back.e_rec_history, c.e_rec_history);
        for ((_, a), (_, b)) in networks(&c.model).iter().zip(networks(&back.model).iter()) {
            let pa: Vec<u64> = a.named_arrays().iter().flat_map(|(_, v)| v.iter().map(|x| x.to_bits())).collect();
            let pb: Vec<u64> = b.named_arrays().iter().flat_map(|(_, v)| v.iter().map(|x| x.to_bits())).collect();
            assert_eq!(pa, pb);
        }
        let x = ImageTensor::from_fn(16, 16, |y, x, c| ((y + 2 * x + c) % 5) as f64 / 4.0);
        let mut m1 = c.model.clone();
        let mut m2 = back.model;
        assert_eq!(m1.reconstruct(&x).unwrap(), m2.reconstruct(&x).unwrap());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::CheckpointVersion { found: 99, .. })
        ));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x10;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));
        assert!(decode_checkpoint(b"nope").is_err());
    }
}
