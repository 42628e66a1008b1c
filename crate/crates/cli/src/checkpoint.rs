//! Checkpoint container: a fixed magic, a container version, a
//! length-prefixed JSON manifest (network config, seed, parameter table),
//! then the raw parameter tensors as little-endian f32 in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use msa_unet3p::arch::{MsaUnet3p, NetworkConfig};
use msa_unet3p::rng::{stream, Domain};

use crate::AppError;

const MAGIC: [u8; 4] = *b"MSAU";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: [usize; 4],
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub network: NetworkConfig,
    pub seed: u64,
    pub params: Vec<ParamInfo>,
}

/// Serialize the model's parameters with enough metadata to rebuild it.
pub fn save_checkpoint(path: &Path, model: &mut MsaUnet3p<f32>, seed: u64) -> Result<(), AppError> {
    let network = model.cfg;
    let params = model.named_params();
    let infos: Vec<ParamInfo> = params
        .iter()
        .map(|(name, p)| ParamInfo { name: name.clone(), shape: p.value.shape(), len: p.value.data().len() })
        .collect();
    let manifest = CheckpointManifest { format_version: VERSION, network, seed, params: infos };
    let manifest_json = serde_json::to_vec(&manifest).expect("serializable manifest");

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest_json.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_json)?;
    for (_, p) in &params {
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuild the model held in a checkpoint; errors name whichever field of
/// the container disagrees with the freshly constructed network.
pub fn load_checkpoint(path: &Path) -> Result<(MsaUnet3p<f32>, CheckpointManifest), AppError> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| AppError::runtime(format!("{}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(AppError::runtime(format!("{}: not a checkpoint file", path.display())));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(AppError::runtime(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let manifest_len = u64::from_le_bytes(len8) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: CheckpointManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| AppError::runtime(format!("{}: bad manifest: {e}", path.display())))?;

    let mut init_rng = stream(manifest.seed, Domain::Init, 0);
    let mut model = MsaUnet3p::<f32>::new(manifest.network, &mut init_rng)?;
    {
        let mut params = model.named_params();
        if params.len() != manifest.params.len() {
            return Err(AppError::runtime(format!(
                "checkpoint mismatch: file has {} parameter tensors, network expects {}",
                manifest.params.len(),
                params.len()
            )));
        }
        for ((name, p), info) in params.iter_mut().zip(manifest.params.iter()) {
            if *name != info.name {
                return Err(AppError::runtime(format!(
                    "checkpoint mismatch: parameter name {} vs expected {name}",
                    info.name
                )));
            }
            if p.value.shape() != info.shape {
                return Err(AppError::runtime(format!(
                    "checkpoint mismatch: {} has shape {:?}, network expects {:?}",
                    info.name,
                    info.shape,
                    p.value.shape()
                )));
            }
            let data = p.value.data_mut();
            let mut buf = vec![0u8; info.len * 4];
            r.read_exact(&mut buf).map_err(|_| {
                AppError::runtime(format!("checkpoint truncated while reading {}", info.name))
            })?;
            for (i, chunk) in buf.chunks_exact(4).enumerate() {
                data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            }
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(AppError::runtime("checkpoint has trailing bytes".to_string()));
    }
    Ok((model, manifest))
}
