//! Model checkpoint container.
//!
//! Layout, integers little-endian: `"BBR1"`, u32 version, u32 header
//! length, the JSON header, u32 tensor count, then per tensor a
//! u32-length-prefixed name, u32 rank, u64 dims and f32 data. The last
//! 32 bytes are the SHA-256 of everything before them.

use std::path::Path;

use kgbridge_core::bridge::{BridgeConfig, BridgeModel};
use kgbridge_core::kge::{KgeFamily, KgeModel, KgeSlots, KgeTrainConfig};
use kgbridge_core::params::ParamStore;
use kgbridge_core::tensor::Tensor;
use kgbridge_core::trainer::{Checkpoint, EpochRecord, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binary::{Reader, Writer};
use crate::error::{read_file, write_file, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BBR1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum Header {
    Bridge {
        config: BridgeConfig,
        modalities: Vec<(String, usize)>,
        relations: Vec<String>,
        train_config: TrainConfig,
        fingerprint: String,
        epoch: usize,
        history: Vec<EpochRecord>,
        tau: f64,
    },
    Kge {
        family: KgeFamily,
        config: KgeTrainConfig,
        entities: Vec<String>,
        relations: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Bridge(Box<Checkpoint>),
    Kge(Box<KgeModel>),
}

fn encode(path: &Path, header: &Header, params: &ParamStore<f32>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::json(path, e))?;
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(json.len() as u32);
    w.bytes(&json);
    w.u32(params.len() as u32);
    for (name, t) in params.iter() {
        w.str(name);
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        for &x in t.data() {
            w.f32(x);
        }
    }
    let digest: [u8; 32] = Sha256::digest(w.as_slice()).into();
    w.bytes(&digest);
    Ok(w.into_inner())
}

pub fn encode_bridge(checkpoint: &Checkpoint) -> Result<Vec<u8>> {
    let m = &checkpoint.model;
    let header = Header::Bridge {
        config: m.config.clone(),
        modalities: m.modalities.iter().cloned().zip(m.raw_dims.iter().copied()).collect(),
        relations: m.relations.clone(),
        train_config: checkpoint.train_config.clone(),
        fingerprint: hex::encode(checkpoint.fingerprint),
        epoch: checkpoint.epoch,
        history: checkpoint.history.clone(),
        tau: checkpoint.tau,
    };
    encode(Path::new("<checkpoint>"), &header, &m.params)
}

pub fn encode_kge(model: &KgeModel) -> Result<Vec<u8>> {
    let header = Header::Kge {
        family: model.family,
        config: model.config.clone(),
        entities: model.entities.clone(),
        relations: model.relations.clone(),
    };
    encode(Path::new("<checkpoint>"), &header, &model.params)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<SavedModel> {
    if bytes.len() < 4 + 32 {
        return Err(Error::format(path, "truncated file: shorter than magic and hash"));
    }
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest.as_slice() != stored {
        return Err(Error::format(path, "content hash mismatch (corrupt or truncated file)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::json(path, e))?;
    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(path, "tensor size overflows"))?;
        let data = r.f32s(n)?;
        blocks.push((name, Tensor::new(shape, data)?));
    }
    if r.position() != body.len() {
        return Err(Error::format(path, "unexpected bytes before the content hash"));
    }

    match header {
        Header::Bridge {
            config,
            modalities,
            relations,
            train_config,
            fingerprint,
            epoch,
            history,
            tau,
        } => {
            let mut model = BridgeModel::<f32>::new(config, &modalities, &relations)?;
            if blocks.len() != model.params.len() {
                return Err(Error::format(
                    path,
                    format!("{} tensors stored, model has {}", blocks.len(), model.params.len()),
                ));
            }
            for (name, t) in blocks {
                model.params.assign(&name, t)?;
            }
            let fp: [u8; 32] = hex::decode(&fingerprint)
                .ok()
                .and_then(|v| v.try_into().ok())
                .ok_or_else(|| Error::format(path, "bad fingerprint in header"))?;
            Ok(SavedModel::Bridge(Box::new(Checkpoint {
                model,
                train_config,
                fingerprint: fp,
                epoch,
                history,
                tau,
            })))
        }
        Header::Kge {
            family,
            config,
            entities,
            relations,
        } => {
            let mut params = ParamStore::new();
            for (name, t) in blocks {
                params.add(name, t);
            }
            let need = |name: &str| {
                params
                    .slot(name)
                    .ok_or_else(|| Error::format(path, format!("missing tensor `{name}`")))
            };
            let slots = KgeSlots {
                entity: need("entity")?,
                relation: need("relation")?,
                relation_extra: ["relation.normal", "relation.matrix", "relation.proj"]
                    .iter()
                    .find_map(|n| params.slot(n)),
                entity_extra: params.slot("entity.proj"),
            };
            if params.get(slots.entity).shape()[0] != entities.len() {
                return Err(Error::format(path, "entity table does not match the entity list"));
            }
            Ok(SavedModel::Kge(Box::new(KgeModel {
                family,
                config,
                entities,
                relations,
                params,
                slots,
            })))
        }
    }
}

pub fn save_bridge(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_file(path, &encode_bridge(checkpoint)?)
}

pub fn save_kge(path: &Path, model: &KgeModel) -> Result<()> {
    write_file(path, &encode_kge(model)?)
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    decode(path, &read_file(path)?)
}

pub fn load_bridge(path: &Path) -> Result<Checkpoint> {
    match load_model(path)? {
        SavedModel::Bridge(c) => Ok(*c),
        SavedModel::Kge(_) => Err(Error::format(path, "expected a bridge checkpoint, found a KGE model")),
    }
}

pub fn load_kge(path: &Path) -> Result<KgeModel> {
    match load_model(path)? {
        SavedModel::Kge(m) => Ok(*m),
        SavedModel::Bridge(_) => Err(Error::format(path, "expected a KGE model, found a bridge checkpoint")),
    }
}
