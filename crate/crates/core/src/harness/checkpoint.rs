use std::path::Path;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::checkpoint::{load_store, read_records, store_records, write_records, Payload, Record};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::AdamState;

/// Model and confidence weights, optimizer state, configuration and step.
#[derive(Clone, Debug)]
pub struct Checkpoint<S: Scalar> {
    pub config: RunConfig,
    pub model: Model<S>,
    pub adam: AdamState<S>,
    pub step: u64,
}

fn bytes<'a>(records: &'a [Record], name: &str) -> Result<&'a [u8]> {
    match records.iter().find(|r| r.name == name).map(|r| &r.payload) {
        Some(Payload::Bytes(b)) => Ok(b),
        Some(_) => Err(Error::format("checkpoint", format!("{name} must be a byte record"))),
        None => Err(Error::format("checkpoint", format!("missing record {name}"))),
    }
}

fn u64_record(records: &[Record], name: &str) -> Result<u64> {
    let b = bytes(records, name)?;
    Ok(u64::from_le_bytes(b.try_into().map_err(|_| Error::format("checkpoint", format!("{name} must hold 8 bytes")))?))
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = vec![
            Record::bytes("meta.config", serde_json::to_vec(&self.config).expect("config serializes")),
            Record::bytes("meta.fingerprint", self.config.fingerprint().into_bytes()),
            Record::bytes("meta.step", self.step.to_le_bytes().to_vec()),
            Record::bytes("adam.t", self.adam.step.to_le_bytes().to_vec()),
        ];
        out.extend(store_records(&self.model.store, "model."));
        for (id, p) in self.model.store.iter().filter(|(_, p)| p.trainable) {
            out.push(Record::tensor(format!("adam.m.{}", p.name), &self.adam.first[id.index()]));
            out.push(Record::tensor(format!("adam.v.{}", p.name), &self.adam.second[id.index()]));
        }
        out
    }

    pub fn from_records(records: &[Record]) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_slice(bytes(records, "meta.config")?).map_err(|e| Error::format("checkpoint", format!("meta.config: {e}")))?;
        config.validate()?;
        let stored_fp = String::from_utf8_lossy(bytes(records, "meta.fingerprint")?).into_owned();
        if stored_fp != config.fingerprint() {
            return Err(Error::format("checkpoint", format!("fingerprint {stored_fp} does not match its config")));
        }
        let mut model = Model::new(config.model_config(), config.seed)?;
        load_store(&mut model.store, records, "model.")?;
        let mut adam = AdamState::new(config.adam(), &model.store);
        adam.step = u64_record(records, "adam.t")?;
        for (id, p) in model.store.iter().filter(|(_, p)| p.trainable) {
            for (prefix, slot) in [("adam.m.", &mut adam.first), ("adam.v.", &mut adam.second)] {
                let name = format!("{prefix}{}", p.name);
                let record = records.iter().find(|r| r.name == name).ok_or_else(|| Error::format("checkpoint", format!("missing record {name}")))?;
                let t = record.to_tensor::<S>()?;
                if t.shape() != p.value.shape() {
                    return Err(Error::format("checkpoint", format!("{name}: shape {:?}", t.shape())));
                }
                slot[id.index()] = t;
            }
        }
        Ok(Self { step: u64_record(records, "meta.step")?, config, model, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_records(path, &self.to_records())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(&read_records(path)?)
    }
}
