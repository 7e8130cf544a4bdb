//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `FRCKPT\0\0`, u32 version, config block
//! (u32 length + `key=value` lines), u32 epoch, 32-byte id-map digest,
//! u64 item and entity counts, Adam step count and hyperparameters, u32
//! record count, then records of (u16 name length, name, u8 rank, u64 dims,
//! f32 payload), and finally a SHA-256 of everything before it.

use std::path::Path;

use facetrec_core::numerics::AdamState;
use facetrec_core::trainer::{ModelCheckpoint, TrainConfig};
use facetrec_core::{Model, ModelParams, Tensor};

use crate::binary::{read_container, read_file, write_atomic, Reader, Writer};
use crate::error::{FormatError, FormatResult};

const MAGIC: &[u8; 8] = b"FRCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn config_block(config: &TrainConfig) -> String {
    config.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_config_block(text: &str) -> FormatResult<TrainConfig> {
    let mut config = TrainConfig::default();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::Malformed(format!("config line `{line}`")))?;
        if !config.set(k, v)? {
            return Err(FormatError::Malformed(format!("unknown config key `{k}`")));
        }
    }
    config.validate()?;
    Ok(config)
}

fn write_record(w: &mut Writer, name: &str, t: &Tensor<f32>) {
    w.u16(name.len() as u16);
    w.bytes(name.as_bytes());
    w.u8(t.shape().len() as u8);
    for &d in t.shape() {
        w.u64(d as u64);
    }
    for &v in t.data() {
        w.f32(v);
    }
}

fn read_record(r: &mut Reader<'_>) -> FormatResult<(String, Tensor<f32>)> {
    let n = r.u16()? as usize;
    let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| FormatError::Malformed("tensor name".into()))?;
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u64()? as usize);
    }
    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(FormatError::Truncated)?;
    let bytes = r.take(len.checked_mul(4).ok_or(FormatError::Truncated)?)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    let tensor = Tensor::new(shape, data).map_err(|e| FormatError::Malformed(format!("tensor `{name}`: {e}")))?;
    Ok((name, tensor))
}

pub fn encode_checkpoint(ck: &ModelCheckpoint) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, CHECKPOINT_VERSION);
    w.text(&config_block(&ck.config));
    w.u32(ck.epoch);
    w.bytes(&ck.graph_digest);
    let enc = &ck.model.params.encoder;
    w.u64(enc.item_base.shape()[0] as u64);
    w.u64(enc.entity_base.shape()[0] as u64);
    w.u64(ck.adam.step_count);
    w.f32(ck.adam.beta1);
    w.f32(ck.adam.beta2);
    w.f32(ck.adam.eps);
    let named = ck.model.params.named();
    w.u32(3 * named.len() as u32);
    for (name, t) in &named {
        write_record(&mut w, name, t);
    }
    for (prefix, moments) in [("adam.m/", &ck.adam.first_moment), ("adam.v/", &ck.adam.second_moment)] {
        for ((name, _), t) in named.iter().zip(moments) {
            write_record(&mut w, &format!("{prefix}{name}"), t);
        }
    }
    w.finish()
}

/// Decodes a checkpoint. With `expected_digest`, the stored id-map digest
/// must match it.
pub fn decode_checkpoint(bytes: &[u8], expected_digest: Option<&[u8; 32]>) -> FormatResult<ModelCheckpoint> {
    let ck = read_container(bytes, MAGIC, "checkpoint", CHECKPOINT_VERSION, |r| {
        let config = parse_config_block(&r.text()?)?;
        let epoch = r.u32()?;
        let graph_digest = r.digest()?;
        let n_items = r.u64()? as usize;
        let n_entities = r.u64()? as usize;
        let step_count = r.u64()?;
        let (beta1, beta2, eps) = (r.f32()?, r.f32()?, r.f32()?);
        let n_records = r.u32()? as usize;
        if !n_records.is_multiple_of(3) {
            return Err(FormatError::Malformed(format!("{n_records} records")));
        }
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            records.push(read_record(r)?);
        }
        let per = n_records / 3;
        let v: Vec<_> = records.split_off(2 * per);
        let m: Vec<_> = records.split_off(per);
        let factors = config.factors();
        let params = ModelParams::from_named(&factors, n_items, n_entities, config.decoder_tied, records)?;
        let names: Vec<&str> = params.named().into_iter().map(|(n, _)| n).collect();
        let moments = |list: Vec<(String, Tensor<f32>)>, prefix: &str| -> FormatResult<Vec<Tensor<f32>>> {
            list.into_iter()
                .zip(&names)
                .zip(params.tensors())
                .map(|(((got, t), name), p)| {
                    if got != format!("{prefix}{name}") || t.shape() != p.shape() {
                        return Err(FormatError::Malformed(format!("optimizer record `{got}`")));
                    }
                    Ok(t)
                })
                .collect()
        };
        let adam = AdamState {
            first_moment: moments(m, "adam.m/")?,
            second_moment: moments(v, "adam.v/")?,
            step_count,
            beta1,
            beta2,
            eps,
        };
        Ok(ModelCheckpoint {
            config,
            model: Model { factors, params },
            adam,
            epoch,
            graph_digest,
        })
    })?;
    if expected_digest.is_some_and(|d| *d != ck.graph_digest) {
        return Err(FormatError::DigestMismatch);
    }
    Ok(ck)
}

/// Writes atomically: `path` is either the old file or the complete new one.
pub fn save_checkpoint(ck: &ModelCheckpoint, path: &Path) -> FormatResult<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path, expected_digest: Option<&[u8; 32]>) -> FormatResult<ModelCheckpoint> {
    decode_checkpoint(&read_file(path)?, expected_digest)
}
