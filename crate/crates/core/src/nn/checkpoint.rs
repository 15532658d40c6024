//! Model checkpoint files.
//!
//! The tensor file is a flat sequence of records, each laid out as
//!
//! ```text
//! u32 LE   name length in bytes
//! [u8]     UTF-8 name
//! u32 LE   rank
//! u64 LE   extent, repeated `rank` times
//! [T LE]   product(extents) elements (f32 or f64)
//! ```
//!
//! with no header or padding. A JSON sidecar (same path, `.json` extension)
//! carries the [`ModelSpec`], element type and batch-norm settings.
//!
//! Record order: trainable parameters in registry order, then
//! `<unit>.bn.running_mean` / `<unit>.bn.running_var` per batch-norm layer,
//! then `stem.whiten` when the stem is whitened.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelSpec, Network, ResNet9};
use crate::element::Element;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Record<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub dtype: String,
    pub spec: ModelSpec,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

pub const FORMAT: &str = "swiftnet-checkpoint-v1";

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_records<T: Element>(records: &[Record<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &r.data {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn decode_records<T: Element>(bytes: &[u8]) -> Result<Vec<Record<T>>> {
    let elem = (T::BITS / 8) as usize;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {pos}")))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let mut records = Vec::new();
    while let Ok(head) = take(4) {
        let name_len = u32::from_le_bytes(head.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("record name is not UTF-8: {e}")))?;
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(len * elem)?;
        let data = raw.chunks_exact(elem).map(T::read_le).collect();
        records.push(Record { name, shape, data });
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last record",
            bytes.len() - pos
        )));
    }
    Ok(records)
}

fn model_records<T: Element>(model: &ResNet9<T>) -> Vec<Record<T>> {
    let mut records: Vec<Record<T>> = model
        .params()
        .iter()
        .map(|e| Record {
            name: e.name.clone(),
            shape: e.tensor.shape().to_vec(),
            data: e.tensor.data().to_vec(),
        })
        .collect();
    for (name, st) in ResNet9::<T>::unit_names().iter().zip(model.batchnorm_states()) {
        let c = st.channels();
        records.push(Record {
            name: format!("{name}.bn.running_mean"),
            shape: vec![c],
            data: st.running_mean.clone(),
        });
        records.push(Record {
            name: format!("{name}.bn.running_var"),
            shape: vec![c],
            data: st.running_var.clone(),
        });
    }
    if let Some(f) = model.stem_filters() {
        records.push(Record {
            name: "stem.whiten".into(),
            shape: f.shape().to_vec(),
            data: f.data().to_vec(),
        });
    }
    records
}

pub fn save<T: Element>(model: &ResNet9<T>, path: &Path) -> Result<()> {
    let bytes = encode_records(&model_records(model));
    fs::write(path, bytes).map_err(|e| Error::at_path(path, e))?;
    let bn = model.batchnorm_states().first();
    let sidecar = Sidecar {
        format: FORMAT.into(),
        dtype: T::NAME.into(),
        spec: model.spec().clone(),
        bn_momentum: bn.map_or(0.1, |b| b.momentum),
        bn_eps: bn.map_or(1e-5, |b| b.eps),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::at_path(side, e))?;
    Ok(())
}

pub fn load<T: Element>(path: &Path) -> Result<ResNet9<T>> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::at_path(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", sidecar.format)));
    }
    if sidecar.dtype != T::NAME {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} data, requested {}",
            sidecar.dtype,
            T::NAME
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::at_path(path, e))?;
    let records = decode_records::<T>(&bytes)?;
    let mut model = ResNet9::<T>::build(sidecar.spec, 0)?;
    let mut by_name: std::collections::HashMap<String, Record<T>> =
        records.into_iter().map(|r| (r.name.clone(), r)).collect();
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
        let r = by_name
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))?;
        if r.shape != shape {
            return Err(Error::Checkpoint(format!(
                "record `{name}` has shape {:?}, model expects {shape:?}",
                r.shape
            )));
        }
        Ok(r.data)
    };
    for e in model.params_mut().entries_mut() {
        let data = take(&e.name, e.tensor.shape())?;
        e.tensor.data_mut().copy_from_slice(&data);
    }
    let names = ResNet9::<T>::unit_names();
    for (name, st) in names.iter().zip(model.batchnorm_states_mut()) {
        let c = st.channels();
        st.running_mean = take(&format!("{name}.bn.running_mean"), &[c])?;
        st.running_var = take(&format!("{name}.bn.running_var"), &[c])?;
        st.momentum = sidecar.bn_momentum;
        st.eps = sidecar.bn_eps;
    }
    if let Some(f) = model.stem_filters_mut() {
        let shape = f.shape().to_vec();
        let data = take("stem.whiten", &shape)?;
        f.data_mut().copy_from_slice(&data);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected record `{extra}`")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout_is_bit_exact() {
        let r = Record::<f32> {
            name: "ab".into(),
            shape: vec![2],
            data: vec![1.0, -2.0],
        };
        let bytes = encode_records(std::slice::from_ref(&r));
        let mut want = vec![2, 0, 0, 0, b'a', b'b', 1, 0, 0, 0];
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
        assert_eq!(decode_records::<f32>(&bytes).unwrap(), vec![r]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let r = Record::<f64> {
            name: "w".into(),
            shape: vec![3],
            data: vec![1.0, 2.0, 3.0],
        };
        let bytes = encode_records(&[r]);
        assert!(decode_records::<f64>(&bytes[..bytes.len() - 3]).is_err());
    }
}
