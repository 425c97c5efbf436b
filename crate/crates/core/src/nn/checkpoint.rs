//! Binary checkpoint container.
//!
//! Byte layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "ENSGCKPT"
//! version      u32      currently 1
//! rng_seed     u64
//! step_count   u64
//! n_scalars    u32
//!   name_len   u32, name UTF-8 bytes
//!   value      f64
//! n_arrays     u32
//!   name_len   u32, name UTF-8 bytes
//!   ndim       u32
//!   extents    ndim × u64
//!   payload    product(extents) × f64, row-major
//! ```
//!
//! Models are stored under `<prefix>.param.<registry name>` and
//! `<prefix>.buffer.<registry name>`; Adam moments under
//! `<prefix>.adam.m.<i>` / `<prefix>.adam.v.<i>` with its hyperparameters and
//! step count as scalars.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::adam::{AdamConfig, AdamState};
use super::model::MlpModel;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ENSGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub rng_seed: u64,
    pub step_count: u64,
    pub scalars: BTreeMap<String, f64>,
    pub arrays: BTreeMap<String, Tensor>,
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 16 {
        return Err(Error::Format(format!("implausible name length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

impl Checkpoint {
    pub fn new(rng_seed: u64, step_count: u64) -> Self {
        Self {
            rng_seed,
            step_count,
            ..Self::default()
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.rng_seed)?;
        w.write_u64::<LittleEndian>(self.step_count)?;
        w.write_u32::<LittleEndian>(self.scalars.len() as u32)?;
        for (name, &v) in &self.scalars {
            write_name(w, name)?;
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u32::<LittleEndian>(self.arrays.len() as u32)?;
        for (name, t) in &self.arrays {
            write_name(w, name)?;
            w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
            for &e in t.shape() {
                w.write_u64::<LittleEndian>(e as u64)?;
            }
            for &v in t.data() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut ck = Checkpoint::new(r.read_u64::<LittleEndian>()?, r.read_u64::<LittleEndian>()?);
        for _ in 0..r.read_u32::<LittleEndian>()? {
            let name = read_name(r)?;
            ck.scalars.insert(name, r.read_f64::<LittleEndian>()?);
        }
        for _ in 0..r.read_u32::<LittleEndian>()? {
            let name = read_name(r)?;
            let ndim = r.read_u32::<LittleEndian>()? as usize;
            let shape = (0..ndim)
                .map(|_| r.read_u64::<LittleEndian>().map(|e| e as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            ck.arrays.insert(name, Tensor::from_vec(&shape, data)?);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn insert_model(&mut self, prefix: &str, model: &MlpModel) {
        for (name, p) in model.named_params() {
            self.arrays
                .insert(format!("{prefix}.param.{name}"), p.value.clone());
        }
        for (name, t) in model.named_buffers() {
            self.arrays
                .insert(format!("{prefix}.buffer.{name}"), t.clone());
        }
    }

    /// Overwrites the parameters and buffers of an already-built model of
    /// the same architecture.
    pub fn restore_model(&self, prefix: &str, model: &mut MlpModel) -> Result<()> {
        let param_names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let buffer_names: Vec<String> = model.named_buffers().into_iter().map(|(n, _)| n).collect();
        for (name, p) in param_names.iter().zip(model.params_mut()) {
            p.value = self.take_array(&format!("{prefix}.param.{name}"), p.value.shape())?;
        }
        for (name, t) in buffer_names.iter().zip(model.buffers_mut()) {
            *t = self.take_array(&format!("{prefix}.buffer.{name}"), t.shape())?;
        }
        Ok(())
    }

    pub fn insert_adam(&mut self, prefix: &str, adam: &AdamState) {
        let c = adam.config;
        for (k, v) in [
            ("learning_rate", c.learning_rate),
            ("beta1", c.beta1),
            ("beta2", c.beta2),
            ("epsilon", c.epsilon),
            ("step_count", adam.step_count as f64),
        ] {
            self.scalars.insert(format!("{prefix}.adam.{k}"), v);
        }
        for (i, (m, v)) in adam
            .first_moments
            .iter()
            .zip(&adam.second_moments)
            .enumerate()
        {
            self.arrays
                .insert(format!("{prefix}.adam.m.{i:04}"), m.clone());
            self.arrays
                .insert(format!("{prefix}.adam.v.{i:04}"), v.clone());
        }
    }

    pub fn restore_adam(&self, prefix: &str, adam: &mut AdamState) -> Result<()> {
        adam.config = AdamConfig {
            learning_rate: self.scalar(&format!("{prefix}.adam.learning_rate"))?,
            beta1: self.scalar(&format!("{prefix}.adam.beta1"))?,
            beta2: self.scalar(&format!("{prefix}.adam.beta2"))?,
            epsilon: self.scalar(&format!("{prefix}.adam.epsilon"))?,
        };
        adam.step_count = self.scalar(&format!("{prefix}.adam.step_count"))? as u64;
        for i in 0..adam.first_moments.len() {
            let shape = adam.first_moments[i].shape().to_vec();
            adam.first_moments[i] = self.take_array(&format!("{prefix}.adam.m.{i:04}"), &shape)?;
            adam.second_moments[i] = self.take_array(&format!("{prefix}.adam.v.{i:04}"), &shape)?;
        }
        Ok(())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("checkpoint lacks scalar {name}")))
    }

    fn take_array(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .arrays
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks array {name}")))?;
        if t.shape() != shape {
            return Err(Error::shape("checkpoint array", shape, t.shape()));
        }
        Ok(t.clone())
    }
}
