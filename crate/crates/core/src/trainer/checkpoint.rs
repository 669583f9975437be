//! Checkpoint container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "EXPATCKP"
//! version  u32
//! count    u32      number of entries
//! entry*   name_len u32, name (UTF-8), dtype u8 (0 = f64, 1 = u64),
//!          ndim u32, dims u64 * ndim, values (8 bytes each)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig, PARAM_NAMES};
use super::optim::{Adam, AdamConfig};
use crate::csbn::{Mode, NormVariant};
use crate::data::SamplerState;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const MAGIC: &[u8; 8] = b"EXPATCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Array {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Array {
    fn len(&self) -> usize {
        match self {
            Array::F64(v) => v.len(),
            Array::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Array,
}

/// Ordered collection of named arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub entries: Vec<Entry>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| ck(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

impl Container {
    pub fn push_f64(&mut self, name: &str, dims: &[usize], data: Vec<f64>) {
        self.push(name, dims, Array::F64(data));
    }

    pub fn push_u64(&mut self, name: &str, dims: &[usize], data: Vec<u64>) {
        self.push(name, dims, Array::U64(data));
    }

    fn push(&mut self, name: &str, dims: &[usize], data: Array) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.entries.push(Entry {
            name: name.to_string(),
            dims: dims.iter().map(|&d| d as u64).collect(),
            data,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ck(format!("missing entry `{name}`")))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.get(name)?.data {
            Array::F64(v) => Ok(v),
            Array::U64(_) => Err(ck(format!("entry `{name}` is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.get(name)?.data {
            Array::U64(v) => Ok(v),
            Array::F64(_) => Err(ck(format!("entry `{name}` is not u64"))),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.get(name)?;
        if e.dims.len() != 2 {
            return Err(ck(format!("entry `{name}` is not a matrix")));
        }
        Ok(Tensor::from_vec(
            e.dims[0] as usize,
            e.dims[1] as usize,
            self.f64s(name)?.to_vec(),
        ))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            let dtype: u8 = match e.data {
                Array::F64(_) => 0,
                Array::U64(_) => 1,
            };
            w.write_all(&[dtype])?;
            w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
            for d in &e.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            match &e.data {
                Array::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                Array::U64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let magic: [u8; 8] = read_exact(&mut r)?;
        if &magic != MAGIC {
            return Err(ck("bad magic; not a checkpoint file"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(ck(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let count = read_u32(&mut r)?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)
                .map_err(|e| ck(format!("truncated entry name: {e}")))?;
            let name = String::from_utf8(name).map_err(|_| ck("entry name is not UTF-8"))?;
            let [dtype] = read_exact::<1>(&mut r)?;
            let ndim = read_u32(&mut r)?;
            let dims = (0..ndim)
                .map(|_| read_u64(&mut r))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1u64, |a, &d| a.checked_mul(d))
                .ok_or_else(|| ck(format!("entry `{name}` has overflowing dims")))?
                as usize;
            let data = match dtype {
                0 => Array::F64(
                    (0..n)
                        .map(|_| read_exact(&mut r).map(f64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                1 => Array::U64((0..n).map(|_| read_u64(&mut r)).collect::<Result<_>>()?),
                t => return Err(ck(format!("entry `{name}` has unknown dtype {t}"))),
            };
            entries.push(Entry { name, dims, data });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Full training state at a step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Number of completed steps.
    pub step: usize,
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub sampler: Option<SamplerState>,
}

fn norm_index(v: NormVariant) -> u64 {
    NormVariant::ALL
        .iter()
        .position(|&x| x == v)
        .expect("listed") as u64
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        let m = &self.model;
        let cfg = m.config;
        c.push_u64("meta/step", &[1], vec![self.step as u64]);
        c.push_u64(
            "model/dims",
            &[4],
            [cfg.input_dim, cfg.hidden, cfg.embed_dim, cfg.classes]
                .map(|d| d as u64)
                .to_vec(),
        );
        c.push_u64("model/norm", &[1], vec![norm_index(cfg.norm)]);
        for (name, p) in PARAM_NAMES.iter().zip(m.params()) {
            c.push_f64(name, &[p.rows(), p.cols()], p.data().to_vec());
        }
        let k = m.csbn.channels();
        c.push_f64("csbn/running_mean", &[k], m.csbn.running_mean.clone());
        c.push_f64("csbn/running_var", &[k], m.csbn.running_var.clone());
        c.push_f64("csbn/hyper", &[2], vec![m.csbn.momentum, m.csbn.epsilon]);
        let mode = match m.csbn.mode {
            Mode::Train => 0,
            Mode::Eval => 1,
        };
        c.push_u64("csbn/updates_mode", &[2], vec![m.csbn.updates, mode]);

        if let Some(adam) = &self.optimizer {
            c.push_u64("adam/t", &[1], vec![adam.t]);
            let h = adam.config;
            c.push_f64("adam/hyper", &[3], vec![h.beta1, h.beta2, h.eps]);
            for (i, name) in PARAM_NAMES.iter().enumerate() {
                let (m1, v1) = (&adam.m[i], &adam.v[i]);
                c.push_f64(
                    &format!("adam/m/{name}"),
                    &[m1.rows(), m1.cols()],
                    m1.data().to_vec(),
                );
                c.push_f64(
                    &format!("adam/v/{name}"),
                    &[v1.rows(), v1.cols()],
                    v1.data().to_vec(),
                );
            }
        }
        if let Some(s) = &self.sampler {
            c.push_u64("sampler/rng", &[7], s.rng.to_words());
            let flat: Vec<u64> = s
                .order
                .iter()
                .flat_map(|&(a, b)| [a as u64, b as u64])
                .collect();
            c.push_u64("sampler/order", &[s.order.len(), 2], flat);
            c.push_u64("sampler/cursor_epoch", &[2], vec![s.cursor as u64, s.epoch]);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let scalar = |name: &str| -> Result<u64> {
            c.u64s(name)?
                .first()
                .copied()
                .ok_or_else(|| ck(format!("entry `{name}` is empty")))
        };
        let dims = c.u64s("model/dims")?;
        if dims.len() != 4 {
            return Err(ck("model/dims must hold 4 values"));
        }
        let norm = *NormVariant::ALL
            .get(scalar("model/norm")? as usize)
            .ok_or_else(|| ck("unknown normalization variant index"))?;
        let config = ModelConfig {
            input_dim: dims[0] as usize,
            hidden: dims[1] as usize,
            embed_dim: dims[2] as usize,
            classes: dims[3] as usize,
            norm,
        };
        let mut model = Model {
            config,
            w1: c.tensor(PARAM_NAMES[0])?,
            b1: c.tensor(PARAM_NAMES[1])?,
            w2: c.tensor(PARAM_NAMES[2])?,
            b2: c.tensor(PARAM_NAMES[3])?,
            classifier: c.tensor(PARAM_NAMES[4])?,
            csbn: crate::csbn::CsbnState::new(norm, config.embed_dim),
        };
        model.csbn.gamma = c.tensor(PARAM_NAMES[5])?;
        model.csbn.beta = c.tensor(PARAM_NAMES[6])?;
        let expected = [
            (config.hidden, config.input_dim),
            (1, config.hidden),
            (config.embed_dim, config.hidden),
            (1, config.embed_dim),
            (config.classes, config.embed_dim),
            (1, config.embed_dim),
            (1, config.embed_dim),
        ];
        for ((name, p), shape) in PARAM_NAMES.iter().zip(model.params()).zip(expected) {
            if p.shape() != shape {
                return Err(ck(format!(
                    "entry `{name}` has shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        model.csbn.running_mean = c.f64s("csbn/running_mean")?.to_vec();
        model.csbn.running_var = c.f64s("csbn/running_var")?.to_vec();
        if model.csbn.running_mean.len() != config.embed_dim
            || model.csbn.running_var.len() != config.embed_dim
        {
            return Err(ck(
                "csbn running statistics do not match the embedding size",
            ));
        }
        let hyper = c.f64s("csbn/hyper")?;
        let um = c.u64s("csbn/updates_mode")?;
        if hyper.len() != 2 || um.len() != 2 {
            return Err(ck("malformed csbn entries"));
        }
        model.csbn.momentum = hyper[0];
        model.csbn.epsilon = hyper[1];
        model.csbn.updates = um[0];
        model.csbn.mode = if um[1] == 1 { Mode::Eval } else { Mode::Train };

        let optimizer = if c.get("adam/t").is_ok() {
            let h = c.f64s("adam/hyper")?;
            if h.len() != 3 {
                return Err(ck("malformed adam/hyper"));
            }
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (name, shape) in PARAM_NAMES.iter().zip(expected) {
                let (m1, v1) = (
                    c.tensor(&format!("adam/m/{name}"))?,
                    c.tensor(&format!("adam/v/{name}"))?,
                );
                if m1.shape() != shape || v1.shape() != shape {
                    return Err(ck(format!(
                        "adam moments for `{name}` have the wrong shape"
                    )));
                }
                m.push(m1);
                v.push(v1);
            }
            Some(Adam {
                config: AdamConfig {
                    beta1: h[0],
                    beta2: h[1],
                    eps: h[2],
                },
                t: scalar("adam/t")?,
                m,
                v,
            })
        } else {
            None
        };

        let sampler = if c.get("sampler/rng").is_ok() {
            let rng = RngState::from_words(c.u64s("sampler/rng")?)
                .ok_or_else(|| ck("sampler/rng must hold 7 words"))?;
            let order = c
                .u64s("sampler/order")?
                .chunks_exact(2)
                .map(|p| (p[0] as usize, p[1] as usize))
                .collect();
            let ce = c.u64s("sampler/cursor_epoch")?;
            if ce.len() != 2 {
                return Err(ck("malformed sampler/cursor_epoch"));
            }
            Some(SamplerState {
                rng,
                order,
                cursor: ce[0] as usize,
                epoch: ce[1],
            })
        } else {
            None
        };

        Ok(Self {
            step: scalar("meta/step")? as usize,
            model,
            optimizer,
            sampler,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
