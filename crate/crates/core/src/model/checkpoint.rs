//! Binary checkpoint format.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes  "SBSECKPT"
//! version      u32
//! config       u32 length + UTF-8 key=value text (model configuration)
//! meta         u32 length + UTF-8 key=value text (free-form training metadata)
//! step         u64      optimizer steps taken
//! tensors      u32 count, then per tensor:
//!                u32 name length, name bytes, u32 ndim, ndim × u64 dims,
//!                product(dims) × f64 values
//! optimizer    u8 flag; when 1: f64 lr, beta1, beta2, eps, u64 step, then
//!              the first and second moments as two tensor sections
//!              (same names and shapes as the parameters)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{parse_kv, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Params};

const MAGIC: &[u8; 8] = b"SBSECKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f64>,
    pub step: u64,
    pub optimizer: Option<Adam>,
    pub meta: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn text(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        Ok(self.0.write_all(s.as_bytes())?)
    }
    fn tensors(&mut self, items: &[(String, Vec<usize>, &[f64])]) -> Result<()> {
        self.u32(items.len() as u32)?;
        for (name, shape, data) in items {
            self.text(name)?;
            self.u32(shape.len() as u32)?;
            for &d in shape {
                self.u64(d as u64)?;
            }
            for &v in *data {
                self.f64(v)?;
            }
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.0
            .read_exact(&mut buf)
            .map_err(|_| bad("unexpected end of file"))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?).map_err(|_| bad("invalid UTF-8 text"))
    }

    /// Reads a tensor section into `target`, checking names and shapes.
    fn tensors_into(&mut self, target: &mut dyn FnMut(&mut dyn FnMut(&str, &[usize], &mut [f64]))) -> Result<()> {
        let count = self.u32()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name = self.text()?;
            let ndim = self.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(self.u64()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = self.bytes(len * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push((name, shape, data));
        }
        let mut idx = 0;
        let mut err = None;
        target(&mut |name, shape, values| {
            if err.is_some() {
                return;
            }
            match records.get(idx) {
                Some((n, s, d)) if n == name && s.as_slice() == shape => values.copy_from_slice(d),
                Some((n, s, _)) => {
                    err = Some(bad(format!(
                        "tensor {idx}: file has {n} {s:?}, model expects {name} {shape:?}"
                    )))
                }
                None => err = Some(bad(format!("missing tensor {name}"))),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != records.len() {
            return Err(bad(format!(
                "file has {} tensors, model expects {idx}",
                records.len()
            )));
        }
        Ok(())
    }
}

fn collect(p: &Model<f64>) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    p.visit("", &mut |n, s, v| out.push((n.to_string(), s.to_vec(), v.to_vec())));
    out
}

impl Checkpoint {
    pub fn new(model: Model<f64>) -> Self {
        Self {
            model,
            step: 0,
            optimizer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION)?;
        w.text(&self.model.config.to_kv())?;
        let meta: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        w.text(&meta)?;
        w.u64(self.step)?;
        let params = collect(&self.model);
        let view: Vec<_> = params
            .iter()
            .map(|(n, s, d)| (n.clone(), s.clone(), d.as_slice()))
            .collect();
        w.tensors(&view)?;
        match &self.optimizer {
            None => w.u8(0)?,
            Some(opt) => {
                if opt.m.len() != params.len() {
                    return Err(bad("optimizer state does not match the model"));
                }
                w.u8(1)?;
                let c = opt.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps] {
                    w.f64(v)?;
                }
                w.u64(opt.step)?;
                for moments in [&opt.m, &opt.v] {
                    let view: Vec<_> = params
                        .iter()
                        .zip(moments.iter())
                        .map(|((n, s, _), d)| (n.clone(), s.clone(), d.as_slice()))
                        .collect();
                    w.tensors(&view)?;
                }
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        if r.bytes(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config = ModelConfig::from_kv(&r.text()?)?;
        let meta = parse_kv(&r.text()?)?;
        let step = r.u64()?;
        let mut model = Model::<f64>::zeros(&config)?;
        r.tensors_into(&mut |f| model.visit_mut("", f))?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let mut opt = Adam::new(config, &model);
                opt.step = r.u64()?;
                for which in 0..2 {
                    let mut shadow = model.clone();
                    r.tensors_into(&mut |f| shadow.visit_mut("", f))?;
                    let mut bufs = Vec::new();
                    shadow.visit("", &mut |_, _, v| bufs.push(v.to_vec()));
                    if which == 0 {
                        opt.m = bufs;
                    } else {
                        opt.v = bufs;
                    }
                }
                Some(opt)
            }
            f => return Err(bad(format!("invalid optimizer flag {f}"))),
        };
        if !r.0.is_empty() {
            return Err(bad("trailing bytes after optimizer state"));
        }
        Ok(Self {
            model,
            step,
            optimizer,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
