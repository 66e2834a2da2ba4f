//! Versioned binary checkpoints.
//!
//! Layout (little-endian): `"HCEC"`, `u32` version, `u64` length + UTF-8
//! key=value config text, four `u64` dataset widths (`d_text, d_img, d_know,
//! p`), `u64` epoch, `f64` best dev accuracy, `u64` parameter count, then per
//! parameter a `u32` name length, UTF-8 name, `u64` rows, `u64` cols and the
//! row-major `f64` values.

use std::fs;
use std::path::Path;

use crate::config::Config;
use crate::data::DatasetHeader;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HCEC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub dims: DatasetHeader,
    /// 1-based epoch the parameters were taken from; 0 for an untrained model.
    pub epoch: usize,
    pub best_dev_accuracy: f64,
    pub params: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &Model<S>, epoch: usize, best_dev_accuracy: f64) -> Self {
        Checkpoint {
            config: model.config().clone(),
            dims: model.dims(),
            epoch,
            best_dev_accuracy,
            params: model
                .store()
                .iter()
                .map(|(_, p)| (p.name.clone(), p.tensor.cast()))
                .collect(),
        }
    }

    pub fn to_model<S: Scalar>(&self) -> Result<Model<S>> {
        let mut model = Model::new(self.config.clone(), self.dims)?;
        model.store_mut().load_values(&self.params)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let kv = self.config.to_kv();
        put_u64(&mut out, kv.len());
        out.extend_from_slice(kv.as_bytes());
        for v in [
            self.dims.d_text,
            self.dims.d_img,
            self.dims.d_know,
            self.dims.p,
            self.epoch,
        ] {
            put_u64(&mut out, v);
        }
        out.extend_from_slice(&self.best_dev_accuracy.to_le_bytes());
        put_u64(&mut out, self.params.len());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_u64(&mut out, t.rows());
            put_u64(&mut out, t.cols());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.format("bad magic, not a checkpoint"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(r.format(&format!("unsupported checkpoint version {version}")));
        }
        let kv_len = r.usize()?;
        let kv = std::str::from_utf8(r.take(kv_len)?).map_err(|_| r.format("config text is not UTF-8"))?;
        let config = Config::from_kv(kv)?;
        let dims = DatasetHeader {
            d_text: r.usize()?,
            d_img: r.usize()?,
            d_know: r.usize()?,
            p: r.usize()?,
        };
        let epoch = r.usize()?;
        let best_dev_accuracy = r.f64()?;
        let count = r.usize()?;
        let mut params = Vec::new();
        for _ in 0..count {
            let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.format("parameter name is not UTF-8"))?
                .to_string();
            let (rows, cols) = (r.usize()?, r.usize()?);
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| r.format(&format!("implausible shape {rows}x{cols} for `{name}`")))?;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::from_vec(rows, cols, data).map_err(|_| r.format(&format!("bad values for `{name}`")))?;
            params.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(r.format("trailing bytes after the last parameter"));
        }
        Ok(Checkpoint {
            config,
            dims,
            epoch,
            best_dev_accuracy,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                position: self.bytes.len() as u64,
                detail: format!("needed {n} bytes at offset {}", self.pos),
            }),
        }
    }

    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| self.format("length does not fit in memory"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn format(&self, detail: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.to_string(),
        }
    }
}
