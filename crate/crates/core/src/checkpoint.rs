//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic "PSE1" | u32 version | u32 len + config JSON
//! | u32 count + parameter records
//! | u32 count + Adam moment records ("m/<name>", "v/<name>")
//! | u64 adam step | f64 beta1 | f64 beta2 | f64 eps
//! | u64 epoch | u128 RNG word position
//! record = u32 len + UTF-8 name | u32 rank | rank x u32 extents | f32 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{AdamState, ParamStore, Tensor};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 4] = b"PSE1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub epoch: u64,
    /// Word position of the training RNG stream.
    pub rng_state: u128,
}

impl Checkpoint {
    pub fn model(&self) -> Model<f32> {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let json = serde_json::to_string(&self.config)?;
        put_bytes(&mut out, json.as_bytes());
        write_records(&mut out, self.params.iter())?;
        let moments = self
            .adam
            .m
            .iter()
            .map(|(k, v)| (format!("m/{k}"), v))
            .chain(self.adam.v.iter().map(|(k, v)| (format!("v/{k}"), v)))
            .collect::<Vec<_>>();
        write_records(&mut out, moments.iter().map(|(k, v)| (k.as_str(), *v)))?;
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        for f in [self.adam.beta1, self.adam.beta2, self.adam.eps] {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng_state.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let json = std::str::from_utf8(r.sized()?)
            .map_err(|e| Error::Checkpoint(format!("config is not UTF-8: {e}")))?;
        let config: TrainConfig = serde_json::from_str(json)?;
        config.validate()?;
        let params = read_records(&mut r)?;
        let moments = read_records(&mut r)?;
        let (mut m, mut v) = (ParamStore::new(), ParamStore::new());
        for (name, t) in moments.iter() {
            match name.split_once('/') {
                Some(("m", rest)) => m.insert(rest, t.clone()),
                Some(("v", rest)) => v.insert(rest, t.clone()),
                _ => return Err(Error::Checkpoint(format!("unexpected moment record `{name}`"))),
            }
        }
        let step = r.u64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let epoch = r.u64()?;
        let rng_state = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        for (name, t) in params.iter() {
            for store in [&m, &v] {
                let s = store
                    .get(name)
                    .map_err(|_| Error::Checkpoint(format!("missing Adam moment for `{name}`")))?;
                t.same_shape(s, name)?;
            }
        }
        Ok(Self {
            config,
            params,
            adam: AdamState {
                m,
                v,
                step,
                beta1,
                beta2,
                eps,
            },
            epoch,
            rng_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn write_records<'a>(
    out: &mut Vec<u8>,
    records: impl Iterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    let records: Vec<_> = records.collect();
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        put_bytes(out, name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

fn read_records(r: &mut Reader<'_>) -> Result<ParamStore<f32>> {
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = std::str::from_utf8(r.sized()?)
            .map_err(|e| Error::Checkpoint(format!("record name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(
            len.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("record too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn sized(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}
