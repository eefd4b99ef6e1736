//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "IMBF" | version: u32
//! repeated per group, in forward order:
//!   name_len: u32 | name: UTF-8 | rows: u32 | cols: u32 | trainable: u8
//!   weights: rows*cols f32, row-major | biases: cols f32
//! ```

use ndarray::{Array1, Array2};

use super::{ModelError, ParamGroup, ParamSet, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IMBF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.num_parameters() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for g in params.groups() {
        out.extend_from_slice(&(g.name.len() as u32).to_le_bytes());
        out.extend_from_slice(g.name.as_bytes());
        out.extend_from_slice(&(g.fan_in() as u32).to_le_bytes());
        out.extend_from_slice(&(g.fan_out() as u32).to_le_bytes());
        out.push(u8::from(g.trainable));
        for v in g.weight.iter().chain(g.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                ModelError::CorruptPayload(format!("truncated while reading {what} at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| ModelError::CorruptPayload(format!("{what} size overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(ModelError::CorruptPayload("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut groups = Vec::new();
    while !r.done() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "group name")?)
            .map_err(|_| ModelError::CorruptPayload("group name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let trainable = match r.take(1, "trainable flag")?[0] {
            0 => false,
            1 => true,
            other => {
                return Err(ModelError::CorruptPayload(format!(
                    "trainable flag {other} in group `{name}`"
                )))
            }
        };
        let weight = r.floats(
            rows.checked_mul(cols)
                .ok_or_else(|| ModelError::CorruptPayload("weight size overflows".into()))?,
            "weights",
        )?;
        let bias = r.floats(cols, "biases")?;
        groups.push(ParamGroup {
            name,
            weight: Array2::from_shape_vec((rows, cols), weight)
                .map_err(|e| ModelError::CorruptPayload(e.to_string()))?,
            bias: Array1::from_vec(bias),
            trainable,
        });
    }
    ParamSet::from_groups(groups).map_err(|e| ModelError::CorruptPayload(e.to_string()))
}
