//! `.rvck` checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "RVCK" | version | form (0 train, 1 fused) | config_len | config JSON
//! entry_count | entry*
//! entry := name_len | name (UTF-8) | ndims (1..=4) | dims[ndims] | f32 LE data
//! ```
//!
//! Entries appear in the model's canonical parameter order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Form, Model, ModelConfig};
use crate::params::Parameterized;
use crate::wire::{dim_u32, put_f32s, put_u32, Reader};

pub const MAGIC: &[u8; 4] = b"RVCK";
pub const VERSION: u32 = 1;

/// One decoded checkpoint entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub form: Form,
    pub config: ModelConfig,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let entries = model
            .params("")
            .into_iter()
            .map(|p| Entry {
                name: p.name,
                dims: p.dims,
                data: p.data.to_vec(),
            })
            .collect();
        Checkpoint {
            form: model.form(),
            config: model.config().clone(),
            entries,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let cfg = self.config.to_json();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, form_code(self.form));
        put_u32(&mut out, dim_u32(cfg.len(), "config length")?);
        out.extend_from_slice(cfg.as_bytes());
        put_u32(&mut out, dim_u32(self.entries.len(), "entry count")?);
        for e in &self.entries {
            put_u32(&mut out, dim_u32(e.name.len(), "name length")?);
            out.extend_from_slice(e.name.as_bytes());
            put_u32(&mut out, dim_u32(e.dims.len(), "rank")?);
            for &d in &e.dims {
                put_u32(&mut out, dim_u32(d, "dim")?);
            }
            put_f32s(&mut out, &e.data);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.bytes(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, expected \"RVCK\""));
        }
        let at = r.offset();
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let at = r.offset();
        let form = match r.u32("form")? {
            0 => Form::Train,
            1 => Form::Fused,
            other => return Err(Error::format(at, format!("unknown form code {other}"))),
        };
        let cfg_len = r.u32("config length")? as usize;
        let at = r.offset();
        let cfg_bytes = r.bytes(cfg_len, "config")?;
        let cfg_text =
            std::str::from_utf8(cfg_bytes).map_err(|_| Error::format(at, "config is not UTF-8"))?;
        let config = ModelConfig::from_json(cfg_text)
            .map_err(|e| Error::Integrity(format!("embedded config: {e}")))?;

        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let at = r.offset();
            let name = std::str::from_utf8(r.bytes(name_len, "entry name")?)
                .map_err(|_| Error::format(at, "entry name is not UTF-8"))?
                .to_string();
            let at = r.offset();
            let rank = r.u32("rank")? as usize;
            if !(1..=4).contains(&rank) {
                return Err(Error::format(at, format!("entry `{name}` has rank {rank}")));
            }
            let dims = (0..rank)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(at, format!("entry `{name}` size overflows")))?;
            let data = r.f32s(n, "entry data")?;
            entries.push(Entry { name, dims, data });
        }
        if r.remaining() != 0 {
            return Err(Error::format(
                r.offset(),
                format!("{} trailing bytes", r.remaining()),
            ));
        }
        Ok(Checkpoint {
            form,
            config,
            entries,
        })
    }

    /// Rebuilds the model from the embedded config and fills in every tensor.
    pub fn into_model(self) -> Result<Model> {
        let mut model = Model::empty(&self.config, self.form)?;
        let mut slots = model.params_mut("");
        if slots.len() != self.entries.len() {
            return Err(Error::Integrity(format!(
                "checkpoint has {} entries, config `{}` in {} form needs {}",
                self.entries.len(),
                self.config.name,
                self.form,
                slots.len()
            )));
        }
        for (slot, entry) in slots.iter_mut().zip(&self.entries) {
            if slot.name != entry.name {
                return Err(Error::Integrity(format!(
                    "expected entry `{}`, found `{}`",
                    slot.name, entry.name
                )));
            }
            if slot.dims != entry.dims {
                return Err(Error::Integrity(format!(
                    "entry `{}` has dims {:?}, expected {:?}",
                    entry.name, entry.dims, slot.dims
                )));
            }
            slot.data.copy_from_slice(&entry.data);
        }
        drop(slots);
        Ok(model)
    }
}

fn form_code(form: Form) -> u32 {
    match form {
        Form::Train => 0,
        Form::Fused => 1,
    }
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    Checkpoint::from_model(model).encode()
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    Checkpoint::decode(bytes)?.into_model()
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, Init};

    fn toy() -> Model {
        let cfg = ModelConfig {
            name: "toy".into(),
            stage_widths: [4, 8, 12, 16],
            stage_depths: [1, 2, 1, 1],
            num_classes: 5,
            input_resolution: 32,
        };
        build(&cfg, Init::SeededUniform(4)).unwrap()
    }

    #[test]
    fn header_layout() {
        let b = to_bytes(&toy()).unwrap();
        assert_eq!(&b[..4], b"RVCK");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &0u32.to_le_bytes());
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let b = to_bytes(&toy()).unwrap();
        for cut in [0, 3, 7, 11, 15, 40, b.len() / 2, b.len() - 1] {
            assert!(
                matches!(from_bytes(&b[..cut]), Err(Error::Format { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_version_reports_offset() {
        let mut b = to_bytes(&toy()).unwrap();
        b[4] = 9;
        assert!(matches!(
            from_bytes(&b),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn mismatched_entries_are_integrity_errors() {
        let m = toy();
        let mut ck = Checkpoint::from_model(&m);
        ck.entries[3].name.push('x');
        assert!(matches!(ck.into_model(), Err(Error::Integrity(_))));

        let mut ck = Checkpoint::from_model(&m);
        ck.entries[0].dims = vec![ck.entries[0].data.len()];
        assert!(matches!(ck.into_model(), Err(Error::Integrity(_))));

        let mut ck = Checkpoint::from_model(&m);
        ck.entries.pop();
        assert!(matches!(ck.into_model(), Err(Error::Integrity(_))));

        let mut ck = Checkpoint::from_model(&m);
        ck.form = Form::Fused;
        assert!(matches!(ck.into_model(), Err(Error::Integrity(_))));
    }

    #[test]
    fn fused_round_trip_keeps_form() {
        let m = toy().into_fused().unwrap();
        let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back.form(), Form::Fused);
        assert_eq!(back, m);
    }
}
