use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Total spatial reduction from input to the last stage.
pub const OUTPUT_STRIDE: usize = 32;

const FIELDS: [&str; 5] = [
    "name",
    "stage_widths",
    "stage_depths",
    "num_classes",
    "input_resolution",
];

/// Declarative description of one network variant.
///
/// SE placement is not configurable: every stage puts an SE layer on its
/// blocks at even 0-based positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub stage_widths: [usize; 4],
    pub stage_depths: [usize; 4],
    pub num_classes: usize,
    pub input_resolution: usize,
}

impl ModelConfig {
    /// The M0.9 variant: widths 48/96/192/384, depths 2/2/14/2, 1000 classes.
    pub fn m0_9() -> Self {
        ModelConfig {
            name: "RepViT-M0.9".into(),
            stage_widths: [48, 96, 192, 384],
            stage_depths: [2, 2, 14, 2],
            num_classes: 1000,
            input_resolution: 224,
        }
    }

    /// Configs built into the library, addressable as `builtin:<key>`.
    pub fn builtin(key: &str) -> Option<Self> {
        match key.to_ascii_lowercase().as_str() {
            "m0.9" | "m0_9" | "repvit-m0.9" => Some(Self::m0_9()),
            _ => None,
        }
    }

    pub fn se_on_block(block_index: usize) -> bool {
        block_index.is_multiple_of(2)
    }

    /// Filters of the two stem convolutions.
    pub fn stem_widths(&self) -> (usize, usize) {
        (self.stage_widths[0] / 2, self.stage_widths[0])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &w) in self.stage_widths.iter().enumerate() {
            if w == 0 || w % 2 != 0 {
                return Err(Error::config(
                    "stage_widths",
                    format!("width {w} at stage {i} must be positive and even"),
                ));
            }
        }
        if self.stage_widths.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::config(
                "stage_widths",
                format!("{:?} must strictly increase", self.stage_widths),
            ));
        }
        if let Some(i) = self.stage_depths.iter().position(|&d| d == 0) {
            return Err(Error::config(
                "stage_depths",
                format!("stage {i} has depth 0; every stage needs at least one block"),
            ));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be at least 1"));
        }
        if self.input_resolution == 0 || !self.input_resolution.is_multiple_of(OUTPUT_STRIDE) {
            return Err(Error::config(
                "input_resolution",
                format!(
                    "{} must be a positive multiple of {OUTPUT_STRIDE}",
                    self.input_resolution
                ),
            ));
        }
        Ok(())
    }

    /// Parses and validates a config, rejecting unknown or missing fields.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::config("<document>", format!("invalid JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::config("<document>", "expected a JSON object"));
        };
        if let Some(unknown) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(Error::config(unknown.clone(), "unknown field"));
        }
        let cfg = ModelConfig {
            name: take(&mut obj, "name")?,
            stage_widths: take(&mut obj, "stage_widths")?,
            stage_depths: take(&mut obj, "stage_depths")?,
            num_classes: take(&mut obj, "num_classes")?,
            input_resolution: take(&mut obj, "input_resolution")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Loads from a JSON file, or a built-in config when `source` is
    /// `builtin:<key>`.
    pub fn load(source: impl AsRef<Path>) -> Result<Self> {
        let source = source.as_ref();
        if let Some(key) = source.to_str().and_then(|s| s.strip_prefix("builtin:")) {
            return Self::builtin(key)
                .ok_or_else(|| Error::config("config", format!("no built-in config `{key}`")));
        }
        let text = fs::read_to_string(source)?;
        Self::from_json(&text)
    }
}

fn take<T: DeserializeOwned>(obj: &mut Map<String, Value>, field: &str) -> Result<T> {
    let v = obj
        .remove(field)
        .ok_or_else(|| Error::config(field, "missing field"))?;
    serde_json::from_value(v).map_err(|e| Error::config(field, e.to_string()))
}
