//! The saved model file: parameters, feature schema, training settings and
//! the extracted rule list in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Schema;
use crate::error::{Error, Result};
use crate::extraction::{check_format, HardRuleList};
use crate::model::ModelParams;
use crate::training::TrainConfig;

pub const MODEL_FORMAT: &str = "neurules-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub schema: Schema,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub rule_list: HardRuleList,
}

impl ModelDocument {
    pub fn new(schema: Schema, config: TrainConfig, params: ModelParams, rule_list: HardRuleList) -> Self {
        Self { format: MODEL_FORMAT.to_string(), schema, config, params, rule_list }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_format(&value, MODEL_FORMAT)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{extract, render_text, DEFAULT_WEIGHT_THRESHOLD};
    use crate::synthetic::{generate, SyntheticSpec};
    use crate::training::train;

    #[test]
    fn save_load_round_trip() {
        let data = generate(&SyntheticSpec { d: 3, n: 200, s: 0.3, k: 2, m: 1, seed: 1 }).unwrap().dataset;
        let config = TrainConfig { epochs: 5, ..Default::default() };
        let (params, _) = train(&data, &config, 3).unwrap();
        let rl = extract(&params, &data, DEFAULT_WEIGHT_THRESHOLD).unwrap();
        let doc = ModelDocument::new(data.schema.clone(), config, params, rl);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        doc.save(&path).unwrap();
        let back = ModelDocument::load(&path).unwrap();
        assert_eq!(back, doc);
        assert_eq!(render_text(&back.rule_list), render_text(&doc.rule_list));

        let text = doc.to_json().unwrap().replace(MODEL_FORMAT, "neurules-model/0");
        assert!(matches!(ModelDocument::from_json(&text), Err(Error::Version { .. })));
        assert!(matches!(ModelDocument::load(dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
