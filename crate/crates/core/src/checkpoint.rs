//! Model checkpoints as JSON documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::TypeOrder;
use crate::error::{Error, Result};
use crate::query::Limits;
use crate::schema::Schema;
use crate::tokenizer::{Tokenize, Tokenizer};
use crate::training::{Model, TrainState};

pub const FORMAT: &str = "spanlink-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Schema document the model was trained on.
    pub schema: String,
    pub tokenizer: Tokenizer,
    pub limits: Limits,
    #[serde(default)]
    pub type_order: TypeOrder,
    pub model: Model,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(schema: &Schema, tokenizer: Tokenizer, limits: Limits, type_order: TypeOrder, model: Model, state: TrainState) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            schema: schema.to_json(),
            tokenizer,
            limits,
            type_order,
            model,
            state,
        }
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::from_json(&self.schema)
    }

    /// Fails unless `schema` is the schema the checkpoint was trained on.
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if self.schema()? != *schema {
            return Err(Error::Checkpoint("schema differs from the one the checkpoint was trained on".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let mut ck: Checkpoint = serde_json::from_str(doc).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} version {}",
                ck.format, ck.version
            )));
        }
        ck.tokenizer.reindex();
        if ck.model.encoder.vocab_size() != ck.tokenizer.vocab_size() {
            return Err(Error::Checkpoint(format!(
                "encoder vocabulary {} does not match tokenizer vocabulary {}",
                ck.model.encoder.vocab_size(),
                ck.tokenizer.vocab_size()
            )));
        }
        ck.limits.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
