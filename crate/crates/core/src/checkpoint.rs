//! JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "focc-checkpoint",
//!   "version": 1,
//!   "config": { ... },
//!   "networks": {
//!     "theta": { "<param name>": { "shape": [r, c], "values": [...] }, ... },
//!     "omega": { ... }
//!   }
//! }
//! ```
//!
//! Values are row-major. Network and parameter maps are sorted by name, so
//! the same parameters always serialize to the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, TensorRecord};

pub const FORMAT: &str = "focc-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// The run configuration that produced the parameters.
    #[serde(default)]
    pub config: serde_json::Value,
    pub networks: BTreeMap<String, BTreeMap<String, TensorRecord>>,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config,
            networks: BTreeMap::new(),
        }
    }

    pub fn with_network(mut self, name: &str, store: &ParamStore) -> Self {
        self.networks.insert(name.into(), store.to_records());
        self
    }

    /// Loads network `name` into `store`, which must have matching names and
    /// shapes.
    pub fn restore(&self, name: &str, store: &mut ParamStore) -> Result<()> {
        let records = self
            .networks
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("no network named {name}")))?;
        store.load_records(records)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version > VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn round_trip_and_mismatch() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![2, 2], vec![0.1, -0.2, 1e-17, 3.5]).unwrap());
        store.add("b", Tensor::new(vec![2], vec![0.25, -7.0]).unwrap());
        let ck = Checkpoint::new(serde_json::json!({"k": 1})).with_network("theta", &store);
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        let mut other = store.clone();
        other.tensors_mut()[0].values_mut()[0] = 9.0;
        back.restore("theta", &mut other).unwrap();
        assert_eq!(other, store);
        assert_eq!(back.to_json().unwrap(), text);

        let mut wrong = ParamStore::new();
        wrong.add("w", Tensor::zeros(vec![3]));
        wrong.add("b", Tensor::zeros(vec![2]));
        assert!(back.restore("theta", &mut wrong).is_err());
        assert!(back.restore("omega", &mut store.clone()).is_err());
        assert!(Checkpoint::from_json(r#"{"format":"x","version":1,"networks":{}}"#).is_err());
    }
}
