//! Resolving a model name to a loaded predictor.

use std::path::Path;

use myfood_core::dataset::{ClassId, Dataset};
use myfood_core::modelhub::{constant_predictor, oracle_predictor, BackendRegistry, PredictorHandle, ReferenceModel};
use myfood_core::{Error, Result};

/// Loads `oracle` (needs a dataset), `reference` (needs weights),
/// `constant-<class id>`, or a backend from the registry.
pub fn load_predictor(
    name: &str,
    weights: Option<&Path>,
    backends: Option<&Path>,
    dataset: Option<&Dataset>,
) -> Result<PredictorHandle> {
    let need = |what: &str| Error::Load {
        name: name.into(),
        message: format!("{what} required"),
    };
    match name {
        "oracle" => oracle_predictor(dataset.ok_or_else(|| need("a dataset"))?),
        "reference" => Ok(PredictorHandle::reference(ReferenceModel::load(
            weights.ok_or_else(|| need("a weights file"))?,
        )?)),
        _ => {
            if let Some(class) = name.strip_prefix("constant-") {
                let class: ClassId = class.parse().map_err(|_| Error::Load {
                    name: name.into(),
                    message: "constant-<class id> needs a numeric class".into(),
                })?;
                return Ok(constant_predictor(class));
            }
            BackendRegistry::load(backends.ok_or_else(|| need("a backend registry"))?)?.resolve(name)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_missing_requirements() {
        assert_eq!(load_predictor("constant-3", None, None, None).unwrap().name(), "constant-3");
        for name in ["constant-x", "oracle", "reference", "fcn"] {
            assert!(matches!(load_predictor(name, None, None, None), Err(Error::Load { .. })), "{name}");
        }
    }
}
