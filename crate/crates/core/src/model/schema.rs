use std::sync::LazyLock;

use jsonschema::Validator;
use serde_json::Value;

use super::ModelError;

pub(crate) const MODEL_SCHEMA: &str = include_str!("../../schemas/model.schema.json");

static VALIDATOR: LazyLock<Validator> = LazyLock::new(|| {
    let schema: Value = serde_json::from_str(MODEL_SCHEMA).expect("bundled schema is JSON");
    jsonschema::validator_for(&schema).expect("bundled schema compiles")
});

pub(crate) fn check(document: &Value) -> Result<(), ModelError> {
    VALIDATOR.validate(document).map_err(|e| {
        let pointer = e.instance_path().to_string();
        ModelError::Schema {
            pointer: if pointer.is_empty() { "/".into() } else { pointer },
            message: e.to_string(),
        }
    })
}
