//! Adapters and classifiers stored in the checkpoint format, with the
//! pieces that are not tensors kept in the metadata.

use std::path::Path;

use super::checkpoint::{load_checkpoint, save_checkpoint, Metadata, Role};
use crate::adaptation::{AdapterSet, AdapterSpec};
use crate::error::{Error, Result};
use crate::metrics::EvalClassifier;

const SPEC_KEY: &str = "adapter_spec";
const BASE_KEY: &str = "base_fingerprint";
const CLASSES_KEY: &str = "classes";

fn expect_role(meta: &Metadata, role: Role, path: &Path) -> Result<()> {
    if meta.role != role {
        return Err(Error::config(format!(
            "{} holds a {:?} checkpoint, expected {role:?}",
            path.display(),
            meta.role
        )));
    }
    Ok(())
}

fn extra<'a>(meta: &'a Metadata, key: &str, path: &Path) -> Result<&'a str> {
    meta.extra
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::config(format!("{}: metadata lacks `{key}`", path.display())))
}

pub fn save_adapter(adapter: &AdapterSet, meta: Metadata, path: &Path) -> Result<()> {
    let mut meta = Metadata { role: Role::Adapter, ..meta };
    meta.method.get_or_insert_with(|| adapter.method().name().to_string());
    meta.extra.insert(SPEC_KEY.into(), serde_json::to_string(&adapter.spec)?);
    meta.extra.insert(BASE_KEY.into(), adapter.base_fingerprint.clone());
    save_checkpoint(&adapter.params, &meta, path)
}

pub fn load_adapter(path: &Path) -> Result<(AdapterSet, Metadata)> {
    let (params, meta) = load_checkpoint(path)?;
    expect_role(&meta, Role::Adapter, path)?;
    let spec: AdapterSpec = serde_json::from_str(extra(&meta, SPEC_KEY, path)?)?;
    let base_fingerprint = extra(&meta, BASE_KEY, path)?.to_string();
    Ok((AdapterSet { spec, params, base_fingerprint }, meta))
}

pub fn save_classifier(clf: &EvalClassifier, meta: Metadata, path: &Path) -> Result<()> {
    let mut meta = Metadata { role: Role::Classifier, ..meta };
    meta.extra.insert(CLASSES_KEY.into(), serde_json::to_string(&clf.classes)?);
    save_checkpoint(&clf.params, &meta, path)
}

pub fn load_classifier(path: &Path) -> Result<EvalClassifier> {
    let (params, meta) = load_checkpoint(path)?;
    expect_role(&meta, Role::Classifier, path)?;
    let classes: Vec<usize> = serde_json::from_str(extra(&meta, CLASSES_KEY, path)?)?;
    EvalClassifier::from_parts(params, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::{init_adapter, AdaptMethod, Token};
    use crate::diffusion::{init_denoiser, DenoiserConfig};

    #[test]
    fn adapter_round_trip_keeps_spec_and_base() {
        let m = init_denoiser(&DenoiserConfig { hidden: 8, depth: 2, ..DenoiserConfig::default() }, 3, 0).unwrap();
        let a = init_adapter(&AdapterSpec::new(AdaptMethod::LoRA, Token::Novel(4)), &m, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        save_adapter(&a, Metadata::new(Role::Adapter).with_target("star"), &p).unwrap();
        let (back, meta) = load_adapter(&p).unwrap();
        assert_eq!(back.spec, a.spec);
        assert_eq!(back.base_fingerprint, m.fingerprint());
        assert!(back.params.bit_eq(&a.params));
        assert_eq!(meta.method.as_deref(), Some("lora"));
        assert!(load_classifier(&p).is_err());
    }
}
