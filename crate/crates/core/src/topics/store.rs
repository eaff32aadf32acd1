//! Versioned JSON persistence for [`TopicModel`].
//!
//! Schema 1 predates the outlier sub-clusters and the running mean; loading
//! it fills `mean` from `centroid` and starts with no sub-clusters.

use std::path::Path;

use serde_json::Value;

use super::TopicModel;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const SCHEMA_VERSION: u32 = 2;

pub fn persist(model: &TopicModel, path: &Path) -> Result<()> {
    model.validate()?;
    let mut bytes = serde_json::to_vec_pretty(model).expect("model serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<TopicModel> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&content)
}

pub fn from_json(content: &str) -> Result<TopicModel> {
    let mut doc: Value =
        serde_json::from_str(content).map_err(|e| Error::CorruptModel(e.to_string()))?;
    let found = doc
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::CorruptModel("missing schema_version".into()))? as u32;
    match found {
        1 => migrate_v1(&mut doc)?,
        SCHEMA_VERSION => {}
        _ => {
            return Err(Error::SchemaVersion {
                found,
                supported: SCHEMA_VERSION,
            })
        }
    }
    let model: TopicModel =
        serde_json::from_value(doc).map_err(|e| Error::CorruptModel(e.to_string()))?;
    model.validate()?;
    Ok(model)
}

fn migrate_v1(doc: &mut Value) -> Result<()> {
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::CorruptModel("model is not an object".into()))?;
    if let Some(Value::Array(clusters)) = obj.get_mut("clusters") {
        for c in clusters.iter_mut().filter_map(Value::as_object_mut) {
            if !c.contains_key("mean") {
                let centroid = c.get("centroid").cloned().unwrap_or(Value::Null);
                c.insert("mean".into(), centroid);
            }
        }
    }
    obj.insert("schema_version".into(), SCHEMA_VERSION.into());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterParams;
    use crate::gateway::Gateway;
    use crate::topics::tests::{epoch, themed_drivers};
    use crate::topics::{build_topic_model, label_model, LabelingConfig};

    fn model() -> TopicModel {
        let gw = Gateway::mock();
        let (mut m, _) = build_topic_model(
            &themed_drivers(9),
            &gw,
            &[ClusterParams::new(5, 1)],
            &LabelingConfig::default(),
            epoch(),
        )
        .unwrap();
        label_model(&mut m, &gw, &LabelingConfig::default()).unwrap();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = model();
        persist(&m, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, m);
        persist(&back, &path).unwrap();
        let again = std::fs::read_to_string(&path).unwrap();
        assert_eq!(again, serde_json::to_string_pretty(&m).unwrap() + "\n");
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let json = serde_json::to_string(&model()).unwrap();
        let cut = &json[..json.len() / 2];
        assert!(matches!(from_json(cut), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn future_schema_is_refused() {
        let mut v = serde_json::to_value(model()).unwrap();
        v["schema_version"] = 9.into();
        assert!(matches!(
            from_json(&v.to_string()),
            Err(Error::SchemaVersion { found: 9, supported: 2 })
        ));
    }

    #[test]
    fn schema_one_migrates() {
        let m = model();
        let mut v = serde_json::to_value(&m).unwrap();
        v["schema_version"] = 1.into();
        let obj = v.as_object_mut().unwrap();
        obj.remove("outlier_subclusters");
        obj.remove("validity");
        for c in obj["clusters"].as_array_mut().unwrap() {
            c.as_object_mut().unwrap().remove("mean");
            c.as_object_mut().unwrap().remove("label_flagged");
        }
        let back = from_json(&v.to_string()).unwrap();
        assert_eq!(back.schema_version, SCHEMA_VERSION);
        assert_eq!(back.clusters.len(), m.clusters.len());
        for c in &back.clusters {
            assert_eq!(c.mean, c.centroid);
        }
    }

    #[test]
    fn invariant_violation_is_corrupt() {
        let mut v = serde_json::to_value(model()).unwrap();
        v["clusters"][0]["size"] = 999.into();
        assert!(matches!(from_json(&v.to_string()), Err(Error::CorruptModel(_))));
    }
}
