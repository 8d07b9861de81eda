//! Versioned JSON envelopes with checksums so pipeline stages compose as
//! files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Dag,
    Scm,
    Ranking,
    Recommendation,
    Report,
    Truth,
    Graph,
}

/// A persisted payload with version, kind tag, and checksum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: u32,
    pub kind: Kind,
    pub payload: Value,
    pub checksum: String,
}

/// Canonical bytes of a JSON value: object keys sorted, no extra whitespace,
/// floats as shortest round-trip decimals.
pub fn canonical_bytes(value: &Value) -> Vec<u8> {
    // serde_json object maps are BTreeMaps under the preserve-order-off
    // default, so plain compact serialization is already canonical.
    serde_json::to_vec(value).expect("JSON value serializes")
}

fn checksum_of(value: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_bytes(value));
    format!("{:x}", hasher.finalize())
}

impl Envelope {
    pub fn wrap<T: Serialize>(kind: Kind, payload: &T) -> Result<Self> {
        let payload = serde_json::to_value(payload)?;
        let checksum = checksum_of(&payload);
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            kind,
            payload,
            checksum,
        })
    }

    pub fn unwrap_payload<T: DeserializeOwned>(&self, kind: Kind) -> Result<T> {
        if self.kind != kind {
            return Err(Error::Integrity(format!(
                "expected kind {:?}, found {:?}",
                kind, self.kind
            )));
        }
        Ok(serde_json::from_value(self.payload.clone())?)
    }
}

/// Write an envelope to disk as canonical JSON.
pub fn save(envelope: &Envelope, path: &Path) -> Result<()> {
    let value = serde_json::to_value(envelope)?;
    let mut bytes = canonical_bytes(&value);
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read and verify an envelope: version and checksum must match.
pub fn load(path: &Path) -> Result<Envelope> {
    let bytes = std::fs::read(path)?;
    let envelope: Envelope = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    if envelope.schema_version != SCHEMA_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported schema version {}",
            envelope.schema_version
        )));
    }
    let expected = checksum_of(&envelope.payload);
    if expected != envelope.checksum {
        return Err(Error::Integrity(format!(
            "checksum mismatch in {}",
            path.display()
        )));
    }
    Ok(envelope)
}

/// Convenience: wrap and save a payload in one step.
pub fn save_as<T: Serialize>(kind: Kind, payload: &T, path: &Path) -> Result<()> {
    save(&Envelope::wrap(kind, payload)?, path)
}

/// Convenience: load and unwrap a payload of the expected kind.
pub fn load_as<T: DeserializeOwned>(kind: Kind, path: &Path) -> Result<T> {
    load(path)?.unwrap_payload(kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_value() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.json");
        let payload = BTreeMap::from([("a".to_string(), 1.5), ("b".to_string(), -0.25)]);
        save_as(Kind::Report, &payload, &path).unwrap();
        let back: BTreeMap<String, f64> = load_as(Kind::Report, &path).unwrap();
        assert_eq!(payload, back);
    }

    #[test]
    fn flipped_byte_fails_integrity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.json");
        save_as(Kind::Dag, &vec![1, 2, 3], &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let pos = bytes
            .windows(7)
            .position(|w| w == b"[1,2,3]")
            .expect("payload bytes present");
        bytes[pos + 1] = b'9';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Integrity(_))));
    }

    #[test]
    fn equal_values_serialize_to_identical_bytes() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let payload = BTreeMap::from([
            ("zeta".to_string(), 0.1 + 0.2),
            ("alpha".to_string(), 1e-9),
        ]);
        save_as(Kind::Scm, &payload, &p1).unwrap();
        save_as(Kind::Scm, &payload, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.json");
        let mut env = Envelope::wrap(Kind::Dag, &vec![1]).unwrap();
        env.schema_version = 99;
        let bytes = serde_json::to_vec(&env).unwrap();
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Integrity(_))));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let env = Envelope::wrap(Kind::Dag, &vec![1]).unwrap();
        assert!(env.unwrap_payload::<Vec<i32>>(Kind::Scm).is_err());
        assert_eq!(env.unwrap_payload::<Vec<i32>>(Kind::Dag).unwrap(), vec![1]);
    }

    #[test]
    fn scm_round_trip_preserves_interventions() {
        use crate::graph::{Dag, Edge, Provenance, Role, VariableSpec};
        use crate::scm::{do_intervention, Coefficient, InterventionQuery, LinearScm};
        let dag = Dag::new(
            vec![
                VariableSpec::new("carbs", Role::Nutrient, 0),
                VariableSpec::new("y", Role::Outcome, 2),
            ],
            vec![Edge {
                from: "carbs".into(),
                to: "y".into(),
                orientation_provenance: Provenance::Tier,
            }],
        )
        .unwrap();
        let scm = LinearScm::new(
            dag,
            vec![Coefficient {
                from: "carbs".into(),
                to: "y".into(),
                weight: 0.123456789,
            }],
            BTreeMap::from([("y".to_string(), 11.1)]),
            BTreeMap::new(),
        )
        .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("scm.json");
        save_as(Kind::Scm, &scm, &path).unwrap();
        let back: LinearScm = load_as(Kind::Scm, &path).unwrap();
        let q = InterventionQuery {
            assignments: BTreeMap::from([("carbs".to_string(), 42.0)]),
            covariates: BTreeMap::new(),
            target: "y".into(),
        };
        let a = do_intervention(&q, &scm).unwrap().value;
        let b = do_intervention(&q, &back).unwrap().value;
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
