//! JSON-lines dataset manifests.
//!
//! First line declares the attribute names; every following line is one
//! sample record. Field order on write is stable so identical datasets
//! serialize byte-identically.

use super::{DataError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-image record: attribute bits, identity, tracklet, camera, scene, size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: String,
    pub attrs: Vec<u8>,
    pub id: u32,
    pub tracklet: u32,
    pub camera: u32,
    pub scene: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    attributes: Vec<String>,
    version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub attributes: Vec<String>,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header {
            attributes: self.attributes.clone(),
            version: 1,
        })
        .expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Manifest> {
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines
            .next()
            .ok_or_else(|| DataError::Parse {
                line: 1,
                msg: "empty manifest".into(),
            })?;
        let header: Header = serde_json::from_str(header_line).map_err(|e| DataError::Parse {
            line: 1,
            msg: format!("bad header: {e}"),
        })?;
        if header.version != 1 {
            return Err(DataError::Parse {
                line: 1,
                msg: format!("unsupported manifest version {}", header.version),
            });
        }
        let m = header.attributes.len();
        let mut records = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(line).map_err(|e| DataError::Parse {
                line: idx + 1,
                msg: format!("bad record: {e}"),
            })?;
            if rec.attrs.len() != m {
                return Err(DataError::Parse {
                    line: idx + 1,
                    msg: format!(
                        "attribute vector has {} bits, header declares {m}",
                        rec.attrs.len()
                    ),
                });
            }
            if rec.attrs.iter().any(|&b| b > 1) {
                return Err(DataError::Parse {
                    line: idx + 1,
                    msg: "attribute bits must be 0 or 1".into(),
                });
            }
            records.push(rec);
        }
        Ok(Manifest {
            attributes: header.attributes,
            records,
        })
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    Manifest::from_jsonl(&text)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    super::atomic_write(path, manifest.to_jsonl().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        Manifest {
            attributes: vec!["hat".into(), "bag".into()],
            records: vec![SampleRecord {
                path: "images/img_00000.ppm".into(),
                attrs: vec![1, 0],
                id: 3,
                tracklet: 6,
                camera: 0,
                scene: 2,
                w: 64,
                h: 96,
            }],
        }
    }

    #[test]
    fn roundtrip() {
        let m = sample();
        let text = m.to_jsonl();
        let back = Manifest::from_jsonl(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(text, back.to_jsonl());
    }

    #[test]
    fn wrong_arity_rejected_with_line() {
        let mut m = sample();
        m.records[0].attrs = vec![1, 0, 1];
        let text = m.to_jsonl();
        match Manifest::from_jsonl(&text) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_after_header_is_empty_list() {
        let m = Manifest::from_jsonl("{\"attributes\":[\"a\"],\"version\":1}\n").unwrap();
        assert!(m.records.is_empty());
    }

    #[test]
    fn missing_field_rejected() {
        let text = "{\"attributes\":[],\"version\":1}\n{\"path\":\"x.ppm\"}\n";
        assert!(matches!(
            Manifest::from_jsonl(text),
            Err(DataError::Parse { line: 2, .. })
        ));
    }
}
