//! Binary checkpoints.
//!
//! Layout: magic "HPN1", format version u32, entry count u32; per entry a
//! length-prefixed UTF-8 name, rank u8, dims as u32s, payload as
//! little-endian f32; entries sorted by name. A trailing block lists the
//! completed training stages. The network config travels in a JSON sidecar
//! (`<file>.meta.json`) so a checkpoint alone is enough to rebuild the net.

use super::{Result, TrainError};
use crate::datakit::atomic_write;
use crate::hpnet::{HpNet, HpNetConfig};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"HPN1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

fn format_err(offset: usize, msg: impl Into<String>) -> TrainError {
    TrainError::Format {
        offset,
        msg: msg.into(),
    }
}

pub fn encode(entries: &[Entry], stages: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dims.len() as u8);
        for &d in &e.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(stages.len() as u16).to_le_bytes());
    for s in stages {
        out.extend_from_slice(&(s.len() as u16).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<Entry>, Vec<String>)> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:?}")));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported format version {version}")));
    }
    let count = c.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16("name length")? as usize;
        let at = c.pos;
        let name = String::from_utf8(c.take(name_len, "name")?.to_vec())
            .map_err(|e| format_err(at, format!("name not UTF-8: {e}")))?;
        let rank = c.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32("dims")? as usize);
        }
        let n: usize = dims.iter().product();
        let at = c.pos;
        let raw = c.take(n * 4, "payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect::<Vec<f32>>();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(format_err(at, format!("non-finite value in {name}")));
        }
        entries.push(Entry { name, dims, data });
    }
    for w in entries.windows(2) {
        if w[0].name >= w[1].name {
            return Err(format_err(0, format!("entries not sorted: {:?} >= {:?}", w[0].name, w[1].name)));
        }
    }
    let stage_count = c.u16("stage count")? as usize;
    let mut stages = Vec::with_capacity(stage_count);
    for _ in 0..stage_count {
        let len = c.u16("stage name length")? as usize;
        let at = c.pos;
        let s = String::from_utf8(c.take(len, "stage name")?.to_vec())
            .map_err(|e| format_err(at, format!("stage name not UTF-8: {e}")))?;
        stages.push(s);
    }
    if c.pos != bytes.len() {
        return Err(format_err(c.pos, "trailing bytes after stage block"));
    }
    Ok((entries, stages))
}

fn meta_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{name}.meta.json"))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Meta {
    config: HpNetConfig,
}

pub fn save_checkpoint(net: &HpNet, stages: &[String], path: &Path) -> Result<()> {
    let mut entries: Vec<Entry> = net
        .named_tensors()
        .into_iter()
        .map(|nt| Entry {
            name: nt.name,
            dims: nt.tensor.dims().to_vec(),
            data: nt.tensor.data().clone(),
        })
        .collect();
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    atomic_write(path, &encode(&entries, stages))?;
    let meta = serde_json::to_string_pretty(&Meta {
        config: net.config.clone(),
    })
    .expect("config serializes");
    atomic_write(&meta_path(path), meta.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(HpNet, Vec<String>)> {
    let bytes = std::fs::read(path).map_err(crate::datakit::DataError::Io)?;
    let (entries, stages) = decode(&bytes)?;
    let meta_text =
        std::fs::read_to_string(meta_path(path)).map_err(crate::datakit::DataError::Io)?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| format_err(0, format!("bad checkpoint sidecar: {e}")))?;
    let mut net = HpNet::build(meta.config, 0)?;
    if entries.iter().any(|e| e.name.starts_with("af1.")) {
        net.construct_afnet(0);
    }
    if entries.iter().any(|e| e.name.starts_with("fusion.")) {
        net.init_fusion(0);
    }
    let named: std::collections::HashMap<String, crate::tensor::Tensor<f32>> = net
        .named_tensors()
        .into_iter()
        .map(|nt| (nt.name, nt.tensor))
        .collect();
    if entries.len() != named.len() {
        return Err(format_err(
            0,
            format!(
                "checkpoint holds {} tensors, network needs {}",
                entries.len(),
                named.len()
            ),
        ));
    }
    for e in &entries {
        let t = named
            .get(&e.name)
            .ok_or_else(|| format_err(0, format!("unknown tensor {:?}", e.name)))?;
        if t.dims() != e.dims.as_slice() {
            return Err(format_err(
                0,
                format!("{}: dims {:?} do not match network {:?}", e.name, e.dims, t.dims()),
            ));
        }
        t.data_mut().copy_from_slice(&e.data);
    }
    Ok((net, stages))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpnet::HpNetConfig;

    fn tiny_net() -> HpNet {
        let cfg = HpNetConfig {
            stem_channels: 4,
            block_channels: [4, 4, 4],
            attention_channels: 2,
            num_attributes: 2,
            feature_dim: 4,
            input_height: 16,
            input_width: 16,
            ..HpNetConfig::default()
        };
        let mut net = HpNet::build(cfg, 9).unwrap();
        net.construct_afnet(9);
        net.init_fusion(9);
        net
    }

    #[test]
    fn roundtrip_is_bit_exact_and_idempotent() {
        let net = tiny_net();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let stages = vec!["stage1".to_string(), "stage2a".to_string()];
        save_checkpoint(&net, &stages, &p1).unwrap();
        let (loaded, back_stages) = load_checkpoint(&p1).unwrap();
        assert_eq!(back_stages, stages);
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&loaded, &back_stages, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn entries_are_lexicographic() {
        let net = tiny_net();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save_checkpoint(&net, &[], &p).unwrap();
        let (entries, _) = decode(&std::fs::read(&p).unwrap()).unwrap();
        let names: Vec<&String> = entries.iter().map(|e| &e.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn corrupted_magic_rejected_with_offset() {
        let mut bytes = encode(&[], &[]);
        bytes[0] = b'X';
        match decode(&bytes) {
            Err(TrainError::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at 0, got {other:?}"),
        }
    }

    #[test]
    fn truncation_rejected() {
        let net = tiny_net();
        let entries: Vec<Entry> = vec![Entry {
            name: "w".into(),
            dims: vec![2, 2],
            data: vec![1.0; 4],
        }];
        let bytes = encode(&entries, &[]);
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(TrainError::Format { .. })
        ));
        drop(net);
    }

    #[test]
    fn unsorted_entries_rejected() {
        let entries = vec![
            Entry { name: "b".into(), dims: vec![1], data: vec![0.0] },
            Entry { name: "a".into(), dims: vec![1], data: vec![0.0] },
        ];
        assert!(matches!(
            decode(&encode(&entries, &[])),
            Err(TrainError::Format { .. })
        ));
    }
}
