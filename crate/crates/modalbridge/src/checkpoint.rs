//! Parameter checkpoint format.
//!
//! A checkpoint is a plain-text header followed by a flat little-endian f32
//! payload. The header lists free-form tags and one `tensor` line per entry
//! with name, shape and byte offset into the payload:
//!
//! ```text
//! MODALBRIDGE-CKPT v1
//! tag kind=conv3d
//! tensor stem.weight 8,3,3,3,3 0 2592
//! tensor stem.bias 8,1,1,1 2592 32
//! end
//! <payload bytes>
//! ```
//!
//! Save -> load -> save reproduces the file byte for byte.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

const MAGIC: &str = "MODALBRIDGE-CKPT v1";

/// An in-memory checkpoint: ordered tags and ordered named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tags: Vec<(String, String)>,
    pub entries: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn add_tag(&mut self, key: &str, value: impl ToString) {
        self.tags.push((key.to_string(), value.to_string()));
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: &str, tensor: &Tensor) {
        self.entries.push(CheckpointEntry {
            name: name.to_string(),
            shape: tensor.shape(),
            values: tensor.to_vec(),
        });
    }

    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Serialize to the on-disk byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.tags {
            header.push_str(&format!("tag {k}={v}\n"));
        }
        let mut offset = 0usize;
        for e in &self.entries {
            let shape_txt: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            let byte_len = e.values.len() * 4;
            header.push_str(&format!(
                "tensor {} {} {} {}\n",
                e.name,
                shape_txt.join(","),
                offset,
                byte_len
            ));
            offset += byte_len;
        }
        header.push_str("end\n");

        let mut out = header.into_bytes();
        for e in &self.entries {
            for v in &e.values {
                out.write_all(&v.to_le_bytes()).unwrap();
            }
        }
        out
    }

    /// Parse the on-disk byte layout.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        // The header is ASCII terminated by an `end\n` line; find it without
        // assuming the payload is valid UTF-8.
        let mut line_start = 0usize;
        let mut lines: Vec<&str> = Vec::new();
        let mut payload_start = None;
        while line_start < bytes.len() {
            let rel_end = bytes[line_start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Checkpoint("missing header terminator".to_string()))?;
            let line = std::str::from_utf8(&bytes[line_start..line_start + rel_end])
                .map_err(|_| Error::Checkpoint("non-utf8 header line".to_string()))?;
            line_start += rel_end + 1;
            if line == "end" {
                payload_start = Some(line_start);
                break;
            }
            lines.push(line);
        }
        let payload_start =
            payload_start.ok_or_else(|| Error::Checkpoint("missing `end` line".to_string()))?;
        let payload = &bytes[payload_start..];

        let mut lines = lines.into_iter();
        match lines.next() {
            Some(l) if l == MAGIC => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "bad magic line: {:?}",
                    other.unwrap_or("")
                )))
            }
        }

        let mut ckpt = Checkpoint::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("tag ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Checkpoint(format!("malformed tag line: {line}")))?;
                ckpt.tags.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 4 {
                    return Err(Error::Checkpoint(format!("malformed tensor line: {line}")));
                }
                let name = parts[0].to_string();
                let shape: Vec<usize> = parts[1]
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Checkpoint(format!("bad shape in line: {line}")))?;
                let offset: usize = parts[2]
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad offset in line: {line}")))?;
                let byte_len: usize = parts[3]
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad length in line: {line}")))?;
                let numel: usize = shape.iter().product();
                if byte_len != numel * 4 {
                    return Err(Error::Checkpoint(format!(
                        "length {byte_len} disagrees with shape {shape:?} for `{name}`"
                    )));
                }
                if offset + byte_len > payload.len() {
                    return Err(Error::Checkpoint(format!(
                        "entry `{name}` extends past payload end"
                    )));
                }
                let values: Vec<f32> = payload[offset..offset + byte_len]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                ckpt.entries.push(CheckpointEntry { name, shape, values });
            } else {
                return Err(Error::Checkpoint(format!("unrecognized header line: {line}")));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

/// Hex sha256 of arbitrary bytes, used for dataset and checkpoint digests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.add_tag("kind", "conv3d");
        c.add_tag("policy", "head_plus_last_block");
        let t = Tensor::from_vec(vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, f32::MIN_POSITIVE, 1e30]).unwrap();
        c.push("w", &t);
        let b = Tensor::from_vec(vec![2], vec![0.5, -0.5]).unwrap();
        c.push("b", &b);
        c
    }

    #[test]
    fn byte_exact_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let reloaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(reloaded, c);
        assert_eq!(reloaded.to_bytes(), bytes);
    }

    #[test]
    fn tags_survive_round_trip() {
        let c = sample();
        let reloaded = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(reloaded.tag("policy"), Some("head_plus_last_block"));
        assert_eq!(reloaded.tag("missing"), None);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 3);
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("past payload end"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("model.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        let reloaded = Checkpoint::load(&path).unwrap();
        assert_eq!(reloaded, c);
    }
}
