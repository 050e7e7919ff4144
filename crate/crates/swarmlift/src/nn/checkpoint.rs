//! Binary checkpoint container: a fixed magic/version header, a TOML
//! metadata blob, and a list of named little-endian f64 tensors. The format
//! is self-describing enough for `inspect` to print contents without
//! reconstructing the networks.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SWL1";
const VERSION: u32 = 1;
/// Upper bound on tensor-name length; anything larger means corruption.
const MAX_NAME: usize = 4096;

/// Everything needed to rebuild networks and validate that a checkpoint
/// matches the configuration it is loaded into. The two 64-bit fields are
/// stored as strings because TOML integers are signed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Hash of the run configuration, hex-encoded.
    pub config_hash: String,
    pub seed: String,
    pub n_mavs: usize,
    pub history: usize,
    pub observation: String,
    pub action_kind: String,
    pub critic: String,
    pub obs_dim: usize,
    pub global_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: String,
    pub env_steps: u64,
    pub iteration: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Checkpoint {
        Checkpoint { meta, tensors: Vec::new() }
    }

    pub fn insert(&mut self, name: &str, data: Vec<f64>) {
        assert!(
            self.tensor(name).is_none(),
            "duplicate checkpoint tensor {name:?}"
        );
        self.tensors.push((name.to_string(), data));
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, d)| d.as_slice())
    }

    /// Like `tensor` but with a checkpoint-specific error for missing names.
    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.tensor(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tensors.iter().map(|(n, d)| (n.as_str(), d.as_slice()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = toml::to_string(&self.meta)
            .map_err(|e| Error::Checkpoint(format!("metadata encoding failed: {e}")))?;
        let meta = meta.as_bytes();

        let mut out = Vec::with_capacity(
            16 + meta.len() + self.tensors.iter().map(|(n, d)| 16 + n.len() + 8 * d.len()).sum::<usize>(),
        );
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(meta.len() as u32).to_le_bytes())?;
        out.write_all(meta)?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, data) in &self.tensors {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(data.len() as u64).to_le_bytes())?;
            for &x in data {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let buf = fs::read(path)?;
        let mut r = Reader { buf: &buf, pos: 0 };

        let magic = r.bytes(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?}, not a checkpoint file"
            )));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_bytes = r.bytes(meta_len, "metadata")?;
        let meta_str = std::str::from_utf8(meta_bytes)
            .map_err(|e| Error::Checkpoint(format!("metadata is not UTF-8: {e}")))?;
        let meta: CheckpointMeta = toml::from_str(meta_str)
            .map_err(|e| Error::Checkpoint(format!("metadata parse failed: {e}")))?;

        let n_tensors = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(n_tensors.min(1024));
        for i in 0..n_tensors {
            let name_len = r.u32("tensor name length")? as usize;
            if name_len > MAX_NAME {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} name length {name_len} exceeds limit"
                )));
            }
            let name = std::str::from_utf8(r.bytes(name_len, "tensor name")?)
                .map_err(|e| Error::Checkpoint(format!("tensor {i} name is not UTF-8: {e}")))?
                .to_string();
            let count = r.u64("tensor length")? as usize;
            let raw = r.bytes(8 * count, &format!("tensor {name:?} data"))?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, data));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last tensor",
                buf.len() - r.pos
            )));
        }
        Ok(Checkpoint { meta, tensors })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes for {what}, {} left",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_meta() -> CheckpointMeta {
        CheckpointMeta {
            config_hash: "deadbeefcafe0123".into(),
            seed: "42".into(),
            n_mavs: 3,
            history: 3,
            observation: "partial".into(),
            action_kind: "accbr".into(),
            critic: "centralized".into(),
            obs_dim: 135,
            global_dim: 84,
            action_dim: 6,
            hidden: vec![256, 128, 64, 64],
            activation: "elu".into(),
            env_steps: 123456,
            iteration: 17,
        }
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.swl");

        let mut ckpt = Checkpoint::new(sample_meta());
        // Values chosen to exercise the full bit pattern space.
        ckpt.insert(
            "actor.params",
            vec![std::f64::consts::PI, -0.0, 1e-300, -1e300, f64::MIN_POSITIVE],
        );
        ckpt.insert("scaler.obs.mean", vec![0.25; 7]);
        ckpt.insert("empty", vec![]);
        ckpt.save(&path).unwrap();

        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta, sample_meta());
        let names: Vec<&str> = back.tensors().map(|(n, _)| n).collect();
        assert_eq!(names, ["actor.params", "scaler.obs.mean", "empty"]);
        for (name, data) in ckpt.tensors() {
            let loaded = back.require(name).unwrap();
            assert_eq!(data.len(), loaded.len());
            for (a, b) in data.iter().zip(loaded) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name}");
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.swl");
        let mut ckpt = Checkpoint::new(sample_meta());
        ckpt.insert("t", vec![1.0]);
        ckpt.save(&path).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        bytes[0] = b'S';
        bytes[4] = 99; // version little-endian low byte
        fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn rejects_truncation_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.swl");
        let mut ckpt = Checkpoint::new(sample_meta());
        ckpt.insert("weights", (0..32).map(|i| i as f64).collect());
        ckpt.save(&path).unwrap();

        let bytes = fs::read(&path).unwrap();
        for cut in [2, 6, 10, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            let err = Checkpoint::load(&path).unwrap_err();
            assert!(
                matches!(err, Error::Checkpoint(_)),
                "cut at {cut} gave {err}"
            );
        }
    }

    #[test]
    fn require_reports_missing_tensor() {
        let ckpt = Checkpoint::new(sample_meta());
        let err = ckpt.require("absent").unwrap_err();
        assert!(err.to_string().contains("absent"));
    }
}
