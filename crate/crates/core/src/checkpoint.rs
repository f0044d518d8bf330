//! Versioned binary container for parameters, optimizer state and the prior.
//!
//! Layout (all integers unsigned 32-bit little-endian):
//!
//! ```text
//! "WDCK" version
//! latent_dim height width channels kernel stride mlp_width mlp_depth
//! relation_arity relation_code_dim n_conv conv_channels[n_conv]
//! block_count
//! per block: name_len name_bytes rank dims[rank] f32_le[product(dims)]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::networks::{ArchConfig, NetworkParams};
use crate::nn::Network;
use crate::prior::GmPrior;

pub const MAGIC: &[u8; 4] = b"WDCK";
pub const VERSION: u32 = 1;

const PRIOR_MEANS: &str = "prior.means";
const PRIOR_VARIANCES: &str = "prior.variances";

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub blocks: Vec<Block>,
}

impl Checkpoint {
    pub fn new(arch: ArchConfig) -> Self {
        Checkpoint {
            arch,
            blocks: Vec::new(),
        }
    }

    pub fn from_params(params: &NetworkParams<f32>) -> Self {
        let mut ck = Checkpoint::new(params.arch.clone());
        for net in params.networks() {
            for p in &net.params {
                ck.push(&p.name, p.dims.clone(), p.data.clone());
            }
        }
        ck
    }

    /// Appends a block, replacing any existing block of the same name.
    pub fn push(&mut self, name: &str, dims: Vec<usize>, data: Vec<f32>) {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "block `{name}` dims");
        let block = Block {
            name: name.to_string(),
            dims,
            data,
        };
        match self.blocks.iter_mut().find(|b| b.name == name) {
            Some(b) => *b = block,
            None => self.blocks.push(block),
        }
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Block> {
        self.block(name)
            .ok_or_else(|| Error::Malformed(format!("checkpoint has no block `{name}`")))
    }

    /// Rebuilds network parameters, checking every shape against the
    /// stored architecture.
    pub fn params(&self) -> Result<NetworkParams<f32>> {
        let mut params = NetworkParams::<f32>::zeroed(&self.arch)?;
        for net in params.networks_mut() {
            self.fill(net)?;
        }
        Ok(params)
    }

    fn fill(&self, net: &mut Network<f32>) -> Result<()> {
        for p in &mut net.params {
            let b = self.require(&p.name)?;
            if b.dims != p.dims {
                return Err(Error::Malformed(format!(
                    "block `{}` has dims {:?}, architecture expects {:?}",
                    p.name, b.dims, p.dims
                )));
            }
            p.data.copy_from_slice(&b.data);
        }
        Ok(())
    }

    pub fn set_prior(&mut self, prior: &GmPrior) {
        let (n, d) = (prior.n(), prior.latent_dim());
        let flat = |rows: &[Vec<f64>]| rows.iter().flatten().map(|&v| v as f32).collect();
        self.push(PRIOR_MEANS, vec![n, d], flat(prior.means()));
        self.push(PRIOR_VARIANCES, vec![n, d], flat(prior.variances()));
    }

    pub fn prior(&self) -> Result<Option<GmPrior>> {
        let (Some(m), Some(v)) = (self.block(PRIOR_MEANS), self.block(PRIOR_VARIANCES)) else {
            return Ok(None);
        };
        if m.dims.len() != 2 || m.dims != v.dims {
            return Err(Error::Malformed("prior blocks have inconsistent dims".into()));
        }
        let rows = |b: &Block| -> Vec<Vec<f64>> {
            b.data
                .chunks(b.dims[1])
                .map(|r| r.iter().map(|&x| x as f64).collect())
                .collect()
        };
        Ok(Some(GmPrior::new(rows(m), rows(v))?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let a = &self.arch;
        for v in [
            a.latent_dim,
            a.height,
            a.width,
            a.channels,
            a.kernel,
            a.stride,
            a.mlp_width,
            a.mlp_depth,
            a.relation_arity,
            a.relation_code_dim,
            a.conv_channels.len(),
        ] {
            put_u32(&mut out, v as u32);
        }
        for &c in &a.conv_channels {
            put_u32(&mut out, c as u32);
        }
        put_u32(&mut out, self.blocks.len() as u32);
        for b in &self.blocks {
            put_u32(&mut out, b.name.len() as u32);
            out.extend_from_slice(b.name.as_bytes());
            put_u32(&mut out, b.dims.len() as u32);
            for &d in &b.dims {
                put_u32(&mut out, d as u32);
            }
            for &v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Malformed("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Malformed(format!("unsupported checkpoint version {version}")));
        }
        let mut head = [0usize; 11];
        for h in head.iter_mut() {
            *h = r.u32("architecture")? as usize;
        }
        let conv_channels = (0..head[10])
            .map(|_| r.u32("conv channels").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let arch = ArchConfig {
            latent_dim: head[0],
            height: head[1],
            width: head[2],
            channels: head[3],
            kernel: head[4],
            stride: head[5],
            mlp_width: head[6],
            mlp_depth: head[7],
            relation_arity: head[8],
            relation_code_dim: head[9],
            conv_channels,
        };
        let count = r.u32("block count")?;
        let mut blocks = Vec::new();
        for _ in 0..count {
            let name_len = r.u32("block name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "block name")?.to_vec())
                .map_err(|_| Error::Malformed("block name is not UTF-8".into()))?;
            let rank = r.u32("block rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("block dims").map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let raw = r.take(
                len.checked_mul(4)
                    .ok_or_else(|| Error::Malformed("block too large".into()))?,
                &name,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blocks.push(Block { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { arch, blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Malformed(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ArchConfig {
        ArchConfig {
            conv_channels: vec![4],
            mlp_width: 8,
            ..ArchConfig::new(3, 8, 8, 1)
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = NetworkParams::<f32>::init(&arch(), 1).unwrap();
        let mut ck = Checkpoint::from_params(&params);
        let prior = GmPrior::isotropic(vec![vec![0.25, 1.0, -3.5], vec![2.0, 2.0, 2.0]], 0.5).unwrap();
        ck.set_prior(&prior);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.params().unwrap(), params);
        assert_eq!(back.prior().unwrap().unwrap(), prior);
    }

    #[test]
    fn corrupt_input_is_diagnosed() {
        let bytes = Checkpoint::from_params(&NetworkParams::<f32>::init(&arch(), 1).unwrap()).to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Malformed(_))
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Malformed(m)) if m.contains("magic")));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let ck = Checkpoint::from_params(&NetworkParams::<f32>::init(&arch(), 1).unwrap());
        let mut other = ck.clone();
        other.arch.mlp_width = 9;
        assert!(other.params().is_err());
        let mut missing = ck;
        missing.blocks.pop();
        assert!(missing.params().is_err());
    }

    #[test]
    fn push_replaces_by_name() {
        let mut ck = Checkpoint::new(arch());
        ck.push("x", vec![1], vec![1.0]);
        ck.push("x", vec![2], vec![1.0, 2.0]);
        assert_eq!(ck.blocks.len(), 1);
        assert_eq!(ck.require("x").unwrap().dims, vec![2]);
        assert!(ck.prior().unwrap().is_none());
    }
}
