//! Binary model container.
//!
//! Layout (little-endian): magic `ADWM`, `u16` version, `u8` kind
//! (0 = flow, 1 = discriminator), then the kind-specific body, an optional
//! feature normalizer and a free-form UTF-8 metadata string. Every
//! parameter is stored as `f64`, so save/load is bit-exact.

use std::path::Path;

use crate::features::{NormalizeMode, Normalizer};
use crate::flow::{CouplingBlock, CouplingFlow, FlowConfig};
use crate::numerics::{Activation, Layer, MlpParams};
use crate::synthdisc::AdaptorDiscriminator;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"ADWM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Flow(CouplingFlow),
    Discriminator(AdaptorDiscriminator),
}

impl Model {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Flow(_) => "flow",
            Model::Discriminator(_) => "discriminator",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub normalizer: Option<Normalizer>,
    /// Caller-defined metadata, typically JSON.
    pub metadata: String,
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend((v as u32).to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend(x.to_le_bytes());
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend(b);
    }
    fn mlp(&mut self, m: &MlpParams) {
        self.u32(m.layers().len());
        for l in m.layers() {
            self.u32(l.inputs);
            self.u32(l.outputs);
            self.u8(l.activation.code());
            self.f64s(&l.weight);
            self.f64s(&l.bias);
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
    fn mlp(&mut self) -> Result<MlpParams> {
        let n = self.u32()?;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let inputs = self.u32()?;
            let outputs = self.u32()?;
            let code = self.u8()?;
            let activation = Activation::from_code(code)
                .ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
            let weight = self.f64s(
                inputs
                    .checked_mul(outputs)
                    .ok_or_else(|| Error::Format("layer too large".into()))?,
            )?;
            let bias = self.f64s(outputs)?;
            layers.push(Layer {
                inputs,
                outputs,
                weight,
                bias,
                activation,
            });
        }
        MlpParams::new(layers).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut e = Enc(MODEL_MAGIC.to_vec());
    e.0.extend(MODEL_VERSION.to_le_bytes());
    match &c.model {
        Model::Flow(f) => {
            e.u8(0);
            e.bytes(
                serde_json::to_string(f.config())
                    .expect("serializable")
                    .as_bytes(),
            );
            for b in f.blocks() {
                e.u32(b.permutation().len());
                for &p in b.permutation() {
                    e.u32(p);
                }
                e.mlp(b.cond_s());
                e.mlp(b.cond_t());
            }
        }
        Model::Discriminator(d) => {
            e.u8(1);
            e.u8(d.gate_zero_features() as u8);
            e.mlp(d.adaptor());
            e.mlp(d.discriminator());
        }
    }
    match &c.normalizer {
        None => e.u8(0),
        Some(n) => {
            e.u8(1);
            e.u8(n.mode.code());
            e.u32(n.scales());
            e.u32(n.channels());
            for row in n.mean.iter().chain(&n.std) {
                e.f64s(row);
            }
        }
    }
    e.bytes(c.metadata.as_bytes());
    e.0
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut d = Dec { buf, pos: 0 };
    if d.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("bad magic, expected \"ADWM\"".into()));
    }
    let v = d.take(2)?;
    let version = u16::from_le_bytes([v[0], v[1]]);
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let model = match d.u8()? {
        0 => {
            let config: FlowConfig = serde_json::from_slice(d.bytes()?)
                .map_err(|e| Error::Format(format!("flow config: {e}")))?;
            let mut blocks = Vec::with_capacity(config.num_blocks.min(1024));
            for _ in 0..config.num_blocks {
                let n = d.u32()?;
                let perm = (0..n).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
                let s = d.mlp()?;
                let t = d.mlp()?;
                blocks.push(
                    CouplingBlock::new(
                        perm,
                        s,
                        t,
                        config.clamp,
                        config.cross_scale,
                        config.positional,
                        config.num_scales,
                    )
                    .map_err(|e| Error::Format(e.to_string()))?,
                );
            }
            Model::Flow(
                CouplingFlow::from_blocks(config, blocks)
                    .map_err(|e| Error::Format(e.to_string()))?,
            )
        }
        1 => {
            let gate = d.u8()? != 0;
            let a = d.mlp()?;
            let m = d.mlp()?;
            Model::Discriminator(
                AdaptorDiscriminator::from_parts(a, m, gate)
                    .map_err(|e| Error::Format(e.to_string()))?,
            )
        }
        k => return Err(Error::Format(format!("unknown model kind {k}"))),
    };
    let normalizer = match d.u8()? {
        0 => None,
        1 => {
            let code = d.u8()?;
            let mode = NormalizeMode::from_code(code)
                .ok_or_else(|| Error::Format(format!("unknown normalizer mode {code}")))?;
            let scales = d.u32()?;
            let channels = d.u32()?;
            let mut rows = Vec::with_capacity(2 * scales.min(64));
            for _ in 0..2 * scales {
                rows.push(d.f64s(channels)?);
            }
            let std = rows.split_off(scales);
            Some(Normalizer {
                mode,
                mean: rows,
                std,
            })
        }
        f => return Err(Error::Format(format!("bad normalizer flag {f}"))),
    };
    let metadata = d.string()?;
    if d.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        model,
        normalizer,
        metadata,
    })
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    crate::io::write_atomic(path, &encode_checkpoint(c))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdisc::DiscConfig;

    fn flow_ckpt() -> Checkpoint {
        let flow = CouplingFlow::new(FlowConfig {
            dim: 4,
            num_blocks: 3,
            hidden: 6,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        Checkpoint {
            model: Model::Flow(flow),
            normalizer: Some(Normalizer {
                mode: NormalizeMode::Standardize,
                mean: vec![vec![0.1, 0.2, 0.3, f64::MIN_POSITIVE]; 3],
                std: vec![vec![1.0, 2.0, 3.0, 1e-6]; 3],
            }),
            metadata: "{\"scale\":0}".into(),
        }
    }

    #[test]
    fn flow_round_trip_exact() {
        let c = flow_ckpt();
        let bytes = encode_checkpoint(&c);
        assert_eq!(&bytes[..4], b"ADWM");
        assert_eq!(bytes[6], 0);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn disc_round_trip_exact() {
        let m = AdaptorDiscriminator::new(&DiscConfig {
            dim: 5,
            ..Default::default()
        })
        .unwrap();
        let c = Checkpoint {
            model: Model::Discriminator(m),
            normalizer: None,
            metadata: String::new(),
        };
        let bytes = encode_checkpoint(&c);
        assert_eq!(bytes[6], 1);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = encode_checkpoint(&flow_ckpt());
        for cut in [0, 3, 7, 50, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
