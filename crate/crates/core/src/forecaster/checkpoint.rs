//! FVSM checkpoint serialization.
//!
//! Layout, all little-endian:
//!   magic `FVSM`, version u16
//!   config: feature_dim u32, width count u16 + widths u32, layers u32,
//!           heads u32, resolution u32, t_past u32, single_task i8
//!           (level index or -1), use_global u8, loss u8 (0 dice, 1 bce),
//!           use_history u8, seed u64
//!   param count u32, then per parameter:
//!           name (u16 length + utf8), ndim u8 + dims u32, values f32
//!
//! Values are stored as f32; `train` snaps parameters to f32 precision
//! before returning, so a save/load round trip reproduces forward passes
//! bit for bit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forecaster::model::{Forecaster, LossKind, ModelConfig, Param, VariantFlags};
use crate::forecaster::tape::Tensor;
use crate::geom::SpanLevel;

const MAGIC: &[u8; 4] = b"FVSM";
const VERSION: u16 = 1;

pub fn save_checkpoint(path: &Path, model: &Forecaster) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let c = &model.config;
    buf.extend_from_slice(&(c.feature_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(c.encoder_widths.len() as u16).to_le_bytes());
    for &w in &c.encoder_widths {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(c.transformer_layers as u32).to_le_bytes());
    buf.extend_from_slice(&(c.heads as u32).to_le_bytes());
    buf.extend_from_slice(&(c.resolution as u32).to_le_bytes());
    buf.extend_from_slice(&(c.t_past as u32).to_le_bytes());
    let single: i8 = c.variant.single_task_level.map_or(-1, |l| l.index() as i8);
    buf.push(single as u8);
    buf.push(u8::from(c.variant.use_global_embedding));
    buf.push(match c.variant.loss {
        LossKind::Dice => 0,
        LossKind::Bce => 1,
    });
    buf.push(u8::from(c.variant.use_history));
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(p.value.shape.len() as u8);
        for &d in &p.value.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.value.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Forecaster> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an FVSM checkpoint".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let feature_dim = r.u32()? as usize;
    let n_widths = r.u16()? as usize;
    let mut encoder_widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        encoder_widths.push(r.u32()? as usize);
    }
    let transformer_layers = r.u32()? as usize;
    let heads = r.u32()? as usize;
    let resolution = r.u32()? as usize;
    let t_past = r.u32()? as usize;
    let single = r.u8()? as i8;
    let single_task_level = match single {
        -1 => None,
        0..=3 => Some(SpanLevel::ALL[single as usize]),
        other => {
            return Err(Error::Checkpoint(format!("invalid single-task level {other}")));
        }
    };
    let use_global_embedding = r.u8()? != 0;
    let loss = match r.u8()? {
        0 => LossKind::Dice,
        1 => LossKind::Bce,
        other => return Err(Error::Checkpoint(format!("invalid loss tag {other}"))),
    };
    let use_history = r.u8()? != 0;
    let seed = r.u64()?;
    let config = ModelConfig {
        feature_dim,
        encoder_widths,
        transformer_layers,
        heads,
        resolution,
        t_past,
        variant: VariantFlags { single_task_level, use_global_embedding, loss, use_history },
        seed,
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not utf8".into()))?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from(r.f32()?));
        }
        params.push(Param { name, value: Tensor::new(shape, data) });
    }
    if r.pos != r.buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            r.buf.len() - r.pos
        )));
    }
    Forecaster::from_params(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::tape::Tape;
    use crate::forecaster::model::SampleInput;

    fn tiny_model() -> Forecaster {
        let config = ModelConfig {
            feature_dim: 8,
            encoder_widths: vec![4, 6],
            transformer_layers: 1,
            heads: 2,
            resolution: 8,
            t_past: 2,
            variant: VariantFlags::default(),
            seed: 21,
        };
        let mut m = Forecaster::new(config).unwrap();
        m.quantize_f32();
        m
    }

    fn forward_values(m: &Forecaster) -> Vec<f64> {
        let r = m.config.resolution;
        let vol = r * r * r;
        let data: Vec<f64> = (0..5 * vol).map(|i| f64::from(i % 11 == 0)).collect();
        let input = SampleInput {
            frames: vec![Tensor::new(vec![5, r, r, r], data.clone()); 2],
            union: Tensor::new(vec![5, r, r, r], data),
        };
        let mut tape = Tape::new();
        let pred = m.forward(&mut tape, &input);
        tape.value(pred).to_vec()
    }

    #[test]
    fn roundtrip_preserves_forward_pass_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fvsm");
        let model = tiny_model();
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        for (a, b) in model.params.iter().zip(&loaded.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data, b.value.data, "param {} drifted", a.name);
        }
        assert_eq!(forward_values(&model), forward_values(&loaded));
    }

    #[test]
    fn deterministic_bytes_and_strict_reads() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fvsm");
        let p2 = dir.path().join("b.fvsm");
        let model = tiny_model();
        save_checkpoint(&p1, &model).unwrap();
        save_checkpoint(&p2, &model).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);

        // Bad magic.
        let mut bad = b1.clone();
        bad[0] ^= 0xff;
        std::fs::write(&p2, &bad).unwrap();
        assert!(load_checkpoint(&p2).is_err());
        // Truncation.
        std::fs::write(&p2, &b1[..b1.len() - 3]).unwrap();
        assert!(load_checkpoint(&p2).is_err());
        // Trailing garbage.
        let mut extra = b1.clone();
        extra.push(0);
        std::fs::write(&p2, &extra).unwrap();
        assert!(load_checkpoint(&p2).is_err());
    }
}
