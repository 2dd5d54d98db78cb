//! Little-endian checkpoint files.
//!
//! Layout: magic, version u32, flags u32, config block, parameter count u32,
//! then per parameter the name (u16 length + bytes), rank u8, dims u32 and an
//! f32 payload. With flag bit 0 set, the Adam step (u64) and both moment
//! payloads follow for every parameter in order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EncoderKind, Model, ModelConfig, ModelError};
use crate::nn::{NnError, Real, Tensor, MAX_RANK};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRNN0001";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLAG_MOMENTS: u32 = 1;

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Nn(NnError::Checkpoint(msg.into()))
}

fn io(e: std::io::Error) -> ModelError {
    ModelError::Nn(NnError::Io(e))
}

fn write_f32s<W: Write, F: Real>(w: &mut W, xs: &[F]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, ModelError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(io)?;
    Ok(buf)
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8, ModelError> {
    Ok(read_exact(r, 1)?[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, ModelError> {
    Ok(u16::from_le_bytes(read_exact(r, 2)?.try_into().unwrap()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    Ok(u64::from_le_bytes(read_exact(r, 8)?.try_into().unwrap()))
}

fn read_f32s<R: Read, F: Real>(r: &mut R, n: usize) -> Result<Vec<F>, ModelError> {
    let bytes = read_exact(r, n * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect())
}

impl<F: Real> Model<F> {
    pub fn write_to<W: Write>(&self, w: &mut W, with_moments: bool) -> Result<(), ModelError> {
        let c = &self.config;
        let mut head = Vec::new();
        head.extend_from_slice(CHECKPOINT_MAGIC);
        head.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let flags = if with_moments { FLAG_MOMENTS } else { 0 };
        head.extend_from_slice(&flags.to_le_bytes());
        head.push(c.encoder.code());
        for x in [c.d_model, c.n_enc, c.n_dec, c.heads, c.vocab, c.max_len, c.n_rows, c.d_cols] {
            head.extend_from_slice(&(x as u32).to_le_bytes());
        }
        head.extend_from_slice(&(c.p_drop as f32).to_le_bytes());
        head.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        w.write_all(&head).map_err(io)?;
        for (_, p) in self.store.iter() {
            let name = p.name.as_bytes();
            let mut h = Vec::new();
            h.extend_from_slice(&(name.len() as u16).to_le_bytes());
            h.extend_from_slice(name);
            h.push(p.value.shape().len() as u8);
            for d in p.value.shape() {
                h.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            w.write_all(&h).map_err(io)?;
            write_f32s(w, p.value.data()).map_err(io)?;
        }
        if with_moments {
            w.write_all(&self.store.step().to_le_bytes()).map_err(io)?;
            for (_, p) in self.store.iter() {
                write_f32s(w, &p.m).map_err(io)?;
                write_f32s(w, &p.v).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ModelError> {
        let magic = read_exact(r, 8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad("not a model checkpoint (bad magic)"));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let flags = read_u32(r)?;
        let kind = read_u8(r)?;
        let encoder = EncoderKind::from_code(kind).ok_or_else(|| bad(format!("unknown encoder code {kind}")))?;
        let mut dims = [0usize; 8];
        for d in &mut dims {
            *d = read_u32(r)? as usize;
        }
        let p_drop = f32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()) as f64;
        let [d_model, n_enc, n_dec, heads, vocab, max_len, n_rows, d_cols] = dims;
        let config = ModelConfig {
            d_model,
            n_enc,
            n_dec,
            heads,
            vocab,
            max_len,
            n_rows,
            d_cols,
            p_drop,
            encoder,
        };
        let mut model = Model::new(config, 0)?;
        let count = read_u32(r)? as usize;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u16(r)? as usize;
            let name = String::from_utf8(read_exact(r, len)?).map_err(|_| bad("parameter name is not UTF-8"))?;
            let rank = read_u8(r)? as usize;
            if rank > MAX_RANK {
                return Err(bad(format!("parameter `{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(r)? as usize);
            }
            let n: usize = shape.iter().product();
            let expected = model.store.find(&name).map(|id| model.store.value(id).len());
            if expected != Some(n) {
                return Err(bad(format!("unexpected parameter `{name}` {shape:?}")));
            }
            values.push((name, Tensor::new(&shape, read_f32s(r, n)?)?));
        }
        model.store.load_values(values)?;
        if flags & FLAG_MOMENTS != 0 {
            let step = read_u64(r)?;
            model.store.set_step(step);
            for p in model.store.iter_mut() {
                let n = p.value.len();
                p.m = read_f32s(r, n)?;
                p.v = read_f32s(r, n)?;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, with_moments: bool) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w, with_moments)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::read_from(&mut BufReader::new(File::open(path).map_err(io)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_enc: 1,
            n_dec: 1,
            ..ModelConfig::default()
        }
        .with_encoder(EncoderKind::Att)
    }

    #[test]
    fn round_trip_with_moments() {
        let mut model = Model::<f32>::new(small(), 11).unwrap();
        model.store.set_step(17);
        for p in model.store.iter_mut() {
            p.m.iter_mut().enumerate().for_each(|(i, x)| *x = i as f32 * 0.5);
        }
        let mut buf = Vec::new();
        model.write_to(&mut buf, true).unwrap();
        let back = Model::<f32>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.store(), model.store());

        let mut plain = Vec::new();
        model.write_to(&mut plain, false).unwrap();
        let back = Model::<f32>::read_from(&mut plain.as_slice()).unwrap();
        assert_eq!(back.store().step(), 0);
        for ((_, a), (_, b)) in back.store().iter().zip(model.store().iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn rejects_bad_files() {
        let model = Model::<f32>::new(small(), 1).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf, false).unwrap();
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(Model::<f32>::read_from(&mut corrupt.as_slice()).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(Model::<f32>::read_from(&mut &truncated[..]).is_err());
    }
}
