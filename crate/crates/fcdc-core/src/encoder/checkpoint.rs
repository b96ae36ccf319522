//! Binary checkpoint: config + vocabulary + coarse label names + all
//! parameter arrays with shape headers. Loading validates every shape
//! against the stored config.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{init_params, EncoderConfig, EncoderParams};
use crate::data::Vocab;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FCDCCKP1";

/// Everything needed to evaluate or resume: parameters plus the token and
/// coarse-label vocabularies that give ids their meaning.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub vocab: Vocab,
    pub coarse_names: Vec<String>,
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_str_list(w: &mut impl Write, items: &[String]) -> Result<()> {
    w.write_all(&(items.len() as u64).to_le_bytes())?;
    for s in items {
        write_str(w, s)?;
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_str(&mut w, &serde_json::to_string(&ckpt.params.config)?)?;
    write_str_list(&mut w, ckpt.vocab.tokens())?;
    write_str_list(&mut w, &ckpt.coarse_names)?;

    let tensors = ckpt.params.tensors();
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        write_str(&mut w, &name)?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    fn str_list(&mut self) -> Result<Vec<String>> {
        let n = self.u64()? as usize;
        (0..n).map(|_| self.str()).collect()
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a checkpoint)".to_string()));
    }
    let config: EncoderConfig = serde_json::from_str(&r.str()?)?;
    config.validate()?;
    let vocab = Vocab::from_tokens(r.str_list()?)?;
    let coarse_names = r.str_list()?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocab holds {} tokens but config says {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    if coarse_names.len() != config.num_coarse_classes {
        return Err(Error::Checkpoint(format!(
            "{} coarse names but config says {}",
            coarse_names.len(),
            config.num_coarse_classes
        )));
    }

    // A zero-seeded skeleton supplies the expected names and shapes.
    let mut params = init_params(&config, 0)?;
    let tensor_count = r.u64()? as usize;
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    if tensor_count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors stored, {} expected",
            tensor_count,
            expected.len()
        )));
    }
    let mut slots = params.tensors_mut();
    for (i, (slot_name, slot)) in slots.iter_mut().enumerate() {
        let name = r.str()?;
        if name != *slot_name {
            return Err(Error::Checkpoint(format!(
                "tensor {i} is {name:?}, expected {slot_name:?}"
            )));
        }
        let ndim = r.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        if shape != expected[i].1 {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {shape:?}, expected {:?}",
                expected[i].1
            )));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let b = r.take(8)?;
            data.push(f64::from_le_bytes(b.try_into().unwrap()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor {name:?} holds non-finite values")));
        }
        slot.data_mut().copy_from_slice(&data);
    }
    if r.pos != r.buf.len() {
        return Err(Error::Checkpoint("trailing bytes".to_string()));
    }
    Ok(Checkpoint {
        params,
        vocab,
        coarse_names,
    })
}
