use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Architecture, Block, BlockMask, DenseLayer, NetworkModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"LAMOPTNN";
pub const MODEL_VERSION: u32 = 1;

// Layout (little-endian): magic, version u32, architecture u8,
// latent_dim_max u32, grid flag u8 + nx u32 + ny u32, trainable mask 3 × u8,
// then encoder / ff / decoder blocks, each as present u8, layer count u32,
// dims (count + 1) × u32, activations count × u8, params × f64.

fn write_block<W: Write>(w: &mut W, block: Option<&Block>) -> io::Result<()> {
    let Some(b) = block else {
        return w.write_all(&[0]);
    };
    w.write_all(&[1])?;
    w.write_all(&(b.layers.len() as u32).to_le_bytes())?;
    for d in b.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for l in &b.layers {
        w.write_all(&[l.activation.code()])?;
    }
    for p in &b.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

impl NetworkModel {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&[self.architecture.code()])?;
        w.write_all(&(self.latent_dim_max as u32).to_le_bytes())?;
        let (flag, (nx, ny)) = match self.grid {
            Some(g) => (1u8, g),
            None => (0u8, (0, 0)),
        };
        w.write_all(&[flag])?;
        w.write_all(&nx.to_le_bytes())?;
        w.write_all(&ny.to_le_bytes())?;
        let m = self.trainable;
        w.write_all(&[m.encoder as u8, m.ff as u8, m.decoder as u8])?;
        write_block(&mut w, self.encoder.as_ref())?;
        write_block(&mut w, self.ff.as_ref())?;
        write_block(&mut w, Some(&self.decoder))?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::CorruptMagic);
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: MODEL_VERSION });
        }
        let architecture = Architecture::from_code(read_u8(&mut r)?)?;
        let latent_dim_max = read_u32(&mut r)? as usize;
        let has_grid = read_u8(&mut r)? != 0;
        let (nx, ny) = (read_u32(&mut r)?, read_u32(&mut r)?);
        let mut mask = [0u8; 3];
        read_exact(&mut r, &mut mask)?;
        let encoder = read_block(&mut r)?;
        let ff = read_block(&mut r)?;
        let decoder = read_block(&mut r)?.ok_or_else(|| Error::Corrupt("model has no decoder".into()))?;
        if encoder.is_some() != architecture.has_encoder() || ff.is_some() != architecture.has_ff() {
            return Err(Error::Corrupt(format!("blocks do not match architecture {architecture}")));
        }
        let latent = decoder.in_dim();
        let chains = encoder.as_ref().is_none_or(|e| e.out_dim() == latent && e.in_dim() == decoder.out_dim())
            && ff.as_ref().is_none_or(|f| f.out_dim() == latent && f.in_dim() == 2);
        if !chains {
            return Err(Error::Corrupt("block dimensions do not chain".into()));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after model".into()));
        }
        Ok(Self {
            architecture,
            encoder,
            ff,
            decoder,
            latent_dim_max,
            trainable: BlockMask { encoder: mask[0] != 0, ff: mask[1] != 0, decoder: mask[2] != 0 },
            grid: has_grid.then_some((nx, ny)),
        })
    }
}

fn read_block<R: Read>(r: &mut R) -> Result<Option<Block>> {
    if read_u8(r)? == 0 {
        return Ok(None);
    }
    let n_layers = read_u32(r)? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Corrupt(format!("implausible layer count {n_layers}")));
    }
    let dims = (0..=n_layers).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let acts = (0..n_layers).map(|_| read_u8(r).and_then(Activation::from_code)).collect::<Result<Vec<_>>>()?;
    let mut block = Block::new(&dims, &acts).map_err(|e| Error::Corrupt(e.to_string()))?;
    let mut bytes = vec![0u8; 8 * block.params.len()];
    read_exact(r, &mut bytes)?;
    for (p, c) in block.params.iter_mut().zip(bytes.chunks_exact(8)) {
        *p = f64::from_le_bytes(c.try_into().unwrap());
    }
    debug_assert!(block.layers.iter().all(|l: &DenseLayer| l.out_dim > 0));
    Ok(Some(block))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedPayload,
        _ => Error::Io(e),
    })
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_model(path: impl AsRef<Path>, model: &NetworkModel) -> Result<()> {
    model.write_to(BufWriter::new(File::create(path)?))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    NetworkModel::read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_all_architectures() {
        for arch in Architecture::ALL {
            let mut m = NetworkModel::new(arch, &NetworkDims::scaled(96)).unwrap();
            m.init_kaiming_uniform(&mut ChaCha8Rng::seed_from_u64(arch.code() as u64));
            m.grid = Some((12, 8));
            let mut buf = Vec::new();
            m.write_to(&mut buf).unwrap();
            let back = NetworkModel::read_from(buf.as_slice()).unwrap();
            assert_eq!(back, m);
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            assert_eq!(again, buf);
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = NetworkModel::new(Architecture::Ffd, &NetworkDims::scaled(32)).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[3] ^= 0xff;
        assert!(matches!(NetworkModel::read_from(bad.as_slice()), Err(Error::CorruptMagic)));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(NetworkModel::read_from(bad.as_slice()), Err(Error::VersionMismatch { found: 9, .. })));
        assert!(matches!(NetworkModel::read_from(&buf[..buf.len() - 1]), Err(Error::TruncatedPayload)));
    }
}
