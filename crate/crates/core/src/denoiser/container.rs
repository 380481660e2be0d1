//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! | field            | type                                    |
//! |------------------|-----------------------------------------|
//! | magic            | `b"UPSR"`                               |
//! | version          | `u32` (= 1)                             |
//! | role             | `u8` (0 denoiser, 1 predictor)          |
//! | residual base    | `u8` (0 `x_t`, 1 `y0`, 2 `g(y0)`)       |
//! | image channels   | `u32`                                   |
//! | unshuffle factor | `u32`                                   |
//! | timestep rows    | `u32`                                   |
//! | leaky slope      | `f32`                                   |
//! | layer count      | `u32`                                   |
//! | per layer        | `u32` in, `u32` out, `u32` kernel, `u8` activation |
//! | parameter count  | `u64`                                   |
//! | parameters       | `f32` × count                           |
//! | checksum         | `u32` CRC-32 of every preceding byte    |

use std::path::Path;

use super::net::{Activation, LayerSpec, ResidualBase, Role, TinyNetModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UPSR";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_model(model: &TinyNetModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut buf = Vec::with_capacity(64 + model.params.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(model.role.tag());
    buf.push(model.residual.tag());
    for v in [model.image_channels, model.unshuffle, model.steps] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&model.leaky_slope.to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        for v in [l.in_channels, l.out_channels, l.kernel] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.push(l.activation.tag());
    }
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Decodes a container; `path` is only used for error messages.
///
/// Checks run in order: magic, version, checksum, then structure. A
/// truncated file therefore fails the checksum rather than the parser.
pub fn decode_model(bytes: &[u8], path: &Path) -> Result<TinyNetModel> {
    let path_buf = || path.to_path_buf();
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path_buf() });
    }
    if bytes.len() < 8 + 4 {
        return Err(Error::Checksum { path: path_buf() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checksum { path: path_buf() });
    }

    let malformed = |reason: &str| Error::MalformedModel {
        path: path_buf(),
        reason: reason.to_string(),
    };
    let mut r = Reader {
        bytes: body,
        pos: 8,
    };
    let role = r
        .u8()
        .and_then(Role::from_tag)
        .ok_or_else(|| malformed("unknown role tag"))?;
    let residual = r
        .u8()
        .and_then(ResidualBase::from_tag)
        .ok_or_else(|| malformed("unknown residual base tag"))?;
    let header = (|| Some((r.u32()?, r.u32()?, r.u32()?, r.f32()?, r.u32()?)))();
    let (image_channels, unshuffle, steps, leaky_slope, n_layers) =
        header.ok_or_else(|| malformed("header cut short"))?;
    let mut layers = Vec::with_capacity(n_layers.min(64) as usize);
    for _ in 0..n_layers {
        let l = (|| {
            let (i, o, k) = (r.u32()?, r.u32()?, r.u32()?);
            let act = Activation::from_tag(r.u8()?)?;
            Some(LayerSpec {
                in_channels: i as usize,
                out_channels: o as usize,
                kernel: k as usize,
                activation: act,
            })
        })()
        .ok_or_else(|| malformed("bad layer record"))?;
        layers.push(l);
    }
    let count = r
        .u64()
        .ok_or_else(|| malformed("missing parameter count"))? as usize;
    if body.len() - r.pos != count * 4 {
        return Err(malformed("parameter block length disagrees with count"));
    }
    let params: Vec<f32> = body[r.pos..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let model = TinyNetModel {
        role,
        image_channels: image_channels as usize,
        unshuffle: unshuffle as usize,
        steps: steps as usize,
        leaky_slope,
        residual,
        layers,
        params,
    };
    model.validate().map_err(|e| malformed(&e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &TinyNetModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TinyNetModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::net::ArchConfig;
    use crate::rng::RngState;

    fn sample_model() -> TinyNetModel {
        let arch = ArchConfig {
            hidden: 6,
            ..ArchConfig::default()
        };
        TinyNetModel::init(Role::Denoiser, &arch, 5, &mut RngState::new(3)).unwrap()
    }

    #[test]
    fn save_load_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.upsr");
        let m = sample_model();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let a: Vec<u32> = m.params.iter().map(|p| p.to_bits()).collect();
        let b: Vec<u32> = back.params.iter().map(|p| p.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let bytes = encode_model(&sample_model()).unwrap();
        let p = Path::new("cut.upsr");
        for cut in [9, 20, bytes.len() / 2, bytes.len() - 1] {
            match decode_model(&bytes[..cut], p) {
                Err(Error::Checksum { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn flipped_bit_is_a_checksum_error() {
        let mut bytes = encode_model(&sample_model()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(
            decode_model(&bytes, Path::new("x")),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn wrong_magic_names_the_path() {
        let mut bytes = encode_model(&sample_model()).unwrap();
        bytes[0] = b'X';
        let err = decode_model(&bytes, Path::new("/tmp/foo.bin")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("/tmp/foo.bin"));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let mut bytes = encode_model(&sample_model()).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = decode_model(&bytes, Path::new("v")).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 2, .. }));
    }
}
