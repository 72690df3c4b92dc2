//! Weight archives and CIFAR-10 binary batches.
//!
//! Archive layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SCFUSE01"
//! endian     u8       1 = little-endian payload
//! spec       u32 len + UTF-8 model spec text (may be empty)
//! count      u32
//! manifest   count x { u16 len + name, 4 x u32 dims, u8 len + mask id ("" = none) }
//! payload    f32 values of every entry, concatenated in manifest order
//! ```
//!
//! Masked tensors are stored as full k×k grids; masks are regenerated from
//! the id on load and every masked position must hold exactly zero.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::sc_kernels::{check_mask, MaskId};
use crate::tensor::{Shape4, Tensor4};
use crate::train::Dataset;

pub const MAGIC: &[u8; 8] = b"SCFUSE01";
const LITTLE_ENDIAN: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub mask: Option<MaskId>,
    pub value: Tensor4<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightArchive {
    pub spec: String,
    pub entries: Vec<ArchiveEntry>,
}

impl WeightArchive {
    pub fn from_model(model: &Model<f32>) -> Self {
        Self {
            spec: model.spec().to_text(),
            entries: model
                .params()
                .iter()
                .map(|p| ArchiveEntry {
                    name: p.name.clone(),
                    mask: p.mask,
                    value: p.value.clone(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<Model<f32>> {
        let spec = ModelSpec::parse(&self.spec)?;
        let model = Model::from_params(
            &spec,
            self.entries
                .into_iter()
                .map(|e| (e.name, e.value))
                .collect(),
        )?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(
            64 + self
                .entries
                .iter()
                .map(|e| 4 * e.value.len() + 64)
                .sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.push(LITTLE_ENDIAN);
        put_u32(&mut out, self.spec.len(), "spec text")?;
        out.extend_from_slice(self.spec.as_bytes());
        put_u32(&mut out, self.entries.len(), "entry count")?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Malformed(format!("name `{}` too long", e.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            for d in e.value.shape().dims() {
                put_u32(&mut out, d, "dimension")?;
            }
            let mask = e.mask.map(|m| m.to_string()).unwrap_or_default();
            out.push(mask.len() as u8);
            out.extend_from_slice(mask.as_bytes());
        }
        for e in &self.entries {
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic").ok() != Some(MAGIC.as_slice()) {
            return Err(Error::BadMagic);
        }
        let endian = r.take(1, "endianness byte")?[0];
        if endian != LITTLE_ENDIAN {
            return Err(Error::Malformed(format!(
                "unsupported endianness tag {endian}"
            )));
        }
        let spec_len = r.u32("spec length")? as usize;
        let spec = String::from_utf8(r.take(spec_len, "spec text")?.to_vec())
            .map_err(|_| Error::Malformed("spec text is not UTF-8".into()))?;
        let count = r.u32("entry count")? as usize;

        let mut manifest = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(len, "entry name")?.to_vec())
                .map_err(|_| Error::Malformed(format!("entry {i}: name is not UTF-8")))?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("dimension")? as usize;
            }
            let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
            shape
                .checked_numel()
                .filter(|&n| n > 0)
                .ok_or(Error::InvalidShape(dims))?;
            let mlen = r.take(1, "mask id length")?[0] as usize;
            let mask_text = std::str::from_utf8(r.take(mlen, "mask id")?)
                .map_err(|_| Error::Malformed(format!("entry `{name}`: mask id is not UTF-8")))?;
            let mask = if mask_text.is_empty() {
                None
            } else {
                let m: MaskId = mask_text.parse().map_err(|_| {
                    Error::Malformed(format!("entry `{name}`: unknown mask id `{mask_text}`"))
                })?;
                if dims[2] != m.k || dims[3] != m.k {
                    return Err(Error::Malformed(format!(
                        "entry `{name}`: mask {m} does not fit shape {shape}"
                    )));
                }
                Some(m)
            };
            manifest.push((name, shape, mask));
        }

        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape, mask) in manifest {
            let n = shape.numel();
            let raw = r.take(4 * n, &format!("payload of `{name}`"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let value = Tensor4::from_vec(shape, data)?;
            if let Some(m) = mask {
                check_mask(&name, &value, &m.grid()?)?;
            }
            entries.push(ArchiveEntry { name, mask, value });
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { spec, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Malformed(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("{what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn save(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    WeightArchive::from_model(model).save(path)
}

pub fn load(path: impl AsRef<Path>) -> Result<Model<f32>> {
    WeightArchive::load(path)?.into_model()
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Parse CIFAR-10 binary records: one label byte then 3072 channel-planar
/// RGB bytes. Pixels are scaled to `[0, 1]`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::CifarSize(bytes.len()));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor4::from_vec((n, 3, 32, 32), pixels)?, labels)
}

pub fn load_cifar10_batch(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_cifar10(&fs::read(path)?)
}

/// Encode `(n, 3, 32, 32)` images in `[0, 1]` back into CIFAR-10 records.
pub fn encode_cifar10(data: &Dataset) -> Result<Vec<u8>> {
    let s = data.images.shape();
    if (s.c, s.h, s.w) != (3, 32, 32) {
        return Err(Error::ShapeMismatch {
            op: "encode_cifar10",
            expected: Shape4::new(s.n, 3, 32, 32),
            found: s,
        });
    }
    let mut out = Vec::with_capacity(s.n * CIFAR_RECORD);
    for (img, &label) in data.images.data().chunks(3 * 32 * 32).zip(&data.labels) {
        let label = u8::try_from(label).map_err(|_| Error::LabelOutOfRange {
            label,
            classes: 256,
        })?;
        out.push(label);
        out.extend(
            img.iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

/// Stand-in for CIFAR-10 when the real batches are unavailable: ten classes
/// of oriented sinusoidal gratings (five orientations × two spatial
/// frequencies) with random phase, sub-pixel shift, color tint and pixel
/// noise, quantized to CIFAR-10 records. Labels cycle so every class is
/// equally represented in any prefix of length multiple of ten.
pub fn synthetic_cifar10(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * CIFAR_RECORD);
    for i in 0..n {
        let label = i % 10;
        let theta = std::f32::consts::PI * (label % 5) as f32 / 5.0 + rng.random_range(-0.12..0.12);
        let freq = if label < 5 { 0.16 } else { 0.42 } * rng.random_range(0.9..1.1);
        let phase = rng.random_range(0.0..std::f32::consts::TAU);
        let (ct, st) = (theta.cos(), theta.sin());
        let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
        let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.55));
        out.push(label as u8);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let u = ct * x as f32 + st * y as f32;
                    let g = (freq * u * std::f32::consts::TAU / 2.0 + phase).sin();
                    let noise: f32 = rng.random_range(-0.12..0.12);
                    let v = base[c] + 0.35 * tint[c] * g + noise;
                    out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_archive() -> WeightArchive {
        let mask: MaskId = "odd3".parse().unwrap();
        let grid = mask.grid().unwrap();
        let w = Tensor4::from_fn((2, 1, 3, 3), |o, _, r, c| {
            if grid.get(r, c) {
                (o * 9 + r * 3 + c) as f32 + 0.25
            } else {
                0.0
            }
        })
        .unwrap();
        WeightArchive {
            spec: String::new(),
            entries: vec![
                ArchiveEntry {
                    name: "a".into(),
                    mask: None,
                    value: Tensor4::from_vec((1, 1, 1, 3), vec![-0.0, f32::MIN_POSITIVE, 3.5])
                        .unwrap(),
                },
                ArchiveEntry {
                    name: "b".into(),
                    mask: Some(mask),
                    value: w,
                },
            ],
        }
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        let a = sample_archive();
        let b = WeightArchive::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(a.entries.len(), b.entries.len());
        for (x, y) in a.entries.iter().zip(&b.entries) {
            let xb: Vec<u32> = x.value.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
            assert_eq!(x.mask, y.mask);
            assert_eq!(x.name, y.name);
        }
    }

    #[test]
    fn empty_manifest() {
        let a = WeightArchive::default();
        let bytes = a.to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"SCFUSE01");
        assert_eq!(bytes.len(), 8 + 1 + 4 + 4);
        assert_eq!(WeightArchive::from_bytes(&bytes).unwrap(), a);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample_archive().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            WeightArchive::from_bytes(&bad),
            Err(Error::BadMagic)
        ));
        assert!(matches!(
            WeightArchive::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            WeightArchive::from_bytes(&bytes[..3]),
            Err(Error::BadMagic)
        ));

        // Payload of "b" starts after the three floats of "a". Odd mask at k=3
        // excludes (0,0), the first value of output channel 0.
        let payload_b = bytes.len() - 4 * 18;
        let mut bad = bytes.clone();
        bad[payload_b..payload_b + 4].copy_from_slice(&0.5f32.to_le_bytes());
        match WeightArchive::from_bytes(&bad) {
            Err(Error::MaskViolation {
                name,
                out,
                inp,
                row,
                col,
                value,
            }) => {
                assert_eq!((name.as_str(), out, inp, row, col), ("b", 0, 0, 0, 0));
                assert_eq!(value, 0.5);
            }
            other => panic!("expected mask violation, got {other:?}"),
        }
    }

    #[test]
    fn cifar_fixtures() {
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat_n(255u8, 3072));
        let d = parse_cifar10(&rec).unwrap();
        assert_eq!(d.labels, vec![7]);
        assert_eq!(d.images.shape(), Shape4::new(1, 3, 32, 32));
        assert!(d.images.data().iter().all(|&v| v == 1.0));

        let mut two = vec![3u8];
        two.extend(std::iter::repeat_n(0u8, 3072));
        two.push(9);
        two.extend((0..3072).map(|i| (i % 256) as u8));
        let d = parse_cifar10(&two).unwrap();
        assert_eq!(d.labels, vec![3, 9]);
        assert_eq!(d.images.get(1, 0, 0, 5), 5.0 / 255.0);
        assert_eq!(d.images.get(0, 2, 31, 31), 0.0);

        assert!(matches!(parse_cifar10(&[]), Err(Error::CifarSize(0))));
        assert!(matches!(
            parse_cifar10(&two[..3074]),
            Err(Error::CifarSize(3074))
        ));
    }

    #[test]
    fn synthetic_data_is_deterministic_and_balanced() {
        let a = synthetic_cifar10(30, 1);
        assert_eq!(a, synthetic_cifar10(30, 1));
        assert_ne!(a, synthetic_cifar10(30, 2));
        let d = parse_cifar10(&a).unwrap();
        for c in 0..10 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 3);
        }
        assert_eq!(encode_cifar10(&d).unwrap(), a);
    }
}
