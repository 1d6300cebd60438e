//! Binary weight file for the feature network.
//!
//! Layout (all integers `u32`, all scalars `f32`, little-endian):
//!
//! ```text
//! "NSTW" | version = 1 | layer_count
//! per layer: name_len | name (UTF-8) | out | in | kh | kw
//!            | kernel[out * in * kh * kw] | bias[out]
//! ```
//!
//! Kernels are stored in cross-correlation orientation, indexed
//! `[out][in][ky][kx]`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result, WeightError};

pub const MAGIC: [u8; 4] = *b"NSTW";
pub const VERSION: u32 = 1;

/// Parameters of one convolution layer as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn validate(&self) -> Result<(), WeightError> {
        let bad = |reason: String| WeightError::InvalidShape {
            name: self.name.clone(),
            reason,
        };
        let expected = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if expected == 0 {
            return Err(bad("zero-sized dimension".into()));
        }
        if self.kernel.len() != expected {
            return Err(bad(format!(
                "kernel has {} scalars, header implies {expected}",
                self.kernel.len()
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(bad(format!(
                "bias has {} scalars, expected {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }
}

pub fn encode_weights(layers: &[ConvParams]) -> Result<Vec<u8>, WeightError> {
    check_unique(layers)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        layer.validate()?;
        out.extend_from_slice(&(layer.name.len() as u32).to_le_bytes());
        out.extend_from_slice(layer.name.as_bytes());
        for dim in [
            layer.out_channels,
            layer.in_channels,
            layer.kernel_h,
            layer.kernel_w,
        ] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in layer.kernel.iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn check_unique(layers: &[ConvParams]) -> Result<(), WeightError> {
    let mut seen = HashSet::new();
    for layer in layers {
        if !seen.insert(layer.name.as_str()) {
            return Err(WeightError::DuplicateLayer(layer.name.clone()));
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WeightError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(WeightError::LengthMismatch(format!(
                "file ends at byte {} while reading {what} ({n} bytes needed at offset {})",
                self.bytes.len(),
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, WeightError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, WeightError> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| WeightError::LengthMismatch(format!("{what} count overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<ConvParams>, WeightError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(WeightError::BadMagic([
            magic[0], magic[1], magic[2], magic[3],
        ]));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(WeightError::VersionMismatch(version));
    }
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "layer name")?)
            .map_err(|_| WeightError::InvalidName)?
            .to_owned();
        let out_channels = r.u32("out_channels")? as usize;
        let in_channels = r.u32("in_channels")? as usize;
        let kernel_h = r.u32("kernel_h")? as usize;
        let kernel_w = r.u32("kernel_w")? as usize;
        let n = out_channels
            .checked_mul(in_channels)
            .and_then(|v| v.checked_mul(kernel_h))
            .and_then(|v| v.checked_mul(kernel_w))
            .ok_or_else(|| WeightError::LengthMismatch(format!("kernel of `{name}` overflows")))?;
        let kernel = r.f32s(n, "kernel")?;
        let bias = r.f32s(out_channels, "bias")?;
        let layer = ConvParams {
            name,
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            kernel,
            bias,
        };
        layer.validate()?;
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(WeightError::LengthMismatch(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - r.pos
        )));
    }
    check_unique(&layers)?;
    Ok(layers)
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<ConvParams>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(decode_weights(&bytes)?)
}

pub fn write_weights(path: impl AsRef<Path>, layers: &[ConvParams]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_weights(layers)?;
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// FNV-1a over the little-endian bytes of every kernel and bias scalar.
pub fn checksum(layer: &ConvParams) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in layer.kernel.iter().chain(&layer.bias) {
        for b in v.to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_layer() -> ConvParams {
        ConvParams {
            name: "conv1_1".into(),
            out_channels: 1,
            in_channels: 1,
            kernel_h: 1,
            kernel_w: 1,
            kernel: vec![2.0],
            bias: vec![0.5],
        }
    }

    #[test]
    fn minimal_file_layout() {
        let bytes = encode_weights(&[unit_layer()]).unwrap();
        let mut expected = b"NSTW".to_vec();
        for v in [1u32, 1, 7] {
            expected.extend(v.to_le_bytes());
        }
        expected.extend(b"conv1_1");
        for v in [1u32, 1, 1, 1] {
            expected.extend(v.to_le_bytes());
        }
        expected.extend(2.0f32.to_le_bytes());
        expected.extend(0.5f32.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode_weights(&bytes).unwrap(), vec![unit_layer()]);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encode_weights(&[unit_layer()]).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_weights(&bytes), Err(WeightError::BadMagic(*b"XXXX")));
    }

    #[test]
    fn rejects_version_and_length_errors() {
        let good = encode_weights(&[unit_layer()]).unwrap();

        let mut v2 = good.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert_eq!(decode_weights(&v2), Err(WeightError::VersionMismatch(2)));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(
            decode_weights(truncated),
            Err(WeightError::LengthMismatch(_))
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            decode_weights(&trailing),
            Err(WeightError::LengthMismatch(_))
        ));
    }

    #[test]
    fn rejects_duplicates() {
        let layers = vec![unit_layer(), unit_layer()];
        assert!(matches!(
            encode_weights(&layers),
            Err(WeightError::DuplicateLayer(_))
        ));
        // Build the duplicate file by hand to exercise the decoder check.
        let one = encode_weights(&[unit_layer()]).unwrap();
        let mut two = one[..8].to_vec();
        two.extend(2u32.to_le_bytes());
        two.extend(&one[12..]);
        two.extend(&one[12..]);
        assert_eq!(
            decode_weights(&two),
            Err(WeightError::DuplicateLayer("conv1_1".into()))
        );
    }

    fn arb_layer() -> impl Strategy<Value = ConvParams> {
        (
            "[a-z][a-z0-9_]{0,8}",
            1usize..4,
            1usize..4,
            1usize..4,
            1usize..4,
        )
            .prop_flat_map(|(name, o, i, kh, kw)| {
                (
                    prop::collection::vec(any::<f32>(), o * i * kh * kw),
                    prop::collection::vec(any::<f32>(), o),
                )
                    .prop_map(move |(kernel, bias)| ConvParams {
                        name: name.clone(),
                        out_channels: o,
                        in_channels: i,
                        kernel_h: kh,
                        kernel_w: kw,
                        kernel,
                        bias,
                    })
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(layers in prop::collection::vec(arb_layer(), 0..4)) {
            let mut seen = HashSet::new();
            let layers: Vec<_> = layers.into_iter().filter(|l| seen.insert(l.name.clone())).collect();
            let decoded = decode_weights(&encode_weights(&layers).unwrap()).unwrap();
            prop_assert_eq!(decoded.len(), layers.len());
            for (a, b) in decoded.iter().zip(&layers) {
                prop_assert_eq!(&a.name, &b.name);
                let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&a.kernel), bits(&b.kernel));
                prop_assert_eq!(bits(&a.bias), bits(&b.bias));
            }
        }
    }
}
