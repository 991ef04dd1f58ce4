//! The BUQM model file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  0x42 0x55 0x51 0x4D ("BUQM")
//! version u32      1
//! layers  u32      layer count
//! per layer:
//!   tag   u8       layer kind
//!   dims  u32...   kind-specific (see below)
//!   data  f32...   weights then bias, row-major, only for dense/conv
//! ```
//!
//! Kind tags and dims:
//!
//! | tag | kind          | dims                                   |
//! |-----|---------------|----------------------------------------|
//! | 1   | dense         | input, output                          |
//! | 2   | conv2d        | in_channels, out_channels, kernel, stride |
//! | 3   | maxpool2d     | kernel, stride                         |
//! | 4   | relu          | —                                      |
//! | 5   | dropout       | f32 bit pattern of the probability     |
//! | 6   | flatten       | —                                      |
//! | 7   | globalavgpool | —                                      |
//! | 8   | softmax       | —                                      |
//!
//! Weights round-trip bit-exactly. Architecture id and training seed are
//! not part of the format; ensemble manifests carry them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::net::LayerWb;
use crate::nn::{LayerSpec, ModelParams};

pub(crate) const MAGIC: [u8; 4] = *b"BUQM";
pub(crate) const VERSION: u32 = 1;

fn tag_of(layer: &LayerSpec) -> u8 {
    match layer {
        LayerSpec::Dense { .. } => 1,
        LayerSpec::Conv2d { .. } => 2,
        LayerSpec::MaxPool2d { .. } => 3,
        LayerSpec::Relu => 4,
        LayerSpec::Dropout { .. } => 5,
        LayerSpec::Flatten => 6,
        LayerSpec::GlobalAvgPool => 7,
        LayerSpec::Softmax => 8,
    }
}

pub(crate) fn save(model: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.layers().len() as u32).to_le_bytes())?;
    for (layer, wb) in model.layers().iter().zip(model.wb()) {
        w.write_all(&[tag_of(layer)])?;
        match *layer {
            LayerSpec::Dense { input, output } => {
                w.write_all(&(input as u32).to_le_bytes())?;
                w.write_all(&(output as u32).to_le_bytes())?;
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                for dim in [in_channels, out_channels, kernel, stride] {
                    w.write_all(&(dim as u32).to_le_bytes())?;
                }
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                w.write_all(&(kernel as u32).to_le_bytes())?;
                w.write_all(&(stride as u32).to_le_bytes())?;
            }
            LayerSpec::Dropout { p } => {
                w.write_all(&p.to_bits().to_le_bytes())?;
            }
            LayerSpec::Relu | LayerSpec::Flatten | LayerSpec::GlobalAvgPool | LayerSpec::Softmax => {}
        }
        for &v in wb.w.iter().chain(wb.b.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated: wanted {n} bytes, {} remain",
                self.bytes.len() - self.offset
            )));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(4 * n)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub(crate) fn load(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
        path,
    };
    if cur.take(4)? != MAGIC {
        cur.offset = 0;
        return Err(cur.fail("bad magic, not a BUQM file"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(cur.fail(format!("unsupported version {version}")));
    }
    let n_layers = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    let mut wb = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = cur.u8()?;
        let (layer, tensors) = match tag {
            1 => {
                let input = cur.u32()? as usize;
                let output = cur.u32()? as usize;
                let w = cur.f32s(input * output)?;
                let b = cur.f32s(output)?;
                (LayerSpec::Dense { input, output }, LayerWb { w, b })
            }
            2 => {
                let in_channels = cur.u32()? as usize;
                let out_channels = cur.u32()? as usize;
                let kernel = cur.u32()? as usize;
                let stride = cur.u32()? as usize;
                let w = cur.f32s(out_channels * in_channels * kernel * kernel)?;
                let b = cur.f32s(out_channels)?;
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                    },
                    LayerWb { w, b },
                )
            }
            3 => {
                let kernel = cur.u32()? as usize;
                let stride = cur.u32()? as usize;
                (LayerSpec::MaxPool2d { kernel, stride }, LayerWb::empty())
            }
            4 => (LayerSpec::Relu, LayerWb::empty()),
            5 => {
                let p = f32::from_bits(cur.u32()?);
                (LayerSpec::Dropout { p }, LayerWb::empty())
            }
            6 => (LayerSpec::Flatten, LayerWb::empty()),
            7 => (LayerSpec::GlobalAvgPool, LayerWb::empty()),
            8 => (LayerSpec::Softmax, LayerWb::empty()),
            other => return Err(cur.fail(format!("unknown layer tag {other}"))),
        };
        layers.push(layer);
        wb.push(tensors);
    }
    if cur.offset != bytes.len() {
        return Err(cur.fail(format!(
            "{} trailing bytes after last layer",
            bytes.len() - cur.offset
        )));
    }
    Ok(ModelParams::from_parts(String::new(), 0, layers, wb))
}

#[cfg(test)]
mod tests {
    use crate::nn::{cnn_arch, dense_arch, DropoutMode, ModelParams};
    use crate::tensor::TensorF32;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (name, arch) in [
            ("dense", dense_arch(16, 4, 0.25)),
            ("cnn", cnn_arch(1, 3, 0.1)),
        ] {
            let model = ModelParams::init(&arch, 99);
            let path = dir.path().join(format!("{name}.buqm"));
            model.save(&path).unwrap();
            let loaded = ModelParams::load(&path).unwrap();
            assert_eq!(model.layers(), loaded.layers());
            assert_eq!(model.wb(), loaded.wb());

            // saving the loaded model reproduces the file byte for byte
            let path2 = dir.path().join(format!("{name}2.buqm"));
            loaded.save(&path2).unwrap();
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&path2).unwrap()
            );
        }
    }

    #[test]
    fn forward_after_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let arch = dense_arch(8, 3, 0.2);
        let model = ModelParams::init(&arch, 4);
        let x = TensorF32::new(vec![8], (0..8).map(|i| i as f32 / 8.0).collect());
        let before = model.forward(&x, DropoutMode::Off).unwrap();
        let path = dir.path().join("m.buqm");
        model.save(&path).unwrap();
        let loaded = ModelParams::load(&path).unwrap();
        let after = loaded.forward(&x, DropoutMode::Off).unwrap();
        assert_eq!(before.as_slice(), after.as_slice());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.buqm");
        std::fs::write(&path, b"NOPE").unwrap();
        match ModelParams::load(&path) {
            Err(crate::error::Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let arch = dense_arch(8, 3, 0.0);
        let model = ModelParams::init(&arch, 4);
        let path = dir.path().join("full.buqm");
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.buqm");
        std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
        match ModelParams::load(&cut) {
            Err(crate::error::Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
