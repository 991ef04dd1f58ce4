//! Binary 8-bit PGM export for visual inspection of images and heatmaps.

use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::Result;

/// Encodes a grayscale buffer as binary PGM (P5, maxval 255).
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count mismatch");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    std::fs::write(path, pgm_bytes(width, height, pixels))?;
    Ok(())
}

/// Image `i` quantized to 8 bits.
pub fn image_to_u8(ds: &LabeledDataset, i: usize) -> Vec<u8> {
    ds.image(i)
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload() {
        let bytes = pgm_bytes(2, 3, &[0, 50, 100, 150, 200, 250]);
        assert!(bytes.starts_with(b"P5\n2 3\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 50, 100, 150, 200, 250]);
    }

    #[test]
    fn quantization_rounds() {
        let ds = LabeledDataset::new(
            "q".into(),
            0.0,
            1,
            3,
            vec![0.0, 0.5, 1.0],
            vec![0],
            1,
        )
        .unwrap();
        assert_eq!(image_to_u8(&ds, 0), vec![0, 128, 255]);
    }
}
