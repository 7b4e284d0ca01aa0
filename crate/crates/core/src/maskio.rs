//! PNG/JPEG persistence for images and masks.
//!
//! Semantic masks are written as 8-bit palette PNGs whose pixel values are
//! the class indices themselves, which is what VOC tooling reads.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

use crate::taxonomy::ClassTaxonomy;
use crate::types::{RgbImage, SemanticMask};

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("encode failure: {0}")]
    EncodeFailure(String),
    #[error("decode failure: {0}")]
    DecodeFailure(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn encode_png(
    width: u32,
    height: u32,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<Vec<u8>, MaskIoError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Default);
        if let Some(palette) = palette {
            encoder.set_palette(palette);
        }
        let mut writer = encoder
            .write_header()
            .map_err(|e| MaskIoError::EncodeFailure(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| MaskIoError::EncodeFailure(e.to_string()))?;
    }
    Ok(out)
}

struct RawPng {
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn decode_png_raw(bytes: &[u8]) -> Result<RawPng, MaskIoError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| MaskIoError::DecodeFailure(e.to_string()))?;
    let mut data = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut data)
        .map_err(|e| MaskIoError::DecodeFailure(e.to_string()))?;
    data.truncate(frame.buffer_size());
    Ok(RawPng {
        width: frame.width,
        height: frame.height,
        color: frame.color_type,
        depth: frame.bit_depth,
        data,
    })
}

/// Palette PNG whose indices are the mask labels.
pub fn encode_mask(mask: &SemanticMask, taxonomy: &ClassTaxonomy) -> Result<Vec<u8>, MaskIoError> {
    if mask.data().len() != mask.width() as usize * mask.height() as usize {
        return Err(MaskIoError::EncodeFailure("inconsistent mask dimensions".into()));
    }
    if let Some(bad) = mask.data().iter().find(|&&v| !taxonomy.is_valid_label(v)) {
        return Err(MaskIoError::EncodeFailure(format!(
            "label {bad} is neither background, ignore, nor a class id (max {})",
            taxonomy.max_id()
        )));
    }
    let palette = taxonomy.palette().into_iter().flatten().collect();
    encode_png(
        mask.width(),
        mask.height(),
        png::ColorType::Indexed,
        Some(palette),
        mask.data(),
    )
}

/// Reads the raw index map of an 8-bit palette PNG.
pub fn decode_mask(bytes: &[u8]) -> Result<SemanticMask, MaskIoError> {
    let raw = decode_png_raw(bytes)?;
    if raw.color != png::ColorType::Indexed {
        return Err(MaskIoError::DecodeFailure(format!(
            "expected a palette PNG, found {:?}",
            raw.color
        )));
    }
    if raw.depth != png::BitDepth::Eight {
        return Err(MaskIoError::DecodeFailure(format!(
            "expected 8-bit indices, found {:?}",
            raw.depth
        )));
    }
    SemanticMask::new(raw.width, raw.height, raw.data)
        .map_err(|e| MaskIoError::DecodeFailure(e.to_string()))
}

/// Single-channel 8-bit PNG (the segmenter's per-box binary masks).
pub fn encode_gray(width: u32, height: u32, data: &[u8]) -> Result<Vec<u8>, MaskIoError> {
    if data.len() != width as usize * height as usize || width == 0 || height == 0 {
        return Err(MaskIoError::EncodeFailure("inconsistent gray dimensions".into()));
    }
    encode_png(width, height, png::ColorType::Grayscale, None, data)
}

pub fn decode_gray(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), MaskIoError> {
    let raw = decode_png_raw(bytes)?;
    if raw.color != png::ColorType::Grayscale || raw.depth != png::BitDepth::Eight {
        return Err(MaskIoError::DecodeFailure(format!(
            "expected 8-bit grayscale PNG, found {:?}/{:?}",
            raw.color, raw.depth
        )));
    }
    Ok((raw.width, raw.height, raw.data))
}

pub fn encode_rgb_png(image: &RgbImage) -> Result<Vec<u8>, MaskIoError> {
    encode_png(
        image.width(),
        image.height(),
        png::ColorType::Rgb,
        None,
        image.data(),
    )
}

pub fn encode_rgb_jpeg(image: &RgbImage, quality: u8) -> Result<Vec<u8>, MaskIoError> {
    let mut out = Vec::new();
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
    image::ImageEncoder::write_image(
        encoder,
        image.data(),
        image.width(),
        image.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| MaskIoError::EncodeFailure(e.to_string()))?;
    Ok(out)
}

/// Decodes PNG or JPEG bytes into RGB, dropping any alpha channel.
pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, MaskIoError> {
    let decoded =
        image::load_from_memory(bytes).map_err(|e| MaskIoError::DecodeFailure(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::new(w, h, rgb.into_raw()).map_err(|e| MaskIoError::DecodeFailure(e.to_string()))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, MaskIoError> {
    std::fs::read(path).map_err(|source| MaskIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), MaskIoError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| MaskIoError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| MaskIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, MaskIoError> {
    decode_rgb(&read_bytes(path)?)
}

pub fn read_mask(path: &Path) -> Result<SemanticMask, MaskIoError> {
    decode_mask(&read_bytes(path)?)
}

pub fn write_mask(path: &Path, mask: &SemanticMask, taxonomy: &ClassTaxonomy) -> Result<(), MaskIoError> {
    write_bytes(path, &encode_mask(mask, taxonomy)?)
}

pub fn write_rgb_png(path: &Path, image: &RgbImage) -> Result<(), MaskIoError> {
    write_bytes(path, &encode_rgb_png(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn voc() -> ClassTaxonomy {
        ClassTaxonomy::pascal_voc()
    }

    #[test]
    fn all_zero_round_trip() {
        let mask = SemanticMask::background(4, 4).unwrap();
        let bytes = encode_mask(&mask, &voc()).unwrap();
        assert_eq!(decode_mask(&bytes).unwrap(), mask);
    }

    #[test]
    fn out_of_taxonomy_label_is_rejected() {
        let mask = SemanticMask::new(2, 1, vec![0, 21]).unwrap();
        assert!(matches!(
            encode_mask(&mask, &voc()),
            Err(MaskIoError::EncodeFailure(_))
        ));
    }

    #[test]
    fn truncated_stream_fails() {
        let mask = SemanticMask::new(3, 3, vec![0, 1, 2, 3, 4, 5, 255, 0, 1]).unwrap();
        let bytes = encode_mask(&mask, &voc()).unwrap();
        assert!(matches!(
            decode_mask(&bytes[..bytes.len() / 2]),
            Err(MaskIoError::DecodeFailure(_))
        ));
        assert!(matches!(decode_mask(b"not a png"), Err(MaskIoError::DecodeFailure(_))));
    }

    #[test]
    fn truecolor_is_not_a_mask() {
        let img = RgbImage::filled(3, 2, [10, 20, 30]).unwrap();
        let bytes = encode_rgb_png(&img).unwrap();
        assert!(matches!(decode_mask(&bytes), Err(MaskIoError::DecodeFailure(_))));
        assert_eq!(decode_rgb(&bytes).unwrap(), img);
    }

    #[test]
    fn palette_colours_follow_taxonomy() {
        let mask = SemanticMask::new(3, 1, vec![0, 1, 255]).unwrap();
        let bytes = encode_mask(&mask, &voc()).unwrap();
        // A generic decoder expanding the palette sees the VOC colours.
        let rgb = decode_rgb(&bytes).unwrap();
        assert_eq!(rgb.pixel(0, 0), [0, 0, 0]);
        assert_eq!(rgb.pixel(1, 0), [128, 0, 0]);
        assert_eq!(rgb.pixel(2, 0), [224, 224, 192]);
    }

    #[test]
    fn gray_round_trip() {
        let data = vec![0, 255, 255, 0, 7, 9];
        let bytes = encode_gray(3, 2, &data).unwrap();
        assert_eq!(decode_gray(&bytes).unwrap(), (3, 2, data));
    }

    proptest! {
        #[test]
        fn mask_round_trip_is_lossless(
            w in 1u32..24,
            h in 1u32..24,
            seed in any::<u64>(),
        ) {
            let tax = voc();
            let mut state = seed;
            let data: Vec<u8> = (0..w * h)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let r = (state >> 33) as u8 % 22;
                    if r == 21 { 255 } else { r }
                })
                .collect();
            let mask = SemanticMask::new(w, h, data).unwrap();
            let bytes = encode_mask(&mask, &tax).unwrap();
            prop_assert_eq!(decode_mask(&bytes).unwrap(), mask);
        }
    }
}
