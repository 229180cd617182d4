//! PNG input/output and the versioned cloud state digest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CloudState, TargetImage};

pub const STATE_DIGEST_FORMAT: &str = "splatlab-state-digest";
pub const STATE_DIGEST_VERSION: u32 = 1;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn decode<R: std::io::BufRead + std::io::Seek>(reader: R) -> Result<TargetImage> {
    let mut decoder = Decoder::new(reader);
    decoder.set_transformations(Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(Error::Png("unexpanded palette image".into())),
    };
    let mut rgb = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            // Alpha, if present, is ignored.
            let c = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            rgb.extend(c.iter().map(|&v| v as f64 / 255.0));
        }
    }
    TargetImage::new(w, h, rgb)
}

/// Load an 8- or 16-bit PNG as RGB in `[0, 1]` (`value / 255` after 8-bit normalization).
pub fn read_png(path: &Path) -> Result<TargetImage> {
    decode(BufReader::new(File::open(path)?))
}

pub fn decode_png(bytes: &[u8]) -> Result<TargetImage> {
    decode(Cursor::new(bytes))
}

/// `round_half_up(clamp(v, 0, 1)·255)`.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn encode<W: Write>(out: W, rgb: &[f64], width: usize, height: usize) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::InvalidInput(format!(
            "{} values do not form a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    let mut enc = Encoder::new(out, width as u32, height as u32);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    let bytes: Vec<u8> = rgb.iter().map(|&v| to_u8(v)).collect();
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

pub fn encode_png(rgb: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode(&mut out, rgb, width, height)?;
    Ok(out)
}

pub fn write_png(path: &Path, rgb: &[f64], width: usize, height: usize) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    encode(file, rgb, width, height)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Compact, versioned fingerprint of a cloud.
///
/// `sha256` covers, for each Gaussian in array order, the little-endian f64
/// bytes of `field_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDigest {
    pub format: String,
    pub version: u32,
    pub step: usize,
    pub n: usize,
    pub s: f64,
    pub field_order: Vec<String>,
    pub sha256: String,
}

pub const DIGEST_FIELDS: [&str; 10] = [
    "pos.x",
    "pos.y",
    "log_scale.0",
    "log_scale.1",
    "rot",
    "color.r",
    "color.g",
    "color.b",
    "opacity_logit",
    "depth",
];

pub fn state_digest(cloud: &CloudState, step: usize, s: f64) -> StateDigest {
    let mut hasher = Sha256::new();
    for g in &cloud.gaussians {
        for v in g.params() {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(g.depth.to_le_bytes());
    }
    StateDigest {
        format: STATE_DIGEST_FORMAT.into(),
        version: STATE_DIGEST_VERSION,
        step,
        n: cloud.len(),
        s,
        field_order: DIGEST_FIELDS.iter().map(|f| f.to_string()).collect(),
        sha256: hex(&hasher.finalize()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gaussian2D;

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(to_u8(0.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(0.5), 128);
        assert_eq!(to_u8(1.5 / 255.0), 2);
        assert_eq!(to_u8(-3.0), 0);
        assert_eq!(to_u8(7.0), 255);
    }

    #[test]
    fn png_roundtrip_of_8bit_values() {
        let (w, h) = (5, 3);
        let rgb: Vec<f64> = (0..3 * w * h).map(|i| ((i * 17) % 256) as f64 / 255.0).collect();
        let bytes = encode_png(&rgb, w, h).unwrap();
        let back = decode_png(&bytes).unwrap();
        assert_eq!((back.width, back.height), (w, h));
        assert_eq!(back.rgb, rgb);
        assert!(decode_png(b"not a png").is_err());
        assert!(encode_png(&rgb[1..], w, h).is_err());
    }

    #[test]
    fn digest_tracks_parameters() {
        let g = Gaussian2D::isotropic([1.0, 2.0], 0.1, [0.0; 3], 0.0, 0.3);
        let a = CloudState::new(vec![g.clone()]);
        let mut b = a.clone();
        assert_eq!(state_digest(&a, 5, 0.3), state_digest(&b, 5, 0.3));
        b.gaussians[0].rot = 1e-12;
        assert_ne!(state_digest(&a, 5, 0.3).sha256, state_digest(&b, 5, 0.3).sha256);
        assert_eq!(state_digest(&a, 0, 0.3).sha256.len(), 64);
    }
}
