//! PNG codecs for the raster types.
//!
//! - disparity: 16-bit grayscale PNG plus a `<file>.json` sidecar holding
//!   `{"scale": s}`; decoded value = raw / s.
//! - labels: 8-bit indexed PNG, the palette index is the class index.
//! - images: 8-bit grayscale or RGB PNG.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};
use serde::{Deserialize, Serialize};

use super::raster::{DisparityMap, ImageRaster, SegMap};
use crate::error::{Error, Result};

pub const DEFAULT_DISPARITY_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparitySidecar {
    pub scale: f64,
}

/// `disp.png` -> `disp.png.json`
pub fn sidecar_path(png_path: &Path) -> PathBuf {
    let mut s = png_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("PNG decode: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "PNG too large"))?;
    let mut bytes = vec![0; size];
    let info = reader
        .next_frame(&mut bytes)
        .map_err(|e| Error::format(path, format!("PNG decode: {e}")))?;
    bytes.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
    })
}

fn encode(
    path: &Path,
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    palette: Option<Vec<u8>>,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    {
        let mut encoder = png::Encoder::new(&mut w, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(depth);
        if let Some(p) = palette {
            encoder.set_palette(p);
        }
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::format(path, format!("PNG encode: {e}")))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::format(path, format!("PNG encode: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::format(path, format!("PNG encode: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a disparity map together with its quantization scale.
pub fn read_disparity_with_scale(path: impl AsRef<Path>) -> Result<(DisparityMap, f64)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: DisparitySidecar =
        serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
    if !(sidecar.scale.is_finite() && sidecar.scale > 0.0) {
        return Err(Error::format(&side, format!("scale must be positive, got {}", sidecar.scale)));
    }
    let d = decode(path)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::Sixteen {
        return Err(Error::format(
            path,
            format!(
                "disparity must be 16-bit single-channel, got {:?} at {:?}",
                d.color, d.depth
            ),
        ));
    }
    let data = d
        .bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / sidecar.scale)
        .collect();
    Ok((DisparityMap::new(d.width, d.height, data)?, sidecar.scale))
}

pub fn read_disparity(path: impl AsRef<Path>) -> Result<DisparityMap> {
    read_disparity_with_scale(path).map(|(m, _)| m)
}

/// Quantizes to `round(value * scale)` and writes the PNG and its sidecar.
pub fn write_disparity(map: &DisparityMap, path: impl AsRef<Path>, scale: f64) -> Result<()> {
    let path = path.as_ref();
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Domain(format!("disparity scale must be positive, got {scale}")));
    }
    let mut bytes = Vec::with_capacity(map.data().len() * 2);
    for &v in map.data() {
        let raw = (v * scale).round();
        if raw > u16::MAX as f64 {
            return Err(Error::Domain(format!(
                "disparity {v} exceeds the 16-bit range at scale {scale}"
            )));
        }
        bytes.extend_from_slice(&(raw as u16).to_be_bytes());
    }
    encode(
        path,
        map.width(),
        map.height(),
        ColorType::Grayscale,
        BitDepth::Sixteen,
        None,
        &bytes,
    )?;
    let side = sidecar_path(path);
    let text = serde_json::to_string(&DisparitySidecar { scale }).expect("sidecar serializes");
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Fixed 256-entry palette so label files view sensibly; the index is what matters.
fn label_palette() -> Vec<u8> {
    let mut p = Vec::with_capacity(256 * 3);
    for i in 0..=255u32 {
        if i == 255 {
            p.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        // golden-ratio hue walk, cheap and distinct enough
        let h = (i * 97) % 256;
        p.extend_from_slice(&[h as u8, ((h * 3 + 85) % 256) as u8, ((h * 7 + 170) % 256) as u8]);
    }
    p
}

pub fn read_segmap(path: impl AsRef<Path>, num_classes: usize, ignore_index: u8) -> Result<SegMap> {
    let path = path.as_ref();
    let d = decode(path)?;
    if d.depth != BitDepth::Eight || !matches!(d.color, ColorType::Indexed | ColorType::Grayscale) {
        return Err(Error::format(
            path,
            format!("label must be 8-bit indexed, got {:?} at {:?}", d.color, d.depth),
        ));
    }
    SegMap::new(d.width, d.height, num_classes, ignore_index, d.bytes)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_segmap(map: &SegMap, path: impl AsRef<Path>) -> Result<()> {
    encode(
        path.as_ref(),
        map.width(),
        map.height(),
        ColorType::Indexed,
        BitDepth::Eight,
        Some(label_palette()),
        map.data(),
    )
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageRaster> {
    let path = path.as_ref();
    let d = decode(path)?;
    let channels = match (d.color, d.depth) {
        (ColorType::Grayscale, BitDepth::Eight) => 1,
        (ColorType::Rgb, BitDepth::Eight) => 3,
        (c, b) => {
            return Err(Error::format(
                path,
                format!("image must be 8-bit gray or RGB, got {c:?} at {b:?}"),
            ))
        }
    };
    ImageRaster::new(d.width, d.height, channels, d.bytes)
}

pub fn write_image(image: &ImageRaster, path: impl AsRef<Path>) -> Result<()> {
    let color = if image.channels() == 1 {
        ColorType::Grayscale
    } else {
        ColorType::Rgb
    };
    encode(
        path.as_ref(),
        image.width(),
        image.height(),
        color,
        BitDepth::Eight,
        None,
        image.data(),
    )
}
