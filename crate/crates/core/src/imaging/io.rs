//! PFM and 8-bit PNG file access.
//!
//! PFM files are written little-endian (scale `-1.0`) with rows stored
//! bottom-up. Readers accept either endianness.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};

pub fn encode_pfm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    let (w, ch) = (img.width(), img.channels());
    for y in (0..img.height()).rev() {
        let row = &img.data()[y * w * ch..(y + 1) * w * ch];
        for v in row {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |m: &str| Error::format(path, m.to_string());
    // Three whitespace-terminated header tokens follow the magic.
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PFM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(bad(&format!("bad PFM magic {other:?}"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 || scale == 0.0 {
        return Err(bad("degenerate PFM header"));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < n * 4 {
        return Err(bad("truncated PFM raster"));
    }
    let mut data = vec![0.0; n];
    for (i, chunk) in raster[..n * 4].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, rest) = (i / (width * channels), i % (width * channels));
        data[(height - 1 - row) * width * channels + rest] = v as f64;
    }
    Image::from_vec(width, height, channels, data).map_err(|e| bad(&e.to_string()))
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|v| to_u8(*v)).collect();
    let color = if img.channels() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::save_buffer(path, &bytes, img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, raw) = if dynimg.color().has_color() {
        (3, dynimg.to_rgb8().into_raw())
    } else {
        (1, dynimg.to_luma8().into_raw())
    };
    let data = raw.iter().map(|v| *v as f64 / 255.0).collect();
    Image::from_vec(w, h, channels, data)
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|v| if *v { 255 } else { 0 }).collect();
    image::save_buffer(
        path,
        &bytes,
        mask.width as u32,
        mask.height as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}
