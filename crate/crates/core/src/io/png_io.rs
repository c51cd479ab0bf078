use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Rgb;

fn encode_err(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| encode_err(path, e))?;
    writer.write_image_data(data).map_err(|e| encode_err(path, e))?;
    writer.finish().map_err(|e| encode_err(path, e))
}

/// 16-bit grayscale PNG, values in millimeters.
pub fn write_depth_png(path: &Path, width: usize, height: usize, depth: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = depth.iter().flat_map(|d| d.to_be_bytes()).collect();
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

pub fn write_color_png(path: &Path, width: usize, height: usize, rgb: &[Rgb]) -> Result<()> {
    let bytes: Vec<u8> = rgb.iter().flatten().copied().collect();
    write_png(path, width, height, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn read_png(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut data = vec![0u8; size];
    let info = reader
        .next_frame(&mut data)
        .map_err(|e| Error::format(path, e.to_string()))?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

pub fn read_depth_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = read_png(path)?;
    if img.color != png::ColorType::Grayscale || img.depth != png::BitDepth::Sixteen {
        return Err(Error::format(path, "depth image must be 16-bit single channel"));
    }
    let depth = img
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((img.width, img.height, depth))
}

pub fn read_color_png(path: &Path) -> Result<(usize, usize, Vec<Rgb>)> {
    let img = read_png(path)?;
    if img.color != png::ColorType::Rgb || img.depth != png::BitDepth::Eight {
        return Err(Error::format(path, "color image must be 8-bit RGB"));
    }
    let rgb = img.data.chunks_exact(3).map(|b| [b[0], b[1], b[2]]).collect();
    Ok((img.width, img.height, rgb))
}
