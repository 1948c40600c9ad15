//! Middlebury `.flo` optical flow files.

use std::fs;
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

/// `PIEH` read as a little-endian f32.
pub const FLOW_MAGIC: f32 = 202021.25;

pub fn decode(data: &[u8], path: &Path) -> Result<FlowField> {
    if data.len() < 12 {
        return Err(Error::format(path, "truncated flow header"));
    }
    let word = |i: usize| [data[i], data[i + 1], data[i + 2], data[i + 3]];
    if f32::from_le_bytes(word(0)) != FLOW_MAGIC {
        return Err(Error::BadFlowMagic(path.to_path_buf()));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(Error::format(path, "non-positive flow dimensions"));
    }
    let (width, height) = (width as usize, height as usize);
    let body = &data[12..];
    if body.len() < width * height * 8 {
        return Err(Error::format(path, "truncated flow data"));
    }
    let mut vectors = Vec::with_capacity(width * height);
    for c in body.chunks_exact(8).take(width * height) {
        let dx = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        let dy = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
        if !dx.is_finite() || !dy.is_finite() {
            return Err(Error::NonFiniteFlow(path.to_path_buf()));
        }
        vectors.push([dx, dy]);
    }
    Ok(FlowField {
        width,
        height,
        vectors,
    })
}

pub fn encode(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.vectors.len() * 8);
    out.extend_from_slice(&FLOW_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for [dx, dy] in &flow.vectors {
        out.extend_from_slice(&dx.to_le_bytes());
        out.extend_from_slice(&dy.to_le_bytes());
    }
    out
}

/// Reads a Middlebury flow file.
pub fn load_flow(path: &Path) -> Result<FlowField> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data, path)
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    fs::write(path, encode(flow)).map_err(|e| Error::io(path, e))
}
