//! Binary netpbm (P5/P6) reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Samples {
    Gray8(Vec<u8>),
    Gray16(Vec<u16>),
    Rgb8(Vec<[u8; 3]>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub samples: Samples,
}

fn next_token<'a>(data: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &data[start..*pos])
}

fn header_num(data: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<usize> {
    next_token(data, pos)
        .and_then(|t| std::str::from_utf8(t).ok())
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::format(path, format!("bad PNM header ({what})")))
}

pub fn decode(data: &[u8], path: &Path) -> Result<Pnm> {
    let mut pos = 0;
    let magic = next_token(data, &mut pos).ok_or_else(|| Error::format(path, "empty file"))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::format(path, "unsupported PNM magic")),
    };
    let width = header_num(data, &mut pos, path, "width")?;
    let height = header_num(data, &mut pos, path, "height")?;
    let maxval = header_num(data, &mut pos, path, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, "maxval out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let wide = maxval > 255;
    let n = width * height * channels;
    let bytes = if wide { 2 * n } else { n };
    let raster = data
        .get(pos..pos + bytes)
        .ok_or_else(|| Error::format(path, "truncated raster"))?;
    let samples = match (channels, wide) {
        (1, false) => Samples::Gray8(raster.to_vec()),
        (1, true) => Samples::Gray16(
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect(),
        ),
        (3, false) => Samples::Rgb8(raster.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()),
        _ => return Err(Error::format(path, "16-bit color images are not supported")),
    };
    Ok(Pnm {
        width,
        height,
        samples,
    })
}

pub fn read(path: &Path) -> Result<Pnm> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data, path)
}

pub fn encode(pnm: &Pnm) -> Vec<u8> {
    let (magic, maxval) = match pnm.samples {
        Samples::Gray8(_) => ("P5", 255),
        Samples::Gray16(_) => ("P5", 65535),
        Samples::Rgb8(_) => ("P6", 255),
    };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", pnm.width, pnm.height).into_bytes();
    match &pnm.samples {
        Samples::Gray8(v) => out.extend_from_slice(v),
        Samples::Gray16(v) => v
            .iter()
            .for_each(|s| out.extend_from_slice(&s.to_be_bytes())),
        Samples::Rgb8(v) => v.iter().for_each(|p| out.extend_from_slice(p)),
    }
    out
}

pub fn write(path: &Path, pnm: &Pnm) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(pnm)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment() {
        let mut data = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[7, 9]);
        let p = decode(&data, Path::new("x")).unwrap();
        assert_eq!(p.samples, Samples::Gray8(vec![7, 9]));
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let pnm = Pnm {
            width: 2,
            height: 1,
            samples: Samples::Gray16(vec![0x0102, 65535]),
        };
        let bytes = encode(&pnm);
        assert!(bytes.ends_with(&[0x01, 0x02, 0xff, 0xff]));
        assert_eq!(decode(&bytes, Path::new("x")).unwrap(), pnm);
    }

    #[test]
    fn truncated() {
        let data = b"P6\n2 2\n255\n\x00\x00\x00".to_vec();
        assert!(decode(&data, Path::new("x")).is_err());
    }
}
