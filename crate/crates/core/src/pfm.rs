//! Portable FloatMap (PFM) reader and writer.
//!
//! Color images use the `PF` magic, grayscale `Pf`. The scale line doubles as a
//! byte-order flag: negative means little-endian sample data. Rows are stored
//! bottom-to-top. The writer always emits `-1.0` (little-endian) and produces
//! byte-identical files for identical inputs.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageGray, ImageRgb};

fn write_samples(
    path: &Path,
    magic: &str,
    width: usize,
    height: usize,
    rows: &[f64],
) -> Result<()> {
    let channels = if magic == "PF" { 3 } else { 1 };
    let mut buf = Vec::with_capacity(32 + width * height * channels * 4);
    write!(&mut buf, "{magic}\n{width} {height}\n-1.0\n").expect("write to vec");
    // Bottom row first.
    for y in (0..height).rev() {
        let start = y * width * channels;
        for &v in &rows[start..start + width * channels] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn write_rgb(path: impl AsRef<Path>, img: &ImageRgb) -> Result<()> {
    write_samples(path.as_ref(), "PF", img.width(), img.height(), img.data())
}

pub fn write_gray(path: impl AsRef<Path>, img: &ImageGray) -> Result<()> {
    write_samples(path.as_ref(), "Pf", img.width(), img.height(), img.data())
}

struct Header {
    color: bool,
    width: usize,
    height: usize,
    little_endian: bool,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(Header, usize)> {
    // Three whitespace-separated header tokens after the magic line: width,
    // height, scale. A single whitespace byte terminates the scale token.
    let mut pos = 0;
    let mut token = |sep_any: bool| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() && sep_any {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::io(format!(
                "{}: truncated pfm header",
                path.display()
            )));
        }
        let s = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1; // consume the single terminating whitespace byte
        Ok(s)
    };

    let magic = token(false)?;
    let color = match magic.as_str() {
        "PF" => true,
        "Pf" => false,
        other => {
            return Err(Error::io(format!(
                "{}: not a pfm file (magic {other:?})",
                path.display()
            )))
        }
    };
    let width: usize = token(true)?
        .parse()
        .map_err(|_| Error::io(format!("{}: bad pfm width", path.display())))?;
    let height: usize = token(true)?
        .parse()
        .map_err(|_| Error::io(format!("{}: bad pfm height", path.display())))?;
    let scale: f64 = token(true)?
        .parse()
        .map_err(|_| Error::io(format!("{}: bad pfm scale", path.display())))?;
    if scale == 0.0 {
        return Err(Error::io(format!("{}: zero pfm scale", path.display())));
    }
    Ok((
        Header {
            color,
            width,
            height,
            little_endian: scale < 0.0,
        },
        pos,
    ))
}

fn read_samples(path: &Path) -> Result<(Header, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
    let (header, data_start) = parse_header(&bytes, path)?;
    let channels = if header.color { 3 } else { 1 };
    let count = header.width * header.height * channels;
    let data = &bytes[data_start..];
    if data.len() < count * 4 {
        return Err(Error::io(format!(
            "{}: pfm data truncated ({} bytes for {} samples)",
            path.display(),
            data.len(),
            count
        )));
    }
    let mut rows = vec![0.0f64; count];
    for y in 0..header.height {
        // File rows run bottom-to-top.
        let src_row = header.height - 1 - y;
        for i in 0..header.width * channels {
            let off = (src_row * header.width * channels + i) * 4;
            let raw: [u8; 4] = data[off..off + 4].try_into().expect("sliced to 4");
            let v = if header.little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            rows[y * header.width * channels + i] = v as f64;
        }
    }
    Ok((header, rows))
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let (header, rows) = read_samples(path)?;
    if !header.color {
        return Err(Error::io(format!(
            "{}: expected color pfm, found grayscale",
            path.display()
        )));
    }
    ImageRgb::from_vec(header.width, header.height, rows)
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<ImageGray> {
    let path = path.as_ref();
    let (header, rows) = read_samples(path)?;
    if header.color {
        return Err(Error::io(format!(
            "{}: expected grayscale pfm, found color",
            path.display()
        )));
    }
    ImageGray::from_vec(header.width, header.height, rows)
}
