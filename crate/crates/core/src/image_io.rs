//! File formats for the imaging side: portable graymaps (PGM, P2 and P5),
//! plain-text float grids, and the binary-matrix export of pattern sets.
//!
//! Objects are read as transmission masks with values scaled to [0, 1];
//! reconstructed images are written both as a raw float grid (the values the
//! correlation sum actually produced) and as an 8-bit PGM rendering that maps
//! [min, max] linearly onto [0, 255].

use crate::cgi::{CgiError, ImageGrid, ObjectMask, PatternSet};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Errors from reading or writing image-side files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("only 8-bit graymaps are supported, maxval {0} > 255")]
    UnsupportedMaxval(u32),

    #[error(transparent)]
    Grid(#[from] CgiError),
}

fn parse_err(message: impl Into<String>) -> FormatError {
    FormatError::Parse(message.into())
}

/// Pull the next ASCII integer token out of a netpbm header, skipping
/// whitespace and `#` comments.
fn next_header_token(bytes: &[u8], pos: &mut usize) -> Result<u32, FormatError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(parse_err("expected an unsigned integer in PGM header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("digits are valid utf8")
        .parse::<u32>()
        .map_err(|e| parse_err(format!("bad integer in PGM header: {e}")))
}

/// Parse a P2 or P5 graymap into an object mask with transmissions
/// `value / maxval`.
pub fn parse_pgm_object(bytes: &[u8]) -> Result<ObjectMask, FormatError> {
    if bytes.len() < 2 {
        return Err(parse_err("file too short for a PGM header"));
    }
    let magic = &bytes[..2];
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        _ => return Err(parse_err("expected P2 or P5 magic")),
    };
    let mut pos = 2;
    let width = next_header_token(bytes, &mut pos)? as usize;
    let height = next_header_token(bytes, &mut pos)? as usize;
    let maxval = next_header_token(bytes, &mut pos)?;
    if maxval == 0 {
        return Err(parse_err("PGM maxval must be positive"));
    }
    if binary && maxval > 255 {
        return Err(FormatError::UnsupportedMaxval(maxval));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| parse_err("grid dimensions overflow"))?;

    let raw: Vec<u32> = if binary {
        // A single whitespace byte separates the header from the raster.
        pos += 1;
        let data = bytes
            .get(pos..pos + count)
            .ok_or_else(|| parse_err("truncated P5 raster"))?;
        data.iter().map(|&b| u32::from(b)).collect()
    } else {
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            samples.push(next_header_token(bytes, &mut pos)?);
        }
        samples
    };
    if raw.iter().any(|&v| v > maxval) {
        return Err(parse_err("sample exceeds the declared maxval"));
    }
    let values = raw
        .into_iter()
        .map(|v| f64::from(v) / f64::from(maxval))
        .collect();
    Ok(ObjectMask::new(width, height, values)?)
}

/// Parse the plain-text grid format: a `width height` line followed by
/// `height` rows of `width` floats.
pub fn parse_float_grid(text: &str) -> Result<(usize, usize, Vec<f64>), FormatError> {
    let mut tokens = text.split_whitespace();
    let width: usize = tokens
        .next()
        .ok_or_else(|| parse_err("missing grid width"))?
        .parse()
        .map_err(|e| parse_err(format!("bad grid width: {e}")))?;
    let height: usize = tokens
        .next()
        .ok_or_else(|| parse_err("missing grid height"))?
        .parse()
        .map_err(|e| parse_err(format!("bad grid height: {e}")))?;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| parse_err("grid dimensions overflow"))?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let token = tokens
            .next()
            .ok_or_else(|| parse_err("grid has fewer values than width*height"))?;
        values.push(
            token
                .parse::<f64>()
                .map_err(|e| parse_err(format!("bad grid value {token:?}: {e}")))?,
        );
    }
    if tokens.next().is_some() {
        return Err(parse_err("grid has more values than width*height"));
    }
    Ok((width, height, values))
}

/// Read an object mask, dispatching on the magic bytes: P2/P5 graymaps or
/// the plain-text float grid.
pub fn read_object(path: &Path) -> Result<ObjectMask, FormatError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm_object(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| parse_err("object file is neither PGM nor text"))?;
        let (width, height, values) = parse_float_grid(text)?;
        Ok(ObjectMask::new(width, height, values)?)
    }
}

/// Map raw image values linearly from [min, max] onto [0, 255]; a constant
/// image renders as all zeros.
pub fn render_8bit(values: &[f64]) -> Vec<u8> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - min) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Serialize an image as a binary (P5) graymap of its 8-bit rendering.
pub fn pgm_bytes(image: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(render_8bit(&image.values));
    out
}

pub fn write_pgm(path: &Path, image: &ImageGrid) -> Result<(), FormatError> {
    Ok(fs::write(path, pgm_bytes(image))?)
}

/// Serialize a grid of raw float values in the plain-text format.
pub fn float_grid_string(width: usize, height: usize, values: &[f64]) -> String {
    let mut out = format!("{width} {height}\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_float_grid(path: &Path, image: &ImageGrid) -> Result<(), FormatError> {
    Ok(fs::write(
        path,
        float_grid_string(image.width, image.height, &image.values),
    )?)
}

/// Serialize a pattern set as a binary-matrix text file: a `n width height`
/// header line, then one row of 0/1 entries per pattern.
pub fn pattern_matrix_string(patterns: &PatternSet) -> String {
    let mut out = format!(
        "{} {} {}\n",
        patterns.len(),
        patterns.width(),
        patterns.height()
    );
    for i in 0..patterns.len() {
        let row: Vec<&str> = patterns
            .mask(i)
            .iter()
            .map(|&b| if b != 0 { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pattern_matrix(path: &Path, patterns: &PatternSet) -> Result<(), FormatError> {
    Ok(fs::write(path, pattern_matrix_string(patterns))?)
}
