//! Grayscale bitmaps and binary PGM (P5) I/O.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Row-major grayscale image; row 0 is the top row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: usize,
    height: usize,
    depth: BitDepth,
    pixels: Vec<u16>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize, depth: BitDepth, pixels: Vec<u16>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        if let Some(&p) = pixels.iter().find(|&&p| p > depth.max_value()) {
            return Err(Error::Image(format!("pixel value {p} exceeds bit depth")));
        }
        Ok(Self {
            width,
            height,
            depth,
            pixels,
        })
    }

    /// Quantizes `values` (already scaled to [0, max]) by rounding and clamping.
    pub fn quantize(width: usize, height: usize, depth: BitDepth, values: &[f64]) -> Result<Self> {
        let max = depth.max_value() as f64;
        let pixels = values
            .iter()
            .map(|v| v.round().clamp(0.0, max) as u16)
            .collect();
        Self::new(width, height, depth, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    /// Binary PGM; 16-bit samples are big-endian as the format requires.
    pub fn write_pgm<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        writeln!(out, "P5")?;
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        write!(
            out,
            "{} {}\n{}\n",
            self.width,
            self.height,
            self.depth.max_value()
        )?;
        match self.depth {
            BitDepth::Eight => {
                let bytes: Vec<u8> = self.pixels.iter().map(|&p| p as u8).collect();
                out.write_all(&bytes)?;
            }
            BitDepth::Sixteen => {
                let bytes: Vec<u8> = self.pixels.iter().flat_map(|p| p.to_be_bytes()).collect();
                out.write_all(&bytes)?;
            }
        }
        Ok(())
    }

    pub fn read_pgm<R: BufRead>(mut input: R) -> Result<Self> {
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            let tok = next_token(&mut input)?;
            tokens.push(tok);
        }
        if tokens[0] != "P5" {
            return Err(Error::Image(format!("unsupported magic {}", tokens[0])));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Image(format!("bad {what}: {s}")))
        };
        let width = parse(&tokens[1], "width")?;
        let height = parse(&tokens[2], "height")?;
        let maxval = parse(&tokens[3], "maxval")?;
        let (depth, bytes_per) = match maxval {
            1..=255 => (BitDepth::Eight, 1),
            256..=65535 => (BitDepth::Sixteen, 2),
            _ => return Err(Error::Image(format!("bad maxval {maxval}"))),
        };
        let mut raw = vec![0u8; width * height * bytes_per];
        input
            .read_exact(&mut raw)
            .map_err(|e| Error::Image(format!("truncated pixel data: {e}")))?;
        let pixels = if bytes_per == 1 {
            raw.into_iter().map(u16::from).collect()
        } else {
            raw.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        Self::new(width, height, depth, pixels)
    }
}

// Reads one whitespace-delimited header token, skipping `#` comments, and
// consumes exactly one trailing whitespace byte.
fn next_token<R: BufRead>(input: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            return Err(Error::Image("unexpected end of header".into()));
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut discard = Vec::new();
            input.read_until(b'\n', &mut discard)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c as char);
    }
}

/// 3x3 median with edge replication.
pub fn median3x3(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let mut window = [0.0f64; 9];
    for row in 0..height {
        for col in 0..width {
            let mut k = 0;
            for dr in -1i64..=1 {
                let r = (row as i64 + dr).clamp(0, height as i64 - 1) as usize;
                for dc in -1i64..=1 {
                    let c = (col as i64 + dc).clamp(0, width as i64 - 1) as usize;
                    window[k] = values[r * width + c];
                    k += 1;
                }
            }
            window.sort_unstable_by(|a, b| a.total_cmp(b));
            out[row * width + col] = window[4];
        }
    }
    out
}

/// Value at fraction `q` in [0, 1] of the sorted data (nearest rank).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let idx = ((sorted.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    sorted[idx]
}
