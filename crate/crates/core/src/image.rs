//! RGB images with values in `[0, 1]`, bilinear resizing and file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// `height × width × 3` pixels, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageTensor {
    /// Values are clamped into `[0, 1]`.
    pub fn new(height: usize, width: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "image extents must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::Dimension {
                op: "image",
                lhs: vec![height, width, CHANNELS],
                rhs: vec![pixels.len()],
            });
        }
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels).expect("positive extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        let o = (y * self.width + x) * CHANNELS;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_rgb(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * CHANNELS;
        for (dst, v) in self.pixels[o..o + CHANNELS].iter_mut().zip(rgb) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    /// Exact copy of the `h × w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::Validation(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(h * w * CHANNELS);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * CHANNELS;
            pixels.extend_from_slice(&self.pixels[start..start + w * CHANNELS]);
        }
        Ok(Self {
            height: h,
            width: w,
            pixels,
        })
    }

    /// Bilinear resize with corner-aligned sampling: output corners map onto
    /// input corners exactly.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Validation(format!(
                "resize target must be positive, got {out_h}x{out_w}"
            )));
        }
        if out_h == self.height && out_w == self.width {
            return Ok(self.clone());
        }
        let ys = sample_axis(self.height, out_h);
        let xs = sample_axis(self.width, out_w);
        let mut pixels = Vec::with_capacity(out_h * out_w * CHANNELS);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for c in 0..CHANNELS {
                    let top = lerp(self.get(y0, x0, c), self.get(y0, x1, c), fx);
                    let bottom = lerp(self.get(y1, x0, c), self.get(y1, x1, c), fx);
                    pixels.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(out_h, out_w, pixels)
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| quantize(v)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut pos = 0;
        let magic = next_token(&buf, &mut pos)?;
        if magic != "P6" {
            return Err(Error::Format(format!("expected P6 magic, found `{magic}`")));
        }
        let width: usize = parse_token(&buf, &mut pos, "width")?;
        let height: usize = parse_token(&buf, &mut pos, "height")?;
        let maxval: usize = parse_token(&buf, &mut pos, "maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height * CHANNELS;
        let raster = buf
            .get(pos..pos + need)
            .ok_or_else(|| Error::Format("truncated PPM raster".into()))?;
        let pixels = raster.iter().map(|&b| f64::from(b) / maxval as f64).collect();
        Self::new(height, width, pixels)
    }

    /// Raw tensor file: three little-endian u64 extents (H, W, C) followed by
    /// H·W·C little-endian f64 values.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        for e in [self.height, self.width, CHANNELS] {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in &self.pixels {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut extents = [0usize; 3];
        for e in &mut extents {
            r.read_exact(&mut word)?;
            *e = u64::from_le_bytes(word) as usize;
        }
        if extents[2] != CHANNELS {
            return Err(Error::Format(format!(
                "raw image must have 3 channels, found {}",
                extents[2]
            )));
        }
        let n = extents[0]
            .checked_mul(extents[1])
            .and_then(|v| v.checked_mul(CHANNELS))
            .ok_or_else(|| Error::Format("raw image extents overflow".into()))?;
        let mut pixels = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut word)?;
            pixels.push(f64::from_le_bytes(word));
        }
        Self::new(extents[0], extents[1], pixels)
    }

    /// Loads `.ppm` or raw tensor files by extension.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => Self::read_ppm(file),
            _ => Self::read_raw(file),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => self.write_ppm(&mut file)?,
            _ => self.write_raw(&mut file)?,
        }
        file.flush()?;
        Ok(())
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + t * (b - a)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// For each output index, the two source indices and the fractional weight of
/// the second. Uses integer arithmetic so integral positions are exact.
fn sample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let num = i * (src - 1);
            let den = dst - 1;
            let lo = num / den;
            let rem = num % den;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, rem as f64 / den as f64)
        })
        .collect()
}

fn next_token(buf: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("unexpected end of PPM header".into()));
    }
    Ok(String::from_utf8_lossy(&buf[start..*pos]).into_owned())
}

fn parse_token(buf: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(buf, pos)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("bad PPM {what} `{tok}`")))
}
