//! 8-bit RGB images, the PPM (P6) codec and the resampling primitives
//! shared by augmentation and preprocessing.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB, row-major, 8 bits per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::arg(format!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        RgbImage { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.pixel(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.pixel(x, self.height - 1 - y))
    }

    /// Sub-rectangle `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::arg(format!(
                "crop {w}×{h}+{x0}+{y0} outside {}×{} image",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(w, h, |x, y| self.pixel(x0 + x, y0 + y)))
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at
    /// integer + 0.5), clamped to the border.
    pub fn sample_clamped(&self, fx: f64, fy: f64) -> [f64; 3] {
        let x = (fx - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (fy - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (ax, ay) = (x - x0 as f64, y - y0 as f64);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let p = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * 3 + c] as f64;
            let top = p(x0, y0) * (1.0 - ax) + p(x1, y0) * ax;
            let bot = p(x0, y1) * (1.0 - ax) + p(x1, y1) * ax;
            *o = top * (1.0 - ay) + bot * ay;
        }
        out
    }

    /// Bilinear sample where everything outside the image is black.
    pub fn sample_black(&self, fx: f64, fy: f64) -> [f64; 3] {
        let x = fx - 0.5;
        let y = fy - 0.5;
        let (xf, yf) = (x.floor(), y.floor());
        let (ax, ay) = (x - xf, y - yf);
        let mut out = [0.0; 3];
        for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
            for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
                let (xi, yi) = (xf as i64 + dx, yf as i64 + dy);
                if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                    continue;
                }
                let i = (yi as usize * self.width + xi as usize) * 3;
                for (c, o) in out.iter_mut().enumerate() {
                    *o += wx * wy * self.data[i + c] as f64;
                }
            }
        }
        out
    }

    /// Bilinear resize with half-pixel centres and edge clamping.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("resize target must be non-empty"));
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Ok(Self::from_fn(width, height, |x, y| {
            let v = self.sample_clamped((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
            v.map(to_u8)
        }))
    }
}

/// Rounds and clips to the 8-bit range.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    *pos = skip_ws_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| "malformed PPM header".to_string())
}

/// Decodes a binary PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err("not a binary PPM (missing P6 magic)".into());
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(format!("unsupported PPM maxval {maxval}"));
    }
    if width == 0 || height == 0 {
        return Err("PPM has zero extent".into());
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("malformed PPM header".into());
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() - pos < need {
        return Err(format!("PPM pixel data truncated: {} of {need} bytes", bytes.len() - pos));
    }
    Ok(RgbImage {
        width,
        height,
        data: bytes[pos..pos + need].to_vec(),
    })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// File extensions [`read_image`] understands in this build.
pub fn supported_extensions() -> &'static [&'static str] {
    if cfg!(feature = "codecs") {
        &["ppm", "png", "jpg", "jpeg"]
    } else {
        &["ppm"]
    }
}

/// Reads a PPM, or PNG/JPEG when built with the `codecs` feature.
pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.starts_with(b"P6") {
        return decode_ppm(&bytes).map_err(fail);
    }
    decode_other(&bytes).map_err(fail)
}

#[cfg(feature = "codecs")]
fn decode_other(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage {
        width: w as usize,
        height: h as usize,
        data: img.into_raw(),
    })
}

#[cfg(not(feature = "codecs"))]
fn decode_other(_: &[u8]) -> std::result::Result<RgbImage, String> {
    Err("unsupported format (only binary PPM; build with the `codecs` feature for PNG/JPEG)".into())
}
