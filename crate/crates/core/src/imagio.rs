//! Image containers, gray-level quantization and file I/O.
//!
//! Coordinates are `(x, y)` with `x` the column and `y` the row, origin at the
//! top-left pixel. Storage is row-major everywhere.
//!
//! Supported on-disk formats:
//!
//! * binary PGM (`P5`) with 8-bit or 16-bit big-endian samples,
//! * raw little-endian `f32` payload with a JSON sidecar (`<file>.json`)
//!   carrying `{width, height, pitch_mm}`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::peaks::CandidateSet;

/// A single-channel image with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    pitch_mm: f64,
}

/// Per-pixel scalar map produced by a feature extractor.
pub type FeatureMap = GrayImage;

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_pitch(width, height, data, 1.0)
    }

    pub fn with_pitch(width: usize, height: usize, data: Vec<f64>, pitch_mm: f64) -> Result<Self> {
        ensure(width >= 1 && height >= 1, || {
            format!("image dimensions must be at least 1x1, got {width}x{height}")
        })?;
        if data.len() != width * height {
            return Err(Error::Data(format!(
                "payload size mismatch: {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        ensure(pitch_mm.is_finite() && pitch_mm > 0.0, || {
            format!("pitch_mm must be positive, got {pitch_mm}")
        })?;
        Ok(GrayImage { width, height, data, pitch_mm })
    }

    /// Image of the given size filled with `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Applies `f` to every sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::with_pitch(self.width, self.height, self.data.iter().map(|&v| f(v)).collect(), self.pitch_mm)
    }
}

/// An image whose samples are gray-level indices in `[0, levels)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    width: usize,
    height: usize,
    levels: usize,
    data: Vec<u16>,
}

impl QuantizedImage {
    pub fn new(width: usize, height: usize, levels: usize, data: Vec<u16>) -> Result<Self> {
        ensure(levels >= 2, || format!("levels must be >= 2, got {levels}"))?;
        ensure(levels <= u16::MAX as usize + 1, || format!("levels must be <= 65536, got {levels}"))?;
        ensure(width >= 1 && height >= 1, || format!("dimensions must be at least 1x1, got {width}x{height}"))?;
        if data.len() != width * height {
            return Err(Error::Data(format!(
                "payload size mismatch: {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if let Some(&v) = data.iter().find(|&&v| v as usize >= levels) {
            return Err(Error::Data(format!("gray level {v} out of range for {levels} levels")));
        }
        Ok(QuantizedImage { width, height, levels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Copies the `w`×`h` rectangle starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        ensure(x0 + w <= self.width && y0 + h <= self.height && w > 0 && h > 0, || {
            format!("crop {w}x{h}@({x0},{y0}) outside {}x{}", self.width, self.height)
        })?;
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(QuantizedImage { width: w, height: h, levels: self.levels, data })
    }
}

/// Linear min-max binning into `levels` gray levels.
///
/// `q = floor((v - min) * levels / (max - min + eps))`, clamped to `[0, levels-1]`,
/// where `eps = (max - min) * 2^-23` (never below the smallest positive normal).
/// A constant image maps entirely to level 0.
pub fn quantize(img: &GrayImage, levels: usize) -> Result<QuantizedImage> {
    ensure(levels >= 2, || format!("levels must be >= 2, got {levels}"))?;
    ensure(levels <= u16::MAX as usize + 1, || format!("levels must be <= 65536, got {levels}"))?;
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    let eps = (range * f64::powi(2.0, -23)).max(f64::MIN_POSITIVE);
    let denom = range + eps;
    let top = (levels - 1) as f64;
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let q = ((v - lo) * levels as f64 / denom).floor();
            q.clamp(0.0, top) as u16
        })
        .collect();
    QuantizedImage::new(img.width(), img.height(), levels, data)
}

/// On-disk image encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    Pgm8,
    Pgm16,
    RawF32,
}

impl ImageFormat {
    /// Guesses the format from the file extension; PGM bit depth is resolved when reading.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(ImageFormat::Pgm8),
            "raw" | "f32" | "bin" => Some(ImageFormat::RawF32),
            _ => None,
        }
    }
}

/// Sidecar header of a raw-f32 image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_pitch")]
    pub pitch_mm: f64,
}

fn default_pitch() -> f64 {
    1.0
}

/// Path of the JSON header that accompanies a raw-f32 payload.
pub fn raw_header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Loads an image; samples are returned as stored, without rescaling.
pub fn load_image(path: &Path, format: ImageFormat) -> Result<GrayImage> {
    match format {
        ImageFormat::Pgm8 | ImageFormat::Pgm16 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let (img, bits) = parse_pgm(path, &bytes)?;
            // `Pgm8` doubles as "any PGM" when the format came from the extension.
            if format == ImageFormat::Pgm16 && bits != 16 {
                return Err(Error::format(path, format!("expected 16-bit PGM, found {bits}-bit")));
            }
            Ok(img)
        }
        ImageFormat::RawF32 => load_raw(path),
    }
}

/// Loads an image, choosing the format by extension.
pub fn load_image_auto(path: &Path) -> Result<GrayImage> {
    let format = ImageFormat::from_path(path)
        .ok_or_else(|| Error::format(path, "unrecognized image extension (expected .pgm or .raw)"))?;
    load_image(path, format)
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<(GrayImage, u32)> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
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
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "P5" {
        return Err(Error::format(path, format!("bad PGM magic {magic:?}")));
    }
    let number = |pos: &mut usize, what: &str| -> Result<usize> {
        let t = token(pos)?;
        t.parse::<usize>().map_err(|_| Error::format(path, format!("bad PGM {what} {t:?}")))
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bits = if maxval < 256 { 8 } else { 16 };
    let bytes_per = bits as usize / 8;
    let need = width * height * bytes_per;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != need {
        return Err(Error::Data(format!(
            "payload size mismatch: PGM {width}x{height} needs {need} bytes, got {}",
            raster.len()
        )));
    }
    let data = if bits == 8 {
        raster.iter().map(|&b| b as f64).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    Ok((GrayImage::new(width, height, data)?, bits))
}

fn load_raw(path: &Path) -> Result<GrayImage> {
    let header_path = raw_header_path(path);
    let header_text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: RawHeader = serde_json::from_str(&header_text)
        .map_err(|e| Error::format(&header_path, format!("malformed header: {e}")))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != header.width * header.height {
        return Err(Error::Data(format!(
            "payload size mismatch: header {}x{} needs {} floats, file holds {} bytes",
            header.width,
            header.height,
            header.width * header.height,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Data(format!("NaN in raw payload {}", path.display())));
    }
    GrayImage::with_pitch(header.width, header.height, data, header.pitch_mm)
}

/// Writes `img` as raw little-endian `f32` plus its JSON header.
///
/// Samples are narrowed to `f32`; values already representable in `f32`
/// round-trip bit-exactly.
pub fn save_raw(img: &GrayImage, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(img.data().len() * 4);
    for &v in img.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Data(format!("sample {v} does not fit in f32")));
        }
        payload.extend_from_slice(&f.to_le_bytes());
    }
    write_file(path, &payload)?;
    let header = RawHeader { width: img.width(), height: img.height(), pitch_mm: img.pitch_mm() };
    let text = serde_json::to_string(&header).expect("header serializes");
    write_file(&raw_header_path(path), text.as_bytes())
}

/// Writes a feature map in the raw-f32 format.
pub fn save_feature_map(map: &FeatureMap, path: &Path) -> Result<()> {
    save_raw(map, path)
}

/// Writes `img` as binary PGM; samples are rounded and clamped to the sample range.
pub fn save_pgm(img: &GrayImage, path: &Path, format: ImageFormat) -> Result<()> {
    let (maxval, wide) = match format {
        ImageFormat::Pgm8 => (255u32, false),
        ImageFormat::Pgm16 => (65535u32, true),
        ImageFormat::RawF32 => return save_raw(img, path),
    };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.data() {
        let s = v.round().clamp(0.0, maxval as f64) as u16;
        if wide {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    write_file(path, &out)
}

/// Writes an 8-bit raster as PGM.
pub fn save_pgm8_bytes(width: usize, height: usize, pixels: &[u8], path: &Path) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    write_file(path, &out)
}

/// Min-max stretch of `img` to 8 bits. A constant image renders black.
pub fn normalize_to_u8(img: &GrayImage) -> Vec<u8> {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    img.data()
        .iter()
        .map(|&v| if range > 0.0 { ((v - lo) * 255.0 / range).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect()
}

/// Renders the normalized image with a white cross of half-length `radius` at every candidate.
pub fn render_overlay(img: &GrayImage, candidates: &CandidateSet, radius: usize) -> Vec<u8> {
    let mut pixels = normalize_to_u8(img);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = radius as i64;
    for c in candidates.iter() {
        let (cx, cy) = (c.x as i64, c.y as i64);
        for d in -r..=r {
            for (x, y) in [(cx + d, cy), (cx, cy + d)] {
                if x >= 0 && x < w && y >= 0 && y < h {
                    pixels[(y * w + x) as usize] = 255;
                }
            }
        }
    }
    pixels
}

/// Writes an overlay image; `.png` paths produce PNG, anything else binary PGM.
pub fn save_overlay(img: &GrayImage, candidates: &CandidateSet, radius: usize, path: &Path) -> Result<()> {
    let pixels = render_overlay(img, candidates, radius);
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        save_png8(img.width(), img.height(), &pixels, path)
    } else {
        save_pgm8_bytes(img.width(), img.height(), &pixels, path)
    }
}

/// Writes an 8-bit grayscale PNG.
pub fn save_png8(width: usize, height: usize, pixels: &[u8], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
