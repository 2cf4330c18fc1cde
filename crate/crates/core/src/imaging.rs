//! Synthetic image rendering (Fill-up and t-SNE layouts) and 8-bit export.

use std::io::{BufReader, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binning::ColorScheme;
use crate::embedding::GlobalMap;
use crate::error::{Error, Result};

/// Side length of t-SNE rasters.
pub const TSNE_GRID: usize = 24;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub layout: String,
    pub binner: String,
    pub sample_id: String,
}

/// `height x width x channels` pixels in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    pub provenance: Provenance,
}

impl SyntheticImage {
    /// Image filled with the color scheme's background.
    pub fn blank(height: usize, width: usize, cs: &ColorScheme) -> Self {
        let pixels = cs
            .background()
            .iter()
            .copied()
            .cycle()
            .take(height * width * cs.channels())
            .collect();
        SyntheticImage {
            height,
            width,
            channels: cs.channels(),
            pixels,
            provenance: Provenance::default(),
        }
    }

    pub fn from_pixels(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Domain(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width, channels],
                got: vec![pixels.len()],
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("pixel values must lie in [0, 1]".into()));
        }
        Ok(SyntheticImage {
            height,
            width,
            channels,
            pixels,
            provenance: Provenance::default(),
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let k = (row * self.width + col) * self.channels;
        &self.pixels[k..k + self.channels]
    }

    fn set_pixel(&mut self, row: usize, col: usize, value: &[f64]) {
        let k = (row * self.width + col) * self.channels;
        self.pixels[k..k + self.channels].copy_from_slice(value);
    }

    /// Cells whose color differs from `background`.
    pub fn count_non_background(&self, background: &[f64]) -> usize {
        self.pixels
            .chunks_exact(self.channels)
            .filter(|p| *p != background)
            .count()
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

/// Smallest square side that holds `d` features.
pub fn autofit_size(d: usize) -> usize {
    let mut s = (d as f64).sqrt() as usize;
    while s * s < d {
        s += 1;
    }
    while s > 0 && (s - 1) * (s - 1) >= d {
        s -= 1;
    }
    s
}

/// Column order within each Fill-up row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillDirection {
    #[default]
    LeftToRight,
    RightToLeft,
}

impl FillDirection {
    fn cell(self, j: usize, size: usize) -> (usize, usize) {
        let (row, col) = (j / size, j % size);
        match self {
            FillDirection::LeftToRight => (row, col),
            FillDirection::RightToLeft => (row, size - 1 - col),
        }
    }
}

/// Places feature `j` at row `j / size`; trailing cells stay background.
pub fn render_fillup(
    bins: &[usize],
    cs: &ColorScheme,
    size: usize,
    direction: FillDirection,
) -> Result<SyntheticImage> {
    if bins.len() > size * size {
        return Err(Error::Domain(format!(
            "{} features do not fit a {size}x{size} image",
            bins.len()
        )));
    }
    let mut img = SyntheticImage::blank(size, size, cs);
    for (j, &b) in bins.iter().enumerate() {
        let (r, c) = direction.cell(j, size);
        img.set_pixel(r, c, cs.color_of(b)?);
    }
    img.provenance.layout = "fillup".into();
    Ok(img)
}

/// Inverse of [`render_fillup`] on the first `d` cells.
pub fn decode_fillup(
    img: &SyntheticImage,
    cs: &ColorScheme,
    d: usize,
    direction: FillDirection,
) -> Result<Vec<usize>> {
    if img.channels != cs.channels() || img.height != img.width || d > img.height * img.width {
        return Err(Error::CorruptImage(format!(
            "{}x{}x{} image cannot hold {d} features for this color scheme",
            img.height, img.width, img.channels
        )));
    }
    (0..d)
        .map(|j| {
            let (r, c) = direction.cell(j, img.width);
            cs.index_of(img.pixel(r, c))
                .ok_or_else(|| Error::CorruptImage(format!("pixel at ({r}, {c}) is not in the color table")))
        })
        .collect()
}

/// Grid cell of a map point: affine scaling of the map's bounding box onto
/// `[0, grid)`, floored, with the upper edge clamped into the last cell.
pub fn map_cell(map: &GlobalMap, feature: usize, grid: usize) -> Result<(usize, usize)> {
    let bb = &map.bbox;
    let mut idx = [0usize; 2];
    for a in 0..2 {
        let extent = bb.max[a] - bb.min[a];
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::Domain(format!("degenerate t-SNE map extent on axis {a}")));
        }
        let t = (map.coords[feature][a] - bb.min[a]) / extent * grid as f64;
        idx[a] = (t.floor().max(0.0) as usize).min(grid - 1);
    }
    // x -> column, y -> row
    Ok((idx[1], idx[0]))
}

/// Paints each present feature (bin > 0) into its map cell. Overlaps keep the highest bin.
pub fn render_tsne(map: &GlobalMap, bins: &[usize], cs: &ColorScheme) -> Result<SyntheticImage> {
    if map.len() != bins.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![map.len()],
            got: vec![bins.len()],
        });
    }
    let grid = TSNE_GRID;
    let mut best = vec![0usize; grid * grid];
    for (j, &b) in bins.iter().enumerate() {
        let (r, c) = map_cell(map, j, grid)?;
        if b > 0 {
            let cell = &mut best[r * grid + c];
            *cell = (*cell).max(b);
        }
    }
    let mut img = SyntheticImage::blank(grid, grid, cs);
    for (k, &b) in best.iter().enumerate() {
        if b > 0 {
            img.set_pixel(k / grid, k % grid, cs.color_of(b)?);
        }
    }
    img.provenance.layout = "tsne".into();
    Ok(img)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Pgm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Pgm => "pgm",
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an image with 8-bit `round(v * 255)` quantization.
pub fn encode_image(img: &SyntheticImage, format: ImageFormat) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.pixels.iter().map(|&v| quantize(v)).collect();
    match format {
        ImageFormat::Pgm => {
            if img.channels != 1 {
                return Err(Error::Domain("PGM export requires a single channel".into()));
            }
            let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend_from_slice(&bytes);
            Ok(out)
        }
        ImageFormat::Png => {
            let color = match img.channels {
                1 => png::ColorType::Grayscale,
                3 => png::ColorType::Rgb,
                c => return Err(Error::Domain(format!("PNG export does not support {c} channels"))),
            };
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
                enc.set_color(color);
                enc.set_depth(png::BitDepth::Eight);
                let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
                w.write_image_data(&bytes).map_err(|e| Error::Png(e.to_string()))?;
            }
            Ok(out)
        }
    }
}

pub fn export_image(img: &SyntheticImage, path: &Path, format: ImageFormat) -> Result<Vec<u8>> {
    let bytes = encode_image(img, format)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn pgm_token<'a>(data: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::CorruptImage("truncated PGM header".into()));
    }
    Ok(&data[start..*pos])
}

fn pgm_number(data: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = pgm_token(data, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CorruptImage("bad PGM header field".into()))
}

/// Decodes a PGM (P5, maxval 255) or 8-bit gray/RGB PNG.
pub fn decode_image(data: &[u8]) -> Result<SyntheticImage> {
    if data.starts_with(b"P5") {
        let mut pos = 2;
        let width = pgm_number(data, &mut pos)?;
        let height = pgm_number(data, &mut pos)?;
        let maxval = pgm_number(data, &mut pos)?;
        if maxval != 255 {
            return Err(Error::CorruptImage(format!("unsupported PGM maxval {maxval}")));
        }
        pos += 1;
        let body = data
            .get(pos..pos + width * height)
            .ok_or_else(|| Error::CorruptImage("truncated PGM body".into()))?;
        let pixels = body.iter().map(|&b| b as f64 / 255.0).collect();
        return SyntheticImage::from_pixels(height, width, 1, pixels);
    }
    let decoder = png::Decoder::new(BufReader::new(Cursor::new(data)));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::CorruptImage("only 8-bit PNG is supported".into()));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::CorruptImage(format!("unsupported PNG color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = buf[..w * h * channels].iter().map(|&b| b as f64 / 255.0).collect();
    SyntheticImage::from_pixels(h, w, channels, pixels)
}

pub fn import_image(path: &Path) -> Result<SyntheticImage> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&data)
}
