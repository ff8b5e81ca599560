//! Raster types and Netpbm (PGM/PPM) I/O.
//!
//! Reads P2/P5 graymaps and P3/P6 pixmaps with maxval 255; always writes the
//! binary variants (P5/P6).

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxVal(u32),
    #[error("truncated pixel data: expected {expected} samples, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ImageError>;

/// Row-major 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(ImageError::InvalidDimensions(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Quantizes real values to 8 bits (round half to even, clipped to [0,255]).
    pub fn from_real(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        Self::new(width, height, values.iter().map(|&v| quantize(v)).collect())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with coordinates clamped to the image (replicate border).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[cy * self.width + cx]
    }

    /// Real-valued working copy.
    pub fn to_real(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    pub fn min_max(&self) -> Option<(u8, u8)> {
        let min = *self.pixels.iter().min()?;
        let max = *self.pixels.iter().max()?;
        Some((min, max))
    }
}

/// Round half to even and clip to the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

/// Three equally sized channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorImage {
    pub red: GrayImage,
    pub green: GrayImage,
    pub blue: GrayImage,
}

impl ColorImage {
    pub fn new(red: GrayImage, green: GrayImage, blue: GrayImage) -> Result<Self> {
        let dims = (red.width, red.height);
        if (green.width, green.height) != dims || (blue.width, blue.height) != dims {
            return Err(ImageError::InvalidDimensions(
                "color channels differ in size".to_string(),
            ));
        }
        Ok(Self { red, green, blue })
    }

    pub fn width(&self) -> usize {
        self.red.width
    }

    pub fn height(&self) -> usize {
        self.red.height
    }

    pub fn channels(&self) -> [&GrayImage; 3] {
        [&self.red, &self.green, &self.blue]
    }
}

/// Hard cluster assignment per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    clusters: usize,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, labels: Vec<usize>, clusters: usize) -> Result<Self> {
        if labels.len() != width * height {
            return Err(ImageError::InvalidDimensions(format!(
                "{}x{} map needs {} labels, got {}",
                width,
                height,
                width * height,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= clusters) {
            return Err(ImageError::InvalidDimensions(format!(
                "label {} out of range for {} clusters",
                bad, clusters
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            clusters,
        })
    }

    /// Interprets each distinct gray level as one cluster, ordered by intensity.
    pub fn from_gray_levels(img: &GrayImage) -> Self {
        let mut present = [false; 256];
        for &p in img.pixels() {
            present[p as usize] = true;
        }
        let mut index = [0usize; 256];
        let mut clusters = 0;
        for (level, &hit) in present.iter().enumerate() {
            if hit {
                index[level] = clusters;
                clusters += 1;
            }
        }
        Self {
            width: img.width,
            height: img.height,
            labels: img.pixels().iter().map(|&p| index[p as usize]).collect(),
            clusters: clusters.max(1),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Labels spread evenly over [0,255] so each cluster gets a distinct level.
    pub fn to_indexed_gray(&self) -> GrayImage {
        let scale = if self.clusters > 1 {
            255.0 / (self.clusters - 1) as f64
        } else {
            0.0
        };
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self
                .labels
                .iter()
                .map(|&l| quantize(l as f64 * scale))
                .collect(),
        }
    }

    /// Each pixel replaced by the intensity of its cluster prototype.
    pub fn render(&self, prototypes: &[f64]) -> GrayImage {
        let levels: Vec<u8> = prototypes.iter().map(|&v| quantize(v)).collect();
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.labels.iter().map(|&l| levels[l]).collect(),
        }
    }
}

/// Either raster kind, as produced by [`load_image`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Image {
    Gray(GrayImage),
    Color(ColorImage),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Magic {
    PgmAscii,
    PpmAscii,
    PgmBinary,
    PpmBinary,
}

impl Magic {
    fn samples_per_pixel(self) -> usize {
        match self {
            Magic::PgmAscii | Magic::PgmBinary => 1,
            Magic::PpmAscii | Magic::PpmBinary => 3,
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.data.len() {
            let b = self.data[self.pos];
            if b == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn header_number(&mut self, what: &str) -> Result<u32> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedHeader(format!("expected {}", what)));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::MalformedHeader(format!("{} out of range", what)))
    }
}

/// Decodes a PGM (to `Image::Gray`) or PPM (to `Image::Color`) buffer.
pub fn decode(data: &[u8]) -> Result<Image> {
    if data.len() < 2 {
        return Err(ImageError::MalformedHeader("missing magic number".into()));
    }
    let magic = match &data[..2] {
        b"P2" => Magic::PgmAscii,
        b"P3" => Magic::PpmAscii,
        b"P5" => Magic::PgmBinary,
        b"P6" => Magic::PpmBinary,
        other => {
            return Err(ImageError::MalformedHeader(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut cur = Cursor { data, pos: 2 };
    let width = cur.header_number("width")? as usize;
    let height = cur.header_number("height")? as usize;
    let maxval = cur.header_number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader(format!(
            "zero dimension {}x{}",
            width, height
        )));
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxVal(maxval));
    }
    let expected = width * height * magic.samples_per_pixel();

    let samples = match magic {
        Magic::PgmBinary | Magic::PpmBinary => {
            // exactly one whitespace byte separates the header from the raster
            if cur.pos >= data.len() || !data[cur.pos].is_ascii_whitespace() {
                return Err(ImageError::TruncatedData { expected, found: 0 });
            }
            let raster = &data[cur.pos + 1..];
            if raster.len() < expected {
                return Err(ImageError::TruncatedData {
                    expected,
                    found: raster.len(),
                });
            }
            raster[..expected].to_vec()
        }
        Magic::PgmAscii | Magic::PpmAscii => {
            let mut samples = Vec::with_capacity(expected);
            while samples.len() < expected {
                cur.skip_whitespace_and_comments();
                if cur.pos >= data.len() {
                    return Err(ImageError::TruncatedData {
                        expected,
                        found: samples.len(),
                    });
                }
                let v = cur.header_number("sample")?;
                if v > 255 {
                    return Err(ImageError::MalformedHeader(format!(
                        "sample {} exceeds maxval",
                        v
                    )));
                }
                samples.push(v as u8);
            }
            samples
        }
    };

    match magic {
        Magic::PgmAscii | Magic::PgmBinary => Ok(Image::Gray(GrayImage {
            width,
            height,
            pixels: samples,
        })),
        Magic::PpmAscii | Magic::PpmBinary => {
            let n = width * height;
            let (mut r, mut g, mut b) = (
                Vec::with_capacity(n),
                Vec::with_capacity(n),
                Vec::with_capacity(n),
            );
            for px in samples.chunks_exact(3) {
                r.push(px[0]);
                g.push(px[1]);
                b.push(px[2]);
            }
            Ok(Image::Color(ColorImage {
                red: GrayImage::new(width, height, r)?,
                green: GrayImage::new(width, height, g)?,
                blue: GrayImage::new(width, height, b)?,
            }))
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    decode(&fs::read(path)?)
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    match load_image(path)? {
        Image::Gray(g) => Ok(g),
        Image::Color(_) => Err(ImageError::MalformedHeader(
            "expected a graymap (P2/P5), found a pixmap".into(),
        )),
    }
}

pub fn load_color(path: impl AsRef<Path>) -> Result<ColorImage> {
    match load_image(path)? {
        Image::Color(c) => Ok(c),
        Image::Gray(_) => Err(ImageError::MalformedHeader(
            "expected a pixmap (P3/P6), found a graymap".into(),
        )),
    }
}

fn header(magic: &str, width: usize, height: usize, comments: &[String]) -> Vec<u8> {
    let mut out = format!("{}\n", magic);
    for line in comments.iter().flat_map(|c| c.lines()) {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&format!("{} {}\n255\n", width, height));
    out.into_bytes()
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    encode_pgm_with_comments(img, &[])
}

/// P5 with `# ` comment lines after the magic number.
pub fn encode_pgm_with_comments(img: &GrayImage, comments: &[String]) -> Vec<u8> {
    let mut out = header("P5", img.width, img.height, comments);
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_ppm(img: &ColorImage) -> Vec<u8> {
    encode_ppm_with_comments(img, &[])
}

pub fn encode_ppm_with_comments(img: &ColorImage, comments: &[String]) -> Vec<u8> {
    let mut out = header("P6", img.width(), img.height(), comments);
    out.reserve(img.red.len() * 3);
    for ((&r, &g), &b) in img
        .red
        .pixels
        .iter()
        .zip(&img.green.pixels)
        .zip(&img.blue.pixels)
    {
        out.extend_from_slice(&[r, g, b]);
    }
    out
}

fn write_bytes(bytes: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(&encode_pgm(img), path)
}

pub fn save_ppm(img: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(&encode_ppm(img), path)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    match img {
        Image::Gray(g) => save_pgm(g, path),
        Image::Color(c) => save_ppm(c, path),
    }
}

/// Replicates edge pixels outward by `radius` on every side.
pub fn pad_replicate(img: &GrayImage, radius: usize) -> GrayImage {
    let r = radius as isize;
    GrayImage::from_fn(img.width + 2 * radius, img.height + 2 * radius, |x, y| {
        img.get_clamped(x as isize - r, y as isize - r)
    })
}
