//! Binary portable graymaps/pixmaps (P5/P6, maxval 255) and pixel clouds.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Metric, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    Gray,
    Rgb,
}

impl ImageMode {
    pub fn channels(self) -> usize {
        match self {
            ImageMode::Gray => 1,
            ImageMode::Rgb => 3,
        }
    }
}

impl fmt::Display for ImageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageMode::Gray => "gray",
            ImageMode::Rgb => "rgb",
        })
    }
}

impl FromStr for ImageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(ImageMode::Gray),
            "rgb" => Ok(ImageMode::Rgb),
            _ => Err(Error::Argument(format!("unknown image mode {s:?}"))),
        }
    }
}

/// A decoded image, pixels row-major from the top-left corner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub mode: ImageMode,
    pub data: Vec<u8>,
}

impl Pnm {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, ImageMode::Gray, data)
    }

    pub fn new(width: usize, height: usize, mode: ImageMode, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * mode.channels() {
            return Err(Error::Format(format!(
                "{width}x{height} {mode} image needs {} bytes, got {}",
                width * height * mode.channels(),
                data.len()
            )));
        }
        Ok(Self { width, height, mode, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = match self.mode {
            ImageMode::Gray => "P5",
            ImageMode::Rgb => "P6",
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Pnm> {
    parse_pnm(&fs::read(path)?)
}

pub fn write_pnm(path: impl AsRef<Path>, image: &Pnm) -> Result<()> {
    fs::write(path, image.to_bytes())?;
    Ok(())
}

pub fn parse_pnm(bytes: &[u8]) -> Result<Pnm> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let mode = match magic.as_str() {
        "P5" => ImageMode::Gray,
        "P6" => ImageMode::Rgb,
        other => return Err(Error::Format(format!("unsupported magic number {other:?}"))),
    };
    let mut header_number = |name: &str| -> Result<usize> {
        let tok = next_token(bytes, &mut pos)?;
        tok.parse().map_err(|_| Error::Format(format!("bad {name} {tok:?} in image header")))
    };
    let width = header_number("width")?;
    let height = header_number("height")?;
    let maxval = header_number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("only maxval 255 is supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("truncated image header".into()));
    }
    pos += 1;
    let need = width * height * mode.channels();
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::Format(format!("truncated payload: expected {need} bytes, found {}", payload.len())));
    }
    Pnm::new(width, height, mode, payload[..need].to_vec())
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
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
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated image header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCloudSpec {
    pub source: PathBuf,
    /// Expected channel layout; `None` accepts whatever the file holds.
    pub mode: Option<ImageMode>,
    /// Multiplier applied to pixel coordinates, not to channel values.
    pub coordinate_scale: f64,
}

/// Reads the image named by `spec` and converts it to a pixel cloud.
pub fn image_to_cloud(spec: &ImageCloudSpec) -> Result<(PointCloud, Pnm)> {
    let image = read_pnm(&spec.source)?;
    if let Some(mode) = spec.mode {
        if mode != image.mode {
            return Err(Error::Format(format!(
                "requested {mode} mode but {} is a {} image",
                spec.source.display(),
                image.mode
            )));
        }
    }
    let cloud = pnm_to_cloud(&image, spec.coordinate_scale)?;
    Ok((cloud, image))
}

/// One point `(x·s, y·s, channels…)` per pixel, `x` the column and `y` the
/// row. Channel values stay in 0–255 units.
pub fn pnm_to_cloud(image: &Pnm, coordinate_scale: f64) -> Result<PointCloud> {
    if !(coordinate_scale.is_finite() && coordinate_scale > 0.0) {
        return Err(Error::Argument(format!("coordinate scale must be positive, got {coordinate_scale}")));
    }
    let ch = image.mode.channels();
    let dim = 2 + ch;
    let mut coords = Vec::with_capacity(image.width * image.height * dim);
    for y in 0..image.height {
        for x in 0..image.width {
            coords.push(x as f64 * coordinate_scale);
            coords.push(y as f64 * coordinate_scale);
            let base = (y * image.width + x) * ch;
            coords.extend(image.data[base..base + ch].iter().map(|&v| v as f64));
        }
    }
    PointCloud::from_flat(dim, coords, Metric::Euclidean)
}

/// A binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Graymap with 255 for set pixels and 0 elsewhere.
    pub fn to_pnm(&self) -> Pnm {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Pnm::gray(self.width, self.height, data).expect("mask dimensions are consistent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_pixels_unpack_row_major() {
        let img = parse_pnm(b"P5\n2 2\n255\n\x00\x40\x80\xff").unwrap();
        let c = pnm_to_cloud(&img, 1.0).unwrap();
        assert_eq!(c.dim(), 3);
        let pts: Vec<Vec<f64>> = c.points().map(<[f64]>::to_vec).collect();
        assert_eq!(pts, vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 64.0], vec![0.0, 1.0, 128.0], vec![1.0, 1.0, 255.0]]);
    }

    #[test]
    fn rgb_pixel() {
        let img = parse_pnm(b"P6 1 1 255\n\x0a\x14\x1e").unwrap();
        let c = pnm_to_cloud(&img, 1.0).unwrap();
        assert_eq!(c.coords(), &[0.0, 0.0, 10.0, 20.0, 30.0]);
        let c = pnm_to_cloud(&img, 2.0).unwrap();
        assert_eq!(c.dim(), 5);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = parse_pnm(b"P5\n# made by hand\n1 1\n# more\n255\n\x07").unwrap();
        assert_eq!(img.data, vec![7]);
    }

    #[test]
    fn format_errors() {
        assert!(matches!(parse_pnm(b"P2\n1 1\n255\n7"), Err(Error::Format(_))));
        assert!(matches!(parse_pnm(b"P5\n2 2\n255\n\x01\x02"), Err(Error::Format(_))));
        assert!(matches!(parse_pnm(b"P5\n2 2\n65535\n"), Err(Error::Format(_))));
        assert!(matches!(parse_pnm(b"P5\n2"), Err(Error::Format(_))));
    }

    #[test]
    fn bytes_round_trip() {
        let img = Pnm::new(3, 1, ImageMode::Rgb, (0..9).collect()).unwrap();
        assert_eq!(parse_pnm(&img.to_bytes()).unwrap(), img);
    }
}
