use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

/// 8-bit grayscale scan with physical pixel pitch.
///
/// Columns run along `x1`, rows along `x3` (depth increases downward).
/// `pitch = [mm per column, mm per row]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pitch: [f64; 2],
}

pub const MIN_SIDE: usize = 16;

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, pitch: [f64; 2]) -> Result<Self> {
        ensure!(
            width >= MIN_SIDE && height >= MIN_SIDE,
            Image,
            "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
        );
        ensure!(
            pixels.len() == width * height,
            Image,
            "expected {} pixels, got {}",
            width * height,
            pixels.len()
        );
        ensure!(
            pitch.iter().all(|p| p.is_finite() && *p > 0.0),
            Parameter,
            "pixel pitch must be positive"
        );
        Ok(Self {
            width,
            height,
            pixels,
            pitch,
        })
    }

    /// Renders `f(col, row)` clamped to `[0, 255]` and rounded.
    pub fn from_fn(
        width: usize,
        height: usize,
        pitch: [f64; 2],
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                pixels.push(quantize(f(col, row)));
            }
        }
        Self::new(width, height, pixels, pitch)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pitch(&self) -> [f64; 2] {
        self.pitch
    }

    pub fn with_pitch(mut self, pitch: [f64; 2]) -> Result<Self> {
        ensure!(
            pitch.iter().all(|p| p.is_finite() && *p > 0.0),
            Parameter,
            "pixel pitch must be positive"
        );
        self.pitch = pitch;
        Ok(self)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear gray value at pixel coordinates `(x, y) = (col, row)`, or
    /// `None` outside the pixel-centre hull.
    #[inline]
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        let c0 = (x.floor() as usize).min(self.width - 2);
        let r0 = (y.floor() as usize).min(self.height - 2);
        let fx = x - c0 as f64;
        let fy = y - r0 as f64;
        let p = |c: usize, r: usize| self.get(c, r) as f64;
        let top = p(c0, r0) * (1.0 - fx) + p(c0 + 1, r0) * fx;
        let bottom = p(c0, r0 + 1) * (1.0 - fx) + p(c0 + 1, r0 + 1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Physical misalignment for an angle measured in pixel space.
    pub fn physical_angle(&self, pixel_angle: f64) -> f64 {
        (self.pitch[1] / self.pitch[0] * pixel_angle.tan()).atan()
    }

    /// Pixel-space angle of a physical misalignment.
    pub fn pixel_angle(&self, physical_angle: f64) -> f64 {
        (self.pitch[0] / self.pitch[1] * physical_angle.tan()).atan()
    }

    /// Pixel coordinates to millimetres.
    pub fn to_mm(&self, col: f64, row: f64) -> (f64, f64) {
        (col * self.pitch[0], row * self.pitch[1])
    }

    /// Image reflected about a horizontal line (rows reversed).
    pub fn flipped_rows(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in (0..self.height).rev() {
            pixels.extend_from_slice(&self.pixels[row * self.width..(row + 1) * self.width]);
        }
        Self { pixels, ..self.clone() }
    }

    /// Binary PGM (P5), maxval 255.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(input: R, pitch: [f64; 2]) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut fields = Vec::with_capacity(4);
        let mut line = String::new();
        while fields.len() < 4 {
            line.clear();
            ensure!(
                reader.read_line(&mut line)? > 0,
                Image,
                "truncated PGM header"
            );
            let content = line.split('#').next().unwrap_or("");
            fields.extend(content.split_whitespace().map(str::to_owned));
        }
        ensure!(fields[0] == "P5", Image, "not a binary PGM (magic {:?})", fields[0]);
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Image(format!("bad PGM header field {s:?}")))
        };
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        ensure!(maxval == 255, Image, "only 8-bit PGM is supported");
        let mut pixels = vec![0u8; w * h];
        reader
            .read_exact(&mut pixels)
            .map_err(|e| Error::Image(format!("truncated PGM data: {e}")))?;
        Self::new(w, h, pixels, pitch)
    }

    pub fn read_png<R: Read>(input: R, pitch: [f64; 2]) -> Result<Self> {
        let mut buf = Vec::new();
        BufReader::new(input).read_to_end(&mut buf)?;
        let img = image::load_from_memory_with_format(&buf, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw(), pitch)
    }

    pub fn write_png<W: Write>(&self, mut out: W) -> Result<()> {
        let img = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .ok_or_else(|| Error::Image("pixel buffer size mismatch".into()))?;
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        out.write_all(buf.get_ref())?;
        Ok(())
    }

    /// Reads a `.pgm` or `.png` file.
    pub fn open(path: &Path, pitch: [f64; 2]) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "pgm" => Self::read_pgm(file, pitch),
            Some(ext) if ext == "png" => Self::read_png(file, pitch),
            _ => Err(Error::Image(format!(
                "unsupported image type: {}",
                path.display()
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "png" => self.write_png(file),
            _ => self.write_pgm(file),
        }
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> GrayImage {
        GrayImage::from_fn(20, 18, [0.1, 0.05], |c, r| (c * 3 + r * 7) as f64).unwrap()
    }

    #[test]
    fn rejects_tiny_or_inconsistent_images() {
        assert!(GrayImage::new(8, 32, vec![0; 256], [1.0, 1.0]).is_err());
        assert!(GrayImage::new(16, 16, vec![0; 10], [1.0, 1.0]).is_err());
        assert!(GrayImage::new(16, 16, vec![0; 256], [0.0, 1.0]).is_err());
    }

    #[test]
    fn bilinear_is_exact_on_affine_images() {
        let img = ramp();
        assert_eq!(img.bilinear(3.0, 4.0), Some(37.0));
        let v = img.bilinear(3.25, 4.5).unwrap();
        assert!((v - (3.25 * 3.0 + 4.5 * 7.0)).abs() < 1e-12);
        assert_eq!(img.bilinear(19.0, 17.0), Some(176.0));
        assert_eq!(img.bilinear(-0.1, 2.0), None);
        assert_eq!(img.bilinear(19.01, 2.0), None);
    }

    #[test]
    fn pgm_and_png_round_trip() {
        let img = ramp();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n20 18\n255\n"));
        assert_eq!(GrayImage::read_pgm(buf.as_slice(), img.pitch()).unwrap(), img);

        let mut png = Vec::new();
        img.write_png(&mut png).unwrap();
        assert_eq!(GrayImage::read_png(png.as_slice(), img.pitch()).unwrap(), img);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut data = b"P5\n# scanner output\n16 16\n# depth\n255\n".to_vec();
        data.extend(std::iter::repeat_n(9u8, 256));
        let img = GrayImage::read_pgm(data.as_slice(), [1.0, 1.0]).unwrap();
        assert_eq!(img.get(15, 15), 9);
        assert!(GrayImage::read_pgm(&b"P2\n16 16\n255\n"[..], [1.0, 1.0]).is_err());
    }

    #[test]
    fn pitch_conversion_round_trips() {
        let img = ramp();
        let phys = img.physical_angle(0.3);
        assert!((phys.tan() - 0.5 * 0.3f64.tan()).abs() < 1e-15);
        assert!((img.pixel_angle(phys) - 0.3).abs() < 1e-15);
    }
}
