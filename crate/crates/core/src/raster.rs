//! RGB rasters, ellipse rasterization and binary PPM (P6) encoding.

use std::io::Write;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("malformed PPM: {0}")]
    Malformed(String),
    #[error("empty crop")]
    EmptyCrop,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Image { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copies the pixels of the half-open rectangle `[x0, x1) x [y0, y1)`, clipped to the image.
    pub fn crop(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Image, RasterError> {
        let cx0 = x0.clamp(0, self.width as i64) as usize;
        let cx1 = x1.clamp(0, self.width as i64) as usize;
        let cy0 = y0.clamp(0, self.height as i64) as usize;
        let cy1 = y1.clamp(0, self.height as i64) as usize;
        if cx1 <= cx0 || cy1 <= cy0 {
            return Err(RasterError::EmptyCrop);
        }
        let mut out = Image::filled(cx1 - cx0, cy1 - cy0, [0, 0, 0]);
        for y in cy0..cy1 {
            for x in cx0..cx1 {
                out.set(x - cx0, y - cy0, self.get(x, y));
            }
        }
        Ok(out)
    }

    /// Encodes as binary PPM. `comment` lines (without `#`) go into the header.
    pub fn to_ppm(&self, comment: Option<&str>) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() + 64);
        out.extend_from_slice(b"P6\n");
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}").unwrap();
            }
        }
        write!(out, "{} {}\n255\n", self.width, self.height).unwrap();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Image, RasterError> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(RasterError::Malformed("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(RasterError::Malformed(format!("unsupported magic {:?}", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| RasterError::Malformed(format!("bad header field {s:?}")));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(RasterError::Malformed(format!("unsupported maxval {maxval}")));
        }
        // single whitespace byte separates header from data
        pos += 1;
        let need = width * height * 3;
        if bytes.len() < pos + need {
            return Err(RasterError::Malformed("pixel data truncated".into()));
        }
        Ok(Image { width, height, data: bytes[pos..pos + need].to_vec() })
    }
}

/// A filled ellipse with semi-axes `a` (along `angle`) and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    /// Half extents of the tight axis-aligned bounds.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (hx, hy)
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = px - self.cx;
        let dy = py - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Radius of the ellipse along the direction `(dx, dy)` from its center.
    pub fn radius_towards(&self, dx: f64, dy: f64) -> f64 {
        let n = dx.hypot(dy);
        if n == 0.0 {
            return self.b.min(self.a);
        }
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / n;
        let v = (-dx * s + dy * c) / n;
        self.a * self.b / ((self.b * u).powi(2) + (self.a * v).powi(2)).sqrt()
    }

    /// Pixels whose centers fall inside the ellipse, clipped to `width x height`.
    pub fn pixels(&self, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (hx, hy) = self.half_extents();
        let x0 = ((self.cx - hx).floor().max(0.0)) as usize;
        let y0 = ((self.cy - hy).floor().max(0.0)) as usize;
        let x1 = ((self.cx + hx).ceil().max(0.0) as usize).min(width);
        let y1 = ((self.cy + hy).ceil().max(0.0) as usize).min(height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
            .filter(move |&(x, y)| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }

    pub fn fill(&self, img: &mut Image, color: Rgb) {
        let (w, h) = (img.width(), img.height());
        let px: Vec<_> = self.pixels(w, h).collect();
        for (x, y) in px {
            img.set(x, y, color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_with_comment() {
        let mut img = Image::filled(3, 2, [1, 2, 3]);
        img.set(2, 1, [200, 100, 50]);
        let bytes = img.to_ppm(Some("seed=9"));
        assert!(bytes.starts_with(b"P6\n# seed=9\n3 2\n255\n"));
        assert_eq!(Image::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn rejects_truncated_ppm() {
        assert!(Image::from_ppm(b"P6\n3 2\n255\n\x00\x01").is_err());
        assert!(Image::from_ppm(b"P3\n1 1\n255\n").is_err());
    }

    #[test]
    fn ellipse_extent_matches_pixels() {
        let e = Ellipse { cx: 30.3, cy: 20.7, a: 12.0, b: 5.0, angle: 0.6 };
        let mut img = Image::filled(64, 48, [0, 0, 0]);
        e.fill(&mut img, [255, 255, 255]);
        let (hx, hy) = e.half_extents();
        let mut xs = (usize::MAX, 0);
        let mut ys = (usize::MAX, 0);
        for y in 0..48 {
            for x in 0..64 {
                if img.get(x, y) == [255, 255, 255] {
                    xs = (xs.0.min(x), xs.1.max(x + 1));
                    ys = (ys.0.min(y), ys.1.max(y + 1));
                }
            }
        }
        assert!((xs.0 as f64 - (e.cx - hx)).abs() <= 1.0);
        assert!((xs.1 as f64 - (e.cx + hx)).abs() <= 1.0);
        assert!((ys.0 as f64 - (e.cy - hy)).abs() <= 1.0);
        assert!((ys.1 as f64 - (e.cy + hy)).abs() <= 1.0);
    }

    #[test]
    fn radius_along_axes() {
        let e = Ellipse { cx: 0.0, cy: 0.0, a: 4.0, b: 2.0, angle: 0.0 };
        assert!((e.radius_towards(1.0, 0.0) - 4.0).abs() < 1e-12);
        assert!((e.radius_towards(0.0, -3.0) - 2.0).abs() < 1e-12);
        let r = Ellipse { angle: std::f64::consts::FRAC_PI_2, ..e };
        assert!((r.radius_towards(0.0, 1.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn crop_clips_and_rejects_empty() {
        let img = Image::filled(4, 4, [9, 9, 9]);
        let c = img.crop(-2, 1, 2, 10).unwrap();
        assert_eq!((c.width(), c.height()), (2, 3));
        assert!(matches!(img.crop(5, 5, 8, 8), Err(RasterError::EmptyCrop)));
    }
}
