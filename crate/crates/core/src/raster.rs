//! Minimal owned raster type with the pixel operations the builtin tools need.
//!
//! Every operation here is integer-deterministic or uses a fixed evaluation
//! order for floating point, so equal inputs give byte-equal outputs.

use std::io::Cursor;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions must be at least 1x1 (got {0}x{1})")]
    Empty(u32, u32),
    #[error("unsupported channel count {0}")]
    Channels(u8),
    #[error("buffer length {got} does not match {width}x{height}x{channels}")]
    BufferLen {
        got: usize,
        width: u32,
        height: u32,
        channels: u8,
    },
    #[error("image codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interleaved 8-bit raster with 1 (gray), 3 (RGB) or 4 (RGBA) channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish()
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty(width, height));
        }
        if !matches!(channels, 1 | 3 | 4) {
            return Err(RasterError::Channels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(RasterError::BufferLen {
                got: data.len(),
                width,
                height,
                channels,
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Uniformly filled raster.
    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Result<Self, RasterError> {
        let channels = pixel.len() as u8;
        let mut data = Vec::with_capacity(width as usize * height as usize * pixel.len());
        for _ in 0..(width as usize * height as usize) {
            data.extend_from_slice(pixel);
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn longest_side(&self) -> u32 {
        self.width.max(self.height)
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels as usize]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, px: &[u8]) {
        let i = self.idx(x, y);
        let c = self.channels as usize;
        self.data[i..i + c].copy_from_slice(&px[..c]);
    }

    /// Pixel expanded to RGBA regardless of storage layout.
    pub fn rgba(&self, x: u32, y: u32) -> [u8; 4] {
        let p = self.pixel(x, y);
        match self.channels {
            1 => [p[0], p[0], p[0], 255],
            3 => [p[0], p[1], p[2], 255],
            _ => [p[0], p[1], p[2], p[3]],
        }
    }

    /// True when the raster carries no colour information: single channel, or
    /// every pixel has equal R, G and B.
    pub fn is_grayscale(&self) -> bool {
        match self.channels {
            1 => true,
            c => self
                .data
                .chunks_exact(c as usize)
                .all(|p| p[0] == p[1] && p[1] == p[2]),
        }
    }

    /// SHA-256 over the header and pixel bytes, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update([self.channels]);
        h.update(&self.data);
        hex::encode(h.finalize())
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        use image::{ExtendedColorType, ImageEncoder};
        let color = match self.channels {
            1 => ExtendedColorType::L8,
            3 => ExtendedColorType::Rgb8,
            _ => ExtendedColorType::Rgba8,
        };
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.data, self.width, self.height, color)
            .map_err(|e| RasterError::Codec(e.to_string()))?;
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png)
            .decode()
            .map_err(|e| RasterError::Codec(e.to_string()))?;
        Self::from_dynamic(img)
    }

    /// Decodes any format the `image` crate was built with (PNG here).
    pub fn from_encoded(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes).map_err(|e| RasterError::Codec(e.to_string()))?;
        Self::from_dynamic(img)
    }

    fn from_dynamic(img: image::DynamicImage) -> Result<Self, RasterError> {
        use image::DynamicImage as D;
        let (w, h) = (img.width(), img.height());
        match img {
            D::ImageLuma8(b) => Self::new(w, h, 1, b.into_raw()),
            D::ImageRgb8(b) => Self::new(w, h, 3, b.into_raw()),
            D::ImageRgba8(b) => Self::new(w, h, 4, b.into_raw()),
            D::ImageLumaA8(_) => Self::new(w, h, 4, img.to_rgba8().into_raw()),
            other if other.color().has_alpha() => Self::new(w, h, 4, other.to_rgba8().into_raw()),
            other => Self::new(w, h, 3, other.to_rgb8().into_raw()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let bytes = std::fs::read(path)?;
        Self::from_encoded(&bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }

    /// Same pixels with a different channel layout. Gray→RGB replicates,
    /// RGB→gray uses integer BT.601 luma, alpha is dropped or set opaque.
    pub fn with_channels(&self, channels: u8) -> Raster {
        if channels == self.channels {
            return self.clone();
        }
        let n = self.width as usize * self.height as usize;
        let mut data = Vec::with_capacity(n * channels as usize);
        for y in 0..self.height {
            for x in 0..self.width {
                let [r, g, b, a] = self.rgba(x, y);
                match channels {
                    1 => data.push(luma(r, g, b)),
                    3 => data.extend_from_slice(&[r, g, b]),
                    _ => data.extend_from_slice(&[r, g, b, a]),
                }
            }
        }
        Raster {
            width: self.width,
            height: self.height,
            channels,
            data,
        }
    }
}

/// Integer BT.601 luma with round-half-up.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

#[inline]
pub(crate) fn clamp_u8(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

/// Target dimensions for a longest-side resize, aspect preserved.
pub fn longest_side_dims(width: u32, height: u32, longest: u32) -> (u32, u32) {
    if width >= height {
        let h = ((height as u64 * longest as u64 * 2 + width as u64) / (2 * width as u64)) as u32;
        (longest, h.max(1))
    } else {
        let w = ((width as u64 * longest as u64 * 2 + height as u64) / (2 * height as u64)) as u32;
        (w.max(1), longest)
    }
}

/// Bilinear resample with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &Raster, width: u32, height: u32) -> Raster {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let c = src.channels as usize;
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    let axis = |dst: u32, scale: f64, len: u32| -> (usize, usize, f64) {
        let f = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (f.floor() as u32).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0 as usize, i1 as usize, f - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|x| axis(x, sx, src.width)).collect();
    let mut data = vec![0u8; width as usize * height as usize * c];
    let stride = src.width as usize * c;
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, src.height);
        let row0 = &src.data[y0 * stride..(y0 + 1) * stride];
        let row1 = &src.data[y1 * stride..(y1 + 1) * stride];
        let out_row = &mut data[y as usize * width as usize * c..(y as usize + 1) * width as usize * c];
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let p00 = row0[x0 * c + ch] as f64;
                let p10 = row0[x1 * c + ch] as f64;
                let p01 = row1[x0 * c + ch] as f64;
                let p11 = row1[x1 * c + ch] as f64;
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                out_row[x * c + ch] = clamp_u8(top + (bot - top) * fy);
            }
        }
    }
    Raster {
        width,
        height,
        channels: src.channels,
        data,
    }
}

pub fn crop(src: &Raster, x: u32, y: u32, width: u32, height: u32) -> Option<Raster> {
    if width == 0 || height == 0 || x.checked_add(width)? > src.width || y.checked_add(height)? > src.height {
        return None;
    }
    let c = src.channels as usize;
    let mut data = Vec::with_capacity(width as usize * height as usize * c);
    for row in y..y + height {
        let start = src.idx(x, row);
        data.extend_from_slice(&src.data[start..start + width as usize * c]);
    }
    Some(Raster {
        width,
        height,
        channels: src.channels,
        data,
    })
}

pub fn flip_horizontal(src: &Raster) -> Raster {
    let mut out = src.clone();
    for y in 0..src.height {
        for x in 0..src.width {
            out.set_pixel(src.width - 1 - x, y, src.pixel(x, y));
        }
    }
    out
}

pub fn rotate_clockwise(src: &Raster) -> Raster {
    let (w, h) = (src.height, src.width);
    let mut out = Raster {
        width: w,
        height: h,
        channels: src.channels,
        data: vec![0; src.data.len()],
    };
    for y in 0..src.height {
        for x in 0..src.width {
            out.set_pixel(src.height - 1 - y, x, src.pixel(x, y));
        }
    }
    out
}

pub fn rotate_counter_clockwise(src: &Raster) -> Raster {
    let (w, h) = (src.height, src.width);
    let mut out = Raster {
        width: w,
        height: h,
        channels: src.channels,
        data: vec![0; src.data.len()],
    };
    for y in 0..src.height {
        for x in 0..src.width {
            out.set_pixel(y, src.width - 1 - x, src.pixel(x, y));
        }
    }
    out
}

pub fn to_gray(src: &Raster) -> Raster {
    if src.channels == 1 {
        return src.clone();
    }
    src.with_channels(1)
}

/// Separable Gaussian blur, clamp-to-edge, sigma = size / 6.
pub fn gaussian_blur(src: &Raster, size: u32) -> Raster {
    if size <= 1 {
        return src.clone();
    }
    let sigma = size as f64 / 6.0;
    let r = (size / 2) as i64;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let c = src.channels as usize;
    let (w, h) = (src.width as i64, src.height as i64);
    let mut tmp = vec![0f64; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let sx = (x + k as i64 - r).clamp(0, w - 1);
                    acc += wgt * src.data[((y * w + sx) as usize) * c + ch] as f64;
                }
                tmp[((y * w + x) as usize) * c + ch] = acc;
            }
        }
    }
    let mut data = vec![0u8; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let sy = (y + k as i64 - r).clamp(0, h - 1);
                    acc += wgt * tmp[((sy * w + x) as usize) * c + ch];
                }
                data[((y * w + x) as usize) * c + ch] = clamp_u8(acc);
            }
        }
    }
    Raster {
        width: src.width,
        height: src.height,
        channels: src.channels,
        data,
    }
}

/// Saturation scaling around per-pixel luma: `gray + factor * (c - gray)`.
pub fn enhance_color(src: &Raster, factor: f64) -> Raster {
    if src.channels == 1 {
        return src.clone();
    }
    let c = src.channels as usize;
    let mut out = src.clone();
    for px in out.data.chunks_exact_mut(c) {
        let g = luma(px[0], px[1], px[2]) as f64;
        for v in px.iter_mut().take(3) {
            *v = clamp_u8(g + factor * (*v as f64 - g));
        }
    }
    out
}

/// Pads every side by `border` pixels of the given colour.
pub fn expand(src: &Raster, border: u32, color: [u8; 3]) -> Raster {
    let (w, h) = (src.width + 2 * border, src.height + 2 * border);
    let fill: Vec<u8> = match src.channels {
        1 => vec![luma(color[0], color[1], color[2])],
        3 => color.to_vec(),
        _ => vec![color[0], color[1], color[2], 255],
    };
    let mut out = Raster::filled(w, h, &fill).expect("non-empty padded raster");
    for y in 0..src.height {
        for x in 0..src.width {
            out.set_pixel(x + border, y + border, src.pixel(x, y));
        }
    }
    out
}

/// Alpha-composites `overlay` onto `base` with its top-left corner at
/// (`x`, `y`), clipped to the base. `opacity` scales the overlay's own alpha.
pub fn composite(base: &Raster, overlay: &Raster, x: i64, y: i64, opacity: f64) -> Raster {
    let mut out = base.clone();
    let c = base.channels as usize;
    for oy in 0..overlay.height as i64 {
        let by = y + oy;
        if by < 0 || by >= base.height as i64 {
            continue;
        }
        for ox in 0..overlay.width as i64 {
            let bx = x + ox;
            if bx < 0 || bx >= base.width as i64 {
                continue;
            }
            let [r, g, b, a] = overlay.rgba(ox as u32, oy as u32);
            let alpha = opacity * a as f64 / 255.0;
            if alpha <= 0.0 {
                continue;
            }
            let src: [u8; 3] = if c == 1 { [luma(r, g, b); 3] } else { [r, g, b] };
            let i = out.idx(bx as u32, by as u32);
            for ch in 0..c.min(3) {
                let d = out.data[i + ch] as f64;
                out.data[i + ch] = clamp_u8(d + (src[ch] as f64 - d) * alpha);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: u32, h: u32) -> Raster {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&[(x * 7 + y) as u8, (y * 5) as u8, (x ^ y) as u8]);
            }
        }
        Raster::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn longest_side_preserves_aspect() {
        assert_eq!(longest_side_dims(1024, 768, 512), (512, 384));
        assert_eq!(longest_side_dims(768, 1024, 512), (384, 512));
        assert_eq!(longest_side_dims(1000, 1, 10), (10, 1));
    }

    #[test]
    fn rotations_and_flip_are_group_elements() {
        let img = ramp(5, 3);
        let r = rotate_clockwise(&img);
        assert_eq!((r.width(), r.height()), (3, 5));
        assert_eq!(rotate_counter_clockwise(&r), img);
        let r4 = (0..4).fold(img.clone(), |acc, _| rotate_clockwise(&acc));
        assert_eq!(r4, img);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
        // top-left pixel lands at top-right after a clockwise turn
        assert_eq!(r.pixel(2, 0), img.pixel(0, 0));
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let img = ramp(9, 4);
        assert_eq!(Raster::from_png(&img.to_png().unwrap()).unwrap(), img);
        let g = to_gray(&img);
        assert_eq!(Raster::from_png(&g.to_png().unwrap()).unwrap(), g);
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = Raster::filled(8, 6, &[10, 200, 30]).unwrap();
        assert_eq!(gaussian_blur(&img, 5), img);
    }

    #[test]
    fn crop_rejects_out_of_bounds() {
        let img = ramp(4, 4);
        assert!(crop(&img, 2, 2, 3, 1).is_none());
        let c = crop(&img, 1, 2, 3, 2).unwrap();
        assert_eq!((c.width(), c.height()), (3, 2));
        assert_eq!(c.pixel(0, 0), img.pixel(1, 2));
    }

    #[test]
    fn zero_sized_raster_is_rejected() {
        assert!(matches!(Raster::new(0, 3, 3, vec![]), Err(RasterError::Empty(0, 3))));
    }
}
