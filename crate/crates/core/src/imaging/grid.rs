use crate::error::{Error, Result};

/// Row-major, channel-interleaved floating point image.
///
/// Pixel centers sit at integer coordinates, so the valid continuous domain
/// is `[0, width-1] x [0, height-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::constant(width, height, channels, 0.0)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image samples must be finite"));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    /// Stacks single-channel planes into one interleaved image.
    pub fn from_planes(planes: &[Image]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("no planes given"))?;
        if planes.iter().any(|p| {
            p.channels != 1 || p.width != first.width || p.height != first.height
        }) {
            return Err(Error::DimensionMismatch(
                "planes must be single-channel with equal size".into(),
            ));
        }
        let n = planes.len();
        let mut data = vec![0.0; first.width * first.height * n];
        for (c, p) in planes.iter().enumerate() {
            for (i, v) in p.data.iter().enumerate() {
                data[i * n + c] = *v;
            }
        }
        Image::from_vec(first.width, first.height, n, data)
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Extracts one channel as a single-channel image.
    pub fn plane(&self, c: usize) -> Image {
        assert!(c < self.channels);
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Bilinear sample with clamp-to-edge. Writes `channels` values into `out`
    /// and returns whether the coordinate was inside the image domain.
    #[inline]
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        let taps = bilinear_taps(self.width, self.height, x, y);
        let ch = self.channels;
        for (c, o) in out.iter_mut().enumerate().take(ch) {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += taps.weights[k] * self.data[taps.indices[k] * ch + c];
            }
            *o = acc;
        }
        taps.in_bounds
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> (Vec<f64>, bool) {
        let mut out = vec![0.0; self.channels];
        let ok = self.sample_into(x, y, &mut out);
        (out, ok)
    }
}

/// The four grid taps of a bilinear lookup.
#[derive(Clone, Copy, Debug)]
pub struct BilinearTaps {
    pub indices: [usize; 4],
    pub weights: [f64; 4],
    pub in_bounds: bool,
}

#[inline]
pub fn in_domain(width: usize, height: usize, x: f64, y: f64) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
}

/// Pixel indices and weights of a clamped bilinear lookup at `(x, y)`.
#[inline]
pub fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> BilinearTaps {
    let in_bounds = in_domain(width, height, x, y);
    let xc = if x.is_finite() { x.clamp(0.0, (width - 1) as f64) } else { 0.0 };
    let yc = if y.is_finite() { y.clamp(0.0, (height - 1) as f64) } else { 0.0 };
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    BilinearTaps {
        indices: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        weights: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
        in_bounds,
    }
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn downsample_box(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be positive"));
    }
    if img.width % factor != 0 || img.height % factor != 0 {
        return Err(Error::NotDivisible {
            width: img.width,
            height: img.height,
            factor,
        });
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h, ch) = (img.width / factor, img.height / factor, img.channels);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Image::zeros(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                // Offsets from the first sample keep constant blocks exact.
                let base = img.get(x * factor, y * factor, c);
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += img.get(x * factor + dx, y * factor + dy, c) - base;
                    }
                }
                out.data[(y * w + x) * ch + c] = base + acc * norm;
            }
        }
    }
    Ok(out)
}

#[inline]
fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample source taps for 1-D bicubic resampling by `factor`.
fn cubic_taps(len: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    let f = factor as f64;
    let offset = (f - 1.0) / 2.0;
    (0..len * factor)
        .map(|xo| {
            let src = (xo as f64 - offset) / f;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let i = base as i64 - 1 + k as i64;
                idx[k] = i.clamp(0, len as i64 - 1) as usize;
                w[k] = catmull_rom(frac - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Catmull-Rom bicubic upsampling with concentric pixel grids.
pub fn upsample_bicubic(img: &Image, factor: usize) -> Image {
    assert!(factor >= 1, "upsample factor must be positive");
    if factor == 1 {
        return img.clone();
    }
    let ch = img.channels;
    let (w, h) = (img.width, img.height);
    let (wo, ho) = (w * factor, h * factor);
    let xt = cubic_taps(w, factor);
    let yt = cubic_taps(h, factor);

    let mut horiz = vec![0.0; wo * h * ch];
    for y in 0..h {
        for (xo, (idx, wt)) in xt.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * img.get(idx[k], y, c);
                }
                horiz[(y * wo + xo) * ch + c] = acc;
            }
        }
    }
    let mut out = Image::zeros(wo, ho, ch);
    for (yo, (idx, wt)) in yt.iter().enumerate() {
        for xo in 0..wo {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * horiz[(idx[k] * wo + xo) * ch + c];
                }
                out.data[(yo * wo + xo) * ch + c] = acc;
            }
        }
    }
    out
}

/// Per-pixel, per-channel forward differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl GradientField {
    /// Isotropic magnitude `sqrt(dx^2 + dy^2)` at pixel `i`, channel `c`.
    #[inline]
    pub fn magnitude(&self, i: usize, c: usize) -> f64 {
        let k = i * self.channels + c;
        self.dx[k].hypot(self.dy[k])
    }
}

/// Forward differences; the last column has zero `dx` and the last row zero `dy`.
pub fn gradient(img: &Image) -> GradientField {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut dx = vec![0.0; w * h * ch];
    let mut dy = vec![0.0; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let k = (y * w + x) * ch + c;
                let v = img.data[k];
                if x + 1 < w {
                    dx[k] = img.data[k + ch] - v;
                }
                if y + 1 < h {
                    dy[k] = img.data[k + w * ch] - v;
                }
            }
        }
    }
    GradientField {
        width: w,
        height: h,
        channels: ch,
        dx,
        dy,
    }
}

/// Peak signal-to-noise ratio over all channels. Identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let mse = sse / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Per-pixel boolean mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// 8-neighbourhood dilation of the `true` set.
    pub fn dilate(&self, radius: usize) -> Mask {
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        let mut out = Mask::filled(self.width, self.height, false);
        for y in 0..h {
            for x in 0..w {
                if !self.data[(y * w + x) as usize] {
                    continue;
                }
                for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                        out.data[(yy * w + xx) as usize] = true;
                    }
                }
            }
        }
        out
    }
}
