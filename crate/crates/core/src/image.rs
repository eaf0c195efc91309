//! Three-channel floating-point frames in `[0, 1]`.

use std::path::Path;

use hstr_tensor::{Float, Tensor};
use ndarray::IxDyn;

use crate::error::{Error, Result};

/// An `H x W x 3` image stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageF {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x3 image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("image value {v}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value; height * width * 3] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Checks the `[0, 1]` range and finiteness.
    pub fn validate(&self) -> Result<()> {
        for &v in &self.data {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("image value {v}")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invariant(format!("image value {v} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, |y, x, c| self.get(top + y, left + x, c)))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x, c| self.get(y, self.width - 1 - x, c))
    }

    /// Edge-replicating pad on the bottom and right.
    pub fn pad_replicate(&self, height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |y, x, c| {
            self.get(y.min(self.height - 1), x.min(self.width - 1), c)
        })
    }

    /// `a * self + b * other`, elementwise.
    pub fn blend(&self, a: f32, other: &ImageF, b: f32) -> Result<Self> {
        self.same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Self { height: self.height, width: self.width, data })
    }

    pub fn same_dims(&self, other: &ImageF) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "resolution mismatch: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = T::of(px[c] as f64);
            }
        }
        Tensor::from_shape_vec(IxDyn(&[1, 3, self.height, self.width]), out).expect("shape")
    }

    /// Stacks same-sized images into `[N, 3, H, W]`.
    pub fn batch<T: Float>(images: &[&ImageF]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (h, w) = first.dims();
        let mut out = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            first.same_dims(img)?;
            out.extend(img.to_tensor::<T>().iter().copied());
        }
        Ok(Tensor::from_shape_vec(IxDyn(&[images.len(), 3, h, w]), out).expect("shape"))
    }

    /// Reads image `index` of an `[N, 3, H, W]` tensor. Values are not clamped.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 3 || index >= s[0] {
            return Err(Error::Shape(format!("cannot read image {index} from tensor {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let plane = h * w;
        let src = t.as_slice().expect("standard layout");
        let base = index * 3 * plane;
        let mut data = vec![0f32; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                data[i * 3 + c] = src[base + c * plane + i].as_f64() as f32;
            }
        }
        Self::new(h, w, data)
    }

    /// Decodes an 8-bit file and scales by 1/255.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Self::new(h as usize, w as usize, data)
    }

    /// Writes an 8-bit PNG (values clamped and rounded).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size");
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    /// Rounds to the 8-bit grid, as a save/load cycle would.
    pub fn quantized(&self) -> Self {
        let data = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
        Self { height: self.height, width: self.width, data }
    }
}
