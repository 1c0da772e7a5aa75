use serde::{Deserialize, Serialize};

use crate::datamodel::Image;
use crate::error::{Error, Result};
use crate::C64;

/// Dense `channels × height × width` real field, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::Shape(format!("{} values for a {c}×{h}×{w} tensor", data.len())));
        }
        Ok(Tensor { c, h, w, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Real and imaginary planes of a complex image.
    pub fn from_complex(img: &Image) -> Self {
        let (h, w) = img.dim();
        let mut t = Tensor::zeros(2, h, w);
        for (i, v) in img.iter().enumerate() {
            t.data[i] = v.re;
            t.data[h * w + i] = v.im;
        }
        t
    }

    pub fn to_complex(&self) -> Result<Image> {
        if self.c != 2 {
            return Err(Error::Shape(format!("complex view needs 2 channels, have {}", self.c)));
        }
        let p = self.plane();
        Ok(Image::from_shape_fn((self.h, self.w), |(y, x)| {
            let i = y * self.w + x;
            C64::new(self.data[i], self.data[p + i])
        }))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
