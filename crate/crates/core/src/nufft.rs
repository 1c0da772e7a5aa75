//! Kaiser–Bessel gridding NUFFT and the exact direct-DFT oracle.
//!
//! Convention: for an `N×N` image with pixels at centred integer positions
//! `p = (ix - N/2, iy - N/2)`, the forward transform evaluates
//! `s(k) = Σ_p x[p]·exp(-2πi k·p)` at coordinates `k ∈ [-0.5, 0.5)²`
//! (cycles/pixel). `adjoint` is its exact Hermitian transpose.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::C64;

const LUT_PER_UNIT: usize = 1024;
const MAX_WIDTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NufftConfig {
    pub oversampling: f64,
    pub kernel_width: usize,
}

impl Default for NufftConfig {
    fn default() -> Self {
        NufftConfig {
            oversampling: 2.0,
            kernel_width: 6,
        }
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser–Bessel shape parameter minimizing aliasing for a given
/// oversampling ratio and kernel width (Beatty et al.).
pub fn kaiser_bessel_beta(oversampling: f64, width: usize) -> f64 {
    let w = width as f64;
    let a = oversampling;
    std::f64::consts::PI * ((w / a).powi(2) * (a - 0.5).powi(2) - 0.8).sqrt()
}

#[derive(Clone, Debug)]
struct KernelLut {
    half_width: f64,
    table: Vec<f64>,
}

impl KernelLut {
    fn new(width: usize, beta: f64) -> Self {
        let half_width = width as f64 / 2.0;
        let n = (half_width * LUT_PER_UNIT as f64).ceil() as usize + 2;
        let table = (0..n).map(|i| kb_exact(i as f64 / LUT_PER_UNIT as f64, half_width, beta)).collect();
        KernelLut { half_width, table }
    }

    #[inline]
    fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        if t >= self.half_width {
            return 0.0;
        }
        let pos = t * LUT_PER_UNIT as f64;
        let i = pos as usize;
        let f = pos - i as f64;
        self.table[i] * (1.0 - f) + self.table[i + 1] * f
    }
}

fn kb_exact(t: f64, half_width: f64, beta: f64) -> f64 {
    let r = t / half_width;
    if r >= 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - r * r).sqrt()) / bessel_i0(beta)
}

/// `∫ C(t)·cos(2πνt) dt` over the kernel support, composite Simpson.
fn kernel_transform(nu: f64, half_width: f64, beta: f64) -> f64 {
    let n = 4096usize;
    let h = 2.0 * half_width / n as f64;
    let f = |t: f64| kb_exact(t, half_width, beta) * (2.0 * std::f64::consts::PI * nu * t).cos();
    let mut s = f(-half_width) + f(half_width);
    for i in 1..n {
        let t = -half_width + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
    }
    s * h / 3.0
}

/// Immutable gridding plan bound to one set of sample coordinates.
#[derive(Clone, Debug)]
pub struct GridPlan {
    matrix: usize,
    grid: usize,
    width: usize,
    oversampling: f64,
    beta: f64,
    lut: KernelLut,
    /// Separable deapodization factor per centred pixel index.
    apod: Vec<f64>,
    kernel_integral: f64,
    /// First grid node (already wrapped) per sample and axis.
    start: Vec<[usize; 2]>,
    /// Kernel weights, `width` per sample, for x and y.
    wx: Vec<f64>,
    wy: Vec<f64>,
    fft: Fft2,
}

impl GridPlan {
    pub fn new(coords: &[[f64; 2]], matrix: usize, oversampling: f64, kernel_width: usize) -> Result<Self> {
        if oversampling < 1.25 {
            return Err(Error::Config(format!("oversampling {oversampling} below 1.25")));
        }
        if !(2..=MAX_WIDTH).contains(&kernel_width) {
            return Err(Error::Config(format!("kernel width {kernel_width} outside 2..={MAX_WIDTH}")));
        }
        if matrix < 2 {
            return Err(Error::Config("matrix must be ≥ 2".into()));
        }
        if let Some(k) = coords.iter().find(|k| !(k[0] >= -0.5 && k[0] < 0.5 && k[1] >= -0.5 && k[1] < 0.5)) {
            return Err(Error::Config(format!("coordinate {k:?} outside [-0.5, 0.5)")));
        }
        let mut grid = (oversampling * matrix as f64).ceil() as usize;
        grid += grid % 2;
        let beta = kaiser_bessel_beta(oversampling, kernel_width);
        let lut = KernelLut::new(kernel_width, beta);
        let half = kernel_width as f64 / 2.0;
        let apod = (0..matrix)
            .map(|i| kernel_transform((i as f64 - (matrix / 2) as f64) / grid as f64, half, beta))
            .collect();
        let kernel_integral = kernel_transform(0.0, half, beta);

        let n = coords.len();
        let mut start = Vec::with_capacity(n);
        let mut wx = Vec::with_capacity(n * kernel_width);
        let mut wy = Vec::with_capacity(n * kernel_width);
        let g = grid as i64;
        for k in coords {
            let mut s = [0usize; 2];
            for axis in 0..2 {
                let ws = if axis == 0 { &mut wx } else { &mut wy };
                let u = k[axis] * grid as f64;
                let first = (u - half).ceil() as i64;
                s[axis] = first.rem_euclid(g) as usize;
                for j in 0..kernel_width {
                    ws.push(lut.eval(u - (first + j as i64) as f64));
                }
            }
            start.push(s);
        }
        Ok(GridPlan {
            matrix,
            grid,
            width: kernel_width,
            oversampling,
            beta,
            lut,
            apod,
            kernel_integral,
            start,
            wx,
            wy,
            fft: Fft2::new(grid, grid),
        })
    }

    pub fn with_config(coords: &[[f64; 2]], matrix: usize, cfg: &NufftConfig) -> Result<Self> {
        GridPlan::new(coords, matrix, cfg.oversampling, cfg.kernel_width)
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    pub fn matrix(&self) -> usize {
        self.matrix
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    pub fn kernel_width(&self) -> usize {
        self.width
    }

    pub fn oversampling(&self) -> f64 {
        self.oversampling
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Integral of the 1-D kernel over its support, in grid units.
    pub fn kernel_integral(&self) -> f64 {
        self.kernel_integral
    }

    pub fn kernel(&self, t: f64) -> f64 {
        self.lut.eval(t)
    }

    /// Stencil of sample `j`: wrapped grid `(row, col)` indices with weights.
    pub fn stencil(&self, j: usize) -> Vec<([usize; 2], f64)> {
        let w = self.width;
        let [sx, sy] = self.start[j];
        let mut out = Vec::with_capacity(w * w);
        for a in 0..w {
            for b in 0..w {
                out.push((
                    [(sy + a) % self.grid, (sx + b) % self.grid],
                    self.wy[j * w + a] * self.wx[j * w + b],
                ));
            }
        }
        out
    }

    fn check_image(&self, image: &ArrayView2<C64>) -> Result<()> {
        if image.dim() != (self.matrix, self.matrix) {
            return Err(Error::Shape(format!(
                "image {:?} does not match plan matrix {}",
                image.dim(),
                self.matrix
            )));
        }
        Ok(())
    }

    fn wrap(&self, i: usize) -> usize {
        let p = i as i64 - (self.matrix / 2) as i64;
        p.rem_euclid(self.grid as i64) as usize
    }

    /// Image → trajectory samples.
    pub fn forward(&self, image: ArrayView2<C64>) -> Result<Vec<C64>> {
        self.check_image(&image)?;
        let mut grid = Array2::<C64>::zeros((self.grid, self.grid));
        for ((iy, ix), &v) in image.indexed_iter() {
            grid[[self.wrap(iy), self.wrap(ix)]] = v / (self.apod[iy] * self.apod[ix]);
        }
        self.fft.process(grid.view_mut(), false);
        Ok(self.interp(&grid))
    }

    /// Trajectory samples → image, optionally weighting each sample first.
    pub fn adjoint(&self, samples: &[C64], weights: Option<&[f64]>) -> Result<Array2<C64>> {
        if samples.len() != self.len() {
            return Err(Error::Shape(format!("{} samples for a plan of {}", samples.len(), self.len())));
        }
        if let Some(w) = weights {
            if w.len() != self.len() {
                return Err(Error::Shape(format!("{} weights for a plan of {}", w.len(), self.len())));
            }
        }
        let mut grid = self.spread(samples, weights);
        self.fft.process(grid.view_mut(), true);
        Ok(Array2::from_shape_fn((self.matrix, self.matrix), |(iy, ix)| {
            grid[[self.wrap(iy), self.wrap(ix)]] / (self.apod[iy] * self.apod[ix])
        }))
    }

    pub fn forward_coils(&self, images: &Array3<C64>) -> Result<Vec<Vec<C64>>> {
        images.axis_iter(Axis(0)).into_par_iter().map(|im| self.forward(im)).collect()
    }

    pub fn adjoint_coils(&self, samples: &[Vec<C64>], weights: Option<&[f64]>) -> Result<Array3<C64>> {
        let imgs: Vec<Array2<C64>> = samples.par_iter().map(|s| self.adjoint(s, weights)).collect::<Result<_>>()?;
        let views: Vec<_> = imgs.iter().map(|a| a.view()).collect();
        Ok(ndarray::stack(Axis(0), &views).expect("equal shapes"))
    }

    fn spread(&self, samples: &[C64], weights: Option<&[f64]>) -> Array2<C64> {
        let g = self.grid;
        let w = self.width;
        let mut grid = Array2::<C64>::zeros((g, g));
        let data = grid.as_slice_mut().expect("standard layout");
        for (j, &s) in samples.iter().enumerate() {
            let v = match weights {
                Some(ws) => s * ws[j],
                None => s,
            };
            if v == C64::default() {
                continue;
            }
            let [sx, sy] = self.start[j];
            let wx = &self.wx[j * w..(j + 1) * w];
            let wy = &self.wy[j * w..(j + 1) * w];
            for (a, &ky) in wy.iter().enumerate() {
                let row = ((sy + a) % g) * g;
                let vy = v * ky;
                for (b, &kx) in wx.iter().enumerate() {
                    data[row + (sx + b) % g] += vy * kx;
                }
            }
        }
        grid
    }

    fn interp(&self, grid: &Array2<C64>) -> Vec<C64> {
        let g = self.grid;
        let w = self.width;
        let data = grid.as_slice().expect("standard layout");
        (0..self.len())
            .map(|j| {
                let [sx, sy] = self.start[j];
                let wx = &self.wx[j * w..(j + 1) * w];
                let wy = &self.wy[j * w..(j + 1) * w];
                let mut acc = C64::default();
                for (a, &ky) in wy.iter().enumerate() {
                    let row = ((sy + a) % g) * g;
                    let mut racc = C64::default();
                    for (b, &kx) in wx.iter().enumerate() {
                        racc += data[row + (sx + b) % g] * kx;
                    }
                    acc += racc * ky;
                }
                acc
            })
            .collect()
    }

    /// Real-valued spreading (`Gᴴ`), used by density compensation.
    pub fn spread_real(&self, values: &[f64]) -> Vec<f64> {
        let c: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.spread(&c, None).iter().map(|v| v.re).collect()
    }

    /// Real-valued interpolation (`G`) from an oversampled grid.
    pub fn interp_real(&self, grid: &[f64]) -> Vec<f64> {
        let g = Array2::from_shape_fn((self.grid, self.grid), |(r, c)| C64::new(grid[r * self.grid + c], 0.0));
        self.interp(&g).iter().map(|v| v.re).collect()
    }
}

/// Exact non-uniform DFT `s(k) = Σ_p x[p]·exp(-2πi k·p)`.
pub fn direct_dft(coords: &[[f64; 2]], image: ArrayView2<C64>) -> Vec<C64> {
    let (ny, nx) = image.dim();
    coords
        .par_iter()
        .map(|k| {
            let ex = phase_vector(k[0], nx, -1.0);
            let ey = phase_vector(k[1], ny, -1.0);
            let mut acc = C64::default();
            for (iy, row) in image.axis_iter(Axis(0)).enumerate() {
                let mut r = C64::default();
                for (v, e) in row.iter().zip(&ex) {
                    r += v * e;
                }
                acc += r * ey[iy];
            }
            acc
        })
        .collect()
}

/// Adjoint of [`direct_dft`].
pub fn direct_dft_adjoint(coords: &[[f64; 2]], samples: &[C64], matrix: usize) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros((matrix, matrix));
    for (k, &s) in coords.iter().zip(samples) {
        let ex = phase_vector(k[0], matrix, 1.0);
        let ey = phase_vector(k[1], matrix, 1.0);
        for (iy, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let sy = s * ey[iy];
            for (o, e) in row.iter_mut().zip(&ex) {
                *o += sy * e;
            }
        }
    }
    out
}

/// `exp(sign·2πi·k·(i - n/2))` for `i` in `0..n`.
pub(crate) fn phase_vector(k: f64, n: usize, sign: f64) -> Vec<C64> {
    (0..n)
        .map(|i| C64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * k * (i as f64 - (n / 2) as f64)))
        .collect()
}

/// Largest eigenvalue of `Fᴴ W F` by power iteration.
pub fn operator_norm(plan: &GridPlan, weights: Option<&[f64]>, iters: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(seed, &[0x6e6f726d]);
    let n = plan.matrix();
    let mut x = Array2::from_shape_fn((n, n), |_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let mut lambda = 0.0;
    for _ in 0..iters {
        let norm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        x.mapv_inplace(|v| v / norm);
        let y = plan.adjoint(&plan.forward(x.view())?, weights)?;
        lambda = x.iter().zip(y.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        x = y;
    }
    Ok(lambda)
}
