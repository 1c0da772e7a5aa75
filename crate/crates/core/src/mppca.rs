//! Marchenko–Pastur PCA along the coil dimension, and the blade-wise
//! denoising pipeline that runs ahead of GRAPPA.

use ndarray::{s, Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coiltools::Whitener;
use crate::datamodel::{CoilImages, KSpaceDataset};
use crate::error::{Error, Result};
use crate::fft::{centered_fft2_with, Fft2};
use crate::linalg::{svd, CMatrix};
use crate::phantom::NoiseCovariance;
use crate::C64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    AverageOverlaps,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSpec {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub aggregation: Aggregation,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            height: 7,
            width: 7,
            stride: 1,
            aggregation: Aggregation::AverageOverlaps,
        }
    }
}

impl PatchSpec {
    pub fn square(size: usize, stride: usize) -> Self {
        PatchSpec {
            height: size,
            width: size,
            stride,
            ..PatchSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.stride == 0 {
            return Err(Error::Config("patch dimensions and stride must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Noise rank cut from a descending singular spectrum of a `rows × cols`
/// matrix. Returns the number of signal components and the noise standard
/// deviation per entry.
///
/// With `n = max(rows, cols)`, `m = min(rows, cols)` and eigenvalues
/// `λ = s²/n`, the first `p` for which `λ_p < σ²(√n + √m)²/n`, where `σ²`
/// is the mean of `λ_p … λ_{m-1}`, is accepted.
pub fn mp_threshold(singular_values: &[f64], rows: usize, cols: usize) -> Result<(usize, f64)> {
    if singular_values.is_empty() || rows == 0 || cols == 0 {
        return Err(Error::EmptySelection("mp_threshold needs a non-empty spectrum".into()));
    }
    let sorted = singular_values.windows(2).all(|w| w[0] >= w[1]);
    if !sorted || singular_values.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::Invariant("singular values must be nonnegative and descending".into()));
    }
    if singular_values[0] == 0.0 {
        return Ok((0, 0.0));
    }
    let (n, m) = (rows.max(cols) as f64, rows.min(cols) as f64);
    let edge = (n.sqrt() + m.sqrt()).powi(2) / n;
    let lambda: Vec<f64> = singular_values.iter().map(|s| s * s / n).collect();
    let k = lambda.len();
    let mut tail: f64 = lambda.iter().sum();
    for p in 0..k {
        let sigma2 = tail / (k - p) as f64;
        if sigma2 == 0.0 {
            return Ok((p, 0.0));
        }
        if lambda[p] < sigma2 * edge {
            return Ok((p, sigma2.sqrt()));
        }
        tail -= lambda[p];
    }
    Ok((k, 0.0))
}

fn positions(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=len - patch).step_by(stride).collect();
    if *out.last().expect("len ≥ patch") != len - patch {
        out.push(len - patch);
    }
    out
}

/// Patch-wise MPPCA over the coil dimension with overlap averaging.
pub fn denoise_coil_stack(coil_images: &CoilImages, spec: &PatchSpec) -> Result<CoilImages> {
    spec.validate()?;
    let (coils, h, w) = coil_images.dim();
    if coils < 2 {
        return Err(Error::Invariant("MPPCA needs at least two coils".into()));
    }
    if spec.height > h || spec.width > w {
        return Err(Error::Shape(format!(
            "patch {}×{} larger than image {h}×{w}",
            spec.height, spec.width
        )));
    }
    if spec.area() < coils {
        log::warn!("patch area {} below coil count {coils}", spec.area());
    }
    let ys = positions(h, spec.height, spec.stride);
    let xs = positions(w, spec.width, spec.stride);
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();
    let (ph, pw) = (spec.height, spec.width);
    let patches: Vec<CMatrix> = origins
        .par_iter()
        .map(|&(y0, x0)| {
            let block = coil_images.slice(s![.., y0..y0 + ph, x0..x0 + pw]);
            let casorati = CMatrix::from_fn(ph * pw, coils, |i, c| block[[c, i / pw, i % pw]]);
            let dec = svd(&casorati);
            let (rank, _) = mp_threshold(&dec.s, ph * pw, coils)?;
            let mut out = CMatrix::zeros(ph * pw, coils);
            for k in 0..rank {
                let uk = dec.u.column(k) * C64::new(dec.s[k], 0.0);
                out += uk * dec.v_t.row(k);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Array3::<C64>::zeros((coils, h, w));
    let mut count = Array2::<f64>::zeros((h, w));
    for (&(y0, x0), patch) in origins.iter().zip(&patches) {
        for i in 0..ph * pw {
            let (y, x) = (y0 + i / pw, x0 + i % pw);
            count[[y, x]] += 1.0;
            for c in 0..coils {
                acc[[c, y, x]] += patch[(i, c)];
            }
        }
    }
    for mut coil in acc.outer_iter_mut() {
        coil.zip_mut_with(&count, |v, &n| *v /= n);
    }
    Ok(acc)
}

/// Blade-wise denoising: zero-filled blade → aliased image → whiten →
/// MPPCA → unwhiten → k-space, then never-acquired positions are zeroed
/// again.
pub fn figure2_pipeline(ds: &KSpaceDataset, psi: &NoiseCovariance, spec: &PatchSpec) -> Result<KSpaceDataset> {
    let whitener = Whitener::new(psi)?;
    if whitener.coils() != ds.coils() {
        return Err(Error::Shape(format!(
            "covariance for {} coils, dataset {}",
            whitener.coils(),
            ds.coils()
        )));
    }
    let plan = Fft2::new(ds.lines(), ds.readout());
    let blades = ds
        .samples()
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|blade| {
            let mut img = blade.to_owned();
            for mut coil in img.outer_iter_mut() {
                let mut a = coil.to_owned();
                centered_fft2_with(&plan, &mut a, true);
                coil.assign(&a);
            }
            whitener.whiten_array(&mut img, 0)?;
            let mut den = denoise_coil_stack(&img, spec)?;
            whitener.unwhiten_array(&mut den, 0)?;
            for mut coil in den.outer_iter_mut() {
                let mut a = coil.to_owned();
                centered_fft2_with(&plan, &mut a, false);
                coil.assign(&a);
            }
            Ok(den)
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = blades.iter().map(|b| b.view()).collect();
    let samples = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    ds.with_samples(samples)
}
