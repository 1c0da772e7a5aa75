//! Ground-truth synthesis: phantoms, coil sensitivities, exact multi-coil
//! k-space, correlated coil noise and per-blade phase corruption.
//!
//! k-space is simulated by direct summation over pixels, never by gridding,
//! so simulated truth shares no approximation error with the NUFFT.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{AcquisitionMeta, CoilImages, Image, KSpaceDataset, NoisePrescan};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, CMatrix};
use crate::nufft::direct_dft;
use crate::rng::stream_rng;
use crate::trajectory::BladeTrajectory;
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// Centre in normalized coordinates (`[-1, 1]` spans the field of view).
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub angle_deg: f64,
    /// Added to every pixel inside.
    pub intensity: f64,
}

/// Small low-contrast disc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center: [f64; 2],
    pub radius: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub matrix: usize,
    pub ellipses: Vec<Ellipse>,
    #[serde(default)]
    pub lesions: Vec<Lesion>,
    #[serde(default)]
    pub texture_seed: Option<u64>,
    #[serde(default)]
    pub texture_amplitude: f64,
    /// Gaussian edge smoothing, in pixels. 0 keeps hard edges.
    #[serde(default)]
    pub smoothing: f64,
}

fn ellipse(center: [f64; 2], axes: [f64; 2], angle_deg: f64, intensity: f64) -> Ellipse {
    Ellipse {
        center,
        axes,
        angle_deg,
        intensity,
    }
}

impl PhantomSpec {
    pub fn empty(matrix: usize) -> Self {
        PhantomSpec {
            matrix,
            ellipses: Vec::new(),
            lesions: Vec::new(),
            texture_seed: None,
            texture_amplitude: 0.0,
            smoothing: 0.0,
        }
    }

    /// Shepp–Logan layout with a softened outer ring, so that the interior
    /// carries most of the signal.
    pub fn shepp_logan(matrix: usize) -> Self {
        PhantomSpec {
            ellipses: vec![
                ellipse([0.0, 0.0], [0.69, 0.92], 0.0, 1.0),
                ellipse([0.0, -0.0184], [0.6624, 0.874], 0.0, -0.5),
                ellipse([0.22, 0.0], [0.11, 0.31], -18.0, -0.2),
                ellipse([-0.22, 0.0], [0.16, 0.41], 18.0, -0.2),
                ellipse([0.0, 0.35], [0.21, 0.25], 0.0, 0.15),
                ellipse([0.0, 0.1], [0.046, 0.046], 0.0, 0.2),
                ellipse([0.0, -0.1], [0.046, 0.046], 0.0, 0.2),
                ellipse([-0.08, -0.605], [0.046, 0.023], 0.0, 0.2),
                ellipse([0.0, -0.606], [0.023, 0.023], 0.0, 0.2),
                ellipse([0.06, -0.605], [0.023, 0.046], 0.0, 0.2),
            ],
            smoothing: 0.7,
            ..PhantomSpec::empty(matrix)
        }
    }

    /// Seeded anatomical variation of [`shepp_logan`](Self::shepp_logan):
    /// jittered ellipses, two faint lesions and a smooth texture.
    pub fn randomized(matrix: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[0x7068]);
        let mut spec = PhantomSpec::shepp_logan(matrix);
        let mut jitter = |scale: f64| (rng.random::<f64>() * 2.0 - 1.0) * scale;
        for (i, e) in spec.ellipses.iter_mut().enumerate() {
            if i >= 2 {
                e.center[0] += jitter(0.03);
                e.center[1] += jitter(0.03);
                e.axes[0] *= 1.0 + jitter(0.1);
                e.axes[1] *= 1.0 + jitter(0.1);
                e.angle_deg += jitter(10.0);
                e.intensity *= 1.0 + jitter(0.2);
            }
        }
        let mut rng = stream_rng(seed, &[0x6c65]);
        spec.lesions = (0..2)
            .map(|_| {
                let r = 0.35 * rng.random::<f64>().sqrt();
                let a = 2.0 * PI * rng.random::<f64>();
                Lesion {
                    center: [r * a.cos(), r * a.sin()],
                    radius: 0.04 + 0.04 * rng.random::<f64>(),
                    intensity: 0.08 + 0.07 * rng.random::<f64>(),
                }
            })
            .collect();
        spec.texture_seed = Some(seed);
        spec.texture_amplitude = 0.04;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix < 2 {
            return Err(Error::Config("phantom matrix must be ≥ 2".into()));
        }
        let finite = self
            .ellipses
            .iter()
            .all(|e| e.axes[0] > 0.0 && e.axes[1] > 0.0 && e.intensity.is_finite())
            && self.lesions.iter().all(|l| l.radius > 0.0 && l.intensity.is_finite());
        if !finite || self.smoothing < 0.0 || !self.texture_amplitude.is_finite() {
            return Err(Error::Config("phantom shapes need positive axes and finite intensities".into()));
        }
        Ok(())
    }
}

/// Normalized coordinate of pixel `i` on an `n`-pixel axis.
fn norm_coord(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5 - n as f64 / 2.0) / (n as f64 / 2.0)
}

fn inside(e: &Ellipse, x: f64, y: f64) -> bool {
    let (s, c) = e.angle_deg.to_radians().sin_cos();
    let (dx, dy) = (x - e.center[0], y - e.center[1]);
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    (u / e.axes[0]).powi(2) + (v / e.axes[1]).powi(2) <= 1.0
}

fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let (h, w) = img.dim();
    let pass = |src: &Array2<f64>, along_rows: bool| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let off = k as i64 - radius;
                let (yy, xx) = if along_rows {
                    (y as i64 + off, x as i64)
                } else {
                    (y as i64, x as i64 + off)
                };
                if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                    acc += t * src[[yy as usize, xx as usize]];
                }
            }
            acc / norm
        })
    };
    pass(&pass(img, true), false)
}

/// Render the phantom. Pixel values land in `[0, 1]` with the maximum at 1
/// (unless the image is identically zero).
pub fn make_phantom(spec: &PhantomSpec) -> Result<Image> {
    spec.validate()?;
    let n = spec.matrix;
    let mut img = Array2::<f64>::zeros((n, n));
    for ((iy, ix), v) in img.indexed_iter_mut() {
        let (x, y) = (norm_coord(ix, n), norm_coord(iy, n));
        for e in &spec.ellipses {
            if inside(e, x, y) {
                *v += e.intensity;
            }
        }
        for l in &spec.lesions {
            if (x - l.center[0]).powi(2) + (y - l.center[1]).powi(2) <= l.radius * l.radius {
                *v += l.intensity;
            }
        }
    }
    if let (Some(seed), Some(outer)) = (spec.texture_seed, spec.ellipses.first()) {
        let mut rng = stream_rng(seed, &[0x7465]);
        let waves: Vec<(f64, f64, f64)> = (0..6)
            .map(|_| {
                let f = 2.0 + 4.0 * rng.random::<f64>();
                let a = 2.0 * PI * rng.random::<f64>();
                (f * a.cos(), f * a.sin(), 2.0 * PI * rng.random::<f64>())
            })
            .collect();
        for ((iy, ix), v) in img.indexed_iter_mut() {
            let (x, y) = (norm_coord(ix, n), norm_coord(iy, n));
            if inside(outer, x, y) {
                let t: f64 = waves.iter().map(|(fx, fy, ph)| (PI * (fx * x + fy * y) + ph).cos()).sum();
                *v += spec.texture_amplitude * t / waves.len() as f64;
            }
        }
    }
    img.mapv_inplace(|v| v.max(0.0));
    let mut img = gaussian_blur(&img, spec.smoothing);
    let max = img.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        img.mapv_inplace(|v| (v / max).clamp(0.0, 1.0));
    }
    Ok(img.mapv(|v| C64::new(v, 0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoilProfile {
    /// Gaussian ring normalized to unit root-sum-of-squares.
    GaussianRing,
    /// Raw Gaussian ring magnitudes.
    GaussianRingRaw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoilMaps {
    pub maps: CoilImages,
}

impl CoilMaps {
    pub fn new(maps: CoilImages) -> Result<Self> {
        if maps.dim().0 == 0 {
            return Err(Error::Invariant("coil maps need at least one coil".into()));
        }
        if !crate::datamodel::is_finite(maps.iter().copied()) {
            return Err(Error::NonFinite("coil maps".into()));
        }
        Ok(CoilMaps { maps })
    }

    pub fn coils(&self) -> usize {
        self.maps.dim().0
    }

    pub fn matrix(&self) -> usize {
        self.maps.dim().1
    }

    pub fn rss(&self) -> Array2<f64> {
        self.maps.map_axis(Axis(0), |v| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
    }

    /// Divide by the root-sum-of-squares wherever it exceeds `floor`.
    pub fn normalized(&self, floor: f64) -> CoilMaps {
        let rss = self.rss();
        let mut maps = self.maps.clone();
        for ((_, y, x), v) in maps.indexed_iter_mut() {
            let r = rss[[y, x]];
            *v = if r > floor { *v / r } else { C64::default() };
        }
        CoilMaps { maps }
    }

    /// `maps[c]·image` for every coil.
    pub fn apply(&self, image: &Image) -> CoilImages {
        let mut out = self.maps.clone();
        for mut coil in out.outer_iter_mut() {
            coil.zip_mut_with(image, |m, &x| *m *= x);
        }
        out
    }

    /// `Σ_c conj(maps[c])·images[c]`.
    pub fn combine(&self, images: &CoilImages) -> Image {
        let (_, h, w) = self.maps.dim();
        let mut out = Image::zeros((h, w));
        for (m, im) in self.maps.outer_iter().zip(images.outer_iter()) {
            ndarray::Zip::from(&mut out)
                .and(&m)
                .and(&im)
                .for_each(|o, &s, &v| *o += s.conj() * v);
        }
        out
    }
}

/// Coils on a ring: coil `c` centred at angle `2πc/coils`, Gaussian
/// magnitude and a gentle linear phase.
pub fn make_coil_maps(coils: usize, matrix: usize, profile: CoilProfile) -> Result<CoilMaps> {
    if coils < 1 || matrix < 2 {
        return Err(Error::Config("coil maps need coils ≥ 1 and matrix ≥ 2".into()));
    }
    let (ring, width) = (1.1, 0.8);
    let mut maps = Array3::<C64>::zeros((coils, matrix, matrix));
    for ((c, iy, ix), v) in maps.indexed_iter_mut() {
        let (x, y) = (norm_coord(ix, matrix), norm_coord(iy, matrix));
        let theta = 2.0 * PI * c as f64 / coils as f64;
        let mag = if coils == 1 {
            1.0
        } else {
            let (cx, cy) = (ring * theta.cos(), ring * theta.sin());
            (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * width * width)).exp()
        };
        let phase = theta + 0.5 * PI * (x * theta.cos() - y * theta.sin()) * 0.5;
        *v = C64::from_polar(mag, phase);
    }
    let maps = CoilMaps::new(maps)?;
    Ok(match profile {
        CoilProfile::GaussianRing => maps.normalized(0.0),
        CoilProfile::GaussianRingRaw => maps,
    })
}

/// Hermitian positive-definite coil noise covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCovariance {
    pub psi: CMatrix,
}

impl NoiseCovariance {
    pub fn new(psi: CMatrix) -> Result<Self> {
        if psi.nrows() != psi.ncols() || psi.nrows() == 0 {
            return Err(Error::Shape("covariance must be square and non-empty".into()));
        }
        let scale = psi.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let asym = crate::linalg::max_abs_diff(&psi, &psi.adjoint());
        if asym > 1e-12 * scale {
            return Err(Error::Invariant(format!("covariance not Hermitian (deviation {asym:e})")));
        }
        cholesky_lower(&psi)?;
        Ok(NoiseCovariance { psi })
    }

    pub fn identity(coils: usize) -> Self {
        NoiseCovariance {
            psi: CMatrix::identity(coils, coils),
        }
    }

    /// `psi[i][j] = s_i s_j ρ^{|i-j|} e^{iθ(i-j)}` with per-coil scales in
    /// `[0.8, 1.2]` drawn from `seed`.
    pub fn correlated(coils: usize, rho: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, &[0x7073]);
        let scales: Vec<f64> = (0..coils).map(|_| 0.8 + 0.4 * rng.random::<f64>()).collect();
        let theta = 0.3;
        let psi = CMatrix::from_fn(coils, coils, |i, j| {
            let d = i as f64 - j as f64;
            C64::from_polar(scales[i] * scales[j] * rho.powf(d.abs()), theta * d)
        });
        NoiseCovariance::new(psi)
    }

    pub fn coils(&self) -> usize {
        self.psi.nrows()
    }
}

/// Exact multi-coil k-space of `image` along `traj`; unacquired positions
/// stay zero.
pub fn simulate_kspace(image: &Image, maps: &CoilMaps, traj: &BladeTrajectory) -> Result<KSpaceDataset> {
    let n = traj.matrix();
    if image.dim() != (n, n) || maps.matrix() != n || maps.maps.dim().2 != n {
        return Err(Error::Shape(format!(
            "image {:?} / maps {:?} do not match trajectory matrix {n}",
            image.dim(),
            maps.maps.dim()
        )));
    }
    let mask = traj.acquired_mask();
    let acquired: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    let coords: Vec<[f64; 2]> = acquired.iter().map(|&i| traj.coords()[i]).collect();
    let coil_images = maps.apply(image);
    let per_coil: Vec<Vec<C64>> = coil_images.outer_iter().map(|ci| direct_dft(&coords, ci)).collect();
    let (nb, nl, nr) = (traj.nblades(), traj.lines(), traj.readout());
    let mut samples = Array4::<C64>::zeros((nb, maps.coils(), nl, nr));
    for (c, values) in per_coil.iter().enumerate() {
        for (&flat, &v) in acquired.iter().zip(values) {
            let (b, rem) = (flat / (nl * nr), flat % (nl * nr));
            samples[[b, c, rem / nr, rem % nr]] = v;
        }
    }
    KSpaceDataset::new(traj.spec.clone(), samples, mask, None, AcquisitionMeta::default())
}

fn complex_normal<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Add complex Gaussian noise with coil covariance `sigma_scale²·psi` to
/// every acquired sample.
pub fn add_noise(ds: &KSpaceDataset, psi: &NoiseCovariance, sigma_scale: f64, seed: u64) -> Result<KSpaceDataset> {
    if psi.coils() != ds.coils() {
        return Err(Error::Shape(format!(
            "covariance for {} coils, dataset has {}",
            psi.coils(),
            ds.coils()
        )));
    }
    if sigma_scale == 0.0 {
        return Ok(ds.clone());
    }
    let l = cholesky_lower(&psi.psi)?;
    let coils = ds.coils();
    let mut samples = ds.samples().clone();
    let mask = ds.mask();
    samples
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(b, mut blade)| {
            let mut rng = stream_rng(seed, &[b as u64]);
            let mut z = vec![C64::default(); coils];
            for li in 0..blade.dim().1 {
                for ri in 0..blade.dim().2 {
                    if !mask[[b, li, ri]] {
                        continue;
                    }
                    z.iter_mut().for_each(|v| *v = complex_normal(&mut rng));
                    for c in 0..coils {
                        let n: C64 = (0..=c).map(|k| l[(c, k)] * z[k]).sum();
                        blade[[c, li, ri]] += n * sigma_scale;
                    }
                }
            }
        });
    ds.with_samples(samples)
}

/// Multiply every sample of blade `b` by `exp(i·offsets[b])`.
pub fn apply_blade_phase(ds: &KSpaceDataset, offsets: &[f64]) -> Result<KSpaceDataset> {
    if offsets.len() != ds.blades() {
        return Err(Error::Shape(format!("{} offsets for {} blades", offsets.len(), ds.blades())));
    }
    let mut samples = ds.samples().clone();
    for (mut blade, &phi) in samples.outer_iter_mut().zip(offsets) {
        let rot = C64::from_polar(1.0, phi);
        blade.mapv_inplace(|v| v * rot);
    }
    ds.with_samples(samples)
}

/// I.i.d. noise-only samples with coil covariance `psi`.
pub fn make_noise_prescan(psi: &NoiseCovariance, nsamples: usize, seed: u64) -> Result<NoisePrescan> {
    let coils = psi.coils();
    if nsamples < 10 * coils {
        return Err(Error::Invariant(format!("prescan needs ≥ {} samples, got {nsamples}", 10 * coils)));
    }
    let l = cholesky_lower(&psi.psi)?;
    let mut rng = stream_rng(seed, &[0x7072_6573]);
    let mut out = Array2::<C64>::zeros((coils, nsamples));
    let mut z = vec![C64::default(); coils];
    for s in 0..nsamples {
        z.iter_mut().for_each(|v| *v = complex_normal(&mut rng));
        for c in 0..coils {
            out[[c, s]] = (0..=c).map(|k| l[(c, k)] * z[k]).sum();
        }
    }
    NoisePrescan::new(out)
}
