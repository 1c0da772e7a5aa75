//! Coil-domain utilities: noise covariance, whitening, Walsh adaptive
//! combination and low-resolution sensitivity estimation.

use ndarray::{Array2, Array3, Axis, Dimension, Zip};
use rayon::prelude::*;

use crate::datamodel::{CoilImages, Image, KSpaceDataset, NoisePrescan};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, hermitian_eigen, hermitian_part, solve_lower, CMatrix};
use crate::nufft::GridPlan;
use crate::phantom::{CoilMaps, NoiseCovariance};
use crate::trajectory::density_comp_masked;
use crate::C64;

/// Sample covariance `(1/n) Σ n nᴴ` of a noise prescan.
pub fn estimate_covariance(prescan: &NoisePrescan) -> Result<NoiseCovariance> {
    let s = prescan.samples();
    let (coils, n) = s.dim();
    let x = CMatrix::from_fn(coils, n, |c, i| s[[c, i]]);
    let psi = hermitian_part(&((&x * x.adjoint()) / C64::new(n as f64, 0.0)));
    let (eig, _) = hermitian_eigen(&psi);
    let top = eig.first().copied().unwrap_or(0.0);
    let bottom = eig.last().copied().unwrap_or(0.0);
    if !(top > 0.0) || bottom <= 1e-10 * top {
        return Err(Error::RankDeficient(format!(
            "noise covariance eigenvalues span [{bottom:e}, {top:e}]"
        )));
    }
    NoiseCovariance::new(psi)
}

/// Coil-domain whitening `L⁻¹` and its inverse `L`, with `psi = L Lᴴ`.
#[derive(Clone, Debug)]
pub struct Whitener {
    l: CMatrix,
    l_inv: CMatrix,
}

fn mix_lanes<D: Dimension>(m: &CMatrix, data: &mut ndarray::Array<C64, D>, coil_axis: usize) {
    let n = m.nrows();
    let mut buf = vec![C64::default(); n];
    for mut lane in data.lanes_mut(Axis(coil_axis)) {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = (0..n).map(|k| m[(i, k)] * lane[k]).sum();
        }
        for (dst, &v) in lane.iter_mut().zip(&buf) {
            *dst = v;
        }
    }
}

impl Whitener {
    pub fn new(psi: &NoiseCovariance) -> Result<Self> {
        let l = cholesky_lower(&psi.psi)?;
        let n = l.nrows();
        let l_inv = solve_lower(&l, &CMatrix::identity(n, n));
        Ok(Whitener { l, l_inv })
    }

    pub fn coils(&self) -> usize {
        self.l.nrows()
    }

    fn check(&self, coils: usize) -> Result<()> {
        if coils != self.coils() {
            return Err(Error::Shape(format!("whitener for {} coils applied to {coils}", self.coils())));
        }
        Ok(())
    }

    /// Apply `L⁻¹` along `coil_axis` of an arbitrary array.
    pub fn whiten_array<D: Dimension>(&self, data: &mut ndarray::Array<C64, D>, coil_axis: usize) -> Result<()> {
        self.check(data.len_of(Axis(coil_axis)))?;
        mix_lanes(&self.l_inv, data, coil_axis);
        Ok(())
    }

    /// Apply `L` along `coil_axis`.
    pub fn unwhiten_array<D: Dimension>(&self, data: &mut ndarray::Array<C64, D>, coil_axis: usize) -> Result<()> {
        self.check(data.len_of(Axis(coil_axis)))?;
        mix_lanes(&self.l, data, coil_axis);
        Ok(())
    }

    pub fn whiten_dataset(&self, ds: &KSpaceDataset) -> Result<KSpaceDataset> {
        let mut s = ds.samples().clone();
        self.whiten_array(&mut s, 1)?;
        ds.with_samples(s)
    }

    pub fn unwhiten_dataset(&self, ds: &KSpaceDataset) -> Result<KSpaceDataset> {
        let mut s = ds.samples().clone();
        self.unwhiten_array(&mut s, 1)?;
        ds.with_samples(s)
    }
}

pub fn whiten(ds: &KSpaceDataset, psi: &NoiseCovariance) -> Result<KSpaceDataset> {
    Whitener::new(psi)?.whiten_dataset(ds)
}

pub fn unwhiten(ds: &KSpaceDataset, psi: &NoiseCovariance) -> Result<KSpaceDataset> {
    Whitener::new(psi)?.unwhiten_dataset(ds)
}

/// Walsh adaptive combination with a `block × block` neighbourhood.
pub fn walsh_combine(coil_images: &CoilImages, block: usize) -> Result<Image> {
    if block == 0 || block.is_multiple_of(2) {
        return Err(Error::Config(format!("walsh block must be odd and ≥ 1, got {block}")));
    }
    let (coils, h, w) = coil_images.dim();
    if coils == 0 {
        return Err(Error::Shape("walsh combination needs at least one coil".into()));
    }
    let half = (block / 2) as i64;
    let rows: Vec<Vec<C64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = vec![C64::default(); w];
            let mut r = CMatrix::zeros(coils, coils);
            for (x, o) in out.iter_mut().enumerate() {
                r.fill(C64::default());
                for yy in (y as i64 - half).max(0)..=(y as i64 + half).min(h as i64 - 1) {
                    for xx in (x as i64 - half).max(0)..=(x as i64 + half).min(w as i64 - 1) {
                        let (yy, xx) = (yy as usize, xx as usize);
                        for i in 0..coils {
                            let vi = coil_images[[i, yy, xx]];
                            for j in 0..coils {
                                r[(i, j)] += vi * coil_images[[j, yy, xx]].conj();
                            }
                        }
                    }
                }
                let trace: f64 = (0..coils).map(|i| r[(i, i)].re).sum();
                if trace <= 0.0 {
                    continue;
                }
                let (_, vecs) = hermitian_eigen(&r);
                let mut u: Vec<C64> = (0..coils).map(|i| vecs[(i, 0)]).collect();
                let a = u[0].norm();
                if a > 0.0 {
                    let anchor = u[0].conj() / a;
                    u.iter_mut().for_each(|v| *v *= anchor);
                }
                *o = (0..coils).map(|c| u[c].conj() * coil_images[[c, y, x]]).sum();
            }
            out
        })
        .collect();
    Ok(Array2::from_shape_fn((h, w), |(y, x)| rows[y][x]))
}

/// Root-sum-of-squares magnitude combination.
pub fn rss_combine(coil_images: &CoilImages) -> Array2<f64> {
    coil_images.map_axis(Axis(0), |v| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
}

/// Support threshold for sensitivity maps, relative to the peak RSS.
pub const SENS_SUPPORT: f64 = 0.05;

/// Sensitivity maps from the densely sampled k-space centre: a
/// triangular-windowed, density-compensated adjoint of the samples with
/// `|k| < radius`, normalized to unit RSS on the support.
pub fn estimate_sens_lowres(ds: &KSpaceDataset, plan: &GridPlan, radius: f64) -> Result<CoilMaps> {
    let traj = ds.trajectory()?;
    if plan.len() != traj.len() {
        return Err(Error::Shape(format!("plan has {} samples, dataset {}", plan.len(), traj.len())));
    }
    let half_width = 0.5 * ds.lines() as f64 / traj.matrix() as f64;
    if radius > half_width {
        return Err(Error::Config(format!(
            "sensitivity radius {radius} exceeds the blade half-width {half_width}"
        )));
    }
    let acquired = ds.mask_flat();
    let radii: Vec<f64> = traj.coords().iter().map(|k| k[0].hypot(k[1])).collect();
    let select: Vec<bool> = acquired.iter().zip(&radii).map(|(&a, &r)| a && r < radius).collect();
    if radius <= 0.0 || !select.iter().any(|&s| s) {
        return Err(Error::EmptySelection(format!("no acquired samples within |k| < {radius}")));
    }
    let dcw = density_comp_masked(plan, &select, 10)?;
    let weights: Vec<f64> = dcw
        .weights
        .iter()
        .zip(&radii)
        .map(|(w, r)| w * (1.0 - r / radius).max(0.0))
        .collect();
    let images = plan.adjoint_coils(&ds.coil_vectors(), Some(&weights))?;
    Ok(normalize_maps(&images))
}

/// Divide coil images by their RSS on the support (RSS above
/// [`SENS_SUPPORT`] of its maximum); zero elsewhere.
pub fn normalize_maps(images: &Array3<C64>) -> CoilMaps {
    let rss = rss_combine(images);
    let peak = rss.iter().cloned().fold(0.0, f64::max);
    let mut maps = images.clone();
    for mut coil in maps.outer_iter_mut() {
        Zip::from(&mut coil).and(&rss).for_each(|v, &r| {
            *v = if peak > 0.0 && r > SENS_SUPPORT * peak {
                *v / r
            } else {
                C64::default()
            };
        });
    }
    CoilMaps { maps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_coil_maps, make_noise_prescan, CoilProfile};

    #[test]
    fn covariance_scales_quadratically() {
        let psi = NoiseCovariance::correlated(4, 0.3, 1).unwrap();
        let pre = make_noise_prescan(&psi, 2000, 2).unwrap();
        let doubled = NoisePrescan::new(pre.samples().mapv(|v| v * 2.0)).unwrap();
        let a = estimate_covariance(&pre).unwrap();
        let b = estimate_covariance(&doubled).unwrap();
        let scaled = a.psi.map(|v| v * 4.0);
        assert!(crate::linalg::max_abs_diff(&scaled, &b.psi) < 1e-12);
    }

    #[test]
    fn identical_coils_rank_deficient() {
        let pre = make_noise_prescan(&NoiseCovariance::identity(1), 100, 3).unwrap();
        let row = pre.samples().row(0).to_owned();
        let dup = Array2::from_shape_fn((3, 100), |(_, i)| row[i]);
        assert!(matches!(
            estimate_covariance(&NoisePrescan::new(dup).unwrap()),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn identity_whitener_is_identity() {
        let wh = Whitener::new(&NoiseCovariance::identity(3)).unwrap();
        let mut a = Array3::from_shape_fn((3, 4, 5), |(c, y, x)| C64::new(c as f64, (y * x) as f64));
        let orig = a.clone();
        wh.whiten_array(&mut a, 0).unwrap();
        assert_eq!(a, orig);
    }

    #[test]
    fn walsh_single_coil_magnitude() {
        let img = Array3::from_shape_fn((1, 8, 8), |(_, y, x)| C64::new(y as f64 - 3.0, x as f64 * 0.5));
        let out = walsh_combine(&img, 3).unwrap();
        for (o, i) in out.iter().zip(img.iter()) {
            assert!((o.norm() - i.norm()).abs() < 1e-12);
        }
        assert!(walsh_combine(&img, 4).is_err());
    }

    #[test]
    fn walsh_zero_neighbourhood() {
        let img = Array3::<C64>::zeros((2, 5, 5));
        assert!(walsh_combine(&img, 3).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn normalized_maps_have_unit_rss() {
        let maps = make_coil_maps(4, 16, CoilProfile::GaussianRingRaw).unwrap();
        let n = normalize_maps(&maps.maps);
        for (r, &t) in n.rss().iter().zip(maps.rss().iter()) {
            if t > 0.0 {
                assert!((r - 1.0).abs() < 1e-12 || *r == 0.0);
            }
        }
    }
}
