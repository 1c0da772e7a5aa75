//! Image-quality metrics on magnitude images.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datamodel::Image;
use crate::error::{Error, Result};

fn magnitudes(x: &Image, reference: &Image) -> Result<(Array2<f64>, Array2<f64>)> {
    if x.dim() != reference.dim() {
        return Err(Error::Shape(format!("image {:?} vs reference {:?}", x.dim(), reference.dim())));
    }
    Ok((x.mapv(|v| v.norm()), reference.mapv(|v| v.norm())))
}

/// `‖|x| − |ref|‖₂ / ‖|ref|‖₂`.
pub fn nrmse(x: &Image, reference: &Image) -> Result<f64> {
    let (a, r) = magnitudes(x, reference)?;
    let den = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Invariant("nrmse reference has zero norm".into()));
    }
    let num = a.iter().zip(r.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// `20·log10(max|ref| / rmse)` in dB; infinite for identical magnitudes.
pub fn psnr(x: &Image, reference: &Image) -> Result<f64> {
    let (a, r) = magnitudes(x, reference)?;
    let peak = r.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Invariant("psnr reference is zero".into()));
    }
    let mse = a.iter().zip(r.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_SIGMA: f64 = 1.5;

/// Mean SSIM over all fully contained 8×8 Gaussian windows (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, dynamic range `max|ref|`.
pub fn ssim(x: &Image, reference: &Image) -> Result<f64> {
    let (a, r) = magnitudes(x, reference)?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels")));
    }
    let range = r.iter().cloned().fold(0.0, f64::max);
    if range == 0.0 {
        return Err(Error::Invariant("ssim reference is zero".into()));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let centre = (SSIM_WINDOW as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wt = g[i] * g[j] / norm;
                    let (p, q) = (a[[y0 + i, x0 + j]], r[[y0 + i, x0 + j]]);
                    mx += wt * p;
                    my += wt * q;
                    sxx += wt * p * p;
                    syy += wt * q * q;
                    sxy += wt * p * q;
                }
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub method: String,
    #[serde(rename = "R")]
    pub r: usize,
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRow {
    pub fn measure(dataset: &str, method: &str, r: usize, x: &Image, reference: &Image) -> Result<Self> {
        Ok(MetricsRow {
            dataset: dataset.to_string(),
            method: method.to_string(),
            r,
            nrmse: nrmse(x, reference)?,
            psnr: psnr(x, reference)?,
            ssim: ssim(x, reference)?,
        })
    }
}

/// Metric rows of one experiment, in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn rows_for<'a>(&'a self, method: &'a str, r: usize) -> impl Iterator<Item = &'a MetricsRow> + 'a {
        self.rows.iter().filter(move |row| row.method == method && row.r == r)
    }

    /// Median NRMSE of one method/acceleration pair.
    pub fn median_nrmse(&self, method: &str, r: usize) -> Option<f64> {
        median(self.rows_for(method, r).map(|row| row.nrmse).collect())
    }

    /// CSV with header `dataset,method,R,nrmse,psnr,ssim`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricsRow>, _>>()
            .map_err(|e| Error::io(path, e.into()))?;
        Ok(MetricsReport { rows })
    }
}

pub fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
