//! Per-blade Cartesian GRAPPA.
//!
//! Within a blade, lines are phase-encode positions and the last axis is the
//! readout. A skipped line `t` sits at offset `o = (t − phase) mod R` past
//! the lattice line `s = t − o`; it is synthesized from the lattice lines
//! `s + jR` (for the configured number of source lines, centred on the gap)
//! and `taps` neighbouring readout positions of every coil.

use ndarray::{Array3, ArrayView3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::KSpaceDataset;
use crate::error::{Error, Result};
use crate::linalg::{solve_hpd, CMatrix};
use crate::trajectory::BladePattern;
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrappaConfig {
    pub source_lines: usize,
    /// Readout taps, odd.
    pub taps: usize,
    /// Tikhonov damping relative to the mean diagonal of `AᴴA`.
    pub lambda: f64,
}

impl Default for GrappaConfig {
    fn default() -> Self {
        GrappaConfig {
            source_lines: 2,
            taps: 5,
            lambda: 1e-4,
        }
    }
}

impl GrappaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source_lines < 1 || self.taps < 1 || self.taps.is_multiple_of(2) {
            return Err(Error::Config("grappa needs ≥ 1 source line and an odd tap count".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("grappa lambda must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> KernelGeometry {
        KernelGeometry {
            source_lines: self.source_lines,
            taps: self.taps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelGeometry {
    pub source_lines: usize,
    pub taps: usize,
}

impl KernelGeometry {
    /// Source line offsets `j` (in units of R) relative to the lattice line
    /// preceding the gap.
    pub fn line_offsets(&self) -> std::ops::RangeInclusive<i64> {
        let n = self.source_lines as i64;
        -((n - 1) / 2)..=n / 2
    }

    pub fn tap_offsets(&self) -> std::ops::RangeInclusive<i64> {
        let h = (self.taps / 2) as i64;
        -h..=h
    }

    pub fn sources_per_coil(&self) -> usize {
        self.source_lines * self.taps
    }

    /// Lines a single calibration position spans.
    pub fn span(&self, r: usize) -> usize {
        (self.source_lines - 1) * r + 1
    }
}

/// Calibrated weights. `weights[o - 1]` maps the stacked source vector
/// (`[coil][line][tap]`) to all coils at gap offset `o`: target =
/// `weights[o-1]ᵀ · source`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaKernel {
    pub r: usize,
    pub geometry: KernelGeometry,
    pub coils: usize,
    pub weights: Vec<CMatrix>,
}

impl GrappaKernel {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check(&self) -> Result<()> {
        let cols = self.coils * self.geometry.sources_per_coil();
        let ok = self.weights.len() == self.r.saturating_sub(1)
            && self
                .weights
                .iter()
                .all(|w| w.nrows() == cols && w.ncols() == self.coils && w.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        if !ok {
            return Err(Error::Invariant("grappa kernel weights inconsistent with geometry".into()));
        }
        Ok(())
    }
}

/// Gather the source vector for target line `t` at offset `o`, readout `x`.
/// Out-of-range lines and readout positions contribute zeros when
/// `zero_pad`; otherwise false is returned for incomplete neighbourhoods.
#[allow(clippy::too_many_arguments)]
fn gather(data: &ArrayView3<C64>, r: usize, g: KernelGeometry, t: i64, o: i64, x: i64, zero_pad: bool, out: &mut Vec<C64>) -> bool {
    let (coils, lines, readout) = data.dim();
    out.clear();
    for c in 0..coils {
        for j in g.line_offsets() {
            let line = t - o + j * r as i64;
            for d in g.tap_offsets() {
                let xx = x + d;
                let inside = line >= 0 && line < lines as i64 && xx >= 0 && xx < readout as i64;
                if inside {
                    out.push(data[[c, line as usize, xx as usize]]);
                } else if zero_pad {
                    out.push(C64::default());
                } else {
                    return false;
                }
            }
        }
    }
    true
}

/// Ridge least-squares fit for one gap offset.
fn fit(acs: &ArrayView3<C64>, r: usize, g: KernelGeometry, o: i64, lambda: f64) -> Result<CMatrix> {
    let (coils, nlines, readout) = acs.dim();
    let cols = coils * g.sources_per_coil();
    let mut rows: Vec<Vec<C64>> = Vec::new();
    let mut targets: Vec<Vec<C64>> = Vec::new();
    let mut buf = Vec::with_capacity(cols);
    for t in 0..nlines as i64 {
        for x in 0..readout as i64 {
            if gather(acs, r, g, t, o, x, false, &mut buf) {
                rows.push(buf.clone());
                targets.push((0..coils).map(|c| acs[[c, t as usize, x as usize]]).collect());
            }
        }
    }
    if rows.len() < cols {
        return Err(Error::RankDeficient(format!("{} calibration rows for {cols} unknowns", rows.len())));
    }
    let a = CMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let b = CMatrix::from_fn(rows.len(), coils, |i, j| targets[i][j]);
    let ah = a.adjoint();
    let mut normal = &ah * &a;
    let trace: f64 = (0..cols).map(|i| normal[(i, i)].re).sum();
    if !(trace > 0.0) {
        return Err(Error::RankDeficient("calibration data are all zero".into()));
    }
    let damp = lambda * trace / cols as f64;
    for i in 0..cols {
        normal[(i, i)] += C64::new(damp, 0.0);
    }
    solve_hpd(&normal, &(&ah * &b)).map_err(|_| Error::RankDeficient("calibration normal equations singular".into()))
}

/// Least-squares kernel fit over every complete source/target neighbourhood
/// inside the calibration block `acs` (`[coil][line][readout]`).
pub fn calibrate(acs: ArrayView3<C64>, r: usize, geometry: KernelGeometry, lambda: f64) -> Result<GrappaKernel> {
    let (coils, lines, _) = acs.dim();
    if r == 0 || geometry.source_lines == 0 || geometry.taps.is_multiple_of(2) {
        return Err(Error::Config("grappa needs R ≥ 1, ≥ 1 source line and odd taps".into()));
    }
    if r == 1 {
        return Ok(GrappaKernel {
            r,
            geometry,
            coils,
            weights: Vec::new(),
        });
    }
    if lines < geometry.span(r) {
        return Err(Error::RankDeficient(format!(
            "{lines} calibration lines cannot hold a {}-line kernel span",
            geometry.span(r)
        )));
    }
    let weights = (1..r as i64)
        .into_par_iter()
        .map(|o| fit(&acs, r, geometry, o, lambda))
        .collect::<Result<Vec<_>>>()?;
    let kernel = GrappaKernel {
        r,
        geometry,
        coils,
        weights,
    };
    kernel.check()?;
    Ok(kernel)
}

/// Fill every unacquired line of `blade` from the kernel. Acquired lines
/// are copied unchanged. Source lines beyond the blade edge count as zero,
/// so an unpaired edge gap is extrapolated from one side only.
pub fn synthesize(blade: ArrayView3<C64>, pattern: &BladePattern, kernel: &GrappaKernel) -> Result<Array3<C64>> {
    let (coils, lines, readout) = blade.dim();
    if pattern.r != kernel.r || pattern.acquired.len() != lines || kernel.coils != coils {
        return Err(Error::Invariant(format!(
            "blade pattern (R={}, {} lines, {coils} coils) does not match kernel (R={}, {} coils)",
            pattern.r,
            pattern.acquired.len(),
            kernel.r,
            kernel.coils
        )));
    }
    kernel.check()?;
    let mut out = blade.to_owned();
    if kernel.r == 1 {
        return Ok(out);
    }
    let mut buf = Vec::new();
    for t in 0..lines {
        if pattern.acquired[t] {
            continue;
        }
        let o = (t + kernel.r - pattern.phase % kernel.r) % kernel.r;
        if o == 0 {
            return Err(Error::Invariant(format!("lattice line {t} is not acquired")));
        }
        let w = &kernel.weights[o - 1];
        for x in 0..readout {
            gather(&blade, kernel.r, kernel.geometry, t as i64, o as i64, x as i64, true, &mut buf);
            for c in 0..coils {
                out[[c, t, x]] = buf.iter().enumerate().map(|(i, s)| w[(i, c)] * s).sum();
            }
        }
    }
    Ok(out)
}

/// Lines of the contiguous run of acquired lines that contains the ACS.
fn calibration_lines(pattern: &BladePattern) -> Vec<usize> {
    let acs: Vec<usize> = (0..pattern.acs.len()).filter(|&l| pattern.acs[l]).collect();
    let (Some(&first), Some(&last)) = (acs.first(), acs.last()) else {
        return acs;
    };
    let mut lo = first;
    while lo > 0 && pattern.acquired[lo - 1] {
        lo -= 1;
    }
    let mut hi = last;
    while hi + 1 < pattern.acquired.len() && pattern.acquired[hi + 1] {
        hi += 1;
    }
    (lo..=hi).collect()
}

/// Calibrate on each blade's own ACS block (extended by any adjacent
/// acquired lines) and fill its skipped lines. The
/// returned dataset has every line of every blade marked acquired.
pub fn grappa_dataset(ds: &KSpaceDataset, cfg: &GrappaConfig) -> Result<KSpaceDataset> {
    cfg.validate()?;
    let traj = ds.trajectory()?;
    let pattern = &traj.pattern;
    if pattern.r == 1 {
        return Ok(ds.clone());
    }
    let acs = calibration_lines(pattern);
    let filled = ds
        .samples()
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|blade| {
            let block = blade.select(Axis(1), &acs);
            let kernel = calibrate(block.view(), pattern.r, cfg.geometry(), cfg.lambda)?;
            synthesize(blade, pattern, &kernel)
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = filled.iter().map(|b| b.view()).collect();
    let samples = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let mut mask = ds.mask().clone();
    mask.fill(true);
    ds.with_mask(samples, mask)
}
