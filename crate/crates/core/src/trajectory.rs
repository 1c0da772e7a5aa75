//! PROPELLER blade trajectories, in-blade undersampling and density
//! compensation.
//!
//! Coordinates are in cycles/pixel with the image grid at integer pixel
//! positions, so the band of the discrete image is `[-0.5, 0.5)²`. Blade 0
//! is a Cartesian strip with readout along `kx` and phase-encode lines along
//! `ky`; blade `b` is blade 0 rotated by `b·π/nblades`. The sample spacing is
//! `1/matrix`, shrunk just enough that every rotated corner stays strictly
//! inside the band.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nufft::GridPlan;

/// Regenerable description of a trajectory. This is what the `.pks`
/// manifest stores under `traj`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropellerSpec {
    pub matrix: usize,
    /// Blade count of the full acquisition, before any blade subsampling.
    pub nblades: usize,
    pub lines_per_blade: usize,
    pub readout: usize,
    pub inblade_r: usize,
    pub acs_lines: usize,
    /// Keep every `blade_step`-th blade of the full acquisition.
    #[serde(default = "one")]
    pub blade_step: usize,
}

fn one() -> usize {
    1
}

impl PropellerSpec {
    pub fn new(matrix: usize, nblades: usize, lines_per_blade: usize, inblade_r: usize, acs_lines: usize) -> Self {
        PropellerSpec {
            matrix,
            nblades,
            lines_per_blade,
            readout: matrix,
            inblade_r,
            acs_lines,
            blade_step: 1,
        }
    }

    /// Desk-scale default: 64 matrix, 18 blades of 8 lines, in-blade R=2.
    pub fn desk() -> Self {
        PropellerSpec::new(64, 18, 8, 2, 4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.matrix < 2 || self.nblades < 1 || self.lines_per_blade < 2 {
            return bad("matrix ≥ 2, nblades ≥ 1 and lines_per_blade ≥ 2 required");
        }
        if !self.lines_per_blade.is_multiple_of(2) {
            return bad("lines_per_blade must be even");
        }
        if self.acs_lines >= self.lines_per_blade {
            return bad("acs_lines must be smaller than lines_per_blade");
        }
        if !(1..=4).contains(&self.inblade_r) {
            return bad("inblade_r must be in 1..=4");
        }
        if self.readout < 2 * self.lines_per_blade {
            return bad("readout must be at least twice lines_per_blade");
        }
        if self.blade_step < 1 {
            return bad("blade_step must be ≥ 1");
        }
        Ok(())
    }

    /// Indices (into the full acquisition) of the blades kept.
    pub fn blade_indices(&self) -> Vec<usize> {
        (0..self.nblades).step_by(self.blade_step.max(1)).collect()
    }

    pub fn kept_blades(&self) -> usize {
        self.blade_indices().len()
    }

    /// Phase-encode spacing in cycles/pixel.
    pub fn spacing(&self) -> f64 {
        let half_r = self.readout as f64 / 2.0;
        let half_l = self.lines_per_blade as f64 / 2.0;
        let corner = (half_r * half_r + half_l * half_l).sqrt();
        (1.0 / self.matrix as f64).min(0.499 / corner)
    }

    /// Centre of the regular line lattice; every `inblade_r`-th line with
    /// this residue is acquired.
    pub fn lattice_phase(&self) -> usize {
        (self.lines_per_blade / 2) % self.inblade_r
    }

    pub fn acs_range(&self) -> std::ops::Range<usize> {
        let start = self.lines_per_blade / 2 - self.acs_lines / 2;
        start..start + self.acs_lines
    }
}

/// Per-line sampling pattern shared by every blade.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BladePattern {
    pub r: usize,
    pub phase: usize,
    pub acquired: Vec<bool>,
    pub acs: Vec<bool>,
}

impl BladePattern {
    pub fn from_spec(spec: &PropellerSpec) -> Self {
        let acs_range = spec.acs_range();
        let phase = spec.lattice_phase();
        let acs: Vec<bool> = (0..spec.lines_per_blade).map(|l| acs_range.contains(&l)).collect();
        let acquired = (0..spec.lines_per_blade).map(|l| l % spec.inblade_r == phase || acs[l]).collect();
        BladePattern {
            r: spec.inblade_r,
            phase,
            acquired,
            acs,
        }
    }

    pub fn acquired_count(&self) -> usize {
        self.acquired.iter().filter(|&&a| a).count()
    }

    pub fn is_lattice(&self, line: usize) -> bool {
        line % self.r == self.phase
    }
}

#[derive(Clone, Debug)]
pub struct BladeTrajectory {
    pub spec: PropellerSpec,
    pub angles: Vec<f64>,
    kcoords: Vec<[f64; 2]>,
    pub pattern: BladePattern,
}

impl BladeTrajectory {
    pub fn from_spec(spec: &PropellerSpec) -> Result<Self> {
        spec.validate()?;
        let (lines, readout) = (spec.lines_per_blade, spec.readout);
        let dk = spec.spacing();
        let angles: Vec<f64> = spec
            .blade_indices()
            .iter()
            .map(|&b| b as f64 * std::f64::consts::PI / spec.nblades as f64)
            .collect();
        let mut kcoords = Vec::with_capacity(angles.len() * lines * readout);
        for &theta in &angles {
            let (s, c) = theta.sin_cos();
            for l in 0..lines {
                let ky = (l as f64 - (lines / 2) as f64) * dk;
                for r in 0..readout {
                    let kx = (r as f64 - (readout / 2) as f64) * dk;
                    kcoords.push([kx * c - ky * s, kx * s + ky * c]);
                }
            }
        }
        let traj = BladeTrajectory {
            spec: spec.clone(),
            angles,
            kcoords,
            pattern: BladePattern::from_spec(spec),
        };
        if spec.blade_step == 1 && !traj.covers_disk(0.25) {
            log::warn!(
                "{} blades of {} lines leave gaps in the central k-space disk",
                spec.nblades,
                spec.lines_per_blade
            );
        }
        Ok(traj)
    }

    pub fn nblades(&self) -> usize {
        self.angles.len()
    }

    pub fn lines(&self) -> usize {
        self.spec.lines_per_blade
    }

    pub fn readout(&self) -> usize {
        self.spec.readout
    }

    pub fn matrix(&self) -> usize {
        self.spec.matrix
    }

    pub fn samples_per_blade(&self) -> usize {
        self.lines() * self.readout()
    }

    pub fn len(&self) -> usize {
        self.kcoords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kcoords.is_empty()
    }

    pub fn index(&self, blade: usize, line: usize, read: usize) -> usize {
        (blade * self.lines() + line) * self.readout() + read
    }

    pub fn coord(&self, blade: usize, line: usize, read: usize) -> [f64; 2] {
        self.kcoords[self.index(blade, line, read)]
    }

    /// All coordinates flattened in `[blade][line][readout]` order.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.kcoords
    }

    pub fn blade_coords(&self, blade: usize) -> &[[f64; 2]] {
        let n = self.samples_per_blade();
        &self.kcoords[blade * n..(blade + 1) * n]
    }

    /// Acquisition mask `[blade][line][readout]` from the in-blade pattern.
    pub fn acquired_mask(&self) -> Array3<bool> {
        Array3::from_shape_fn((self.nblades(), self.lines(), self.readout()), |(_, l, _)| self.pattern.acquired[l])
    }

    /// True when every pixel-sized cell of the disk of `radius` holds at
    /// least one acquired sample.
    pub fn covers_disk(&self, radius: f64) -> bool {
        let n = self.matrix() as i64;
        let cell = |v: f64| ((v * n as f64).round() as i64).clamp(-n / 2, n / 2 - 1) + n / 2;
        let mut hit = vec![false; (n * n) as usize];
        for b in 0..self.nblades() {
            for l in 0..self.lines() {
                if !self.pattern.acquired[l] {
                    continue;
                }
                for r in 0..self.readout() {
                    let [kx, ky] = self.coord(b, l, r);
                    hit[(cell(ky) * n + cell(kx)) as usize] = true;
                }
            }
        }
        let rad2 = radius * radius * (n * n) as f64;
        (0..n).all(|iy| {
            (0..n).all(|ix| {
                let (x, y) = ((ix - n / 2) as f64, (iy - n / 2) as f64);
                x * x + y * y > rad2 || hit[(iy * n + ix) as usize]
            })
        })
    }
}

/// Build a PROPELLER trajectory: `nblades` blades uniformly rotated over
/// 180°, each with `lines_per_blade` lines of `matrix` readout samples.
pub fn gen_propeller(matrix: usize, nblades: usize, lines_per_blade: usize, inblade_r: usize, acs_lines: usize) -> Result<BladeTrajectory> {
    BladeTrajectory::from_spec(&PropellerSpec::new(matrix, nblades, lines_per_blade, inblade_r, acs_lines))
}

/// Keep blades `0, factor, 2·factor, …` (cross-blade undersampling).
pub fn subsample_blades(traj: &BladeTrajectory, factor: usize) -> Result<BladeTrajectory> {
    if factor < 1 {
        return Err(Error::Config("blade subsampling factor must be ≥ 1".into()));
    }
    let mut spec = traj.spec.clone();
    spec.blade_step *= factor;
    BladeTrajectory::from_spec(&spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityWeights {
    /// One weight per trajectory sample, `[blade][line][readout]` order.
    pub weights: Vec<f64>,
    /// Factor converting raw fixed-point weights into k-space area
    /// (cycles/pixel²) per sample.
    pub normalization: f64,
}

impl DensityWeights {
    pub fn sqrt(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.sqrt()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Pipe–Menon weights for the acquired samples of `traj`.
pub fn density_comp(traj: &BladeTrajectory, plan: &GridPlan, iters: usize) -> Result<DensityWeights> {
    let mask = traj.acquired_mask();
    density_comp_masked(plan, mask.as_slice().expect("standard layout"), iters)
}

/// Pipe–Menon fixed point `w ← w / (G Gᴴ w)` over the samples selected by
/// `mask`, starting from `w = 1`. Unselected samples get weight 0. Weights
/// are scaled to the k-space area each sample represents, so a fully sampled
/// Cartesian grid gets `1/N²` and `Fᴴ W F ≈ I`.
pub fn density_comp_masked(plan: &GridPlan, mask: &[bool], iters: usize) -> Result<DensityWeights> {
    if iters < 1 {
        return Err(Error::Config("density compensation needs at least one iteration".into()));
    }
    if mask.len() != plan.len() {
        return Err(Error::Shape(format!(
            "mask has {} entries, plan has {} samples",
            mask.len(),
            plan.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptySelection("density compensation mask is all false".into()));
    }
    const EPS: f64 = 1e-12;
    let mut w: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    for _ in 0..iters {
        let grid = plan.spread_real(&w);
        let d = plan.interp_real(&grid);
        for ((wi, &di), &m) in w.iter_mut().zip(&d).zip(mask) {
            *wi = if m { *wi / di.max(EPS) } else { 0.0 };
        }
    }
    let normalization = plan.kernel_integral().powi(4) / (plan.grid_size() as f64).powi(2);
    w.iter_mut().for_each(|v| *v *= normalization);
    Ok(DensityWeights { weights: w, normalization })
}
