//! Inter-blade phase correction.
//!
//! Every blade samples `k = 0` exactly, so blades of a consistent
//! acquisition agree there coil by coil. Each blade gets one constant phase
//! that aligns its multi-coil DC vector with the consensus of all blades:
//! start by aligning to blade 0, then iterate `φ_b = arg Σ_c d_bc·conj(S_c)`
//! with `S = Σ_b d_b e^{-iφ_b}` to a fixed point. The global phase is chosen
//! so the corrected DC samples stay as close as possible to the input, which
//! makes consistent data and already-corrected data pass through unchanged.
//! Because the first alignment removes any per-blade phase, corrupted and
//! clean inputs follow the same iteration up to one global phase.

use ndarray::Axis;

use crate::datamodel::KSpaceDataset;
use crate::error::{Error, Result};
use crate::C64;

const MAX_ITERS: usize = 100;
const TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseCorrection {
    pub dataset: KSpaceDataset,
    /// Phase removed from each blade, radians.
    pub phases: Vec<f64>,
}

fn wrap(a: f64) -> f64 {
    C64::from_polar(1.0, a).arg()
}

/// `[blade][coil]` samples at `k = 0`.
pub fn dc_samples(ds: &KSpaceDataset) -> Result<Vec<Vec<C64>>> {
    let (l0, r0) = (ds.lines() / 2, ds.readout() / 2);
    (0..ds.blades())
        .map(|b| {
            if !ds.mask()[[b, l0, r0]] {
                return Err(Error::EmptySelection(format!("blade {b} did not acquire k = 0")));
            }
            Ok((0..ds.coils()).map(|c| ds.samples()[[b, c, l0, r0]]).collect())
        })
        .collect()
}

fn align(d: &[C64], reference: &[C64]) -> f64 {
    let z: C64 = d.iter().zip(reference).map(|(a, b)| a * b.conj()).sum();
    if z.norm() > 0.0 {
        z.arg()
    } else {
        0.0
    }
}

/// Per-blade constant phases, see the module documentation.
pub fn estimate_blade_phases(ds: &KSpaceDataset) -> Result<Vec<f64>> {
    let dc = dc_samples(ds)?;
    let coils = ds.coils();
    let mut phases: Vec<f64> = dc.iter().map(|d| align(d, &dc[0])).collect();
    for _ in 0..MAX_ITERS {
        let mut consensus = vec![C64::default(); coils];
        for (d, &p) in dc.iter().zip(&phases) {
            let rot = C64::from_polar(1.0, -p);
            consensus.iter_mut().zip(d).for_each(|(s, &v)| *s += v * rot);
        }
        let next: Vec<f64> = dc.iter().map(|d| align(d, &consensus)).collect();
        let change = next.iter().zip(&phases).map(|(a, b)| wrap(a - b).abs()).fold(0.0, f64::max);
        phases = next;
        if change < TOL {
            break;
        }
    }
    let closeness: C64 = dc
        .iter()
        .zip(&phases)
        .map(|(d, &p)| C64::from_polar(d.iter().map(|v| v.norm_sqr()).sum(), -p))
        .sum();
    let global = if closeness.norm() > 0.0 { closeness.arg() } else { 0.0 };
    Ok(phases.iter().map(|p| wrap(p + global)).collect())
}

/// Remove the estimated constant phase from every blade.
pub fn correct_blades(ds: &KSpaceDataset) -> Result<PhaseCorrection> {
    let phases = estimate_blade_phases(ds)?;
    let mut samples = ds.samples().clone();
    for (mut blade, &p) in samples.axis_iter_mut(Axis(0)).zip(&phases) {
        let rot = C64::from_polar(1.0, -p);
        blade.mapv_inplace(|v| v * rot);
    }
    Ok(PhaseCorrection {
        dataset: ds.with_samples(samples)?,
        phases,
    })
}

/// Largest pairwise phase disagreement between blades at `k = 0`, measured
/// per blade against the multi-coil consensus.
pub fn dc_phase_spread(ds: &KSpaceDataset) -> Result<f64> {
    let dc = dc_samples(ds)?;
    let mut consensus = vec![C64::default(); ds.coils()];
    for d in &dc {
        consensus.iter_mut().zip(d).for_each(|(s, &v)| *s += v);
    }
    let phases: Vec<f64> = dc.iter().map(|d| align(d, &consensus)).collect();
    Ok(phases
        .iter()
        .flat_map(|a| phases.iter().map(move |b| wrap(a - b).abs()))
        .fold(0.0, f64::max))
}
