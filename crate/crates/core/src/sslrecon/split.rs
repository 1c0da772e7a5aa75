//! Readout-direction partition of the acquired samples into two disjoint
//! masks.

use ndarray::{Array3, Zip};
use rand::seq::index::sample;

use crate::datamodel::KSpaceDataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitMaskPair {
    /// Samples driving the reconstruction, `[blade][line][readout]`.
    pub lambda1: Array3<bool>,
    /// Samples supervising the loss.
    pub lambda2: Array3<bool>,
    pub ratio: f64,
    pub seed: u64,
}

impl SplitMaskPair {
    pub fn lambda1_flat(&self) -> Vec<bool> {
        self.lambda1.iter().copied().collect()
    }

    pub fn lambda2_flat(&self) -> Vec<bool> {
        self.lambda2.iter().copied().collect()
    }

    /// Disjoint and covering `acquired` exactly.
    pub fn partitions(&self, acquired: &Array3<bool>) -> bool {
        if self.lambda1.dim() != acquired.dim() || self.lambda2.dim() != acquired.dim() {
            return false;
        }
        let mut ok = true;
        Zip::from(&self.lambda1)
            .and(&self.lambda2)
            .and(acquired)
            .for_each(|&a, &b, &m| ok &= !(a && b) && ((a || b) == m));
        ok
    }
}

/// Number of samples of a line with `n` acquired samples that go to Λ₁:
/// `⌈ratio·n⌉`, less one when that would leave Λ₂ empty on a line with at
/// least two samples.
pub fn lambda1_count(n: usize, ratio: f64) -> usize {
    let k = ((ratio * n as f64).ceil() as usize).min(n);
    if k == n && n >= 2 {
        n - 1
    } else {
        k
    }
}

/// Split every line of `acquired` independently: a seeded uniform draw
/// without replacement picks the Λ₁ readout positions.
pub fn split_masks(acquired: &Array3<bool>, ratio: f64, seed: u64) -> Result<SplitMaskPair> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let (blades, lines, _) = acquired.dim();
    let mut lambda1 = Array3::from_elem(acquired.dim(), false);
    let mut lambda2 = Array3::from_elem(acquired.dim(), false);
    for b in 0..blades {
        for l in 0..lines {
            let idx: Vec<usize> = acquired
                .slice(ndarray::s![b, l, ..])
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect();
            if idx.is_empty() {
                continue;
            }
            let k = lambda1_count(idx.len(), ratio);
            let mut rng = stream_rng(seed, &[b as u64, l as u64]);
            let mut chosen = vec![false; idx.len()];
            for j in sample(&mut rng, idx.len(), k) {
                chosen[j] = true;
            }
            for (&i, &c) in idx.iter().zip(&chosen) {
                if c {
                    lambda1[[b, l, i]] = true;
                } else {
                    lambda2[[b, l, i]] = true;
                }
            }
        }
    }
    Ok(SplitMaskPair {
        lambda1,
        lambda2,
        ratio,
        seed,
    })
}

/// `(Λ₁⊙y, Λ₂⊙y, masks)`; each output carries its own mask as the acquired
/// mask.
pub fn split_kspace(ds: &KSpaceDataset, ratio: f64, seed: u64) -> Result<(KSpaceDataset, KSpaceDataset, SplitMaskPair)> {
    let masks = split_masks(ds.mask(), ratio, seed)?;
    if !masks.lambda2.iter().any(|&m| m) {
        return Err(Error::EmptySelection("split leaves Λ₂ empty".into()));
    }
    let part = |mask: &Array3<bool>| {
        KSpaceDataset::masked(
            ds.traj.clone(),
            ds.samples().clone(),
            mask.clone(),
            ds.prescan.clone(),
            ds.meta.clone(),
        )
    };
    let y1 = part(&masks.lambda1)?;
    let y2 = part(&masks.lambda2)?;
    Ok((y1, y2, masks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_split_counts() {
        let acq = Array3::from_elem((1, 1, 320), true);
        let m = split_masks(&acq, 0.5, 3).unwrap();
        assert_eq!(m.lambda1.iter().filter(|&&v| v).count(), 160);
        assert!(m.partitions(&acq));
    }

    #[test]
    fn reserves_one_sample() {
        assert_eq!(lambda1_count(64, 0.99), 63);
        assert_eq!(lambda1_count(1, 0.99), 1);
        assert_eq!(lambda1_count(10, 0.3), 3);
    }

    #[test]
    fn respects_unacquired_positions() {
        let mut acq = Array3::from_elem((2, 3, 16), true);
        acq.slice_mut(ndarray::s![.., 1, ..]).fill(false);
        let m = split_masks(&acq, 0.6, 9).unwrap();
        assert!(m.partitions(&acq));
        assert!(m.lambda1.slice(ndarray::s![.., 1, ..]).iter().all(|&v| !v));
    }
}
