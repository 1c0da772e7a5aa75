//! Thin 2-D FFT helpers over `rustfft`.

use std::sync::Arc;

use ndarray::{Array2, ArrayViewMut2, Axis};
use rustfft::{Fft, FftPlanner};

use crate::C64;

/// Row/column FFT pair for a fixed `rows × cols` shape. Unnormalized.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// In-place transform; `inverse` selects the `e^{+2πi}` kernel.
    pub fn process(&self, mut data: ArrayViewMut2<C64>, inverse: bool) {
        assert_eq!(data.dim(), (self.rows, self.cols));
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let mut scratch = vec![C64::default(); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
        for mut r in data.axis_iter_mut(Axis(0)) {
            match r.as_slice_mut() {
                Some(s) => row.process_with_scratch(s, &mut scratch),
                None => {
                    let mut buf = r.to_vec();
                    row.process_with_scratch(&mut buf, &mut scratch);
                    r.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
                }
            }
        }
        let mut buf = vec![C64::default(); self.rows];
        for mut c in data.axis_iter_mut(Axis(1)) {
            buf.iter_mut().zip(c.iter()).for_each(|(b, &v)| *b = v);
            col.process_with_scratch(&mut buf, &mut scratch);
            c.iter_mut().zip(buf.iter()).for_each(|(d, &v)| *d = v);
        }
    }
}

/// Unitary centered transform between a Cartesian k-space array and its
/// image: index `i` corresponds to the centered coordinate `i - n/2` on both
/// sides.
pub fn centered_fft2(data: &mut Array2<C64>, inverse: bool) {
    let (rows, cols) = data.dim();
    let plan = Fft2::new(rows, cols);
    centered_fft2_with(&plan, data, inverse);
}

pub fn centered_fft2_with(plan: &Fft2, data: &mut Array2<C64>, inverse: bool) {
    let (rows, cols) = data.dim();
    ifftshift(data);
    plan.process(data.view_mut(), inverse);
    fftshift(data);
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    data.mapv_inplace(|v| v * scale);
}

fn roll(data: &mut Array2<C64>, dr: usize, dc: usize) {
    let (rows, cols) = data.dim();
    let src = data.clone();
    for r in 0..rows {
        for c in 0..cols {
            data[[(r + dr) % rows, (c + dc) % cols]] = src[[r, c]];
        }
    }
}

/// Moves index 0 to the centre (`n/2`).
pub fn fftshift(data: &mut Array2<C64>) {
    let (rows, cols) = data.dim();
    roll(data, rows / 2, cols / 2);
}

/// Moves the centre (`n/2`) to index 0.
pub fn ifftshift(data: &mut Array2<C64>) {
    let (rows, cols) = data.dim();
    roll(data, rows - rows / 2, cols - cols / 2);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_pair_is_identity() {
        let mut a = Array2::from_shape_fn((6, 10), |(i, j)| C64::new(i as f64 - 0.3 * j as f64, (i * j) as f64 * 0.1));
        let orig = a.clone();
        centered_fft2(&mut a, true);
        centered_fft2(&mut a, false);
        for (x, y) in a.iter().zip(orig.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn centered_dc_is_sum_over_root_n() {
        let mut a = Array2::from_elem((4, 8), C64::new(1.0, 0.0));
        centered_fft2(&mut a, false);
        assert!((a[[2, 4]].re - (32f64).sqrt()).abs() < 1e-12);
        let off: f64 = a.iter().map(|v| v.norm()).sum::<f64>() - a[[2, 4]].norm();
        assert!(off < 1e-12);
    }
}
