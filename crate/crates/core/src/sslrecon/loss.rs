//! Mixed L1/L2 consistency loss on the held-out samples.

use super::model::SubsetOperator;
use crate::datamodel::{CoilImages, Image};
use crate::error::{Error, Result};
use crate::C64;

/// `α·Σ|r|/N + (1−α)·sqrt(Σ|r|²/N)` with per-coil residual images
/// `r_c = Fᴴ W₂ (F(C_c·x) − y_c)` and `N` pixels × coils.
pub fn ssl_loss(x_hat: &Image, op2: &SubsetOperator, y: &[Vec<C64>], alpha: f64) -> Result<f64> {
    let r = residual(x_hat, op2, y)?;
    Ok(mixed_norm(&r, alpha).0)
}

/// Loss and its gradient with respect to `x_hat`.
pub fn ssl_loss_grad(x_hat: &Image, op2: &SubsetOperator, y: &[Vec<C64>], alpha: f64) -> Result<(f64, Image)> {
    let r = residual(x_hat, op2, y)?;
    let (loss, cot) = mixed_norm(&r, alpha);
    Ok((loss, op2.residual_vjp(&cot)?))
}

fn residual(x_hat: &Image, op2: &SubsetOperator, y: &[Vec<C64>]) -> Result<CoilImages> {
    if !op2.weights().iter().any(|&w| w > 0.0) {
        return Err(Error::EmptySelection("loss subset Λ₂ is empty".into()));
    }
    op2.residual(x_hat, y)
}

/// Mixed norm of `r` and its gradient `α/N·r/|r| + (1−α)·r/(N·rms)`.
pub fn mixed_norm(r: &CoilImages, alpha: f64) -> (f64, CoilImages) {
    let n = r.len() as f64;
    let l1: f64 = r.iter().map(|v| v.norm()).sum();
    let l2: f64 = r.iter().map(|v| v.norm_sqr()).sum();
    let rms = (l2 / n).sqrt();
    let loss = alpha * l1 / n + (1.0 - alpha) * rms;
    let grad = r.mapv(|v| {
        let a = v.norm();
        let g1 = if a > 0.0 { v / a } else { C64::default() };
        let g2 = if rms > 0.0 { v / rms } else { C64::default() };
        (g1 * alpha + g2 * (1.0 - alpha)) / n
    });
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn mixed_norm_is_homogeneous() {
        let r = Array3::from_shape_fn((2, 3, 3), |(c, y, x)| C64::new((c + y) as f64 - 1.5, x as f64 * 0.3));
        let (a, _) = mixed_norm(&r, 0.5);
        let (b, _) = mixed_norm(&r.mapv(|v| v * 2.0), 0.5);
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn mixed_norm_gradient_matches_differences() {
        let r = Array3::from_shape_fn((2, 2, 3), |(c, y, x)| C64::new(c as f64 - y as f64 + 0.2, x as f64 - 0.7));
        let (_, g) = mixed_norm(&r, 0.3);
        let h = 1e-6;
        for (i, gi) in g.iter().enumerate() {
            for (dir, exact) in [(C64::new(1.0, 0.0), gi.re), (C64::new(0.0, 1.0), gi.im)] {
                let bump = |s: f64| {
                    let mut q = r.clone();
                    *q.iter_mut().nth(i).unwrap() += dir * s;
                    mixed_norm(&q, 0.3).0
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - exact).abs() < 1e-7, "{fd} vs {exact}");
            }
        }
    }
}
