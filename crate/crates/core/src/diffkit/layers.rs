//! Layer primitives and their vector-Jacobian products. Convolutions are
//! 3×3, stride 1, zero padded, computed as im2col followed by a matrix
//! product.

use ndarray::{Array2, ArrayView2};

use super::tensor::Tensor;

const K: usize = 3;

fn im2col(x: &Tensor) -> Array2<f64> {
    let (h, w) = (x.h, x.w);
    let mut cols = Array2::<f64>::zeros((x.c * K * K, h * w));
    for c in 0..x.c {
        let plane = x.channel(c);
        for ky in 0..K {
            for kx in 0..K {
                let mut row = cols.row_mut((c * K + ky) * K + kx);
                let row = row.as_slice_mut().expect("contiguous row");
                for y in 0..h {
                    let yy = y as i64 + ky as i64 - 1;
                    if yy < 0 || yy >= h as i64 {
                        continue;
                    }
                    for xo in 0..w {
                        let xx = xo as i64 + kx as i64 - 1;
                        if xx >= 0 && xx < w as i64 {
                            row[y * w + xo] = plane[yy as usize * w + xx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let plane = out.channel_mut(ci);
        for ky in 0..K {
            for kx in 0..K {
                let row = cols.row((ci * K + ky) * K + kx);
                for y in 0..h {
                    let yy = y as i64 + ky as i64 - 1;
                    if yy < 0 || yy >= h as i64 {
                        continue;
                    }
                    for xo in 0..w {
                        let xx = xo as i64 + kx as i64 - 1;
                        if xx >= 0 && xx < w as i64 {
                            plane[yy as usize * w + xx as usize] += row[y * w + xo];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `weight` is `[cout][cin][3][3]`, `bias` is `[cout]`.
pub fn conv2d(x: &Tensor, weight: &[f64], bias: &[f64]) -> Tensor {
    let cout = bias.len();
    assert_eq!(weight.len(), cout * x.c * K * K, "conv weight shape");
    let cols = im2col(x);
    let wm = ArrayView2::from_shape((cout, x.c * K * K), weight).expect("weight layout");
    let out = wm.dot(&cols);
    let mut t = Tensor::zeros(cout, x.h, x.w);
    for (co, (dst, src)) in t.data.chunks_mut(x.h * x.w).zip(out.rows()).enumerate() {
        dst.iter_mut().zip(src.iter()).for_each(|(d, &s)| *d = s + bias[co]);
    }
    t
}

/// Returns `(d input, d weight, d bias)`.
pub fn conv2d_vjp(x: &Tensor, weight: &[f64], cout: usize, gout: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let cols = im2col(x);
    let g = ArrayView2::from_shape((cout, x.h * x.w), &gout.data).expect("gradient layout");
    let gw = g.dot(&cols.t());
    let gb: Vec<f64> = g.rows().into_iter().map(|r| r.sum()).collect();
    let wm = ArrayView2::from_shape((cout, x.c * K * K), weight).expect("weight layout");
    let gcols = wm.t().dot(&g);
    let gx = col2im(&gcols, x.c, x.h, x.w);
    (gx, gw.iter().copied().collect(), gb)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU given the pre-activation `x`.
pub fn relu_vjp(x: &Tensor, gout: &Tensor) -> Tensor {
    let mut g = gout.clone();
    g.data.iter_mut().zip(&x.data).for_each(|(gv, &xv)| {
        if xv <= 0.0 {
            *gv = 0.0
        }
    });
    g
}

/// 2×2 average pooling; height and width must be even.
pub fn avgpool2(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h2 {
            for xo in 0..w2 {
                let i = 2 * y * x.w + 2 * xo;
                dst[y * w2 + xo] = 0.25 * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avgpool2_vjp(gout: &Tensor) -> Tensor {
    let mut g = upsample2(gout);
    g.scale(0.25);
    g
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (2 * x.h, 2 * x.w);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for xo in 0..w {
                dst[y * w + xo] = src[(y / 2) * x.w + xo / 2];
            }
        }
    }
    out
}

pub fn upsample2_vjp(gout: &Tensor) -> Tensor {
    let mut g = avgpool2(gout);
    g.scale(4.0);
    g
}

/// Channel concatenation `[a; b]`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial shape");
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

/// Inverse of [`concat`] for gradients: the first `ca` channels and the rest.
pub fn split(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let p = g.plane();
    let a = Tensor {
        c: ca,
        h: g.h,
        w: g.w,
        data: g.data[..ca * p].to_vec(),
    };
    let b = Tensor {
        c: g.c - ca,
        h: g.h,
        w: g.w,
        data: g.data[ca * p..].to_vec(),
    };
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_vec(1, 3, 4, (0..12).map(|v| v as f64).collect()).unwrap();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        assert_eq!(conv2d(&x, &w, &[0.0]), x);
    }

    #[test]
    fn shift_kernel_pads_with_zero() {
        let x = Tensor::from_vec(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let mut w = vec![0.0; 9];
        w[3] = 1.0; // reads the left neighbour
        assert_eq!(conv2d(&x, &w, &[0.5]).data, vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn pool_then_upsample_constant() {
        let x = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = avgpool2(&x);
        assert_eq!(p.data, vec![2.5]);
        assert_eq!(upsample2(&p).data, vec![2.5; 4]);
    }
}
