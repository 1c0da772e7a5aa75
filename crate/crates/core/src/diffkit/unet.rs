//! Two-level U-Net regularizer: two 3×3 conv+ReLU at full resolution, 2×
//! average pooling, two conv+ReLU at double width, nearest upsampling,
//! concatenation with the full-resolution skip, one conv+ReLU and a linear
//! output conv. The output conv starts at zero, so a fresh network maps
//! every input to zero.

use rand_distr::{Distribution, Normal};

use super::layers::{avgpool2, avgpool2_vjp, concat, conv2d, conv2d_vjp, relu, relu_vjp, split, upsample2, upsample2_vjp};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNet {
    pub prefix: String,
    pub width: usize,
    pub channels: usize,
}

const LAYERS: [&str; 6] = ["enc1", "enc2", "bot1", "bot2", "dec1", "out"];

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct UNetTape {
    x: Tensor,
    a1: Tensor,
    h1: Tensor,
    a2: Tensor,
    p: Tensor,
    a3: Tensor,
    h3: Tensor,
    a4: Tensor,
    cat: Tensor,
    a5: Tensor,
    h5: Tensor,
}

impl UNet {
    pub fn new(prefix: &str, width: usize) -> Self {
        UNet {
            prefix: prefix.to_string(),
            width,
            channels: 2,
        }
    }

    /// `(cin, cout)` of each layer in [`LAYERS`] order.
    fn dims(&self) -> [(usize, usize); 6] {
        let (c, w) = (self.channels, self.width);
        [(c, w), (w, w), (w, 2 * w), (2 * w, 2 * w), (3 * w, w), (w, c)]
    }

    fn name(&self, layer: &str, part: &str) -> String {
        format!("{}{layer}.{part}", self.prefix)
    }

    pub fn param_count(&self) -> usize {
        self.dims().iter().map(|(ci, co)| co * ci * 9 + co).sum()
    }

    /// He-normal hidden weights, zero biases, zero output layer.
    pub fn register(&self, params: &mut ParamSet, seed: u64) -> Result<()> {
        let mut rng = stream_rng(seed, &[0x756e_6574]);
        for (layer, (cin, cout)) in LAYERS.iter().zip(self.dims()) {
            let n = cout * cin * 9;
            let weights = if *layer == "out" {
                vec![0.0; n]
            } else {
                let dist = Normal::new(0.0, (2.0 / (cin * 9) as f64).sqrt()).expect("positive std");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            };
            params.add(&self.name(layer, "w"), &[cout, cin, 3, 3], weights)?;
            params.add(&self.name(layer, "b"), &[cout], vec![0.0; cout])?;
        }
        Ok(())
    }

    fn layer<'a>(&self, params: &'a ParamSet, i: usize) -> Result<(&'a [f64], &'a [f64])> {
        let (cin, cout) = self.dims()[i];
        let w = params.get(&self.name(LAYERS[i], "w"))?;
        let b = params.get(&self.name(LAYERS[i], "b"))?;
        if w.len() != cout * cin * 9 || b.len() != cout {
            return Err(Error::Shape(format!("{} parameters do not match width {}", LAYERS[i], self.width)));
        }
        Ok((w, b))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != self.channels || !x.h.is_multiple_of(2) || !x.w.is_multiple_of(2) || x.h == 0 || x.w == 0 {
            return Err(Error::Shape(format!(
                "U-Net input must have {} channels and even nonzero size, got {}×{}×{}",
                self.channels, x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, UNetTape)> {
        self.check_input(x)?;
        let l: Vec<(&[f64], &[f64])> = (0..6).map(|i| self.layer(params, i)).collect::<Result<_>>()?;
        let a1 = conv2d(x, l[0].0, l[0].1);
        let h1 = relu(&a1);
        let a2 = conv2d(&h1, l[1].0, l[1].1);
        let s1 = relu(&a2);
        let p = avgpool2(&s1);
        let a3 = conv2d(&p, l[2].0, l[2].1);
        let h3 = relu(&a3);
        let a4 = conv2d(&h3, l[3].0, l[3].1);
        let h4 = relu(&a4);
        let cat = concat(&upsample2(&h4), &s1);
        let a5 = conv2d(&cat, l[4].0, l[4].1);
        let h5 = relu(&a5);
        let y = conv2d(&h5, l[5].0, l[5].1);
        let tape = UNetTape {
            x: x.clone(),
            a1,
            h1,
            a2,
            p,
            a3,
            h3,
            a4,
            cat,
            a5,
            h5,
        };
        Ok((y, tape))
    }

    /// Accumulates parameter gradients into `grads` (laid out like
    /// `params.data`) and returns the input gradient.
    pub fn backward(&self, params: &ParamSet, tape: &UNetTape, gout: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        if grads.len() != params.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let dims = self.dims();
        let mut acc = |i: usize, gw: Vec<f64>, gb: Vec<f64>| -> Result<()> {
            let rw = params.entry(&self.name(LAYERS[i], "w"))?.range();
            let rb = params.entry(&self.name(LAYERS[i], "b"))?.range();
            grads[rw].iter_mut().zip(gw).for_each(|(g, v)| *g += v);
            grads[rb].iter_mut().zip(gb).for_each(|(g, v)| *g += v);
            Ok(())
        };
        let w = |i: usize| self.layer(params, i).map(|l| l.0);

        let (g_h5, gw, gb) = conv2d_vjp(&tape.h5, w(5)?, dims[5].1, gout);
        acc(5, gw, gb)?;
        let g_a5 = relu_vjp(&tape.a5, &g_h5);
        let (g_cat, gw, gb) = conv2d_vjp(&tape.cat, w(4)?, dims[4].1, &g_a5);
        acc(4, gw, gb)?;
        let (g_up, g_skip) = split(&g_cat, 2 * self.width);
        let g_h4 = upsample2_vjp(&g_up);
        let g_a4 = relu_vjp(&tape.a4, &g_h4);
        let (g_h3, gw, gb) = conv2d_vjp(&tape.h3, w(3)?, dims[3].1, &g_a4);
        acc(3, gw, gb)?;
        let g_a3 = relu_vjp(&tape.a3, &g_h3);
        let (g_p, gw, gb) = conv2d_vjp(&tape.p, w(2)?, dims[2].1, &g_a3);
        acc(2, gw, gb)?;
        let mut g_s1 = avgpool2_vjp(&g_p);
        g_s1.add_assign(&g_skip);
        let g_a2 = relu_vjp(&tape.a2, &g_s1);
        let (g_h1, gw, gb) = conv2d_vjp(&tape.h1, w(1)?, dims[1].1, &g_a2);
        acc(1, gw, gb)?;
        let g_a1 = relu_vjp(&tape.a1, &g_h1);
        let (g_x, gw, gb) = conv2d_vjp(&tape.x, w(0)?, dims[0].1, &g_a1);
        acc(0, gw, gb)?;
        Ok(g_x)
    }
}

pub fn cnn_apply(net: &UNet, params: &ParamSet, image: &Tensor) -> Result<Tensor> {
    net.forward(params, image).map(|(y, _)| y)
}

/// Reverse-mode derivative: `(d params, d image)` for cotangent `cot`.
pub fn cnn_vjp(net: &UNet, params: &ParamSet, image: &Tensor, cot: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let (y, tape) = net.forward(params, image)?;
    if !y.same_shape(cot) {
        return Err(Error::Shape("cotangent shape differs from network output".into()));
    }
    let mut grads = params.zeros_like();
    let gx = net.backward(params, &tape, cot, &mut grads)?;
    Ok((grads, gx))
}
