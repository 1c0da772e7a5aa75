//! Finite-difference checks of every layer's reverse pass.

use rand::Rng;

use super::gradcheck::{gradcheck, Differentiable, GradcheckReport};
use super::layers::{avgpool2, avgpool2_vjp, concat, conv2d, conv2d_vjp, relu, relu_vjp, split, upsample2, upsample2_vjp};
use super::params::ParamSet;
use super::tensor::Tensor;
use super::unet::UNet;
use crate::error::Result;
use crate::rng::stream_rng;

/// Named check result with the tolerance it must meet.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub report: GradcheckReport,
    pub tolerance: f64,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error() < self.tolerance
    }
}

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Central-difference step; small enough that a step rarely crosses a ReLU
/// kink, large enough that rounding stays near 1e-9 relative.
pub const EPS: f64 = 1e-7;
pub const DIRECTIONS: usize = 4;

fn tensor(c: usize, h: usize, w: usize, data: &[f64]) -> Tensor {
    Tensor::from_vec(c, h, w, data.to_vec()).expect("input sized for the shape")
}

struct Conv {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
}

impl Differentiable for Conv {
    fn eval(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let (w, b) = params.split_at(self.cout * self.cin * 9);
        conv2d(&tensor(self.cin, self.h, self.w, input), w, b).data
    }

    fn vjp(&self, params: &[f64], input: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = &params[..self.cout * self.cin * 9];
        let (gx, mut gw, gb) = conv2d_vjp(
            &tensor(self.cin, self.h, self.w, input),
            w,
            self.cout,
            &tensor(self.cout, self.h, self.w, cot),
        );
        gw.extend(gb);
        (gw, gx.data)
    }
}

/// Parameter-free layer given as forward and reverse closures.
struct Unary<F, G> {
    shape: (usize, usize, usize),
    out: (usize, usize, usize),
    f: F,
    g: G,
}

impl<F, G> Differentiable for Unary<F, G>
where
    F: Fn(&Tensor) -> Tensor,
    G: Fn(&Tensor, &Tensor) -> Tensor,
{
    fn eval(&self, _: &[f64], input: &[f64]) -> Vec<f64> {
        let (c, h, w) = self.shape;
        (self.f)(&tensor(c, h, w, input)).data
    }

    fn vjp(&self, _: &[f64], input: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (c, h, w) = self.shape;
        let (oc, oh, ow) = self.out;
        (Vec::new(), (self.g)(&tensor(c, h, w, input), &tensor(oc, oh, ow, cot)).data)
    }
}

struct Net {
    net: UNet,
    layout: ParamSet,
    h: usize,
    w: usize,
}

impl Net {
    fn params(&self, data: &[f64]) -> ParamSet {
        let mut p = self.layout.clone();
        p.data.copy_from_slice(data);
        p
    }
}

impl Differentiable for Net {
    fn eval(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let x = tensor(2, self.h, self.w, input);
        self.net.forward(&self.params(params), &x).expect("valid U-Net input").0.data
    }

    fn vjp(&self, params: &[f64], input: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.params(params);
        let x = tensor(2, self.h, self.w, input);
        let (_, tape) = self.net.forward(&p, &x).expect("valid U-Net input");
        let mut grads = p.zeros_like();
        let gx = self
            .net
            .backward(&p, &tape, &tensor(2, self.h, self.w, cot), &mut grads)
            .expect("matching gradient buffer");
        (grads, gx.data)
    }
}

fn random(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Checks conv2d, relu, avgpool2, upsample2, concat/split and a full U-Net
/// (with a randomized output layer so the output is not identically zero).
pub fn layer_gradchecks(seed: u64) -> Result<Vec<GradcheckEntry>> {
    let mut rng = stream_rng(seed, &[0x6c61_7972]);
    let mut out = Vec::new();
    let mut push = |name: &str, report: GradcheckReport| {
        out.push(GradcheckEntry {
            name: name.to_string(),
            report,
            tolerance: OP_TOLERANCE,
        })
    };

    let conv = Conv {
        cin: 3,
        cout: 4,
        h: 6,
        w: 5,
    };
    let p = random(4 * 3 * 9 + 4, &mut rng);
    let x = random(3 * 6 * 5, &mut rng);
    push("conv2d", gradcheck(&conv, &p, &x, EPS, DIRECTIONS, seed));

    let x = random(2 * 6 * 6, &mut rng);
    let r = Unary {
        shape: (2, 6, 6),
        out: (2, 6, 6),
        f: relu,
        g: relu_vjp,
    };
    push("relu", gradcheck(&r, &[], &x, EPS, DIRECTIONS, seed));
    let pool = Unary {
        shape: (2, 6, 6),
        out: (2, 3, 3),
        f: avgpool2,
        g: |_: &Tensor, g: &Tensor| avgpool2_vjp(g),
    };
    push("avgpool2", gradcheck(&pool, &[], &x, EPS, DIRECTIONS, seed));
    let up = Unary {
        shape: (2, 6, 6),
        out: (2, 12, 12),
        f: upsample2,
        g: |_: &Tensor, g: &Tensor| upsample2_vjp(g),
    };
    push("upsample2", gradcheck(&up, &[], &x, EPS, DIRECTIONS, seed));
    let cat = Unary {
        shape: (2, 6, 6),
        out: (2, 6, 6),
        f: |t: &Tensor| {
            let (a, b) = split(t, 1);
            concat(&b, &a)
        },
        g: |_: &Tensor, g: &Tensor| {
            let (gb, ga) = split(g, 1);
            concat(&ga, &gb)
        },
    };
    push("concat_split", gradcheck(&cat, &[], &x, EPS, DIRECTIONS, seed));

    let net = UNet::new("n.", 3);
    let mut layout = ParamSet::new();
    net.register(&mut layout, seed)?;
    for v in layout.data.iter_mut() {
        *v += 0.1 * (rng.random::<f64>() - 0.5);
    }
    let p = layout.data.clone();
    let check = Net { net, layout, h: 8, w: 8 };
    let x = random(2 * 8 * 8, &mut rng);
    push("unet", gradcheck(&check, &p, &x, EPS, DIRECTIONS, seed));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_layers_pass() {
        for e in layer_gradchecks(3).unwrap() {
            assert!(e.passed(), "{}: {:?}", e.name, e.report);
        }
    }
}
