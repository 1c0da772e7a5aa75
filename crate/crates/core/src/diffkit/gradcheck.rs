use rand::Rng;

use crate::rng::stream_rng;

/// A pure function `f(params, input) -> output` with its reverse-mode
/// derivative.
pub trait Differentiable {
    fn eval(&self, params: &[f64], input: &[f64]) -> Vec<f64>;
    /// `(d params, d input)` of `⟨cot, f(params, input)⟩`.
    fn vjp(&self, params: &[f64], input: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error_params: f64,
    pub max_rel_error_input: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_params.max(self.max_rel_error_input)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-300 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compare the VJP against central differences of `⟨u, f⟩` for a random
/// cotangent `u` along `directions` random directions in parameter space
/// and as many in input space.
pub fn gradcheck(f: &dyn Differentiable, params: &[f64], input: &[f64], eps: f64, directions: usize, seed: u64) -> GradcheckReport {
    let mut rng = stream_rng(seed, &[0x6763]);
    let y0 = f.eval(params, input);
    let cot: Vec<f64> = (0..y0.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let (gp, gi) = f.vjp(params, input, &cot);
    let scalar = |p: &[f64], x: &[f64]| -> f64 { f.eval(p, x).iter().zip(&cot).map(|(a, b)| a * b).sum() };
    let mut report = GradcheckReport {
        max_rel_error_params: 0.0,
        max_rel_error_input: 0.0,
    };
    let mut dir = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect() };
    for _ in 0..directions {
        if !params.is_empty() {
            let v = dir(params.len());
            let plus: Vec<f64> = params.iter().zip(&v).map(|(p, d)| p + eps * d).collect();
            let minus: Vec<f64> = params.iter().zip(&v).map(|(p, d)| p - eps * d).collect();
            let fd = (scalar(&plus, input) - scalar(&minus, input)) / (2.0 * eps);
            let an: f64 = gp.iter().zip(&v).map(|(g, d)| g * d).sum();
            report.max_rel_error_params = report.max_rel_error_params.max(rel(fd, an));
        }
        if !input.is_empty() {
            let v = dir(input.len());
            let plus: Vec<f64> = input.iter().zip(&v).map(|(p, d)| p + eps * d).collect();
            let minus: Vec<f64> = input.iter().zip(&v).map(|(p, d)| p - eps * d).collect();
            let fd = (scalar(params, &plus) - scalar(params, &minus)) / (2.0 * eps);
            let an: f64 = gi.iter().zip(&v).map(|(g, d)| g * d).sum();
            report.max_rel_error_input = report.max_rel_error_input.max(rel(fd, an));
        }
    }
    report
}
