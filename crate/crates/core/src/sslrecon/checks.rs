//! Finite-difference checks of the reconstruction operators, the loss and
//! the end-to-end training gradient on a 16×16 problem.

use rand::Rng;

use super::loss::ssl_loss_grad;
use super::model::{unrolled_backward, unrolled_from, UnrolledModel};
use super::train::{prepare_input, train_step, SslInput};
use crate::config::ReconConfig;
use crate::diffkit::checks::{GradcheckEntry, DIRECTIONS, EPS, OP_TOLERANCE};
use crate::diffkit::{gradcheck, Differentiable, Tensor};
use crate::error::Result;
use crate::harness::scenario::{make_scenario, ScenarioSpec};
use crate::rng::stream_rng;
use crate::trajectory::PropellerSpec;
use crate::Image;

/// Tolerance for the full unrolled pipeline.
pub const PIPELINE_TOLERANCE: f64 = 1e-3;
pub const SPLIT_RATIO: f64 = 0.6;
pub const SPLIT_SEED: u64 = 11;

/// Noisy 16×16, 3-coil phantom and a 2-cascade, width-4 model whose
/// parameters are jittered so every path carries gradient.
pub fn tiny_problem(seed: u64) -> Result<(SslInput, UnrolledModel, ReconConfig)> {
    let mut cfg = ReconConfig::default();
    cfg.ssl.cascades = 2;
    cfg.ssl.width = 4;
    cfg.ssl.seed = seed;
    let spec = ScenarioSpec {
        traj: PropellerSpec::new(16, 6, 4, 1, 0),
        coils: 3,
        prescan_samples: 100,
        seed,
        ..ScenarioSpec::default()
    };
    let input = prepare_input(&make_scenario(&spec, &cfg)?.noisy, &cfg)?;
    let mut model = UnrolledModel::new(&cfg.ssl)?;
    let mut rng = stream_rng(seed, &[0x6a69_74]);
    for v in model.params.data.iter_mut() {
        *v += 0.05 * (rng.random::<f64>() - 0.5);
    }
    Ok((input, model, cfg))
}

fn image(n: usize, flat: &[f64]) -> Image {
    Tensor::from_vec(2, n, n, flat.to_vec())
        .and_then(|t| t.to_complex())
        .expect("input sized for the image")
}

struct Normal<'a> {
    input: &'a SslInput,
}

impl Differentiable for Normal<'_> {
    fn eval(&self, _: &[f64], x: &[f64]) -> Vec<f64> {
        let op = self.input.full_operator().expect("consistent operator");
        let ax = op.normal(&image(self.input.plan.matrix(), x)).expect("normal operator");
        Tensor::from_complex(&ax).data
    }

    fn vjp(&self, _: &[f64], _: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (Vec::new(), self.eval(&[], cot))
    }
}

struct Loss<'a> {
    input: &'a SslInput,
    alpha: f64,
}

impl Differentiable for Loss<'_> {
    fn eval(&self, _: &[f64], x: &[f64]) -> Vec<f64> {
        self.vjp_full(x).0
    }

    fn vjp(&self, _: &[f64], x: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.vjp_full(x).1;
        (Vec::new(), g.iter().map(|v| v * cot[0]).collect())
    }
}

impl Loss<'_> {
    fn vjp_full(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let op = self.input.full_operator().expect("consistent operator");
        let (l, g) = ssl_loss_grad(&image(self.input.plan.matrix(), x), &op, &self.input.y, self.alpha).expect("loss");
        (vec![l], Tensor::from_complex(&g).data)
    }
}

/// Cascades as a function of the parameters and the initial iterate.
struct Cascades<'a> {
    input: &'a SslInput,
    model: &'a UnrolledModel,
}

impl Cascades<'_> {
    fn with(&self, params: &[f64]) -> UnrolledModel {
        let mut m = self.model.clone();
        m.params.data.copy_from_slice(params);
        m
    }
}

impl Differentiable for Cascades<'_> {
    fn eval(&self, params: &[f64], x0: &[f64]) -> Vec<f64> {
        let op = self.input.full_operator().expect("consistent operator");
        let x0 = image(self.input.plan.matrix(), x0);
        let (x, _) = unrolled_from(&self.with(params), &op, x0).expect("finite cascades");
        Tensor::from_complex(&x).data
    }

    fn vjp(&self, params: &[f64], x0: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.input.plan.matrix();
        let op = self.input.full_operator().expect("consistent operator");
        let model = self.with(params);
        let (_, tape) = unrolled_from(&model, &op, image(n, x0)).expect("finite cascades");
        let mut grads = model.params.zeros_like();
        let gx0 = unrolled_backward(&model, &op, &tape, &image(n, cot), &mut grads).expect("reverse pass");
        (grads, Tensor::from_complex(&gx0).data)
    }
}

/// Split, unroll, loss: gradient of the training loss in the parameters.
struct EndToEnd<'a> {
    input: &'a SslInput,
    model: &'a UnrolledModel,
    alpha: f64,
}

impl Differentiable for EndToEnd<'_> {
    fn eval(&self, params: &[f64], _: &[f64]) -> Vec<f64> {
        let mut m = self.model.clone();
        m.params.data.copy_from_slice(params);
        vec![
            train_step(&m, self.input, SPLIT_RATIO, SPLIT_SEED, self.alpha)
                .expect("training step")
                .0,
        ]
    }

    fn vjp(&self, params: &[f64], _: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut m = self.model.clone();
        m.params.data.copy_from_slice(params);
        let (_, g) = train_step(&m, self.input, SPLIT_RATIO, SPLIT_SEED, self.alpha).expect("training step");
        (g.iter().map(|v| v * cot[0]).collect(), Vec::new())
    }
}

/// Normal operator, loss and cascades at the operation tolerance, and the
/// end-to-end training gradient at the pipeline tolerance.
pub fn pipeline_gradchecks(seed: u64) -> Result<Vec<GradcheckEntry>> {
    let (input, model, cfg) = tiny_problem(seed)?;
    let alpha = cfg.ssl.loss_alpha;
    let mut rng = stream_rng(seed, &[0x7069_7065]);
    let n = input.plan.matrix();
    let x: Vec<f64> = (0..2 * n * n).map(|_| rng.random::<f64>() - 0.5).collect();
    let entry = |name: &str, report, tolerance| GradcheckEntry {
        name: name.to_string(),
        report,
        tolerance,
    };
    Ok(vec![
        entry(
            "normal_operator",
            gradcheck(&Normal { input: &input }, &[], &x, EPS, DIRECTIONS, seed),
            OP_TOLERANCE,
        ),
        entry(
            "ssl_loss",
            gradcheck(&Loss { input: &input, alpha }, &[], &x, EPS, DIRECTIONS, seed),
            OP_TOLERANCE,
        ),
        entry(
            "cascades",
            gradcheck(
                &Cascades {
                    input: &input,
                    model: &model,
                },
                &model.params.data,
                &x,
                EPS,
                DIRECTIONS,
                seed,
            ),
            OP_TOLERANCE,
        ),
        entry(
            "end_to_end",
            gradcheck(
                &EndToEnd {
                    input: &input,
                    model: &model,
                    alpha,
                },
                &model.params.data,
                &[],
                EPS,
                DIRECTIONS,
                seed,
            ),
            PIPELINE_TOLERANCE,
        ),
    ])
}

/// Every layer check followed by the pipeline checks.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradcheckEntry>> {
    let mut all = crate::diffkit::checks::layer_gradchecks(seed)?;
    all.extend(pipeline_gradchecks(seed)?);
    Ok(all)
}
