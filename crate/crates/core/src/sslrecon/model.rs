//! Unrolled reconstruction: alternating data-consistency gradient steps and
//! residual U-Net updates, with a hand-written reverse pass.

use std::path::Path;

use ndarray::Zip;
use rayon::prelude::*;
use serde_json::json;

use super::{SensitivitySource, SslConfig};
use crate::datamodel::{is_finite, CoilImages, Container, Image};
use crate::diffkit::{ParamSet, Tensor, UNet, UNetTape};
use crate::error::{Error, Result};
use crate::nufft::GridPlan;
use crate::phantom::CoilMaps;
use crate::rng::derive_seed;
use crate::C64;

/// Coil-expanded, density-weighted operators over one sample subset: the
/// subset is whatever carries nonzero weight.
pub struct SubsetOperator<'a> {
    plan: &'a GridPlan,
    maps: &'a CoilMaps,
    weights: Vec<f64>,
}

impl<'a> SubsetOperator<'a> {
    pub fn new(plan: &'a GridPlan, maps: &'a CoilMaps, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != plan.len() {
            return Err(Error::Shape(format!("{} weights for a plan of {}", weights.len(), plan.len())));
        }
        if maps.matrix() != plan.matrix() {
            return Err(Error::Shape(format!(
                "maps are {}×{}, plan matrix {}",
                maps.matrix(),
                maps.matrix(),
                plan.matrix()
            )));
        }
        Ok(SubsetOperator { plan, maps, weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coils(&self) -> usize {
        self.maps.coils()
    }

    fn check_data(&self, y: &[Vec<C64>]) -> Result<()> {
        if y.len() != self.coils() || y.iter().any(|v| v.len() != self.plan.len()) {
            return Err(Error::Shape("coil data does not match maps and plan".into()));
        }
        Ok(())
    }

    /// Sums `conj(C_c)·images[c]` over coils in coil order.
    fn coil_sum(&self, images: &[Image]) -> Image {
        let n = self.plan.matrix();
        let mut out = Image::zeros((n, n));
        for (img, map) in images.iter().zip(self.maps.maps.outer_iter()) {
            Zip::from(&mut out).and(img).and(&map).for_each(|o, &v, &s| *o += s.conj() * v);
        }
        out
    }

    fn per_coil<F>(&self, f: F) -> Result<Vec<Image>>
    where
        F: Fn(usize) -> Result<Image> + Sync + Send,
    {
        (0..self.coils()).into_par_iter().map(f).collect()
    }

    fn weighted_roundtrip(&self, img: &Image) -> Result<Image> {
        let k = self.plan.forward(img.view())?;
        self.plan.adjoint(&k, Some(&self.weights))
    }

    /// `Σ_c conj(C_c)·Fᴴ(W·y_c)`.
    pub fn adjoint_data(&self, y: &[Vec<C64>]) -> Result<Image> {
        self.check_data(y)?;
        let imgs = self.per_coil(|c| self.plan.adjoint(&y[c], Some(&self.weights)))?;
        Ok(self.coil_sum(&imgs))
    }

    /// `Σ_c conj(C_c)·Fᴴ W F(C_c·x)`; self-adjoint.
    pub fn normal(&self, x: &Image) -> Result<Image> {
        let imgs = self.per_coil(|c| {
            let coil = &self.maps.maps.index_axis(ndarray::Axis(0), c) * x;
            self.weighted_roundtrip(&coil)
        })?;
        Ok(self.coil_sum(&imgs))
    }

    /// Per-coil image-domain residual `Fᴴ W (F(C_c·x) − y_c)`.
    pub fn residual(&self, x: &Image, y: &[Vec<C64>]) -> Result<CoilImages> {
        self.check_data(y)?;
        let imgs = self.per_coil(|c| {
            let coil = &self.maps.maps.index_axis(ndarray::Axis(0), c) * x;
            let mut k = self.plan.forward(coil.view())?;
            k.iter_mut().zip(&y[c]).for_each(|(a, b)| *a -= b);
            self.plan.adjoint(&k, Some(&self.weights))
        })?;
        let views: Vec<_> = imgs.iter().map(|a| a.view()).collect();
        Ok(ndarray::stack(ndarray::Axis(0), &views).expect("equal shapes"))
    }

    /// Reverse pass of [`Self::residual`] with respect to `x`.
    pub fn residual_vjp(&self, cot: &CoilImages) -> Result<Image> {
        if cot.dim().0 != self.coils() {
            return Err(Error::Shape("cotangent coil count differs from maps".into()));
        }
        let imgs = self.per_coil(|c| self.weighted_roundtrip(&cot.index_axis(ndarray::Axis(0), c).to_owned()))?;
        Ok(self.coil_sum(&imgs))
    }
}

const ETA: &str = "dc.eta";

#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledModel {
    pub cascades: usize,
    pub width: usize,
    pub sensitivity: SensitivitySource,
    pub params: ParamSet,
}

impl UnrolledModel {
    /// One U-Net per cascade (prefix `c{i}.`) plus the step sizes `dc.eta`.
    pub fn new(cfg: &SslConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        for c in 0..cfg.cascades {
            UNet::new(&format!("c{c}."), cfg.width).register(&mut params, derive_seed(cfg.seed, &[0x6e6574, c as u64]))?;
        }
        params.add(ETA, &[cfg.cascades], vec![cfg.eta_init; cfg.cascades])?;
        Ok(UnrolledModel {
            cascades: cfg.cascades,
            width: cfg.width,
            sensitivity: cfg.sensitivity,
            params,
        })
    }

    pub fn net(&self, cascade: usize) -> UNet {
        UNet::new(&format!("c{cascade}."), self.width)
    }

    pub fn eta(&self) -> Result<&[f64]> {
        self.params.get(ETA)
    }

    pub fn set_eta(&mut self, eta: &[f64]) -> Result<()> {
        let dst = self.params.get_mut(ETA)?;
        if dst.len() != eta.len() {
            return Err(Error::Shape(format!("{} step sizes for {} cascades", eta.len(), dst.len())));
        }
        dst.copy_from_slice(eta);
        Ok(())
    }

    fn meta(&self) -> serde_json::Value {
        json!({
            "kind": "unrolled_model",
            "cascades": self.cascades,
            "width": self.width,
            "sensitivity": self.sensitivity,
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        self.params.to_container(self.meta())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let field = |k: &str| {
            c.meta
                .get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Manifest(format!("checkpoint meta lacks `{k}`")))
        };
        let sensitivity = c
            .meta
            .get("sensitivity")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Manifest(e.to_string()))?
            .unwrap_or_default();
        let cfg = SslConfig {
            cascades: field("cascades")?,
            width: field("width")?,
            sensitivity,
            ..SslConfig::default()
        };
        let layout = UnrolledModel::new(&cfg)?;
        Ok(UnrolledModel {
            params: ParamSet::from_container(c, &layout.params)?,
            ..layout
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_container()?.write(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        UnrolledModel::from_container(&Container::read(dir)?)
    }
}

/// Activations kept by [`unrolled_forward_tape`] for the reverse pass.
pub struct ForwardTape {
    inputs: Vec<Image>,
    x0: Image,
    nets: Vec<UNetTape>,
}

impl ForwardTape {
    /// Initial iterate `x⁰`.
    pub fn x0(&self) -> &Image {
        &self.x0
    }
}

fn check_finite(x: &Image, cascade: usize) -> Result<()> {
    if is_finite(x.iter().copied()) {
        Ok(())
    } else {
        Err(Error::Diverged { cascade })
    }
}

/// Run the cascades from `x⁰ = Σ_c conj(C_c)·Fᴴ(W₁·y_c)`:
/// `x ← x − η_c·(A x − x⁰) − cnn_c(x)` with `A` the normal operator of `op`.
pub fn unrolled_forward(model: &UnrolledModel, op: &SubsetOperator, y: &[Vec<C64>]) -> Result<Image> {
    unrolled_forward_tape(model, op, y).map(|(x, _)| x)
}

pub fn unrolled_forward_tape(model: &UnrolledModel, op: &SubsetOperator, y: &[Vec<C64>]) -> Result<(Image, ForwardTape)> {
    let x0 = op.adjoint_data(y)?;
    unrolled_from(model, op, x0)
}

/// Cascades from an explicit initial iterate.
pub fn unrolled_from(model: &UnrolledModel, op: &SubsetOperator, x0: Image) -> Result<(Image, ForwardTape)> {
    let eta = model.eta()?.to_vec();
    let mut x = x0.clone();
    let mut inputs = Vec::with_capacity(model.cascades);
    let mut nets = Vec::with_capacity(model.cascades);
    for (c, &eta_c) in eta.iter().enumerate() {
        let (reg, tape) = model.net(c).forward(&model.params, &Tensor::from_complex(&x))?;
        let reg = reg.to_complex()?;
        let mut next = x.clone();
        if eta_c != 0.0 {
            let ax = op.normal(&x)?;
            Zip::from(&mut next).and(&ax).and(&x0).for_each(|n, &a, &b| *n -= (a - b) * eta_c);
        }
        next -= &reg;
        check_finite(&next, c)?;
        inputs.push(std::mem::replace(&mut x, next));
        nets.push(tape);
    }
    Ok((x, ForwardTape { inputs, x0, nets }))
}

/// Reverse pass: accumulates `d loss / d params` into `grads` and returns
/// `d loss / d x⁰` given `xbar = d loss / d output`.
pub fn unrolled_backward(model: &UnrolledModel, op: &SubsetOperator, tape: &ForwardTape, xbar: &Image, grads: &mut [f64]) -> Result<Image> {
    if grads.len() != model.params.len() {
        return Err(Error::Shape("gradient buffer does not match parameters".into()));
    }
    let eta = model.eta()?.to_vec();
    let eta_range = model.params.entry(ETA)?.range();
    let mut xbar = xbar.clone();
    let mut x0bar = Image::zeros(tape.x0.dim());
    for c in (0..model.cascades).rev() {
        let x = &tape.inputs[c];
        let ax = op.normal(x)?;
        let d_eta: f64 = Zip::from(&xbar)
            .and(&ax)
            .and(&tape.x0)
            .fold(0.0, |acc, g, &a, &b| acc - (g.conj() * (a - b)).re);
        grads[eta_range.start + c] += d_eta;

        let mut cot = Tensor::from_complex(&xbar);
        cot.scale(-1.0);
        let g_in = model.net(c).backward(&model.params, &tape.nets[c], &cot, grads)?.to_complex()?;

        let mut prev = xbar.clone();
        if eta[c] != 0.0 {
            let a_bar = op.normal(&xbar)?;
            Zip::from(&mut prev).and(&a_bar).for_each(|p, &a| *p -= a * eta[c]);
            x0bar.zip_mut_with(&xbar, |o, &g| *o += g * eta[c]);
        }
        prev += &g_in;
        xbar = prev;
    }
    x0bar += &xbar;
    Ok(x0bar)
}
