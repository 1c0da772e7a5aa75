//! Shared in-memory types and their `.pks` persistence.

pub mod pks;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{BladeTrajectory, PropellerSpec};
use crate::C64;

pub use pks::{ArrayData, ArrayEntry, Container, MANIFEST};

/// Single complex image `[height][width]`.
pub type Image = Array2<C64>;
/// Multi-coil complex images `[coil][height][width]`.
pub type CoilImages = Array3<C64>;

pub fn is_finite(values: impl IntoIterator<Item = C64>) -> bool {
    values.into_iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Descriptive acquisition parameters. Carried through files; no algorithm
/// reads them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub te_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tr_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_mm: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl AcquisitionMeta {
    /// The lung protocol's nominal sequence parameters.
    pub fn lung_t2_propeller() -> Self {
        AcquisitionMeta {
            te_ms: Some(65.0),
            tr_ms: Some(2000.0),
            flip_deg: Some(170.0),
            fov_mm: Some(380.0),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisePrescan {
    samples: Array2<C64>,
}

impl NoisePrescan {
    /// `samples` is `[coil][sample]`; needs at least ten samples per coil.
    pub fn new(samples: Array2<C64>) -> Result<Self> {
        let (coils, n) = samples.dim();
        if coils == 0 || n < 10 * coils {
            return Err(Error::Invariant(format!(
                "noise prescan needs ≥ {} samples for {coils} coils, got {n}",
                10 * coils.max(1)
            )));
        }
        if !is_finite(samples.iter().copied()) {
            return Err(Error::NonFinite("noise prescan".into()));
        }
        Ok(NoisePrescan { samples })
    }

    pub fn coils(&self) -> usize {
        self.samples.nrows()
    }

    pub fn nsamples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> ArrayView2<'_, C64> {
        self.samples.view()
    }
}

/// Blade-organized multi-coil k-space. `samples` is
/// `[blade][coil][line][readout]`, `mask` is `[blade][line][readout]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceDataset {
    pub traj: PropellerSpec,
    samples: Array4<C64>,
    mask: Array3<bool>,
    pub prescan: Option<NoisePrescan>,
    pub meta: AcquisitionMeta,
}

impl KSpaceDataset {
    pub fn new(
        traj: PropellerSpec,
        samples: Array4<C64>,
        mask: Array3<bool>,
        prescan: Option<NoisePrescan>,
        meta: AcquisitionMeta,
    ) -> Result<Self> {
        let ds = KSpaceDataset {
            traj,
            samples,
            mask,
            prescan,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset and zeroes every sample outside `mask`.
    pub fn masked(
        traj: PropellerSpec,
        mut samples: Array4<C64>,
        mask: Array3<bool>,
        prescan: Option<NoisePrescan>,
        meta: AcquisitionMeta,
    ) -> Result<Self> {
        let (b, _, l, r) = samples.dim();
        if mask.dim() == (b, l, r) {
            for ((bi, _, li, ri), s) in samples.indexed_iter_mut() {
                if !mask[[bi, li, ri]] {
                    *s = C64::default();
                }
            }
        }
        KSpaceDataset::new(traj, samples, mask, prescan, meta)
    }

    pub fn validate(&self) -> Result<()> {
        let (b, c, l, r) = self.samples.dim();
        if b < 1 || c < 1 {
            return Err(Error::Invariant("dataset needs at least one blade and one coil".into()));
        }
        if r < 2 * l {
            return Err(Error::Invariant(format!("readout {r} shorter than twice the {l} lines")));
        }
        if self.mask.dim() != (b, l, r) {
            return Err(Error::Shape(format!("mask {:?} vs samples {:?}", self.mask.dim(), (b, c, l, r))));
        }
        if self.traj.kept_blades() != b || self.traj.lines_per_blade != l || self.traj.readout != r {
            return Err(Error::Shape(format!(
                "trajectory ({} blades, {} lines, {} readout) does not match samples {:?}",
                self.traj.kept_blades(),
                self.traj.lines_per_blade,
                self.traj.readout,
                (b, c, l, r)
            )));
        }
        if let Some(p) = &self.prescan {
            if p.coils() != c {
                return Err(Error::Shape(format!("prescan has {} coils, dataset {c}", p.coils())));
            }
        }
        for (bi, blade) in self.samples.outer_iter().enumerate() {
            let m = self.mask.index_axis(Axis(0), bi);
            for coil in blade.outer_iter() {
                for (s, &keep) in coil.iter().zip(m.iter()) {
                    if !(s.re.is_finite() && s.im.is_finite()) {
                        return Err(Error::NonFinite("k-space samples".into()));
                    }
                    if !keep && *s != C64::default() {
                        return Err(Error::Invariant("nonzero sample at a masked-out position".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn blades(&self) -> usize {
        self.samples.dim().0
    }

    pub fn coils(&self) -> usize {
        self.samples.dim().1
    }

    pub fn lines(&self) -> usize {
        self.samples.dim().2
    }

    pub fn readout(&self) -> usize {
        self.samples.dim().3
    }

    pub fn samples(&self) -> &Array4<C64> {
        &self.samples
    }

    pub fn mask(&self) -> &Array3<bool> {
        &self.mask
    }

    pub fn into_parts(self) -> (PropellerSpec, Array4<C64>, Array3<bool>, Option<NoisePrescan>, AcquisitionMeta) {
        (self.traj, self.samples, self.mask, self.prescan, self.meta)
    }

    /// Same metadata, new samples (masked by the current mask).
    pub fn with_samples(&self, samples: Array4<C64>) -> Result<Self> {
        KSpaceDataset::masked(
            self.traj.clone(),
            samples,
            self.mask.clone(),
            self.prescan.clone(),
            self.meta.clone(),
        )
    }

    pub fn with_mask(&self, samples: Array4<C64>, mask: Array3<bool>) -> Result<Self> {
        KSpaceDataset::masked(self.traj.clone(), samples, mask, self.prescan.clone(), self.meta.clone())
    }

    pub fn trajectory(&self) -> Result<BladeTrajectory> {
        BladeTrajectory::from_spec(&self.traj)
    }

    /// One coil's samples flattened in trajectory order.
    pub fn coil_samples(&self, coil: usize) -> Vec<C64> {
        self.samples.index_axis(Axis(1), coil).iter().copied().collect()
    }

    /// All coils, each flattened in trajectory order.
    pub fn coil_vectors(&self) -> Vec<Vec<C64>> {
        (0..self.coils()).map(|c| self.coil_samples(c)).collect()
    }

    /// Inverse of [`coil_vectors`](Self::coil_vectors).
    pub fn samples_from_coil_vectors(&self, vectors: &[Vec<C64>]) -> Array4<C64> {
        let (b, c, l, r) = self.samples.dim();
        Array4::from_shape_fn((b, c, l, r), |(bi, ci, li, ri)| vectors[ci][(bi * l + li) * r + ri])
    }

    pub fn mask_flat(&self) -> Vec<bool> {
        self.mask.iter().copied().collect()
    }

    /// Keep blades `0, factor, 2·factor, …`.
    pub fn subsample_blades(&self, factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::Config("blade subsampling factor must be ≥ 1".into()));
        }
        let keep: Vec<usize> = (0..self.blades()).step_by(factor).collect();
        let mut traj = self.traj.clone();
        traj.blade_step *= factor;
        KSpaceDataset::new(
            traj,
            self.samples.select(Axis(0), &keep),
            self.mask.select(Axis(0), &keep),
            self.prescan.clone(),
            self.meta.clone(),
        )
    }

    /// Rounds every sample to single precision, as a scanner would deliver.
    pub fn quantize_f32(&self) -> Self {
        let mut out = self.clone();
        out.samples.mapv_inplace(|v| C64::new(v.re as f32 as f64, v.im as f32 as f64));
        out
    }
}

/// Named complex arrays stored next to a dataset (ground truth, maps, …).
pub type Extras = BTreeMap<String, (Vec<usize>, Vec<C64>)>;

pub fn dataset_to_container(ds: &KSpaceDataset, extras: &Extras) -> Result<Container> {
    ds.validate()?;
    let (b, c, l, r) = ds.samples.dim();
    let mut cont = Container {
        shape: vec![b, c, l, r],
        meta: serde_json::to_value(&ds.meta).map_err(|e| Error::Manifest(e.to_string()))?,
        traj: Some(serde_json::to_value(&ds.traj).map_err(|e| Error::Manifest(e.to_string()))?),
        ..Default::default()
    };
    let flat: Vec<C64> = ds.samples.iter().copied().collect();
    cont.insert("samples", ArrayEntry::new(vec![b, c, l, r], ArrayData::complex(&flat))?);
    cont.insert(
        "mask",
        ArrayEntry::new(vec![b, l, r], ArrayData::U8(ds.mask.iter().map(|&m| m as u8).collect()))?,
    );
    if let Some(p) = &ds.prescan {
        let v: Vec<C64> = p.samples.iter().copied().collect();
        cont.insert("prescan", ArrayEntry::new(vec![p.coils(), p.nsamples()], ArrayData::complex(&v))?);
    }
    for (name, (shape, values)) in extras {
        if matches!(name.as_str(), "samples" | "mask" | "prescan") {
            return Err(Error::Config(format!("extra array name `{name}` is reserved")));
        }
        cont.insert(name, ArrayEntry::new(shape.clone(), ArrayData::complex(values))?);
    }
    Ok(cont)
}

pub fn dataset_from_container(cont: &Container) -> Result<(KSpaceDataset, Extras)> {
    let shape4 = |v: &[usize]| -> Result<(usize, usize, usize, usize)> {
        match v {
            [a, b, c, d] => Ok((*a, *b, *c, *d)),
            _ => Err(Error::Manifest(format!("expected 4-d shape, got {v:?}"))),
        }
    };
    let (b, c, l, r) = shape4(&cont.shape)?;
    let traj: PropellerSpec = serde_json::from_value(cont.traj.clone().ok_or_else(|| Error::Manifest("missing `traj`".into()))?)
        .map_err(|e| Error::Manifest(format!("traj: {e}")))?;
    let meta: AcquisitionMeta = if cont.meta.is_null() {
        AcquisitionMeta::default()
    } else {
        serde_json::from_value(cont.meta.clone()).map_err(|e| Error::Manifest(format!("meta: {e}")))?
    };
    let samples_entry = cont
        .get("samples")
        .ok_or_else(|| Error::Manifest("missing `samples` array".into()))?;
    if shape4(&samples_entry.shape)? != (b, c, l, r) {
        return Err(Error::Manifest(format!(
            "samples shape {:?} disagrees with manifest shape {:?}",
            samples_entry.shape, cont.shape
        )));
    }
    let flat = samples_entry
        .data
        .to_complex()
        .ok_or_else(|| Error::Manifest("samples must be complex".into()))?;
    let samples = Array4::from_shape_vec((b, c, l, r), flat).map_err(|e| Error::Shape(e.to_string()))?;
    let mask_entry = cont.get("mask").ok_or_else(|| Error::Manifest("missing `mask` array".into()))?;
    let mask_bytes = match &mask_entry.data {
        ArrayData::U8(v) if mask_entry.shape == [b, l, r] => v,
        _ => return Err(Error::Manifest("mask must be u8 with shape [blades, lines, readout]".into())),
    };
    let mask = Array3::from_shape_vec((b, l, r), mask_bytes.iter().map(|&m| m != 0).collect()).map_err(|e| Error::Shape(e.to_string()))?;
    let prescan = match cont.get("prescan") {
        Some(e) => {
            let v = e
                .data
                .to_complex()
                .ok_or_else(|| Error::Manifest("prescan must be complex".into()))?;
            let (pc, pn) = match e.shape[..] {
                [pc, pn] => (pc, pn),
                _ => return Err(Error::Manifest("prescan must be 2-d".into())),
            };
            Some(NoisePrescan::new(
                Array2::from_shape_vec((pc, pn), v).map_err(|e| Error::Shape(e.to_string()))?,
            )?)
        }
        None => None,
    };
    let mut extras = Extras::new();
    for (name, e) in &cont.arrays {
        if matches!(name.as_str(), "samples" | "mask" | "prescan") {
            continue;
        }
        if let Some(v) = e.data.to_complex() {
            extras.insert(name.clone(), (e.shape.clone(), v));
        }
    }
    Ok((KSpaceDataset::new(traj, samples, mask, prescan, meta)?, extras))
}

pub fn write_dataset(ds: &KSpaceDataset, path: &Path) -> Result<()> {
    write_dataset_with(ds, &Extras::new(), path)
}

pub fn write_dataset_with(ds: &KSpaceDataset, extras: &Extras, path: &Path) -> Result<()> {
    dataset_to_container(ds, extras)?.write(path)
}

pub fn read_dataset(path: &Path) -> Result<KSpaceDataset> {
    Ok(read_dataset_with(path)?.0)
}

pub fn read_dataset_with(path: &Path) -> Result<(KSpaceDataset, Extras)> {
    dataset_from_container(&Container::read(path)?)
}

/// Single complex image in its own container (array `image`).
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let (h, w) = img.dim();
    let mut cont = Container {
        shape: vec![h, w],
        meta: serde_json::json!({"kind": "image"}),
        ..Default::default()
    };
    let flat: Vec<C64> = img.iter().copied().collect();
    cont.insert("image", ArrayEntry::new(vec![h, w], ArrayData::complex(&flat))?);
    cont.write(path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let cont = Container::read(path)?;
    let entry = cont
        .get("image")
        .ok_or_else(|| Error::Manifest(format!("{} holds no `image` array", path.display())))?;
    let values = entry
        .data
        .to_complex()
        .ok_or_else(|| Error::Manifest("`image` is not complex".into()))?;
    extra_to_image(&(entry.shape.clone(), values))
}

/// Image ↔ extra-array helpers.
pub fn image_to_extra(img: &Image) -> (Vec<usize>, Vec<C64>) {
    (vec![img.nrows(), img.ncols()], img.iter().copied().collect())
}

pub fn coil_images_to_extra(imgs: &CoilImages) -> (Vec<usize>, Vec<C64>) {
    let (a, b, c) = imgs.dim();
    (vec![a, b, c], imgs.iter().copied().collect())
}

pub fn extra_to_image(extra: &(Vec<usize>, Vec<C64>)) -> Result<Image> {
    match extra.0[..] {
        [h, w] => Array2::from_shape_vec((h, w), extra.1.clone()).map_err(|e| Error::Shape(e.to_string())),
        _ => Err(Error::Shape(format!("expected 2-d array, got {:?}", extra.0))),
    }
}

pub fn extra_to_coil_images(extra: &(Vec<usize>, Vec<C64>)) -> Result<CoilImages> {
    match extra.0[..] {
        [c, h, w] => Array3::from_shape_vec((c, h, w), extra.1.clone()).map_err(|e| Error::Shape(e.to_string())),
        _ => Err(Error::Shape(format!("expected 3-d array, got {:?}", extra.0))),
    }
}
