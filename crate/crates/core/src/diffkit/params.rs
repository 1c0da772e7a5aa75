use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::pks::{ArrayData, ArrayEntry, Container};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named real tensors packed into one flat vector, so optimizers and
/// gradient buffers can treat the whole model as `&[f64]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub data: Vec<f64>,
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Invariant(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!("{name}: {} values for shape {shape:?}", values.len())));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        });
        self.data.extend(values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::Shape(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let r = self.entry(name)?.range();
        Ok(&self.data[r])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.entry(name)?.range();
        Ok(&mut self.data[r])
    }

    /// A buffer with the same layout, all zeros.
    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| self.data[e.range()].iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("parameter {}", e.name)));
        }
        Ok(())
    }

    /// Container with one `f64le` array per parameter.
    pub fn to_container(&self, meta: serde_json::Value) -> Result<Container> {
        let mut c = Container {
            shape: vec![self.len()],
            meta,
            ..Container::default()
        };
        for e in &self.entries {
            c.insert(
                &e.name,
                ArrayEntry::new(e.shape.clone(), ArrayData::F64(self.data[e.range()].to_vec()))?,
            );
        }
        Ok(c)
    }

    /// Rebuilds the parameter set in the order of `layout` (usually the
    /// freshly initialized model) and checks every shape.
    pub fn from_container(c: &Container, layout: &ParamSet) -> Result<Self> {
        let mut out = ParamSet::new();
        for e in &layout.entries {
            let arr = c
                .get(&e.name)
                .ok_or_else(|| Error::Manifest(format!("checkpoint lacks parameter {}", e.name)))?;
            if arr.shape != e.shape {
                return Err(Error::Shape(format!(
                    "{}: checkpoint shape {:?}, model {:?}",
                    e.name, arr.shape, e.shape
                )));
            }
            let values = arr
                .data
                .to_f64()
                .ok_or_else(|| Error::Manifest(format!("{} is not a real array", e.name)))?;
            out.add(&e.name, &e.shape, values)?;
        }
        if c.arrays.len() != layout.entries.len() {
            return Err(Error::Manifest(format!(
                "checkpoint has {} arrays, model {}",
                c.arrays.len(),
                layout.entries.len()
            )));
        }
        out.validate()?;
        Ok(out)
    }

    pub fn save(&self, meta: serde_json::Value, dir: &Path) -> Result<()> {
        self.to_container(meta)?.write(dir)
    }
}
