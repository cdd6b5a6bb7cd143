//! Flat parameter storage with a named layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
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

/// All trainable values of a model in one vector.
///
/// Entries pinned to zero by a connectivity mask are tracked in `free` so
/// optimizers and probes can leave them alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    layout: Vec<ParamBlock>,
    free: Vec<bool>,
}

impl ParameterVector {
    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.free[i]
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.free[i]).collect()
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.layout.iter().find(|b| b.name == name)
    }

    /// Replaces all values, keeping masked entries at zero.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::shape(format!(
                "{} parameter values for a layout of {}",
                values.len(),
                self.len()
            )));
        }
        if let Some(i) = (0..values.len()).find(|&i| !self.free[i] && values[i] != 0.0) {
            return Err(Error::Format(format!("masked parameter {i} is non-zero")));
        }
        self.values = values;
        Ok(())
    }

    /// Overwrites every free entry with a draw from `U(-scale, scale)`.
    pub fn randomize<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for (v, &free) in self.values.iter_mut().zip(&self.free) {
            if free {
                *v = scale * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
    }

    /// Zeros gradient entries of masked parameters.
    pub fn mask_gradient(&self, grad: &mut [f64]) {
        for (g, &free) in grad.iter_mut().zip(&self.free) {
            if !free {
                *g = 0.0;
            }
        }
    }
}

/// Incremental builder for a [`ParameterVector`].
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    layout: Vec<ParamBlock>,
    free: Vec<bool>,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves a block and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], mask: Option<&[bool]>) -> usize {
        let offset = self.free.len();
        let len: usize = shape.iter().product();
        match mask {
            Some(m) => {
                assert_eq!(m.len(), len, "mask length must match block size");
                self.free.extend_from_slice(m);
            }
            None => self.free.extend(std::iter::repeat_n(true, len)),
        }
        self.layout.push(ParamBlock {
            name: name.into(),
            offset,
            shape: shape.to_vec(),
        });
        offset
    }

    pub fn finish(self) -> ParameterVector {
        ParameterVector {
            values: vec![0.0; self.free.len()],
            layout: self.layout,
            free: self.free,
        }
    }
}
