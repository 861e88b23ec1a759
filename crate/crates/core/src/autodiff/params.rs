use std::sync::Arc;

use crate::{LspError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SliceId(pub usize);

/// A named `rows x cols` block of the flat parameter array, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SliceSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterLayout {
    slices: Vec<SliceSpec>,
    len: usize,
}

impl ParameterLayout {
    /// Lays out `(name, rows, cols)` blocks back to back.
    pub fn new(blocks: &[(&str, usize, usize)]) -> Self {
        let mut offset = 0;
        let slices = blocks
            .iter()
            .map(|&(name, rows, cols)| {
                let spec = SliceSpec {
                    name: name.to_string(),
                    offset,
                    rows,
                    cols,
                };
                offset += rows * cols;
                spec
            })
            .collect();
        ParameterLayout {
            slices,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slices(&self) -> &[SliceSpec] {
        &self.slices
    }

    pub fn spec(&self, id: SliceId) -> &SliceSpec {
        &self.slices[id.0]
    }

    pub fn id(&self, name: &str) -> Option<SliceId> {
        self.slices.iter().position(|s| s.name == name).map(SliceId)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Arc<Vec<f64>>,
    layout: Arc<ParameterLayout>,
}

impl ParameterVector {
    pub fn new(layout: Arc<ParameterLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(LspError::Usage(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ParameterVector {
            values: Arc::new(values),
            layout,
        })
    }

    pub fn zeros(layout: Arc<ParameterLayout>) -> Self {
        ParameterVector {
            values: Arc::new(vec![0.0; layout.len()]),
            layout,
        }
    }

    pub fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; copies the values first if a tape still shares them.
    pub fn values_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.values).as_mut_slice()
    }

    pub(crate) fn shared_values(&self) -> Arc<Vec<f64>> {
        self.values.clone()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, id: SliceId) -> &[f64] {
        &self.values[self.layout.spec(id).range()]
    }

    pub fn slice_mut(&mut self, id: SliceId) -> &mut [f64] {
        let range = self.layout.spec(id).range();
        &mut self.values_mut()[range]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// FNV-1a over the value bits; equal iff bit-identical (up to hash
    /// collisions).
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.values.iter().flat_map(|v| v.to_bits().to_le_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Gradient with the same layout as the parameters it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    values: Vec<f64>,
    layout: Arc<ParameterLayout>,
}

impl Gradient {
    pub fn zeros(layout: Arc<ParameterLayout>) -> Self {
        Gradient {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice(&self, id: SliceId) -> &[f64] {
        &self.values[self.layout.spec(id).range()]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self += scale * other`, coordinate by coordinate.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) -> Result<()> {
        if self.layout != other.layout {
            return Err(LspError::Usage("gradient layouts differ".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
