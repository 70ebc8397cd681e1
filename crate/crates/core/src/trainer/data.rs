use crate::error::{Error, Result};

/// Training data: `n` sequences of length `k` over `d + 1` categories.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Category indices, row-major `n x k`.
    Categorical { length: usize, classes: usize, indices: Vec<u32> },
    /// Points on the simplex, row-major `n x k x (d + 1)`.
    Continuous { length: usize, classes: usize, coords: Vec<f64> },
}

impl Dataset {
    pub fn categorical(length: usize, classes: usize, indices: Vec<u32>) -> Result<Self> {
        if length == 0 || classes < 2 {
            return Err(Error::arg("a dataset needs length >= 1 and at least 2 classes"));
        }
        if !indices.len().is_multiple_of(length) {
            return Err(Error::arg(format!("{} indices do not split into rows of {length}", indices.len())));
        }
        if let Some(bad) = indices.iter().find(|&&i| i as usize >= classes) {
            return Err(Error::arg(format!("category {bad} out of range for {classes} classes")));
        }
        Ok(Dataset::Categorical { length, classes, indices })
    }

    pub fn continuous(length: usize, classes: usize, coords: Vec<f64>) -> Result<Self> {
        if length == 0 || classes < 2 {
            return Err(Error::arg("a dataset needs length >= 1 and at least 2 classes"));
        }
        if !coords.len().is_multiple_of(length * classes) {
            return Err(Error::arg("coordinates do not split into whole rows"));
        }
        for (i, p) in coords.chunks(classes).enumerate() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&c| !(c >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::arg(format!("point {i} is not on the simplex")));
            }
        }
        Ok(Dataset::Continuous { length, classes, coords })
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Categorical { length, indices, .. } => indices.len() / length,
            Dataset::Continuous { length, classes, coords } => coords.len() / (length * classes),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence length `k`.
    pub fn length(&self) -> usize {
        match self {
            Dataset::Categorical { length, .. } | Dataset::Continuous { length, .. } => *length,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Dataset::Categorical { classes, .. } | Dataset::Continuous { classes, .. } => *classes,
        }
    }

    /// Per-position dimension `d = classes - 1`.
    pub fn dim(&self) -> usize {
        self.classes() - 1
    }

    /// Category indices of row `i`, for categorical data.
    pub fn row(&self, i: usize) -> Option<&[u32]> {
        match self {
            Dataset::Categorical { length, indices, .. } => Some(&indices[i * length..(i + 1) * length]),
            Dataset::Continuous { .. } => None,
        }
    }

    /// Writes the sphere image of row `i` into `out`.
    ///
    /// Categorical rows are smoothed one-hot vectors; continuous rows are
    /// mapped as given.
    pub(crate) fn fill_sphere_row(&self, i: usize, smoothing: f64, out: &mut [f64]) {
        match self {
            Dataset::Categorical { length, classes, indices } => {
                let off = (smoothing / *classes as f64).sqrt();
                let on = (1.0 - smoothing + smoothing / *classes as f64).sqrt();
                for (pos, chunk) in out.chunks_mut(*classes).enumerate() {
                    chunk.iter_mut().for_each(|c| *c = off);
                    chunk[indices[i * length + pos] as usize] = on;
                }
            }
            Dataset::Continuous { length, classes, coords } => {
                let w = length * classes;
                for (o, c) in out.iter_mut().zip(&coords[i * w..(i + 1) * w]) {
                    *o = c.sqrt();
                }
            }
        }
    }
}
