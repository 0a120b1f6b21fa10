use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math;

/// An `n x d` matrix of image descriptors, one row per id.
///
/// Rows are stored contiguously in row-major order. Construction checks the
/// invariants (unique ids, at least one row, uniform width, finite values),
/// so every `DescriptorSet` in circulation is valid.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
    layer_tag: Option<String>,
}

impl DescriptorSet {
    pub fn new(ids: Vec<String>, data: Vec<f64>, dim: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptySet);
        }
        if dim == 0 {
            return Err(Error::Validation("descriptor dimension must be >= 1".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                actual: data.len(),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                id: Some(ids[pos / dim].clone()),
            });
        }
        Ok(Self {
            ids,
            data,
            dim,
            layer_tag: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(ids: Vec<String>, rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        if ids.len() != rows.len() {
            return Err(Error::IdCountMismatch {
                expected: rows.len(),
                actual: ids.len(),
            });
        }
        Self::new(ids, data, dim)
    }

    pub fn with_layer_tag(mut self, tag: impl Into<String>) -> Self {
        self.layer_tag = Some(tag.into());
        self
    }

    pub fn layer_tag(&self) -> Option<&str> {
        self.layer_tag.as_deref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Map from id to row index.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            ids.push(self.ids[i].clone());
            data.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(ids, data, self.dim)?;
        out.layer_tag = self.layer_tag.clone();
        Ok(out)
    }

    /// True when every row has unit norm within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.rows().all(|r| (math::norm(r) - 1.0).abs() <= tol)
    }

    pub(crate) fn normalize_rows(&mut self) -> Result<()> {
        let dim = self.dim;
        for (i, row) in self.data.chunks_exact_mut(dim).enumerate() {
            math::normalize_in_place(row).map_err(|e| match e {
                Error::ZeroVector { .. } => Error::ZeroVector {
                    id: Some(self.ids[i].clone()),
                },
                Error::NonFinite { .. } => Error::NonFinite {
                    id: Some(self.ids[i].clone()),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Builds a set from already-validated parts produced by a transform of `self`.
    pub(crate) fn with_data(&self, data: Vec<f64>, dim: usize) -> Result<Self> {
        let mut out = Self::new(self.ids.clone(), data, dim)?;
        out.layer_tag = self.layer_tag.clone();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_invalid_sets() {
        assert!(matches!(
            DescriptorSet::new(vec![], vec![], 3),
            Err(Error::EmptySet)
        ));
        assert!(matches!(
            DescriptorSet::new(ids(&["a", "a"]), vec![1.0, 2.0], 1),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
        assert!(matches!(
            DescriptorSet::new(ids(&["a", "b"]), vec![1.0, f64::NAN], 1),
            Err(Error::NonFinite { id: Some(id) }) if id == "b"
        ));
        assert!(matches!(
            DescriptorSet::from_rows(ids(&["a", "b"]), &[vec![1.0, 2.0], vec![1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(DescriptorSet::new(ids(&["a"]), vec![], 0).is_err());
    }

    #[test]
    fn select_and_lookup() {
        let set =
            DescriptorSet::from_rows(ids(&["x", "y", "z"]), &[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
                .unwrap()
                .with_layer_tag("L6");
        let sub = set.select(&[2, 0]).unwrap();
        assert_eq!(sub.ids(), &ids(&["z", "x"])[..]);
        assert_eq!(sub.row(0), &[1.0, 1.0]);
        assert_eq!(sub.layer_tag(), Some("L6"));
        assert_eq!(set.id_index()["y"], 1);
    }
}
