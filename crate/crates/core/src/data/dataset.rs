use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Shape metadata that travels with a dataset but not inside its CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
    /// Side length when rows are square single-channel images.
    pub image_side: Option<usize>,
    /// Valid feature range used for clamping perturbed data.
    pub range: Option<(f64, f64)>,
}

/// Labeled examples with stable identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    ids: Vec<u64>,
    meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, ids: Vec<u64>, meta: DatasetMeta) -> Result<Self> {
        let n = labels.len();
        if ids.len() != n {
            return Err(Error::Shape(format!("{} ids for {n} labels", ids.len())));
        }
        if features.shape().len() != 2 || features.rows() != n {
            return Err(Error::Shape(format!(
                "features {:?} for {n} examples",
                features.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= meta.num_classes) {
            return Err(Error::Domain(format!(
                "label {bad} outside [0, {})",
                meta.num_classes
            )));
        }
        let unique: BTreeSet<u64> = ids.iter().copied().collect();
        if unique.len() != n {
            return Err(Error::Domain("example ids are not unique".into()));
        }
        if let Some(side) = meta.image_side {
            if side * side != features.cols() {
                return Err(Error::Shape(format!(
                    "image side {side} does not match width {}",
                    features.cols()
                )));
            }
        }
        if !features.all_finite() {
            return Err(Error::Domain("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            ids,
            meta,
        })
    }

    pub fn empty_like(&self) -> Self {
        Self {
            features: Tensor::zeros(vec![0, self.dim()]),
            labels: vec![],
            ids: vec![],
            meta: self.meta,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.meta.num_classes
    }

    pub fn meta(&self) -> DatasetMeta {
        self.meta
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// True when every class has at least one example.
    pub fn is_complete(&self) -> bool {
        let present: BTreeSet<usize> = self.labels.iter().copied().collect();
        present.len() == self.meta.num_classes
    }

    pub fn index_by_id(&self) -> HashMap<u64, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            meta: self.meta,
        }
    }

    /// Rows whose label satisfies `keep`, in original order.
    pub fn filter_labels(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.select(&idx)
    }

    /// Rows with the given ids, in the order given.
    pub fn select_ids(&self, ids: &[u64]) -> Result<Self> {
        let index = self.index_by_id();
        let idx = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Split(format!("id {id} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select(&idx))
    }

    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Self::new(features, self.labels.clone(), self.ids.clone(), self.meta)
    }

    /// Same rows, labels replaced.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.features.clone(), labels, self.ids.clone(), self.meta)
    }

    /// Concatenation; ids must stay unique.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Domain("concat of zero datasets".into()))?;
        let d = first.dim();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for p in parts {
            if p.dim() != d {
                return Err(Error::Shape("concat of datasets with different widths".into()));
            }
            values.extend_from_slice(p.features.values());
            labels.extend_from_slice(&p.labels);
            ids.extend_from_slice(&p.ids);
        }
        let n = labels.len();
        Self::new(Tensor::matrix(n, d, values)?, labels, ids, first.meta)
    }

    /// Rows reordered by ascending id.
    pub fn sorted_by_id(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by_key(|&i| self.ids[i]);
        self.select(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.meta.num_classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(k: usize) -> DatasetMeta {
        DatasetMeta {
            num_classes: k,
            image_side: None,
            range: None,
        }
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_labels() {
        let f = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(Dataset::new(f.clone(), vec![0, 1], vec![3, 3], meta(2)).is_err());
        assert!(Dataset::new(f.clone(), vec![0, 2], vec![1, 2], meta(2)).is_err());
        let ds = Dataset::new(f, vec![0, 1], vec![1, 2], meta(2)).unwrap();
        assert!(ds.is_complete());
        assert!(!ds.filter_labels(|y| y == 0).is_complete());
    }

    #[test]
    fn select_ids_reports_dangling_ids() {
        let f = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        let ds = Dataset::new(f, vec![0, 1], vec![10, 20], meta(2)).unwrap();
        assert_eq!(ds.select_ids(&[20]).unwrap().row(0), &[1.0]);
        assert!(matches!(ds.select_ids(&[30]), Err(Error::Split(_))));
    }
}
