//! Splits a dataset into expert sub-datasets by k-means on the raw
//! (normalized) features. The partition is computed once, before training.

use std::collections::BTreeMap;
use std::fmt;

use crate::clustering::{kmeans, KMeansParams};
use crate::embedding_store::{DatasetView, FeatureMatrix};
use crate::error::{Result, XconError};
use crate::scalar::Scalar;

pub const DEFAULT_PARTITIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionResult {
    pub k: usize,
    pub membership: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl PartitionResult {
    /// Validates a membership vector read back from disk.
    pub fn from_membership(k: usize, membership: Vec<usize>) -> Result<Self> {
        let mut sizes = vec![0; k];
        for &m in &membership {
            if m >= k {
                return Err(XconError::InvalidArgument(format!(
                    "sub-dataset index {m} outside [0, {k})"
                )));
            }
            sizes[m] += 1;
        }
        Ok(Self { k, membership, sizes })
    }

    /// A single sub-dataset holding every row.
    pub fn trivial(n: usize) -> Self {
        Self {
            k: 1,
            membership: vec![0; n],
            sizes: vec![n],
        }
    }

    /// Row indices of each sub-dataset, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &m) in self.membership.iter().enumerate() {
            out[m].push(i);
        }
        out
    }

    pub fn check_trainable(&self) -> Result<()> {
        for (subset, &size) in self.sizes.iter().enumerate() {
            if size < 2 {
                return Err(XconError::DegeneratePartition {
                    k: self.k,
                    subset,
                    size,
                });
            }
        }
        Ok(())
    }
}

/// Plain k-means on the primary view of a normalized matrix.
pub fn partition_dataset<T: Scalar>(m: &FeatureMatrix<T>, k: usize, seed: u64) -> Result<PartitionResult> {
    if !m.is_normalized() {
        return Err(XconError::InvalidArgument(
            "partitioning expects L2-normalized features".into(),
        ));
    }
    if k == 0 || 2 * k > m.n() {
        return Err(XconError::InvalidArgument(format!(
            "K={k} outside [1, n/2] for n={}",
            m.n()
        )));
    }
    let model = kmeans(m.primary(), &KMeansParams::new(k, seed))?;
    let result = PartitionResult {
        k,
        sizes: model.sizes(),
        membership: model.assignment,
    };
    result.check_trainable()?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSummary {
    pub index: usize,
    pub size: usize,
    pub labeled_fraction: f64,
    /// Class → count over rows whose label is known.
    pub class_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub rows: Vec<SubsetSummary>,
}

pub fn partition_report(p: &PartitionResult, view: &DatasetView) -> PartitionReport {
    let mut rows: Vec<SubsetSummary> = (0..p.k)
        .map(|index| SubsetSummary {
            index,
            size: p.sizes[index],
            labeled_fraction: 0.0,
            class_histogram: BTreeMap::new(),
        })
        .collect();
    let mut labeled = vec![0usize; p.k];
    for (i, &m) in p.membership.iter().enumerate() {
        if view.is_labeled(i) {
            labeled[m] += 1;
        }
        if let Some(c) = view.labels()[i] {
            *rows[m].class_histogram.entry(c).or_insert(0) += 1;
        }
    }
    for (row, l) in rows.iter_mut().zip(labeled) {
        if row.size > 0 {
            row.labeled_fraction = l as f64 / row.size as f64;
        }
    }
    PartitionReport { rows }
}

impl fmt::Display for PartitionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "subdataset\tsize\tlabeled_fraction\tclass_histogram")?;
        for r in &self.rows {
            let hist: Vec<String> = r.class_histogram.iter().map(|(c, n)| format!("{c}:{n}")).collect();
            writeln!(f, "{}\t{}\t{:.4}\t{}", r.index, r.size, r.labeled_fraction, hist.join(","))?;
        }
        Ok(())
    }
}
