//! Hungarian-matched clustering accuracy over the `All` / `Old` / `New`
//! subsets of the unlabeled data.
//!
//! A single cluster→class mapping is computed on `All` and reused for the
//! two sub-subsets, so `matched_all = matched_old + matched_new` holds exactly.

mod hungarian;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;

pub use hungarian::{hungarian, Assignment, Cost};

use crate::embedding_store::SubsetMasks;
use crate::error::{Result, XconError};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub n_all: usize,
    pub n_old: usize,
    pub n_new: usize,
    pub matched_all: usize,
    pub matched_old: usize,
    pub matched_new: usize,
    /// Predicted cluster → ground-truth class.
    pub permutation: BTreeMap<usize, usize>,
    /// Row labels of `contingency` (predicted clusters, ascending).
    pub clusters: Vec<usize>,
    /// Column labels of `contingency` (true classes, ascending).
    pub classes: Vec<usize>,
    pub contingency: Array2<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores `pred` against `truth` on the rows selected by `masks`.
///
/// `pred` and `truth` are indexed by dataset row; only rows in `masks.all`
/// are read, and each of them must carry a ground-truth label.
pub fn clustering_accuracy(pred: &[usize], truth: &[Option<usize>], masks: &SubsetMasks) -> Result<EvalReport> {
    let n = masks.all.len();
    if pred.len() != n || truth.len() != n || masks.old.len() != n || masks.new.len() != n {
        return Err(XconError::Shape("prediction, truth and masks must share a length".into()));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| masks.all[i]).collect();
    if rows.is_empty() {
        return Err(XconError::EmptyEvalSet);
    }
    let mut pairs = Vec::with_capacity(rows.len());
    for &i in &rows {
        let t = truth[i].ok_or(XconError::MissingTruth { row: i })?;
        pairs.push((pred[i], t));
    }

    let (clusters, classes, contingency, permutation) = match_labels(&pairs)?;

    let correct = |i: usize| {
        let t = truth[i].expect("checked above");
        permutation.get(&pred[i]) == Some(&t)
    };
    let (mut matched_all, mut matched_old, mut matched_new) = (0, 0, 0);
    let (mut n_old, mut n_new) = (0, 0);
    for &i in &rows {
        let ok = correct(i);
        matched_all += ok as usize;
        if masks.old[i] {
            n_old += 1;
            matched_old += ok as usize;
        } else if masks.new[i] {
            n_new += 1;
            matched_new += ok as usize;
        }
    }
    if n_old + n_new != rows.len() {
        return Err(XconError::InvalidArgument("old and new masks must partition all".into()));
    }
    Ok(EvalReport {
        acc_all: ratio(matched_all, rows.len()),
        acc_old: ratio(matched_old, n_old),
        acc_new: ratio(matched_new, n_new),
        n_all: rows.len(),
        n_old,
        n_new,
        matched_all,
        matched_old,
        matched_new,
        permutation,
        clusters,
        classes,
        contingency,
    })
}

type Matching = (Vec<usize>, Vec<usize>, Array2<usize>, BTreeMap<usize, usize>);

/// Contingency table and best injective cluster→class mapping for
/// `(predicted, true)` pairs.
pub fn match_labels(pairs: &[(usize, usize)]) -> Result<Matching> {
    let mut clusters: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let mut classes: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    classes.sort_unstable();
    classes.dedup();
    let row_of: BTreeMap<usize, usize> = clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let col_of: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let mut contingency = Array2::<usize>::zeros((clusters.len(), classes.len()));
    for &(p, t) in pairs {
        contingency[[row_of[&p], col_of[&t]]] += 1;
    }
    let max = contingency.iter().copied().max().unwrap_or(0) as i64;
    let cost: Vec<i64> = contingency.iter().map(|&c| max - c as i64).collect();
    let assignment = hungarian(&cost, clusters.len(), classes.len())?;
    let permutation = assignment
        .pairs()
        .map(|(r, c)| (clusters[r], classes[c]))
        .collect();
    Ok((clusters, classes, contingency, permutation))
}

/// Best-permutation accuracy of `pred` against `truth` over all rows.
pub fn cluster_acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(XconError::Shape("prediction and truth lengths differ".into()));
    }
    if pred.is_empty() {
        return Err(XconError::EmptyEvalSet);
    }
    let pairs: Vec<(usize, usize)> = pred.iter().copied().zip(truth.iter().copied()).collect();
    let (_, _, _, perm) = match_labels(&pairs)?;
    let hits = pairs.iter().filter(|(p, t)| perm.get(p) == Some(t)).count();
    Ok(hits as f64 / pairs.len() as f64)
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "dataset,seed,acc_all,acc_old,acc_new";

    pub fn csv_row(&self, dataset: &str, seed: u64) -> String {
        format!(
            "{dataset},{seed},{:.6},{:.6},{:.6}",
            self.acc_all, self.acc_old, self.acc_new
        )
    }
}

impl fmt::Display for EvalReport {
    /// Flat `key=value` block.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "acc_all={}", self.acc_all)?;
        writeln!(f, "acc_old={}", self.acc_old)?;
        writeln!(f, "acc_new={}", self.acc_new)?;
        writeln!(f, "n_all={}", self.n_all)?;
        writeln!(f, "n_old={}", self.n_old)?;
        writeln!(f, "n_new={}", self.n_new)?;
        writeln!(f, "matched_all={}", self.matched_all)?;
        writeln!(f, "matched_old={}", self.matched_old)?;
        writeln!(f, "matched_new={}", self.matched_new)?;
        let perm: Vec<String> = self.permutation.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        writeln!(f, "permutation={}", perm.join(","))
    }
}
