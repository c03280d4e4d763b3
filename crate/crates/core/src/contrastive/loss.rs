//! Contrastive losses with analytic gradients.
//!
//! Both losses use the two-view in-batch convention: for a batch of `b`
//! images with views `Z` and `Ẑ`, the `2b` embeddings form one pool and each
//! anchor's softmax denominator runs over the other `2b − 1` members,
//! positive included. Losses are means over anchors.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Result, XconError};
use crate::scalar::Scalar;

/// Unit-norm embeddings of one batch under two views.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Scalar> {
    pub anchors: Array2<T>,
    pub positives: Array2<T>,
    /// Label per row; only read where `labeled` is set.
    pub labels: Vec<Option<usize>>,
    pub labeled: Vec<bool>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(anchors: Array2<T>, positives: Array2<T>, labels: Vec<Option<usize>>, labeled: Vec<bool>) -> Result<Self> {
        let b = anchors.nrows();
        if positives.dim() != anchors.dim() || labels.len() != b || labeled.len() != b {
            return Err(XconError::Shape("batch views and labels must agree in size".into()));
        }
        if labeled.iter().zip(&labels).any(|(&l, c)| l && c.is_none()) {
            return Err(XconError::InvalidArgument("labeled batch row without label".into()));
        }
        Ok(Self {
            anchors,
            positives,
            labels,
            labeled,
        })
    }

    /// Batch without labels.
    pub fn unlabeled(anchors: Array2<T>, positives: Array2<T>) -> Result<Self> {
        let b = anchors.nrows();
        Self::new(anchors, positives, vec![None; b], vec![false; b])
    }

    pub fn len(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labeled_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled[i]).collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    /// Rows `rows` of this batch, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            anchors: self.anchors.select(Axis(0), rows),
            positives: self.positives.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            labeled: rows.iter().map(|&i| self.labeled[i]).collect(),
        }
    }

    /// Concatenation of two batches (`self` rows first).
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let cat = |a: &Array2<T>, b: &Array2<T>| {
            concatenate(Axis(0), &[a.view(), b.view()]).map_err(|e| XconError::Shape(e.to_string()))
        };
        Ok(Self {
            anchors: cat(&self.anchors, &other.anchors)?,
            positives: cat(&self.positives, &other.positives)?,
            labels: self.labels.iter().chain(&other.labels).copied().collect(),
            labeled: self.labeled.iter().chain(&other.labeled).copied().collect(),
        })
    }
}

/// Loss value with gradients for both views.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T: Scalar> {
    pub loss: T,
    pub d_anchors: Array2<T>,
    pub d_positives: Array2<T>,
}

impl<T: Scalar> LossGrad<T> {
    fn zeros(b: usize, p: usize) -> Self {
        Self {
            loss: T::zero(),
            d_anchors: Array2::zeros((b, p)),
            d_positives: Array2::zeros((b, p)),
        }
    }

    fn from_pool(loss: T, d_pool: Array2<T>) -> Self {
        let b = d_pool.nrows() / 2;
        Self {
            loss,
            d_anchors: d_pool.slice(s![..b, ..]).to_owned(),
            d_positives: d_pool.slice(s![b.., ..]).to_owned(),
        }
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, other: &LossGrad<T>, weight: T) {
        self.loss += weight * other.loss;
        self.d_anchors.scaled_add(weight, &other.d_anchors);
        self.d_positives.scaled_add(weight, &other.d_positives);
    }
}

fn pool<T: Scalar>(batch: &Batch<T>) -> Array2<T> {
    concatenate(Axis(0), &[batch.anchors.view(), batch.positives.view()]).expect("views share shape")
}

/// Row-wise softmax of `logits` excluding the diagonal; also returns the
/// log-sum-exp per row.
fn off_diagonal_softmax<T: Scalar>(logits: &Array2<T>) -> (Array2<T>, Vec<T>) {
    let m = logits.nrows();
    let mut probs = Array2::zeros((m, m));
    let mut lse = Vec::with_capacity(m);
    for a in 0..m {
        let row = logits.row(a);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(n, _)| n != a)
            .map(|(_, &x)| x)
            .fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for n in 0..m {
            if n != a {
                let e = (row[n] - max).exp();
                probs[[a, n]] = e;
                sum += e;
            }
        }
        probs.row_mut(a).mapv_inplace(|x| x / sum);
        lse.push(max + sum.ln());
    }
    (probs, lse)
}

/// Unsupervised (instance) contrastive loss: each embedding's positive is the
/// other view of the same image.
pub fn unsup_contrastive_loss<T: Scalar>(batch: &Batch<T>, tau: T) -> Result<LossGrad<T>> {
    let b = batch.len();
    if b < 2 {
        return Err(XconError::NoNegatives(b));
    }
    check_tau(tau)?;
    let e = pool(batch);
    let m = 2 * b;
    let logits = e.dot(&e.t()) / tau;
    let (mut g, lse) = off_diagonal_softmax(&logits);
    let inv_m = T::one() / T::of_usize(m);
    let mut loss = T::zero();
    for a in 0..m {
        let p = (a + b) % m;
        loss += lse[a] - logits[[a, p]];
        g[[a, p]] -= T::one();
    }
    g *= inv_m;
    let d_pool = (&g + &g.t()).dot(&e) / tau;
    Ok(LossGrad::from_pool(loss * inv_m, d_pool))
}

/// Supervised contrastive loss over an arbitrary embedding set.
///
/// Anchor `a` has positives `N(a) = {q ≠ a : label_q = label_a}`; anchors
/// with no positive are skipped and the loss is the mean over the rest.
/// Returns the loss and `dL/dE`.
pub fn supcon_on_set<T: Scalar>(e: ArrayView2<'_, T>, labels: &[usize], tau: T) -> Result<(T, Array2<T>)> {
    let m = e.nrows();
    if labels.len() != m {
        return Err(XconError::Shape("one label per embedding required".into()));
    }
    check_tau(tau)?;
    let positives: Vec<Vec<usize>> = (0..m)
        .map(|a| (0..m).filter(|&q| q != a && labels[q] == labels[a]).collect())
        .collect();
    let anchors = positives.iter().filter(|p| !p.is_empty()).count();
    if anchors == 0 {
        return Err(XconError::NoPositivePairs);
    }
    let logits = e.dot(&e.t()) / tau;
    let (mut g, lse) = off_diagonal_softmax(&logits);
    let inv_anchors = T::one() / T::of_usize(anchors);
    let mut loss = T::zero();
    for (a, pos) in positives.iter().enumerate() {
        if pos.is_empty() {
            g.row_mut(a).fill(T::zero());
            continue;
        }
        let w = T::one() / T::of_usize(pos.len());
        let mean_pos: T = pos.iter().map(|&q| logits[[a, q]]).sum::<T>() * w;
        loss += lse[a] - mean_pos;
        for &q in pos {
            g[[a, q]] -= w;
        }
    }
    g *= inv_anchors;
    let d_e = (&g + &g.t()).dot(&e) / tau;
    Ok((loss * inv_anchors, d_e))
}

/// Supervised contrastive loss over the labeled rows of `batch`, both views
/// pooled. Unlabeled rows receive zero gradient.
pub fn sup_contrastive_loss<T: Scalar>(batch: &Batch<T>, tau: T) -> Result<LossGrad<T>> {
    let rows = batch.labeled_rows();
    let mut out = LossGrad::zeros(batch.len(), batch.anchors.ncols());
    if rows.is_empty() {
        return Err(XconError::NoPositivePairs);
    }
    let sub = batch.select(&rows);
    let labels: Vec<usize> = sub
        .labels
        .iter()
        .chain(&sub.labels)
        .map(|l| l.expect("labeled rows carry labels"))
        .collect();
    let (loss, d_pool) = supcon_on_set(pool(&sub).view(), &labels, tau)?;
    let l = rows.len();
    for (r, &i) in rows.iter().enumerate() {
        out.d_anchors.row_mut(i).assign(&d_pool.row(r));
        out.d_positives.row_mut(i).assign(&d_pool.row(l + r));
    }
    out.loss = loss;
    Ok(out)
}

/// `(1 − λ)·L^u(B_U ∪ B_L) + λ·L^s(B_L)` over a batch whose labeled rows
/// form `B_L`. A batch without labeled rows contributes no supervised term.
pub fn mixed_contrastive_loss<T: Scalar>(batch: &Batch<T>, tau: T, lambda: T) -> Result<LossGrad<T>> {
    let mut out = LossGrad::zeros(batch.len(), batch.anchors.ncols());
    let unsup_w = T::one() - lambda;
    if unsup_w != T::zero() {
        out.add_scaled(&unsup_contrastive_loss(batch, tau)?, unsup_w);
    } else if batch.len() < 2 {
        return Err(XconError::NoNegatives(batch.len()));
    }
    if lambda != T::zero() && batch.labeled_count() > 0 {
        out.add_scaled(&sup_contrastive_loss(batch, tau)?, lambda);
    }
    Ok(out)
}

/// Coarse loss on an unlabeled batch `B_U` and a labeled batch `B_L`.
/// Gradients are returned for `B_U` rows followed by `B_L` rows.
pub fn coarse_loss<T: Scalar>(batch_u: &Batch<T>, batch_l: &Batch<T>, tau: T, lambda: T) -> Result<LossGrad<T>> {
    if batch_l.labeled_count() != batch_l.len() {
        return Err(XconError::InvalidArgument("labeled batch contains unlabeled rows".into()));
    }
    let mut unl = batch_u.clone();
    unl.labeled.fill(false);
    mixed_contrastive_loss(&unl.concat(batch_l)?, tau, lambda)
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(XconError::InvalidArgument(format!("temperature must be positive, got {tau}")))
    }
}
