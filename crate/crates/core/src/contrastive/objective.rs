//! Coarse, fine and total objectives evaluated from feature-space batches,
//! with gradients accumulated into a parameter-shaped model.

use ndarray::{concatenate, s, Array2, Axis};

use super::loss::{mixed_contrastive_loss, Batch, LossGrad};
use super::model::{HeadCache, TrainableModel};
use crate::error::{Result, XconError};
use crate::scalar::Scalar;

/// A batch of dataset rows with two feature-space views each.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch<T: Scalar> {
    pub rows: Vec<usize>,
    pub view_a: Array2<T>,
    pub view_b: Array2<T>,
    pub labels: Vec<Option<usize>>,
    pub labeled: Vec<bool>,
}

impl<T: Scalar> FeatureBatch<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T: Scalar> {
    pub tau: T,
    pub lambda: T,
    pub alpha: T,
    pub use_coarse: bool,
    pub use_fine: bool,
}

impl<T: Scalar> LossWeights<T> {
    fn fine_active(&self) -> bool {
        self.use_fine && self.alpha != T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T: Scalar> {
    pub coarse: T,
    pub fine: T,
    pub total: T,
}

/// Embeds both views of `fb` through `head` in one pass.
pub fn embed_batch<T: Scalar>(model: &TrainableModel<T>, head: usize, fb: &FeatureBatch<T>) -> Result<(Batch<T>, HeadCache<T>)> {
    let b = fb.len();
    let input = concatenate(Axis(0), &[fb.view_a.view(), fb.view_b.view()]).map_err(|e| XconError::Shape(e.to_string()))?;
    let (z, cache) = model.forward_head(head, input.view())?;
    let batch = Batch::new(
        z.slice(s![..b, ..]).to_owned(),
        z.slice(s![b.., ..]).to_owned(),
        fb.labels.clone(),
        fb.labeled.clone(),
    )?;
    Ok((batch, cache))
}

fn backprop<T: Scalar>(
    model: &TrainableModel<T>,
    cache: &HeadCache<T>,
    lg: &LossGrad<T>,
    weight: T,
    grads: &mut TrainableModel<T>,
) -> Result<()> {
    let dz = concatenate(Axis(0), &[lg.d_anchors.view(), lg.d_positives.view()]).map_err(|e| XconError::Shape(e.to_string()))? * weight;
    model.backward_head(cache, &dz, grads);
    Ok(())
}

/// Coarse loss on the full-dataset batch through head 0. When `grads` is
/// given, `weight · dL/dθ` is added to it.
pub fn coarse_objective<T: Scalar>(
    model: &TrainableModel<T>,
    batch: &FeatureBatch<T>,
    tau: T,
    lambda: T,
    grads: Option<(&mut TrainableModel<T>, T)>,
) -> Result<T> {
    let (emb, cache) = embed_batch(model, 0, batch)?;
    let lg = mixed_contrastive_loss(&emb, tau, lambda)?;
    if let Some((g, w)) = grads {
        backprop(model, &cache, &lg, w, g)?;
    }
    Ok(lg.loss)
}

/// Fine loss: `sub_batches[k]` goes through expert head `k + 1`; the per
/// sub-dataset losses are summed.
pub fn fine_loss<T: Scalar>(
    model: &TrainableModel<T>,
    sub_batches: &[FeatureBatch<T>],
    tau: T,
    lambda: T,
    mut grads: Option<(&mut TrainableModel<T>, T)>,
) -> Result<T> {
    if sub_batches.len() + 1 != model.head_count() {
        return Err(XconError::InvalidArgument(format!(
            "{} sub-batches for {} expert heads",
            sub_batches.len(),
            model.head_count() - 1
        )));
    }
    let mut total = T::zero();
    for (k, fb) in sub_batches.iter().enumerate() {
        if fb.len() < 2 {
            return Err(XconError::NoNegatives(fb.len()));
        }
        let (emb, cache) = embed_batch(model, k + 1, fb)?;
        let lg = mixed_contrastive_loss(&emb, tau, lambda)?;
        if let Some((g, w)) = grads.as_mut() {
            backprop(model, &cache, &lg, *w, g)?;
        }
        total += lg.loss;
    }
    Ok(total)
}

/// `L = L_coarse + α·L_fine` and its gradient with respect to every parameter.
///
/// The fine path is skipped entirely when `α = 0` or it is disabled, in
/// which case `fine` is reported as zero.
pub fn total_loss<T: Scalar>(
    model: &TrainableModel<T>,
    coarse: &FeatureBatch<T>,
    fine: &[FeatureBatch<T>],
    w: &LossWeights<T>,
) -> Result<(LossBreakdown<T>, TrainableModel<T>)> {
    let mut grads = model.zeros_like();
    let coarse_value = if w.use_coarse {
        coarse_objective(model, coarse, w.tau, w.lambda, Some((&mut grads, T::one())))?
    } else {
        T::zero()
    };
    let fine_value = if w.fine_active() {
        fine_loss(model, fine, w.tau, w.lambda, Some((&mut grads, w.alpha)))?
    } else {
        T::zero()
    };
    let total = coarse_value + w.alpha * fine_value;
    Ok((
        LossBreakdown {
            coarse: coarse_value,
            fine: fine_value,
            total,
        },
        grads,
    ))
}
