//! Contrastive retrieval loss and its gradient through the dot-product score
//! `s_t = (W_q h_q) · (W_c h_t)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::TrainError;
use crate::scalar::Scalar;

/// Per-positive softmax pieces: for positive `j`, `a_k = s-_k - s+_j`,
/// `shift = max(0, max_k a_k)` and `z = e^{-shift} + Σ_k e^{a_k - shift}`.
struct Term<S> {
    shift: S,
    z: S,
}

fn check<S: Scalar>(pos: &[S], neg: &[S]) -> Result<(), TrainError> {
    if pos.is_empty() {
        return Err(TrainError::NoPositives);
    }
    if pos.iter().any(|s| !s.is_finite()) {
        return Err(TrainError::NonFinite("positive score".into()));
    }
    // -inf negatives are allowed and contribute nothing
    if neg.iter().any(|s| s.is_nan() || *s == S::infinity()) {
        return Err(TrainError::NonFinite("negative score".into()));
    }
    Ok(())
}

fn term<S: Scalar>(sp: S, neg: &[S]) -> Term<S> {
    let shift = neg.iter().fold(S::zero(), |m, &s| m.max(s - sp));
    let z = neg
        .iter()
        .fold((-shift).exp(), |acc, &s| acc + (s - sp - shift).exp());
    Term { shift, z }
}

/// `Σ_j log(1 + Σ_k exp(s-_k - s+_j))`, the contrastive loss
/// `-Σ_j log(e^{s+_j} / (e^{s+_j} + Σ_k e^{s-_k}))` in overflow-free form.
pub fn contrastive_loss<S: Scalar>(pos: &[S], neg: &[S]) -> Result<S, TrainError> {
    check(pos, neg)?;
    let mut total = S::zero();
    for &sp in pos {
        let t = term(sp, neg);
        total += if t.shift == S::zero() {
            // z = 1 + small: keep precision with ln_1p
            (t.z - S::one()).ln_1p()
        } else {
            t.shift + t.z.ln()
        };
    }
    Ok(total)
}

/// Loss and its derivative with respect to every score.
///
/// `∂L/∂s+_j = p_jj - 1` and `∂L/∂s-_k = Σ_j p_jk`, where `p_j·` is the
/// softmax over `{s+_j} ∪ negatives`.
pub fn contrastive_loss_grad<S: Scalar>(pos: &[S], neg: &[S]) -> Result<(S, Vec<S>, Vec<S>), TrainError> {
    let loss = contrastive_loss(pos, neg)?;
    let mut gpos = Vec::with_capacity(pos.len());
    let mut gneg = vec![S::zero(); neg.len()];
    for &sp in pos {
        let t = term(sp, neg);
        gpos.push((-t.shift).exp() / t.z - S::one());
        for (g, &s) in gneg.iter_mut().zip(neg) {
            *g += (s - sp - t.shift).exp() / t.z;
        }
    }
    Ok((loss, gpos, gneg))
}

/// Hashed features of one training instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceFeatures<S> {
    pub query: Array1<S>,
    /// One row per positive context.
    pub positives: Array2<S>,
    /// One row per negative context.
    pub negatives: Array2<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient<S> {
    pub loss: S,
    pub d_wq: Array2<S>,
    pub d_wc: Array2<S>,
}

/// Stacked queries `Q` (one row per instance), projected queries
/// `U = Q W_qᵀ` and their pull-backs `W = U W_c`, so that instance `i`
/// scores context `h` as `h · W[i]`.
fn project<S: Scalar>(
    wq: ArrayView2<S>,
    wc: ArrayView2<S>,
    batch: &[&InstanceFeatures<S>],
) -> (Array2<S>, Array2<S>, Array2<S>) {
    let d = wq.ncols();
    let mut q = Array2::<S>::zeros((batch.len(), d));
    for (i, f) in batch.iter().enumerate() {
        q.row_mut(i).assign(&f.query);
    }
    let u = q.dot(&wq.t());
    let w = u.dot(&wc);
    (q, u, w)
}

fn scores<S: Scalar>(f: &InstanceFeatures<S>, w: ArrayView1<S>) -> (Vec<S>, Vec<S>) {
    (f.positives.dot(&w).to_vec(), f.negatives.dot(&w).to_vec())
}

/// Summed loss over `batch`.
pub fn batch_loss<S: Scalar>(
    wq: ArrayView2<S>,
    wc: ArrayView2<S>,
    batch: &[&InstanceFeatures<S>],
) -> Result<S, TrainError> {
    let (_, _, w) = project(wq, wc, batch);
    let mut total = S::zero();
    for (f, wi) in batch.iter().zip(w.rows()) {
        let (sp, sn) = scores(f, wi);
        total += contrastive_loss(&sp, &sn)?;
    }
    Ok(total)
}

pub fn instance_loss<S: Scalar>(wq: ArrayView2<S>, wc: ArrayView2<S>, f: &InstanceFeatures<S>) -> Result<S, TrainError> {
    batch_loss(wq, wc, &[f])
}

/// Loss of one instance and its gradient with respect to both projections.
///
/// With `u = W_q h_q`, `v_t = W_c h_t` and `G = Σ_t g_t h_t`:
/// `∂L/∂W_q = (W_c G) h_qᵀ = (Σ_t g_t v_t) h_qᵀ` and `∂L/∂W_c = u Gᵀ`,
/// `g_t` being the score derivative from [`contrastive_loss_grad`].
pub fn loss_gradient<S: Scalar>(
    wq: ArrayView2<S>,
    wc: ArrayView2<S>,
    f: &InstanceFeatures<S>,
) -> Result<LossGradient<S>, TrainError> {
    batch_gradient(wq, wc, &[f])
}

/// Summed loss and gradient over a batch, with the per-instance outer
/// products reduced by one matrix product per projection.
pub fn batch_gradient<S: Scalar>(
    wq: ArrayView2<S>,
    wc: ArrayView2<S>,
    batch: &[&InstanceFeatures<S>],
) -> Result<LossGradient<S>, TrainError> {
    let (q, u, w) = project(wq, wc, batch);
    let mut g = Array2::<S>::zeros(q.raw_dim());
    let mut loss = S::zero();
    for (i, f) in batch.iter().enumerate() {
        let (sp, sn) = scores(f, w.row(i));
        let (l, gp, gn) = contrastive_loss_grad(&sp, &sn)?;
        loss += l;
        let gi = f.positives.t().dot(&Array1::from(gp)) + f.negatives.t().dot(&Array1::from(gn));
        g.row_mut(i).assign(&gi);
    }
    // rows of G W_cᵀ are Σ_t g_t v_t
    let gv = g.dot(&wc.t());
    Ok(LossGradient {
        loss,
        d_wq: gv.t().dot(&q),
        d_wc: u.t().dot(&g),
    })
}
