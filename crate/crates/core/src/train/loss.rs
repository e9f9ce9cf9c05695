//! Training objectives.
//!
//! Each objective comes in two layers: a scalar kernel that maps scores to
//! `(loss, d loss / d score)`, and a model-level function that computes the
//! scores, calls the kernel and pushes the score gradients into a
//! [`Gradients`] accumulator. Losses are sums, never means.

use std::ops::Range;

use crate::dataset::{Triple, INTERACTS_WITH};
use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, Gradients};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sum exp(x)` with max subtraction. `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, and its logit derivative.
pub fn bce_logit(label: f64, logit: f64) -> (f64, f64) {
    (softplus(logit) - label * logit, sigmoid(logit) - label)
}

/// `sum_n [gamma - pos + neg_n]_+` with derivatives for the positive and each negative.
pub fn hinge_terms(pos: f64, negs: &[f64], gamma: f64) -> (f64, f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut dpos = 0.0;
    let dnegs = negs
        .iter()
        .map(|&neg| {
            let arg = gamma - pos + neg;
            if arg > 0.0 {
                loss += arg;
                dpos -= 1.0;
                1.0
            } else {
                0.0
            }
        })
        .collect();
    (loss, dpos, dnegs)
}

/// `-sum_{t in targets} ln softmax(scores)_t` and its gradient.
pub fn softmax_xent(scores: &[f64], targets: &[usize]) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(scores);
    let mut loss = 0.0;
    let n = targets.len() as f64;
    let mut grad: Vec<f64> = scores.iter().map(|s| n * (s - lse).exp()).collect();
    for &t in targets {
        loss += lse - scores[t];
        grad[t] -= 1.0;
    }
    (loss, grad)
}

/// Cosine-contrastive loss for one user:
/// `sum_i [(1 - pos_i) + w / N * sum_j [neg_j - m]_+]`.
pub fn cc_terms(
    pos: &[f64],
    negs: &[f64],
    margin: f64,
    weight: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if negs.is_empty() && weight > 0.0 {
        return Err(Error::InvalidArgument(
            "contrastive loss needs at least one negative when its weight is positive".into(),
        ));
    }
    let scale = if negs.is_empty() {
        0.0
    } else {
        weight / negs.len() as f64
    };
    let n_pos = pos.len() as f64;
    let mut neg_part = 0.0;
    let dneg: Vec<f64> = negs
        .iter()
        .map(|&x| {
            if x > margin {
                neg_part += x - margin;
                n_pos * scale
            } else {
                0.0
            }
        })
        .collect();
    let pos_part: f64 = pos.iter().map(|x| 1.0 - x).sum();
    let dpos = vec![-1.0; pos.len()];
    Ok((pos_part + n_pos * scale * neg_part, dpos, dneg))
}

/// Margin ranking loss over corruptions of one triple.
pub fn margin_ns(
    model: &EmbeddingModel,
    positive: Triple,
    corruptions: &[Triple],
    gamma: f64,
    grads: &mut Gradients,
) -> f64 {
    let pos = model.score_unchecked(positive.subject, positive.relation, positive.object);
    let negs: Vec<f64> = corruptions
        .iter()
        .map(|t| model.score_unchecked(t.subject, t.relation, t.object))
        .collect();
    let (loss, dpos, dnegs) = hinge_terms(pos, &negs, gamma);
    model.accumulate_score_grad(
        positive.subject,
        positive.relation,
        positive.object,
        dpos,
        grads,
    );
    for (t, d) in corruptions.iter().zip(dnegs) {
        model.accumulate_score_grad(t.subject, t.relation, t.object, d, grads);
    }
    loss
}

/// Binary cross-entropy with the positive labelled 1 and every corruption 0.
pub fn negative_sampling_bce(
    model: &EmbeddingModel,
    positive: Triple,
    corruptions: &[Triple],
    grads: &mut Gradients,
) -> f64 {
    let mut loss = 0.0;
    for (t, y) in std::iter::once((&positive, 1.0)).chain(corruptions.iter().map(|t| (t, 0.0))) {
        let (l, d) = bce_logit(y, model.score_unchecked(t.subject, t.relation, t.object));
        loss += l;
        model.accumulate_score_grad(t.subject, t.relation, t.object, d, grads);
    }
    loss
}

/// Candidate entities for one prediction direction and which of them are true.
#[derive(Clone, Debug)]
pub struct SideLabels<'a> {
    pub candidates: Range<usize>,
    /// Sorted entity ids inside `candidates`.
    pub positives: &'a [usize],
}

impl SideLabels<'_> {
    fn label_vector(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.candidates.len()];
        for &e in self.positives {
            y[e - self.candidates.start] = 1.0;
        }
        y
    }
}

/// Multi-label BCE for an anchor entity `e1` and relation `p`:
/// `sum_e2 BCE(e1, p, e2)` over `objects` plus `sum_e2 BCE(e2, p, e1)` over
/// `subjects`. Either side may be absent (type-invalid direction).
pub fn kvsall_bce(
    model: &EmbeddingModel,
    anchor: usize,
    relation: usize,
    objects: Option<&SideLabels<'_>>,
    subjects: Option<&SideLabels<'_>>,
    grads: &mut Gradients,
) -> f64 {
    let mut loss = 0.0;
    if let Some(side) = objects {
        let scores = model
            .score_candidates(anchor, relation, side.candidates.clone())
            .expect("anchor and candidates in range");
        let y = side.label_vector();
        let mut coeffs = Vec::with_capacity(scores.len());
        for (&s, &label) in scores.iter().zip(&y) {
            let (l, d) = bce_logit(label, s);
            loss += l;
            coeffs.push(d);
        }
        model.accumulate_object_side_grad(
            anchor,
            relation,
            side.candidates.clone(),
            &coeffs,
            grads,
        );
    }
    if let Some(side) = subjects {
        let y = side.label_vector();
        for (e2, label) in side.candidates.clone().zip(y) {
            let (l, d) = bce_logit(label, model.score_unchecked(e2, relation, anchor));
            loss += l;
            model.accumulate_score_grad(e2, relation, anchor, d, grads);
        }
    }
    loss
}

/// Softmax cross-entropy over all subject candidates plus all object candidates.
pub fn one_vs_all(
    model: &EmbeddingModel,
    triple: Triple,
    subject_candidates: Range<usize>,
    object_candidates: Range<usize>,
    grads: &mut Gradients,
) -> f64 {
    let Triple {
        subject: s,
        relation: p,
        object: o,
    } = triple;

    let obj_scores = model
        .score_candidates(s, p, object_candidates.clone())
        .expect("triple in range");
    let (lo, dobj) = softmax_xent(&obj_scores, &[o - object_candidates.start]);
    model.accumulate_object_side_grad(s, p, object_candidates, &dobj, grads);

    let subj_scores = model.score_subject_candidates(p, o, subject_candidates.clone());
    let (ls, dsubj) = softmax_xent(&subj_scores, &[s - subject_candidates.start]);
    for (c, d) in subject_candidates.zip(dsubj) {
        model.accumulate_score_grad(c, p, o, d, grads);
    }
    ls + lo
}

/// `-sum ln sigmoid(x_ui - x_uj)` over `(user, positive, negative)` entity triples.
pub fn bpr(
    model: &EmbeddingModel,
    triples: &[(usize, usize, usize)],
    grads: &mut Gradients,
) -> f64 {
    let p = INTERACTS_WITH;
    let mut loss = 0.0;
    for &(u, i, j) in triples {
        let diff = model.score_unchecked(u, p, i) - model.score_unchecked(u, p, j);
        loss += softplus(-diff);
        let d = -sigmoid(-diff);
        model.accumulate_score_grad(u, p, i, d, grads);
        model.accumulate_score_grad(u, p, j, -d, grads);
    }
    loss
}

/// Pairwise hinge on embedding distances, summed over every positive pair and
/// every negative pair of the same user.
pub fn pairwise_hinge(
    model: &EmbeddingModel,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    margin: f64,
    weight: f64,
    grads: &mut Gradients,
) -> f64 {
    let mut loss = 0.0;
    for &(u, i) in positives {
        let d_pos = model.sq_distance(u, i).expect("pair in range");
        for &(v, j) in negatives {
            if v != u {
                continue;
            }
            let arg = margin + d_pos - model.sq_distance(u, j).expect("pair in range");
            if arg > 0.0 {
                loss += weight * arg;
                model.accumulate_sq_distance_grad(u, i, weight, grads);
                model.accumulate_sq_distance_grad(u, j, -weight, grads);
            }
        }
    }
    loss
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointwiseLoss {
    /// Cross-entropy of `sigmoid(score)`.
    Bce,
    /// Squared error of the raw score.
    Mse,
}

/// Pointwise loss over `(user, item, label)` entity pairs.
pub fn pointwise(
    model: &EmbeddingModel,
    pairs: &[(usize, usize, f64)],
    kind: PointwiseLoss,
    grads: &mut Gradients,
) -> f64 {
    let p = INTERACTS_WITH;
    let mut loss = 0.0;
    for &(u, k, label) in pairs {
        let x = model.score_unchecked(u, p, k);
        let (l, d) = match kind {
            PointwiseLoss::Bce => bce_logit(label, x),
            PointwiseLoss::Mse => ((label - x) * (label - x), 2.0 * (x - label)),
        };
        loss += l;
        model.accumulate_score_grad(u, p, k, d, grads);
    }
    loss
}

/// Softmax cross-entropy of one user over the item range; `positives` are entity ids.
pub fn sce(
    model: &EmbeddingModel,
    user: usize,
    items: Range<usize>,
    positives: &[usize],
    grads: &mut Gradients,
) -> f64 {
    let p = INTERACTS_WITH;
    let scores = model
        .score_candidates(user, p, items.clone())
        .expect("user in range");
    let targets: Vec<usize> = positives.iter().map(|&e| e - items.start).collect();
    let (loss, d) = softmax_xent(&scores, &targets);
    model.accumulate_object_side_grad(user, p, items, &d, grads);
    loss
}

/// Cosine-contrastive loss for one user with its sampled negatives (entity ids).
pub fn cosine_contrastive(
    model: &EmbeddingModel,
    user: usize,
    positives: &[usize],
    negatives: &[usize],
    margin: f64,
    weight: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let p = INTERACTS_WITH;
    let pos: Vec<f64> = positives
        .iter()
        .map(|&i| model.cosine_triple(user, p, i))
        .collect::<Result<_>>()?;
    let neg: Vec<f64> = negatives
        .iter()
        .map(|&j| model.cosine_triple(user, p, j))
        .collect::<Result<_>>()?;
    let (loss, dpos, dneg) = cc_terms(&pos, &neg, margin, weight)?;
    for (&i, d) in positives.iter().zip(dpos) {
        model.accumulate_cosine_grad(user, p, i, d, grads);
    }
    for (&j, d) in negatives.iter().zip(dneg) {
        model.accumulate_cosine_grad(user, p, j, d, grads);
    }
    Ok(loss)
}
