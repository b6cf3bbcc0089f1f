//! Analytic-versus-numeric gradient comparison for the expander loss.

#![allow(dead_code)]

use amodal_core::expander::{dropout_mask, loss_and_grads_with_masks, ExpanderParams, LossSpace, ProposalSample};
use amodal_core::geometry::{BBox, BoxDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_config(rng: &mut ChaCha8Rng) -> (ExpanderParams, Vec<ProposalSample>, Vec<Vec<f64>>, f64, LossSpace) {
    let feature_dim = rng.random_range(1..5);
    let hidden = rng.random_range(2..12);
    let mut p = ExpanderParams::init(feature_dim, hidden, rng);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let batch: Vec<ProposalSample> = (0..rng.random_range(1..5))
        .map(|_| {
            let proposal = BBox::new(
                rng.random_range(0.0..50.0),
                rng.random_range(0.0..50.0),
                rng.random_range(5.0..40.0),
                rng.random_range(5.0..40.0),
            );
            let target = BBox::new(
                proposal.x + rng.random_range(-5.0..5.0),
                proposal.y + rng.random_range(-5.0..5.0),
                proposal.w * rng.random_range(0.5..2.5),
                proposal.h * rng.random_range(0.5..2.5),
            );
            ProposalSample {
                proposal,
                feature: (0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                modal_delta: BoxDelta::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ),
                modal_gt: Some(proposal),
                amodal_gt: Some(target),
                matched: true,
            }
        })
        .collect();
    let masks = batch.iter().map(|_| dropout_mask(rng, hidden, 0.2)).collect();
    let beta = rng.random_range(0.05..1.5);
    let space = if rng.random_bool(0.3) { LossSpace::Box } else { LossSpace::Delta };
    (p, batch, masks, beta, space)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter.
pub fn max_gradient_error(seed: u64) -> f64 {
    max_gradient_error_sampled(seed, None)
}

/// As [`max_gradient_error`], but when `pe_weights` is given only that many
/// randomly chosen first-layer weights fed by the positional encoding are
/// checked. Biases, output weights and feature-fed weights are always
/// checked in full.
pub fn max_gradient_error_sampled(seed: u64, pe_weights: Option<usize>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, batch, masks, beta, space) = random_config(&mut rng);
    let (_, analytic) = loss_and_grads_with_masks(&p, &batch, Some(&masks), beta, space).unwrap();
    let loss = |q: &ExpanderParams| loss_and_grads_with_masks(q, &batch, Some(&masks), beta, space).unwrap().0;

    let feature_fed = p.feature_dim * p.hidden;
    let mut w1: Vec<usize> = (0..p.w1.len()).collect();
    if let Some(n) = pe_weights {
        let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut pe: Vec<usize> = (feature_fed..p.w1.len()).collect();
        for k in 0..n.min(pe.len()) {
            let j = pick.random_range(k..pe.len());
            pe.swap(k, j);
        }
        pe.truncate(n);
        w1 = (0..feature_fed).chain(pe).collect();
    }
    let coords: Vec<(usize, usize)> = w1
        .into_iter()
        .map(|i| (0, i))
        .chain((1..4).flat_map(|t| (0..p.tensors()[t].len()).map(move |i| (t, i))))
        .collect();

    // fourth-order central stencil keeps round-off small when the loss is large
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (t, i) in coords {
        let at = |k: f64| {
            let mut q = p.clone();
            q.tensors_mut()[t][i] += k * h;
            loss(&q)
        };
        let numeric = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h);
        let a = analytic.tensors()[t][i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(err);
    }
    worst
}
