//! Finite-difference gradient checking on random problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EmbeddingBundle, Span, SpanTarget};
use crate::lsl::Regularization;
use crate::model::{Model, ModelShape};

pub struct Draw {
    pub model: Model,
    pub bundles: Vec<EmbeddingBundle>,
    pub targets: Vec<SpanTarget>,
}

/// Random model and batch; features are kept at moderate scale so every
/// ReLU sits away from its kink with overwhelming probability.
pub fn random_draw(seed: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arity = rng.random_range(1..=2);
    let shape = ModelShape {
        num_layers: rng.random_range(1..=3),
        dim: rng.random_range(2..=4),
        arity,
        hidden: rng.random_range(2..=5),
        num_latent: rng.random_range(1..=5),
    };
    let mut model = Model::init(shape, rng.random()).unwrap();
    for v in model.probe.mix_logits.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    model.probe.mix_scale = rng.random_range(0.5..1.5);
    for v in model.probe.proj_bias.iter_mut() {
        *v = rng.random_range(-0.3..0.3);
    }
    let batch = rng.random_range(1..=5);
    let mut bundles = Vec::new();
    let mut targets = Vec::new();
    for i in 0..batch {
        let tokens = rng.random_range(2..=5);
        let n = shape.num_layers * tokens * shape.dim;
        let values = (0..n).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let id = format!("s{i}");
        bundles
            .push(EmbeddingBundle::new(&id, shape.num_layers, tokens, shape.dim, values).unwrap());
        let mut span = || {
            let s = rng.random_range(0..tokens);
            let e = rng.random_range(s + 1..=tokens);
            Span { start: s, end: e }
        };
        let span1 = span();
        let span2 = (arity == 2).then(&mut span);
        targets.push(SpanTarget {
            id: None,
            sentence_id: id,
            span1,
            span2,
            label: rng.random_bool(0.5),
            gold: None,
        });
    }
    Draw {
        model,
        bundles,
        targets,
    }
}

/// Worst relative error over all parameters, with the denominator floored
/// so near-zero entries compare absolutely.
pub fn max_relative_error(draw: &Draw, reg: Regularization) -> f64 {
    let batch: Vec<_> = draw.bundles.iter().zip(&draw.targets).collect();
    let (_, grad) = draw.model.loss_total(&batch, reg).unwrap();
    let analytic: Vec<f64> = grad.blocks().concat();

    let loss_at = |m: &Model| m.loss_total(&batch, reg).unwrap().0.total;
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    let nblocks = draw.model.blocks().len();
    for b in 0..nblocks {
        let len = draw.model.blocks()[b].len();
        for k in 0..len {
            let eps = 1e-6;
            let mut plus = draw.model.clone();
            plus.blocks_mut()[b][k] += eps;
            let mut minus = draw.model.clone();
            minus.blocks_mut()[b][k] -= eps;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let a = analytic[idx];
            let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
            idx += 1;
        }
    }
    worst
}
