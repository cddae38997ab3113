//! Full trainable model (featurizer plus LSL head) and its gradient.
//!
//! Checkpoint layout (little-endian): magic `LSLC`, `u32` version, then
//! `u32` layers, dim, arity, hidden, latent classes, followed by `f64`
//! values for mix logits, mix scale, attention vector, projection weight
//! (row-major), projection bias, and head weight (row-major).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EmbeddingBundle, SpanTarget};
use crate::error::{Error, Result};
use crate::lsl::{self, LatentPosterior, LossBreakdown, LslHead, Regularization};
use crate::math::Matrix;
use crate::probe::{self, FeatureTrace, ProbeParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSLC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub num_layers: usize,
    pub dim: usize,
    pub arity: usize,
    pub hidden: usize,
    pub num_latent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub probe: ProbeParams,
    pub head: LslHead,
}

impl Model {
    /// Deterministic initialization from `seed`.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let ModelShape {
            num_layers,
            dim,
            arity,
            hidden,
            num_latent,
        } = shape;
        if [num_layers, dim, arity, hidden, num_latent].contains(&0) || arity > 2 {
            return Err(Error::invalid(format!("invalid model shape {shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = ProbeParams::init(num_layers, dim, arity, hidden, &mut rng);
        let head = LslHead::init(num_latent, hidden, &mut rng);
        Ok(Self { probe, head })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            num_layers: self.probe.num_layers(),
            dim: self.probe.dim(),
            arity: self.probe.arity(),
            hidden: self.probe.hidden(),
            num_latent: self.head.num_latent(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            probe: self.probe.zeros_like(),
            head: LslHead {
                weight: Matrix::zeros(self.head.weight.rows(), self.head.weight.cols()),
            },
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.probe.blocks().to_vec();
        b.push(self.head.weight.as_slice());
        b
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b: Vec<&mut [f64]> = self.probe.blocks_mut().into_iter().collect();
        b.push(self.head.weight.as_mut_slice());
        b
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.probe.is_finite() && self.head.weight.is_finite()
    }

    pub fn posterior(
        &self,
        bundle: &EmbeddingBundle,
        target: &SpanTarget,
    ) -> Result<LatentPosterior> {
        let x = probe::featurize(bundle, target, &self.probe)?;
        Ok(lsl::forward(&x, &self.head))
    }

    /// Regularized loss over one batch, without gradients.
    pub fn batch_loss(
        &self,
        batch: &[(&EmbeddingBundle, &SpanTarget)],
        reg: Regularization,
    ) -> Result<LossBreakdown> {
        let posteriors: Vec<LatentPosterior> = batch
            .iter()
            .map(|(b, t)| self.posterior(b, t))
            .collect::<Result<_>>()?;
        let labels: Vec<bool> = batch.iter().map(|(_, t)| t.label).collect();
        let lsl = lsl::loss_lsl(&posteriors, &labels)?;
        let be = lsl::loss_batch_entropy(&posteriors)?;
        let ie = lsl::loss_instance_entropy(&posteriors)?;
        Ok(LossBreakdown {
            total: lsl + reg.alpha * be + reg.beta * ie,
            lsl,
            batch_entropy: be,
            instance_entropy: ie,
        })
    }

    /// Regularized loss over one batch and the gradient of every parameter.
    pub fn loss_total(
        &self,
        batch: &[(&EmbeddingBundle, &SpanTarget)],
        reg: Regularization,
    ) -> Result<(LossBreakdown, Model)> {
        let traces: Vec<FeatureTrace> = batch
            .iter()
            .map(|(b, t)| probe::featurize_traced(b, t, &self.probe))
            .collect::<Result<_>>()?;
        let posteriors: Vec<LatentPosterior> = traces
            .iter()
            .map(|tr| lsl::forward(&tr.features, &self.head))
            .collect();
        let labels: Vec<bool> = batch.iter().map(|(_, t)| t.label).collect();
        let (loss, d_logits) = lsl::loss_and_logit_grads(&posteriors, &labels, reg)?;

        let mut grad = self.zeros_like();
        for ((trace, dz), (bundle, _)) in traces.iter().zip(&d_logits).zip(batch) {
            grad.head.weight.add_outer(1.0, dz, &trace.features);
            let dx = self.head.weight.matvec_t(dz);
            probe::backward(trace, bundle, &self.probe, &dx, &mut grad.probe);
        }
        Ok((loss, grad))
    }

    pub fn encode(&self) -> Vec<u8> {
        let s = self.shape();
        let mut out = Vec::with_capacity(28 + 8 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for d in [s.num_layers, s.dim, s.arity, s.hidden, s.num_latent] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for block in self.blocks() {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 28 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing LSLC header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        if word(1) != CHECKPOINT_VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let shape = ModelShape {
            num_layers: word(2) as usize,
            dim: word(3) as usize,
            arity: word(4) as usize,
            hidden: word(5) as usize,
            num_latent: word(6) as usize,
        };
        let mut model = Model::init(shape, 0)?;
        let payload = &bytes[28..];
        if payload.len() != 8 * model.num_params() {
            return Err(bad("payload length does not match header shape"));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for block in model.blocks_mut() {
            for v in block.iter_mut() {
                *v = values.next().unwrap();
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape {
            num_layers: 2,
            dim: 3,
            arity: 2,
            hidden: 4,
            num_latent: 5,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = Model::init(shape(), 9).unwrap();
        m.probe.mix_scale = -0.0;
        m.head.weight.as_mut_slice()[3] = f64::MIN_POSITIVE / 3.0;
        let bytes = m.encode();
        let back = Model::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.shape(), shape());
    }

    #[test]
    fn decode_rejects_truncation() {
        let bytes = Model::init(shape(), 1).unwrap().encode();
        assert!(Model::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Model::decode(b"LSLC").is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(
            Model::init(shape(), 3).unwrap(),
            Model::init(shape(), 3).unwrap()
        );
        assert_ne!(
            Model::init(shape(), 3).unwrap(),
            Model::init(shape(), 4).unwrap()
        );
        let m = Model::init(shape(), 3).unwrap();
        assert!(m.probe.mix_logits.iter().all(|&v| v == 0.0));
        assert_eq!(m.probe.mix_scale, 1.0);
        assert!(m.probe.proj_bias.iter().all(|&v| v == 0.0));
    }
}
