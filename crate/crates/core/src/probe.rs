//! Span featurizer: scalar layer mix, self-attentive span pooling, span
//! concatenation, and one ReLU projection layer.

use rand::Rng;

use crate::data::{EmbeddingBundle, Span, SpanTarget};
use crate::error::{Error, Result};
use crate::math::{axpy, dot, softmax, Matrix};

/// Learnable featurizer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    /// Unnormalized layer-mix weights, one per encoder layer.
    pub mix_logits: Vec<f64>,
    /// Global scale applied after mixing.
    pub mix_scale: f64,
    /// Scoring vector for attention pooling inside a span.
    pub attn: Vec<f64>,
    /// `hidden × (arity · dim)`
    pub proj_weight: Matrix,
    pub proj_bias: Vec<f64>,
}

impl ProbeParams {
    /// Mix logits zero, scale one, attention and projection uniform in
    /// `±1/√fan_in`, bias zero.
    pub fn init<R: Rng + ?Sized>(
        num_layers: usize,
        dim: usize,
        arity: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let attn_bound = 1.0 / (dim as f64).sqrt();
        let attn = (0..dim)
            .map(|_| rng.random_range(-attn_bound..=attn_bound))
            .collect();
        let width = arity * dim;
        let proj_weight = Matrix::uniform(hidden, width, 1.0 / (width as f64).sqrt(), rng);
        Self {
            mix_logits: vec![0.0; num_layers],
            mix_scale: 1.0,
            attn,
            proj_weight,
            proj_bias: vec![0.0; hidden],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mix_logits: vec![0.0; self.mix_logits.len()],
            mix_scale: 0.0,
            attn: vec![0.0; self.attn.len()],
            proj_weight: Matrix::zeros(self.proj_weight.rows(), self.proj_weight.cols()),
            proj_bias: vec![0.0; self.proj_bias.len()],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.mix_logits.len()
    }

    pub fn dim(&self) -> usize {
        self.attn.len()
    }

    pub fn hidden(&self) -> usize {
        self.proj_bias.len()
    }

    /// Number of pooled spans the projection expects.
    pub fn arity(&self) -> usize {
        self.proj_weight.cols() / self.dim().max(1)
    }

    /// Softmax-normalized layer weights.
    pub fn mix_weights(&self) -> Vec<f64> {
        softmax(&self.mix_logits)
    }

    pub fn is_finite(&self) -> bool {
        self.mix_logits.iter().all(|v| v.is_finite())
            && self.mix_scale.is_finite()
            && self.attn.iter().all(|v| v.is_finite())
            && self.proj_weight.is_finite()
            && self.proj_bias.iter().all(|v| v.is_finite())
    }

    /// Every parameter block as a flat slice, in a fixed order.
    pub fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.mix_logits,
            std::slice::from_mut(&mut self.mix_scale),
            &mut self.attn,
            self.proj_weight.as_mut_slice(),
            &mut self.proj_bias,
        ]
    }

    pub fn blocks(&self) -> [&[f64]; 5] {
        [
            &self.mix_logits,
            std::slice::from_ref(&self.mix_scale),
            &self.attn,
            self.proj_weight.as_slice(),
            &self.proj_bias,
        ]
    }

    fn check_bundle(&self, bundle: &EmbeddingBundle) -> Result<()> {
        if bundle.num_layers() != self.num_layers() {
            return Err(Error::Shape(format!(
                "sentence {:?} has {} layers, mix expects {}",
                bundle.sentence_id(),
                bundle.num_layers(),
                self.num_layers()
            )));
        }
        if bundle.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "sentence {:?} has dim {}, probe expects {}",
                bundle.sentence_id(),
                bundle.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Mixed (but unscaled) vectors for tokens `span.start..span.end`.
fn mix_rows(bundle: &EmbeddingBundle, weights: &[f64], span: Span) -> Matrix {
    let d = bundle.dim();
    let mut out = Matrix::zeros(span.len(), d);
    for (row, t) in (span.start..span.end).enumerate() {
        let dst = out.row_mut(row);
        for (l, &w) in weights.iter().enumerate() {
            for (o, &v) in dst.iter_mut().zip(bundle.token(l, t)) {
                *o += w * f64::from(v);
            }
        }
    }
    out
}

/// Token matrix `γ · Σ_l softmax(mix_logits)_l · layer_l`, shaped `tokens × dim`.
pub fn mix_layers(bundle: &EmbeddingBundle, params: &ProbeParams) -> Result<Matrix> {
    params.check_bundle(bundle)?;
    let all = Span {
        start: 0,
        end: bundle.num_tokens(),
    };
    let mut m = mix_rows(bundle, &params.mix_weights(), all);
    m.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v *= params.mix_scale);
    Ok(m)
}

/// Attention weights and pooled vector for the given span rows.
fn attend(rows: &Matrix, attn: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = (0..rows.rows()).map(|r| dot(attn, rows.row(r))).collect();
    let weights = softmax(&scores);
    let mut pooled = vec![0.0; rows.cols()];
    for (r, &w) in weights.iter().enumerate() {
        axpy(w, rows.row(r), &mut pooled);
    }
    (weights, pooled)
}

/// Self-attentive pooling of `span` over a `tokens × dim` matrix.
pub fn pool_span(tokens: &Matrix, span: Span, params: &ProbeParams) -> Result<Vec<f64>> {
    if span.is_empty() {
        return Err(Error::invalid(format!("cannot pool empty span {span}")));
    }
    if span.end > tokens.rows() {
        return Err(Error::invalid(format!(
            "span {span} exceeds {} tokens",
            tokens.rows()
        )));
    }
    if tokens.cols() != params.dim() {
        return Err(Error::Shape(format!(
            "token dim {} vs attention dim {}",
            tokens.cols(),
            params.dim()
        )));
    }
    let rows = Matrix::from_vec(
        span.len(),
        tokens.cols(),
        tokens.as_slice()[span.start * tokens.cols()..span.end * tokens.cols()].to_vec(),
    );
    Ok(attend(&rows, &params.attn).1)
}

#[derive(Debug, Clone)]
struct SpanTrace {
    span: Span,
    /// Mixed rows before the global scale.
    unscaled: Matrix,
    tokens: Matrix,
    weights: Vec<f64>,
}

/// Intermediate values kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct FeatureTrace {
    spans: Vec<SpanTrace>,
    input: Vec<f64>,
    pre_activation: Vec<f64>,
    pub features: Vec<f64>,
}

pub fn featurize_traced(
    bundle: &EmbeddingBundle,
    target: &SpanTarget,
    params: &ProbeParams,
) -> Result<FeatureTrace> {
    params.check_bundle(bundle)?;
    let width = target.arity() * params.dim();
    if width != params.proj_weight.cols() {
        return Err(Error::Shape(format!(
            "example has {} span(s) ({width} input columns) but projection has {} columns",
            target.arity(),
            params.proj_weight.cols()
        )));
    }
    let weights = params.mix_weights();
    let mut input = Vec::with_capacity(width);
    let mut spans = Vec::with_capacity(target.arity());
    for span in target.spans() {
        if !span.fits(bundle.num_tokens()) {
            return Err(Error::invalid(format!(
                "span {span} out of bounds for sentence {:?}",
                bundle.sentence_id()
            )));
        }
        let unscaled = mix_rows(bundle, &weights, span);
        let mut tokens = unscaled.clone();
        tokens
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v *= params.mix_scale);
        let (attn_weights, pooled) = attend(&tokens, &params.attn);
        input.extend_from_slice(&pooled);
        spans.push(SpanTrace {
            span,
            unscaled,
            tokens,
            weights: attn_weights,
        });
    }
    let mut pre_activation = params.proj_weight.matvec(&input);
    axpy(1.0, &params.proj_bias, &mut pre_activation);
    let features = pre_activation.iter().map(|&v| v.max(0.0)).collect();
    Ok(FeatureTrace {
        spans,
        input,
        pre_activation,
        features,
    })
}

/// Classifier input `max(0, P · [pool(span1); pool(span2)] + b)`.
pub fn featurize(
    bundle: &EmbeddingBundle,
    target: &SpanTarget,
    params: &ProbeParams,
) -> Result<Vec<f64>> {
    featurize_traced(bundle, target, params).map(|t| t.features)
}

/// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂features`.
pub fn backward(
    trace: &FeatureTrace,
    bundle: &EmbeddingBundle,
    params: &ProbeParams,
    d_features: &[f64],
    grad: &mut ProbeParams,
) {
    let d = params.dim();
    let d_pre: Vec<f64> = d_features
        .iter()
        .zip(&trace.pre_activation)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();
    grad.proj_weight.add_outer(1.0, &d_pre, &trace.input);
    axpy(1.0, &d_pre, &mut grad.proj_bias);
    let d_input = params.proj_weight.matvec_t(&d_pre);

    let mix_weights = params.mix_weights();
    let mut d_mix = vec![0.0; params.num_layers()];
    for (k, st) in trace.spans.iter().enumerate() {
        let d_pooled = &d_input[k * d..(k + 1) * d];
        // pooled = Σ_t w_t tok_t, w = softmax(⟨attn, tok_t⟩)
        let d_w: Vec<f64> = (0..st.tokens.rows())
            .map(|r| dot(d_pooled, st.tokens.row(r)))
            .collect();
        let mean_dw = dot(&st.weights, &d_w);
        for (r, (&w, &dw)) in st.weights.iter().zip(&d_w).enumerate() {
            let d_score = w * (dw - mean_dw);
            axpy(d_score, st.tokens.row(r), &mut grad.attn);
            // ∂/∂tok_t = w_t · d_pooled + d_score_t · attn
            let d_tok: Vec<f64> = d_pooled
                .iter()
                .zip(&params.attn)
                .map(|(&g, &a)| w * g + d_score * a)
                .collect();
            grad.mix_scale += dot(&d_tok, st.unscaled.row(r));
            let t = st.span.start + r;
            for (l, dm) in d_mix.iter_mut().enumerate() {
                let layer = bundle.token(l, t);
                let s: f64 = d_tok
                    .iter()
                    .zip(layer)
                    .map(|(&g, &v)| g * f64::from(v))
                    .sum();
                *dm += params.mix_scale * s;
            }
        }
    }
    let mean = dot(&mix_weights, &d_mix);
    for (l, g) in grad.mix_logits.iter_mut().enumerate() {
        *g += mix_weights[l] * (d_mix[l] - mean);
    }
}
