//! A context-window linear-softmax autoregressive policy.
//!
//! The next-token logits are `z = W·φ(ctx) + b`, where `φ` concatenates the
//! one-hot encodings of the last `c` context tokens (left-padded with BOS).
//! `W` has shape `V × (c·V)`, so slot `j` holding token `x` selects column
//! `j·V + x`. Everything is small enough that log-probabilities and their
//! gradients are exact.

mod io;
mod sampling;

pub use io::{read_params, write_params, PARAMS_FORMAT_VERSION, PARAMS_MAGIC};
pub use sampling::{sample_response, SamplingConfig};

use ndarray::{Array1, Array2, Zip};
use rand::Rng;

use crate::error::{GemError, Result};
use crate::seed::rng_from_seed;
use crate::tokens::{TokenId, TokenSequence, Vocabulary};

/// A distribution over the vocabulary. Entries are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(GemError::InvalidSequence(format!(
                "not a probability vector (sum {sum})"
            )));
        }
        Ok(Self(probs))
    }

    /// Softmax of `logits`, computed with the max subtracted.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= total);
        Self(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties resolve toward the lowest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// The parameters θ of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab: Vocabulary,
    context_length: usize,
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// A tensor with the same layout as [`PolicyParams`] holding a derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl PolicyParams {
    pub fn zeros(vocab: Vocabulary, context_length: usize) -> Result<Self> {
        if context_length == 0 {
            return Err(GemError::InvalidConfig("context_length must be at least 1".into()));
        }
        let v = vocab.size();
        Ok(Self {
            vocab,
            context_length,
            weights: Array2::zeros((v, context_length * v)),
            bias: Array1::zeros(v),
        })
    }

    /// Draw every entry i.i.d. from `U[-init_scale, init_scale]`. A zero scale
    /// yields all-zero parameters (the uniform policy).
    pub fn init(
        vocab: Vocabulary,
        context_length: usize,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(GemError::InvalidConfig(format!(
                "init_scale must be finite and nonnegative, got {init_scale}"
            )));
        }
        let mut params = Self::zeros(vocab, context_length)?;
        if init_scale > 0.0 {
            let mut rng = rng_from_seed(seed);
            params
                .weights
                .iter_mut()
                .chain(params.bias.iter_mut())
                .for_each(|x| *x = rng.gen_range(-init_scale..=init_scale));
        }
        Ok(params)
    }

    pub fn from_parts(
        vocab: Vocabulary,
        context_length: usize,
        weights: Array2<f64>,
        bias: Array1<f64>,
    ) -> Result<Self> {
        let v = vocab.size();
        if context_length == 0 {
            return Err(GemError::InvalidConfig("context_length must be at least 1".into()));
        }
        if weights.dim() != (v, context_length * v) || bias.len() != v {
            return Err(GemError::ShapeMismatch(format!(
                "expected weights {v}x{} and bias {v}, got {:?} and {}",
                context_length * v,
                weights.dim(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|x| !x.is_finite()) {
            return Err(GemError::InvalidConfig("parameters contain non-finite entries".into()));
        }
        Ok(Self { vocab, context_length, weights, bias })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// The last `c` tokens of `history`, left-padded with BOS.
    fn window(&self, history: &[TokenId]) -> Vec<TokenId> {
        let c = self.context_length;
        let take = history.len().min(c);
        let mut w = vec![self.vocab.bos(); c - take];
        w.extend_from_slice(&history[history.len() - take..]);
        w
    }

    fn logits_for_window(&self, window: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.size();
        let mut z = self.bias.to_vec();
        for (slot, &tok) in window.iter().enumerate() {
            let col = self.weights.column(slot * v + tok as usize);
            z.iter_mut().zip(col.iter()).for_each(|(zi, w)| *zi += w);
        }
        z
    }

    /// Logits `z_t` for the token following `context`.
    pub fn logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(GemError::InvalidSequence("context is empty".into()));
        }
        for &t in context {
            self.vocab.check_token(t)?;
        }
        Ok(self.logits_for_window(&self.window(context)))
    }

    pub fn next_token_distribution(&self, context: &[TokenId]) -> Result<ProbabilityVector> {
        Ok(ProbabilityVector::softmax(&self.logits(context)?))
    }

    /// Visit every generation position of `response` after `prompt`, passing
    /// the position, the context window, the logits and the emitted token.
    pub(crate) fn for_each_position(
        &self,
        prompt: &TokenSequence,
        response: &TokenSequence,
        mut visit: impl FnMut(usize, &[TokenId], &[f64], TokenId),
    ) -> Result<()> {
        if response.is_empty() {
            return Err(GemError::InvalidSequence("response is empty".into()));
        }
        if response.tokens().last() != Some(&self.vocab.eos()) {
            return Err(GemError::InvalidSequence("response does not end with EOS".into()));
        }
        let mut history = Vec::with_capacity(prompt.len() + response.len());
        for &t in prompt.tokens().iter().chain(response.tokens()) {
            self.vocab.check_token(t)?;
        }
        history.extend_from_slice(prompt.tokens());
        for (t, &target) in response.tokens().iter().enumerate() {
            let window = self.window(&history);
            let z = self.logits_for_window(&window);
            visit(t, &window, &z, target);
            history.push(target);
        }
        Ok(())
    }

    /// `Σ_t ln P_t(w_t)` over the response positions.
    pub fn sequence_logprob(&self, prompt: &TokenSequence, response: &TokenSequence) -> Result<f64> {
        let mut total = 0.0;
        self.for_each_position(prompt, response, |_, _, z, target| {
            total += z[target as usize] - log_sum_exp(z);
        })?;
        Ok(total)
    }

    /// Exact gradient of [`sequence_logprob`](Self::sequence_logprob).
    pub fn logprob_gradient(
        &self,
        prompt: &TokenSequence,
        response: &TokenSequence,
    ) -> Result<Gradient> {
        let mut grad = Gradient::zeros_like(self);
        self.accumulate_logprob_gradient(prompt, response, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Add `scale · ∇ log π(response | prompt)` into `grad` and return the
    /// log-probability. Only the `c` columns selected by each context window
    /// are touched.
    pub fn accumulate_logprob_gradient(
        &self,
        prompt: &TokenSequence,
        response: &TokenSequence,
        scale: f64,
        grad: &mut Gradient,
    ) -> Result<f64> {
        let v = self.vocab.size();
        let mut total = 0.0;
        let mut delta = vec![0.0; v];
        self.for_each_position(prompt, response, |_, window, z, target| {
            let p = ProbabilityVector::softmax(z);
            total += p.as_slice()[target as usize].ln();
            for (d, &pi) in delta.iter_mut().zip(p.as_slice()) {
                *d = -pi * scale;
            }
            delta[target as usize] += scale;
            for (slot, &tok) in window.iter().enumerate() {
                let mut col = grad.weights.column_mut(slot * v + tok as usize);
                col.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
            }
            grad.bias.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
        })?;
        Ok(total)
    }

    /// `θ − lr · grad`, leaving `self` untouched.
    pub fn descend(&self, grad: &Gradient, learning_rate: f64) -> Self {
        let mut next = self.clone();
        next.descend_in_place(grad, learning_rate);
        next
    }

    pub fn descend_in_place(&mut self, grad: &Gradient, learning_rate: f64) {
        Zip::from(&mut self.weights)
            .and(&grad.weights)
            .for_each(|w, g| *w -= learning_rate * g);
        Zip::from(&mut self.bias)
            .and(&grad.bias)
            .for_each(|b, g| *b -= learning_rate * g);
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl Gradient {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            weights: Array2::zeros(params.weights.dim()),
            bias: Array1::zeros(params.bias.len()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|&x| x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, other: &Gradient, alpha: f64) {
        self.weights.scaled_add(alpha, &other.weights);
        self.bias.scaled_add(alpha, &other.bias);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.weights.mapv_inplace(|x| x * alpha);
        self.bias.mapv_inplace(|x| x * alpha);
    }

    /// Rescale so the L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }
}

/// Cosine similarity of two gradients; `None` if either is zero.
pub fn cosine(a: &Gradient, b: &Gradient) -> Option<f64> {
    let (na, nb) = (a.norm(), b.norm());
    (na > 0.0 && nb > 0.0).then(|| a.dot(b) / (na * nb))
}
