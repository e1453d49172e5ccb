#![allow(dead_code)]

use gem_core::seed::rng_from_seed;
use gem_core::{
    score_response, CandidateGroup, Gradient, PolicyParams, ScoringConfig, TokenSequence, Vocabulary,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub params: PolicyParams,
    pub prompt: TokenSequence,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_from_seed(seed)
}

/// Random vocabulary (BOS and EOS are the last two ids), context length and
/// parameters, plus a random prompt.
pub fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let v = rng.gen_range(5..=12usize);
    let vocab = Vocabulary::new(v, v as u32 - 2, v as u32 - 1).unwrap();
    let c = rng.gen_range(1..=4);
    let params = PolicyParams::init(vocab, c, rng.gen_range(0.1..2.0), rng.gen()).unwrap();
    let prompt = random_prompt(rng, &vocab);
    Instance { params, prompt }
}

pub fn random_prompt(rng: &mut ChaCha8Rng, vocab: &Vocabulary) -> TokenSequence {
    let n = rng.gen_range(1..=4);
    let mut t = vec![vocab.bos()];
    t.extend((0..n).map(|_| rng.gen_range(0..vocab.size() as u32 - 2)));
    TokenSequence::prompt(t, vocab).unwrap()
}

pub fn random_response(rng: &mut ChaCha8Rng, vocab: &Vocabulary) -> TokenSequence {
    let n = rng.gen_range(0..=5);
    let mut t: Vec<u32> = (0..n).map(|_| rng.gen_range(0..vocab.size() as u32 - 2)).collect();
    t.push(vocab.eos());
    TokenSequence::response(t, vocab).unwrap()
}

pub fn group(
    params: &PolicyParams,
    prompt: &TokenSequence,
    responses: Vec<TokenSequence>,
) -> CandidateGroup {
    let k = responses.len();
    let candidates = responses
        .into_iter()
        .enumerate()
        .map(|(i, r)| score_response(params, prompt, r, &ScoringConfig::default(), i).unwrap())
        .collect();
    CandidateGroup { query: prompt.clone(), candidates, group_size: k }
}

/// Central finite-difference gradient of `f` over every weight and bias.
pub fn numeric_gradient(params: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> f64) -> Gradient {
    let mut p = params.clone();
    let mut g = Gradient::zeros_like(params);
    let (rows, cols) = params.weights().dim();
    for i in 0..rows {
        for j in 0..cols {
            let x = p.weights()[[i, j]];
            p.weights_mut()[[i, j]] = x + h;
            let up = f(&p);
            p.weights_mut()[[i, j]] = x - h;
            let down = f(&p);
            p.weights_mut()[[i, j]] = x;
            g.weights[[i, j]] = (up - down) / (2.0 * h);
        }
    }
    for i in 0..rows {
        let x = p.bias()[i];
        p.bias_mut()[i] = x + h;
        let up = f(&p);
        p.bias_mut()[i] = x - h;
        let down = f(&p);
        p.bias_mut()[i] = x;
        g.bias[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both vanish.
pub fn relative_error(a: &Gradient, b: &Gradient) -> f64 {
    let mut diff = a.clone();
    diff.add_scaled(b, -1.0);
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        diff.norm()
    } else {
        diff.norm() / scale
    }
}
