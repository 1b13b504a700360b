use std::rc::Rc;

use rand::Rng;

use super::{ModelConfig, ScoreInputs};
use crate::encoders::{ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::{xavier, Graph, Gru, Linear, ParamId, ParamSet, Sequences, Var};

/// Initial bias of the scalar head; keeps early scores above the rectifier's kink.
const HEAD_BIAS_INIT: f64 = 0.5;
/// Shrinks the head's initial weights so every pair starts on the live side
/// of the rectifier. Without it batch-hard training collapses to all zeros.
const HEAD_WEIGHT_SCALE: f64 = 0.1;

/// Differential representation between a candidate and each reference
/// image, matched against the turn's text, aggregated by a GRU into a
/// rectified scalar score.
#[derive(Clone, Debug)]
pub struct ComparativeModule {
    pub image: ImageEncoder,
    pub text: TextEncoder,
    /// Shared first layer: `tanh([u ; v]·W + b)` with `W = [prod ; single]`.
    pub fc1_prod: Linear,
    pub fc1_single: ParamId,
    /// Fusion layer over `[cand ; ref ; diff]`, split by input block.
    pub fc2_cand: Linear,
    pub fc2_ref: ParamId,
    pub fc2_diff: ParamId,
    pub gru: Gru,
    pub head: Linear,
    image_dim: usize,
    text_dim: usize,
}

/// Intermediate vectors of the differential representation.
#[derive(Clone, Copy, Debug)]
pub struct Differential {
    pub diff: Var,
    pub fused: Var,
}

impl ComparativeModule {
    pub fn new(p: &mut ParamSet, rng: &mut impl Rng, config: &ModelConfig) -> Result<Self> {
        let dp = config.image_dim;
        let dt = config.text_dim;
        let head = Linear::new(p, rng, "comparative.head", config.hidden(), 1);
        p.get_mut(head.bias).fill(HEAD_BIAS_INIT);
        p.get_mut(head.weight).mapv_inplace(|w| w * HEAD_WEIGHT_SCALE);
        Ok(Self {
            image: ImageEncoder::new(p, rng, "comparative.image", &config.image_encoder_config())?,
            text: TextEncoder::new(p, rng, "comparative.text", dt, &config.text_encoder)?,
            fc1_prod: Linear::new(p, rng, "comparative.fc1.prod", dp, dt),
            fc1_single: p.add("comparative.fc1.single.weight", xavier(rng, dp, dt)),
            fc2_cand: Linear::new(p, rng, "comparative.fc2.cand", dp, dt),
            fc2_ref: p.add("comparative.fc2.ref.weight", xavier(rng, dp, dt)),
            fc2_diff: p.add("comparative.fc2.diff.weight", xavier(rng, dt, dt)),
            gru: Gru::new(p, rng, "comparative.gru", dt, config.hidden()),
            head,
            image_dim: dp,
            text_dim: dt,
        })
    }

    /// Row-wise differential representation of candidates against references.
    pub fn differential(&self, g: &mut Graph, p: &ParamSet, reference: Var, cand: Var) -> Result<Differential> {
        let (nr, dr) = g.shape(reference);
        let (nc, dc) = g.shape(cand);
        if nr != nc || dr != self.image_dim || dc != self.image_dim {
            return Err(Error::Dimension(format!(
                "differential expects two n×{} inputs, got {nr}×{dr} and {nc}×{dc}",
                self.image_dim
            )));
        }
        let prod = g.mul(cand, reference);
        let base = self.fc1_prod.forward(g, p, prod);
        let w1 = g.param(p, self.fc1_single);
        let c1 = g.matmul(cand, w1);
        let r1 = g.matmul(reference, w1);
        let diff = self.first_layer_difference(g, base, c1, r1);
        let w2r = g.param(p, self.fc2_ref);
        let c2 = self.fc2_cand.forward(g, p, cand);
        let r2 = g.matmul(reference, w2r);
        let fused = self.fuse(g, p, c2, r2, diff);
        Ok(Differential { diff, fused })
    }

    fn first_layer_difference(&self, g: &mut Graph, base: Var, cand_part: Var, ref_part: Var) -> Var {
        let a = g.add(base, cand_part);
        let a = g.tanh(a);
        let b = g.add(base, ref_part);
        let b = g.tanh(b);
        g.sub(a, b)
    }

    fn fuse(&self, g: &mut Graph, p: &ParamSet, cand_part: Var, ref_part: Var, diff: Var) -> Var {
        let w = g.param(p, self.fc2_diff);
        let d = g.matmul(diff, w);
        let s = g.add(cand_part, ref_part);
        g.add(s, d)
    }

    /// Elementwise product of the fused representation with the turn's text vector.
    pub fn match_text(g: &mut Graph, fused: Var, text: Var) -> Result<Var> {
        if g.shape(fused) != g.shape(text) {
            return Err(Error::Dimension(format!(
                "match_text shapes differ: {:?} vs {:?}",
                g.shape(fused),
                g.shape(text)
            )));
        }
        Ok(g.mul(fused, text))
    }

    /// GRU over matched vectors, mean pool, scalar head, rectifier:
    /// one score per sequence (column vector).
    pub fn score_sequences(&self, g: &mut Graph, p: &ParamSet, matched: Var, seqs: &Sequences) -> Var {
        let states = self.gru.run(g, p, matched, seqs, false);
        let pooled = g.segment_mean(states, seqs.offsets());
        let s = self.head.forward(g, p, pooled);
        g.relu(s)
    }

    /// All-pairs scores (sessions × candidates).
    pub fn score(&self, g: &mut Graph, p: &ParamSet, inputs: &ScoreInputs) -> Result<Var> {
        let images = inputs
            .images
            .as_ref()
            .ok_or_else(|| Error::Parameter("comparative scoring needs image embeddings".into()))?;
        let b = inputs.batch;
        let n_sess = b.sessions();
        let n_cand = inputs.candidates.len();
        let tokens = g.constant(b.tokens.clone());
        let text = self.text.forward(g, p, tokens, &b.token_lengths)?;
        let refs = images.gather(g, &b.turn_images)?;
        let cands = images.gather(g, inputs.candidates)?;

        // rows ordered (session, candidate, turn)
        let offsets = b.turns.offsets();
        let mut cand_idx = Vec::new();
        let mut turn_idx = Vec::new();
        let mut lengths = Vec::with_capacity(n_sess * n_cand);
        for s in 0..n_sess {
            let turns = offsets[s]..offsets[s + 1];
            for c in 0..n_cand {
                for t in turns.clone() {
                    cand_idx.push(c);
                    turn_idx.push(t);
                }
                lengths.push(turns.len());
            }
        }
        let (cand_idx, turn_idx) = (Rc::new(cand_idx), Rc::new(turn_idx));

        let w1 = g.param(p, self.fc1_single);
        let c1 = g.matmul(cands, w1);
        let r1 = g.matmul(refs, w1);
        let w2r = g.param(p, self.fc2_ref);
        let c2 = self.fc2_cand.forward(g, p, cands);
        let r2 = g.matmul(refs, w2r);

        let cand_rows = g.gather_rows(cands, Rc::clone(&cand_idx));
        let ref_rows = g.gather_rows(refs, Rc::clone(&turn_idx));
        let prod = g.mul(cand_rows, ref_rows);
        let base = self.fc1_prod.forward(g, p, prod);
        let c1 = g.gather_rows(c1, Rc::clone(&cand_idx));
        let r1 = g.gather_rows(r1, Rc::clone(&turn_idx));
        let diff = self.first_layer_difference(g, base, c1, r1);
        let c2 = g.gather_rows(c2, Rc::clone(&cand_idx));
        let r2 = g.gather_rows(r2, Rc::clone(&turn_idx));
        let fused = self.fuse(g, p, c2, r2, diff);
        let text_rows = g.gather_rows(text, turn_idx);
        let matched = g.mul(fused, text_rows);
        let seqs = Sequences::contiguous(&lengths);
        let scores = self.score_sequences(g, p, matched, &seqs);
        Ok(g.reshape(scores, n_sess, n_cand))
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }
}
