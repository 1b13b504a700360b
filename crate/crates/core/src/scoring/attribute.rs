use std::rc::Rc;

use rand::Rng;

use super::{ModelConfig, ScoreInputs};
use crate::error::{Error, Result};
use crate::nn::{xavier, BiGru, Graph, Linear, Mat, ParamId, ParamSet, Sequences, Var};

/// Attribute slots per image.
pub const SLOTS: usize = 5;

/// Bidirectional feedback history, two-stage attention between candidate
/// attributes and turns, and a weighted sum of per-attribute cosines.
#[derive(Clone, Debug)]
pub struct AttributeModule {
    pub history: BiGru,
    /// Turn attention logit: `tanh(a·alpha_attr + h·alpha_hist.w + b)`.
    pub alpha_attr: ParamId,
    pub alpha_hist: Linear,
    /// History space → attribute space, before the cosine.
    pub project: Linear,
    /// Attribute attention logit: `tanh(h̄·beta_hist.w + b + a·beta_attr)`.
    pub beta_hist: Linear,
    pub beta_attr: ParamId,
    text_dim: usize,
}

/// Per-turn history states and their per-session mean.
#[derive(Clone, Copy, Debug)]
pub struct History {
    pub states: Var,
    pub pooled: Var,
}

/// Graph values of both attention stages. Rows of `alpha` are ordered
/// (session, candidate, slot, turn); `beta` and `sims` by (session, candidate, slot).
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub alpha: Var,
    pub attended: Var,
    pub sims: Var,
    pub beta: Var,
    /// One score per (session, candidate).
    pub scores: Var,
}

/// Attention weights and score of one session against one candidate.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    /// `5 × n`: slot → turn.
    pub alpha: Mat,
    pub beta: Vec<f64>,
    pub sims: Vec<f64>,
    pub score: f64,
}

impl AttributeModule {
    pub fn new(p: &mut ParamSet, rng: &mut impl Rng, config: &ModelConfig) -> Result<Self> {
        let dt = config.text_dim;
        let history = BiGru::new(p, rng, "attribute.history", dt, config.attribute_hidden());
        let da = history.output_dim();
        Ok(Self {
            history,
            alpha_attr: p.add("attribute.alpha.attr", xavier(rng, dt, 1)),
            alpha_hist: Linear::new(p, rng, "attribute.alpha.hist", da, 1),
            project: Linear::new(p, rng, "attribute.project", da, dt),
            beta_hist: Linear::new(p, rng, "attribute.beta.hist", da, 1),
            beta_attr: p.add("attribute.beta.attr", xavier(rng, dt, 1)),
            text_dim: dt,
        })
    }

    pub fn history_dim(&self) -> usize {
        self.history.output_dim()
    }

    /// Runs the bidirectional recurrence over per-turn vectors (`T × d_t`).
    pub fn encode_history(&self, g: &mut Graph, p: &ParamSet, turn_vectors: Var, turns: &Sequences) -> Result<History> {
        let (rows, cols) = g.shape(turn_vectors);
        if turns.count() == 0 || rows != turns.total() || cols != self.text_dim {
            return Err(Error::Dimension(format!(
                "history expects {}×{} turn vectors, got {rows}×{cols}",
                turns.total(),
                self.text_dim
            )));
        }
        let states = self.history.run(g, p, turn_vectors, turns);
        let pooled = g.segment_mean(states, turns.offsets());
        Ok(History { states, pooled })
    }

    /// Both attention stages for every session against every candidate.
    /// `attrs` stacks five slot rows per candidate (`C·5 × d_t`).
    pub fn mutual_attention(&self, g: &mut Graph, p: &ParamSet, history: History, turns: &Sequences, attrs: Var) -> Result<Attention> {
        let (ar, ac) = g.shape(attrs);
        if ar % SLOTS != 0 || ar == 0 || ac != self.text_dim {
            return Err(Error::Dimension(format!(
                "attributes must be (C·{SLOTS})×{}, got {ar}×{ac}",
                self.text_dim
            )));
        }
        let n_cand = ar / SLOTS;
        let n_sess = turns.count();
        let offsets = turns.offsets();

        let mut slot_of_pair = Vec::with_capacity(n_sess * n_cand * SLOTS);
        let mut sess_of_pair = Vec::with_capacity(n_sess * n_cand * SLOTS);
        let mut alpha_slot = Vec::new();
        let mut alpha_turn = Vec::new();
        let mut alpha_offsets = vec![0];
        for s in 0..n_sess {
            for c in 0..n_cand {
                for m in 0..SLOTS {
                    slot_of_pair.push(c * SLOTS + m);
                    sess_of_pair.push(s);
                    for t in offsets[s]..offsets[s + 1] {
                        alpha_slot.push(c * SLOTS + m);
                        alpha_turn.push(t);
                    }
                    alpha_offsets.push(alpha_slot.len());
                }
            }
        }
        let slot_of_pair = Rc::new(slot_of_pair);
        let alpha_turn = Rc::new(alpha_turn);

        // candidate → feedback: attention over turns per slot
        let wa = g.param(p, self.alpha_attr);
        let la = g.matmul(attrs, wa);
        let la = g.gather_rows(la, Rc::new(alpha_slot));
        let lh = self.alpha_hist.forward(g, p, history.states);
        let lh = g.gather_rows(lh, Rc::clone(&alpha_turn));
        let logits = g.add(la, lh);
        let logits = g.tanh(logits);
        let alpha = g.segment_softmax(logits, Rc::new(alpha_offsets.clone()));
        let h = g.gather_rows(history.states, alpha_turn);
        let weighted = g.mul_col(h, alpha);
        let attended = g.segment_sum(weighted, Rc::new(alpha_offsets));

        let projected = self.project.forward(g, p, attended);
        let slot_rows = g.gather_rows(attrs, Rc::clone(&slot_of_pair));
        let sims = attribute_similarity(g, projected, slot_rows);

        // feedback → candidate: attention over the five slots
        let lb = self.beta_hist.forward(g, p, history.pooled);
        let lb = g.gather_rows(lb, Rc::new(sess_of_pair));
        let wb = g.param(p, self.beta_attr);
        let lba = g.matmul(attrs, wb);
        let lba = g.gather_rows(lba, slot_of_pair);
        let logits = g.add(lb, lba);
        let logits = g.tanh(logits);
        let pair_offsets = Rc::new((0..=n_sess * n_cand).map(|i| i * SLOTS).collect::<Vec<_>>());
        let beta = g.segment_softmax(logits, Rc::clone(&pair_offsets));
        let weighted = g.mul(beta, sims);
        let scores = g.segment_sum(weighted, pair_offsets);
        Ok(Attention {
            alpha,
            attended,
            sims,
            beta,
            scores,
        })
    }

    pub fn score(&self, g: &mut Graph, p: &ParamSet, inputs: &ScoreInputs) -> Result<Var> {
        let b = inputs.batch;
        let attrs = stack_attributes(inputs.attributes, inputs.candidates)?;
        let attrs = g.constant(attrs);
        let turn_vectors = g.constant(b.turn_means.clone());
        let history = self.encode_history(g, p, turn_vectors, &b.turns)?;
        let att = self.mutual_attention(g, p, history, &b.turns, attrs)?;
        Ok(g.reshape(att.scores, b.sessions(), inputs.candidates.len()))
    }

    /// Attention weights and score for one session (`n × d_t` turn
    /// vectors) against one candidate's `5 × d_t` attributes.
    pub fn explain(&self, p: &ParamSet, turn_vectors: &Mat, attributes: &Mat) -> Result<AttentionTrace> {
        let n = turn_vectors.nrows();
        let turns = Sequences::contiguous(&[n]);
        let mut g = Graph::new();
        let x = g.constant(turn_vectors.clone());
        let a = g.constant(attributes.clone());
        let history = self.encode_history(&mut g, p, x, &turns)?;
        let att = self.mutual_attention(&mut g, p, history, &turns, a)?;
        let alpha = g.value(att.alpha).clone().into_shape_with_order((SLOTS, n)).expect("alpha is 5·n");
        Ok(AttentionTrace {
            alpha,
            beta: g.value(att.beta).iter().copied().collect(),
            sims: g.value(att.sims).iter().copied().collect(),
            score: g.value(att.scores)[[0, 0]],
        })
    }
}

/// Row-wise cosine of `x` with `a`; rows where either side is zero give 0.
pub fn attribute_similarity(g: &mut Graph, x: Var, a: Var) -> Var {
    let x = g.l2_normalize_rows(x);
    let a = g.l2_normalize_rows(a);
    let prod = g.mul(x, a);
    g.row_sum(prod)
}

fn stack_attributes(all: &[Mat], candidates: &[usize]) -> Result<Mat> {
    let views = candidates
        .iter()
        .map(|&c| {
            all.get(c)
                .map(|m| m.view())
                .ok_or_else(|| Error::NotFound(format!("attributes of image #{c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))
}
