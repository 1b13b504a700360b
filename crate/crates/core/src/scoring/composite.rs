use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cosine_matrix, ImageRows, ModelConfig, ScoreInputs};
use crate::encoders::{ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::{Graph, Gru, Linear, ParamSet, Sequences, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComposerKind {
    #[default]
    GatedResidual,
    ConcatMlp,
}

/// Fuses one image vector with one text vector into the image space.
#[derive(Clone, Debug)]
pub struct Composer {
    pub kind: ComposerKind,
    image_dim: usize,
    text_dim: usize,
    /// Text → image-space projection (gated-residual only).
    pub text_proj: Option<Linear>,
    pub gate: Option<Linear>,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl Composer {
    pub fn new(p: &mut ParamSet, rng: &mut impl Rng, name: &str, kind: ComposerKind, image_dim: usize, text_dim: usize) -> Self {
        let (text_proj, gate, joint) = match kind {
            ComposerKind::GatedResidual => (
                Some(Linear::new(p, rng, &format!("{name}.text_proj"), text_dim, image_dim)),
                Some(Linear::new(p, rng, &format!("{name}.gate"), 2 * image_dim, image_dim)),
                2 * image_dim,
            ),
            ComposerKind::ConcatMlp => (None, None, image_dim + text_dim),
        };
        Self {
            kind,
            image_dim,
            text_dim,
            text_proj,
            gate,
            mlp_in: Linear::new(p, rng, &format!("{name}.mlp_in"), joint, image_dim),
            mlp_out: Linear::new(p, rng, &format!("{name}.mlp_out"), image_dim, image_dim),
        }
    }

    /// Row-wise composition of `x_p` (n × d_p) with `x_t` (n × d_t).
    pub fn forward(&self, g: &mut Graph, p: &ParamSet, x_p: Var, x_t: Var) -> Result<Var> {
        let (np, dp) = g.shape(x_p);
        let (nt, dt) = g.shape(x_t);
        if dp != self.image_dim || dt != self.text_dim || np != nt {
            return Err(Error::Dimension(format!(
                "compose expects n×{} and n×{}, got {np}×{dp} and {nt}×{dt}",
                self.image_dim, self.text_dim
            )));
        }
        let joint = match &self.text_proj {
            Some(proj) => {
                let t = proj.forward(g, p, x_t);
                g.concat_cols(&[x_p, t])
            }
            None => g.concat_cols(&[x_p, x_t]),
        };
        let h = self.mlp_in.forward(g, p, joint);
        let h = g.relu(h);
        let f = self.mlp_out.forward(g, p, h);
        Ok(match &self.gate {
            Some(gate) => {
                let z = gate.forward(g, p, joint);
                let z = g.sigmoid(z);
                let keep = g.mul(z, x_p);
                let rest = g.affine(z, -1.0, 1.0);
                let mixed = g.mul(rest, f);
                g.add(keep, mixed)
            }
            None => f,
        })
    }
}

/// Composes each turn, runs a GRU over the turns, mean-pools the states and
/// projects back to the image space; scores candidates by cosine.
#[derive(Clone, Debug)]
pub struct CompositeModule {
    pub image: ImageEncoder,
    pub text: TextEncoder,
    pub composer: Composer,
    pub gru: Gru,
    pub project: Linear,
}

impl CompositeModule {
    pub fn new(p: &mut ParamSet, rng: &mut impl Rng, config: &ModelConfig) -> Result<Self> {
        let dp = config.image_dim;
        let dh = config.hidden();
        Ok(Self {
            image: ImageEncoder::new(p, rng, "composite.image", &config.image_encoder_config())?,
            text: TextEncoder::new(p, rng, "composite.text", config.text_dim, &config.text_encoder)?,
            composer: Composer::new(p, rng, "composite.composer", config.composer, dp, config.text_dim),
            gru: Gru::new(p, rng, "composite.gru", dp, dh),
            project: Linear::new(p, rng, "composite.project", dh, dp),
        })
    }

    /// Recurrent pass over composed turns, mean pooling, projection:
    /// one reference vector per sequence.
    pub fn aggregate(&self, g: &mut Graph, p: &ParamSet, composed: Var, turns: &Sequences) -> Var {
        let states = self.gru.run(g, p, composed, turns, false);
        let pooled = g.segment_mean(states, turns.offsets());
        self.project.forward(g, p, pooled)
    }

    /// Reference vectors (sessions × d_p) for a batch.
    pub fn reference(&self, g: &mut Graph, p: &ParamSet, inputs: &ScoreInputs, images: &ImageRows) -> Result<Var> {
        let b = inputs.batch;
        let x_p = images.gather(g, &b.turn_images)?;
        let tokens = g.constant(b.tokens.clone());
        let x_t = self.text.forward(g, p, tokens, &b.token_lengths)?;
        let composed = self.composer.forward(g, p, x_p, x_t)?;
        Ok(self.aggregate(g, p, composed, &b.turns))
    }

    pub fn score(&self, g: &mut Graph, p: &ParamSet, inputs: &ScoreInputs) -> Result<Var> {
        let images = inputs.images.as_ref().ok_or_else(|| Error::Parameter("composite scoring needs image embeddings".into()))?;
        let reference = self.reference(g, p, inputs, images)?;
        let cands = images.gather(g, inputs.candidates)?;
        Ok(cosine_matrix(g, reference, cands))
    }
}
