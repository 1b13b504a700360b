//! The three scoring modules and the model wrapper shared by training,
//! evaluation and retrieval.

pub mod attribute;
pub mod comparative;
pub mod composite;

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use ndarray::{concatenate, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attribute::{AttentionTrace, AttributeModule};
pub use comparative::{ComparativeModule, Differential};
pub use composite::{Composer, ComposerKind, CompositeModule};

use crate::data::{PreparedSession, Prepared, SessionBatch};
use crate::encoders::{recalibrate_stats, transform_image, AugmentParams, BufferUpdates, ImageEncoder, ImageEncoderConfig, Mode, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{Graph, Mat, ParamSet, Var};

/// Sessions scored per graph when filling a score matrix.
const SCORE_CHUNK: usize = 32;
/// Images per eval-mode encoder pass.
const EMBED_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleId {
    Composite,
    Comparative,
    Attribute,
}

impl ModuleId {
    pub const ALL: [ModuleId; 3] = [ModuleId::Composite, ModuleId::Comparative, ModuleId::Attribute];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleId::Composite => "composite",
            ModuleId::Comparative => "comparative",
            ModuleId::Attribute => "attribute",
        }
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModuleId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown module {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Image embedding width d_p.
    pub image_dim: usize,
    /// Word vector width d_t.
    pub text_dim: usize,
    /// Recurrent hidden width; 0 means `image_dim`.
    pub hidden_dim: usize,
    /// Per-direction hidden width of the feedback history encoder; 0 means `text_dim`.
    pub attribute_hidden: usize,
    pub composer: ComposerKind,
    pub image_encoder: ImageEncoderConfig,
    pub text_encoder: TextEncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_dim: 512,
            text_dim: 300,
            hidden_dim: 0,
            attribute_hidden: 0,
            composer: ComposerKind::default(),
            image_encoder: ImageEncoderConfig::default(),
            text_encoder: TextEncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small dims for tests: a very narrow encoder on 16×16 inputs.
    pub fn tiny(image_dim: usize, text_dim: usize) -> Self {
        Self {
            image_dim,
            text_dim,
            image_encoder: ImageEncoderConfig {
                depth: 18,
                base_width: 2,
                input_size: 16,
                output_dim: image_dim,
            },
            text_encoder: TextEncoderConfig { blocks: 1, ff_hidden: 0 },
            ..Self::default()
        }
    }

    pub fn hidden(&self) -> usize {
        if self.hidden_dim == 0 {
            self.image_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn attribute_hidden(&self) -> usize {
        if self.attribute_hidden == 0 {
            self.text_dim
        } else {
            self.attribute_hidden
        }
    }

    /// The encoder config with its output width tied to `image_dim`.
    pub fn image_encoder_config(&self) -> ImageEncoderConfig {
        ImageEncoderConfig {
            output_dim: self.image_dim,
            ..self.image_encoder.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_dim == 0 || self.text_dim == 0 {
            return Err(Error::Parameter("image_dim and text_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Image embeddings inside a graph, addressed by global image index.
#[derive(Clone, Debug)]
pub struct ImageRows {
    pub var: Var,
    pub row_of: Rc<HashMap<usize, usize>>,
}

impl ImageRows {
    pub fn gather(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let idx = ids
            .iter()
            .map(|i| {
                self.row_of
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::NotFound(format!("embedding for image #{i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(g.gather_rows(self.var, Rc::new(idx)))
    }
}

/// Precomputed eval-mode image embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTable {
    pub ids: Vec<usize>,
    pub values: Mat,
}

impl ImageTable {
    pub fn new(ids: Vec<usize>, values: Mat) -> Result<Self> {
        if ids.len() != values.nrows() {
            return Err(Error::Dimension(format!("{} ids for {} embedding rows", ids.len(), values.nrows())));
        }
        Ok(Self { ids, values })
    }

    pub fn rows(&self, g: &mut Graph) -> ImageRows {
        ImageRows {
            var: g.constant(self.values.clone()),
            row_of: Rc::new(self.ids.iter().enumerate().map(|(r, &i)| (i, r)).collect()),
        }
    }
}

/// What a module needs to score every session of a batch against every candidate.
pub struct ScoreInputs<'a> {
    pub batch: &'a SessionBatch,
    /// Global image indices of the candidates (score columns).
    pub candidates: &'a [usize],
    pub images: Option<ImageRows>,
    /// `5 × d_t` attribute matrix per global image index.
    pub attributes: &'a [Mat],
}

#[derive(Clone, Debug)]
pub enum Module {
    Composite(CompositeModule),
    Comparative(ComparativeModule),
    Attribute(AttributeModule),
}

/// One scoring module with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub id: ModuleId,
    pub config: ModelConfig,
    pub params: ParamSet,
    pub module: Module,
}

impl Model {
    pub fn new(id: ModuleId, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let module = match id {
            ModuleId::Composite => Module::Composite(CompositeModule::new(&mut params, &mut rng, config)?),
            ModuleId::Comparative => Module::Comparative(ComparativeModule::new(&mut params, &mut rng, config)?),
            ModuleId::Attribute => Module::Attribute(AttributeModule::new(&mut params, &mut rng, config)?),
        };
        Ok(Self {
            id,
            config: config.clone(),
            params,
            module,
        })
    }

    pub fn image_encoder(&self) -> Option<&ImageEncoder> {
        match &self.module {
            Module::Composite(m) => Some(&m.image),
            Module::Comparative(m) => Some(&m.image),
            Module::Attribute(_) => None,
        }
    }

    pub fn needs_images(&self) -> bool {
        self.image_encoder().is_some()
    }

    /// Encodes the distinct images among `ids` inside `g`. Training mode may
    /// augment each image and records batch-norm buffer updates.
    pub fn image_rows(
        &self,
        g: &mut Graph,
        prepared: &Prepared,
        ids: &[usize],
        mode: Mode,
        augment: Option<(&AugmentParams, &mut ChaCha8Rng)>,
        updates: &mut BufferUpdates,
    ) -> Result<Option<ImageRows>> {
        let Some(encoder) = self.image_encoder() else {
            return Ok(None);
        };
        let mut distinct: Vec<usize> = ids.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let input = stack_inputs(encoder, prepared, &distinct, augment)?;
        let input = g.constant(input);
        let var = encoder.forward(g, &self.params, input, distinct.len(), mode, updates)?;
        Ok(Some(ImageRows {
            var,
            row_of: Rc::new(distinct.iter().enumerate().map(|(r, &i)| (i, r)).collect()),
        }))
    }

    /// Eval-mode embeddings of `ids` (rows in the given order), or `None`
    /// for modules without an image encoder.
    pub fn embed_images(&self, prepared: &Prepared, ids: &[usize]) -> Result<Option<ImageTable>> {
        let Some(encoder) = self.image_encoder() else {
            return Ok(None);
        };
        let mut parts = Vec::new();
        for chunk in ids.chunks(EMBED_CHUNK) {
            let mut g = Graph::new();
            let input = g.constant(stack_inputs(encoder, prepared, chunk, None)?);
            let out = encoder.forward(&mut g, &self.params, input, chunk.len(), Mode::Eval, &mut Vec::new())?;
            parts.push(g.value(out).clone());
        }
        let values = if parts.is_empty() {
            Mat::zeros((0, self.config.image_dim))
        } else {
            let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
            concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))?
        };
        ImageTable::new(ids.to_vec(), values).map(Some)
    }

    /// Re-estimates batch-norm running statistics from training-mode passes
    /// over `ids`, averaged across chunks. No-op for modules without images.
    pub fn recalibrate_norm(&mut self, prepared: &Prepared, ids: &[usize]) -> Result<()> {
        let Some(encoder) = self.image_encoder() else {
            return Ok(());
        };
        let mut batches = Vec::new();
        for chunk in ids.chunks(EMBED_CHUNK * 2).filter(|c| c.len() > 1) {
            let mut g = Graph::new();
            let input = g.constant(stack_inputs(encoder, prepared, chunk, None)?);
            let mut up = Vec::new();
            encoder.forward(&mut g, &self.params, input, chunk.len(), Mode::Train, &mut up)?;
            batches.push(up);
        }
        if !batches.is_empty() {
            recalibrate_stats(&mut self.params, batches);
        }
        Ok(())
    }

    /// Scores every batch session against every candidate: sessions × candidates.
    pub fn score(&self, g: &mut Graph, inputs: &ScoreInputs) -> Result<Var> {
        if inputs.candidates.is_empty() {
            return Err(Error::Empty("candidate list".into()));
        }
        match &self.module {
            Module::Composite(m) => m.score(g, &self.params, inputs),
            Module::Comparative(m) => m.score(g, &self.params, inputs),
            Module::Attribute(m) => m.score(g, &self.params, inputs),
        }
    }

    /// Eval-mode score matrix. `images` must cover every turn image and
    /// candidate when the module uses images.
    pub fn score_matrix(
        &self,
        prepared: &Prepared,
        sessions: &[&PreparedSession],
        candidates: &[usize],
        images: Option<&ImageTable>,
    ) -> Result<Mat> {
        if self.needs_images() && images.is_none() {
            return Err(Error::Parameter(format!("{} scoring needs image embeddings", self.id)));
        }
        let mut out = Mat::zeros((sessions.len(), candidates.len()));
        for (c, chunk) in sessions.chunks(SCORE_CHUNK).enumerate() {
            let batch = SessionBatch::new(chunk)?;
            let mut g = Graph::new();
            let rows = images.map(|t| t.rows(&mut g));
            let inputs = ScoreInputs {
                batch: &batch,
                candidates,
                images: rows,
                attributes: &prepared.attributes,
            };
            let s = self.score(&mut g, &inputs)?;
            let start = c * SCORE_CHUNK;
            out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(g.value(s));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("{} produced non-finite scores", self.id)));
        }
        Ok(out)
    }
}

fn stack_inputs(
    encoder: &ImageEncoder,
    prepared: &Prepared,
    ids: &[usize],
    mut augment: Option<(&AugmentParams, &mut ChaCha8Rng)>,
) -> Result<Mat> {
    let mut mats = Vec::with_capacity(ids.len());
    for &i in ids {
        let px = prepared
            .pixels
            .get(i)
            .ok_or_else(|| Error::NotFound(format!("image #{i}")))?;
        let m = match augment.as_mut() {
            Some((params, rng)) => encoder.prepare(&transform_image(px, params, *rng)),
            None => encoder.prepare(px),
        };
        mats.push(m);
    }
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))
}

/// Cosine similarity of each row of `a` with each row of `b`; zero rows score 0.
pub fn cosine_matrix(g: &mut Graph, a: Var, b: Var) -> Var {
    let a = g.l2_normalize_rows(a);
    let b = g.l2_normalize_rows(b);
    g.matmul_t(a, b)
}

/// Cosine similarity of two vectors; a zero vector scores 0.
pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine of a zero vector; scoring 0");
        return 0.0;
    }
    u.dot(&v) / (nu * nv)
}

/// Uniform random matrix in `[-1, 1)`, used by tests across the scoring modules.
#[cfg(test)]
pub(crate) fn rand_mat(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}
