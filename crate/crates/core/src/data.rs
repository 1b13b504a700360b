//! Corpus tensors ready for scoring: image inputs, attribute matrices,
//! embedded feedback, plus split assignment and batching.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_attributes, load_embedding_table, load_sessions, AttributeCatalog, Category, CorpusPaths, ImageStore, Pixels,
    Session, SessionRules,
};
use crate::error::{Error, Result};
use crate::nn::{Mat, Sequences};
use crate::text::{attribute_matrix, embed_sequence, load_misspellings, TextPipeline};

/// A session with images resolved to indices and feedback embedded.
#[derive(Clone, Debug)]
pub struct PreparedSession {
    pub id: String,
    pub category: Category,
    pub turn_images: Vec<usize>,
    /// `l × d_t` word vectors per turn.
    pub turn_tokens: Vec<Mat>,
    pub target: Option<usize>,
}

impl PreparedSession {
    pub fn turns(&self) -> usize {
        self.turn_images.len()
    }

    pub fn target(&self) -> Result<usize> {
        self.target
            .ok_or_else(|| Error::InvalidSession {
                session_id: self.id.clone(),
                message: "session has no target".into(),
            })
    }
}

/// Everything the scoring modules read, indexed by position.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub image_ids: Vec<String>,
    pub categories: Vec<Category>,
    pub pixels: Vec<Pixels>,
    /// `5 × d_t` attribute vectors per image; empty slots are zero rows.
    pub attributes: Vec<Mat>,
    pub sessions: Vec<PreparedSession>,
    index: HashMap<String, usize>,
}

impl Prepared {
    pub fn new(store: &ImageStore, catalog: &AttributeCatalog, text: &TextPipeline, sessions: &[Session]) -> Result<Self> {
        let mut image_ids: Vec<String> = store.ids().cloned().collect();
        image_ids.sort();
        let index: HashMap<String, usize> = image_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut categories = Vec::with_capacity(image_ids.len());
        let mut pixels = Vec::with_capacity(image_ids.len());
        let mut attributes = Vec::with_capacity(image_ids.len());
        let mut missing = 0;
        for id in &image_ids {
            let rec = store.get(id)?;
            categories.push(rec.category);
            pixels.push(rec.pixels.clone());
            attributes.push(match catalog.get(id) {
                Ok(set) => attribute_matrix(set, &text.table),
                Err(_) => {
                    missing += 1;
                    Mat::zeros((5, text.dim()))
                }
            });
        }
        if missing > 0 {
            log::warn!("{missing} images have no attribute entry; using empty attribute sets");
        }
        let mut out = Self {
            image_ids,
            categories,
            pixels,
            attributes,
            sessions: Vec::new(),
            index,
        };
        out.sessions = sessions
            .iter()
            .map(|s| out.prepare_session(s, text, true))
            .collect::<Result<_>>()?;
        Ok(out)
    }

    pub fn image_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("image {id}")))
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    /// Candidate pool of a category: all its images, in id order.
    pub fn pool(&self, category: Category) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.categories[i] == category).collect()
    }

    /// Resolves and embeds a session; `with_target` false ignores the target.
    pub fn prepare_session(&self, s: &Session, text: &TextPipeline, with_target: bool) -> Result<PreparedSession> {
        let invalid = |message: String| Error::InvalidSession {
            session_id: s.session_id.clone(),
            message,
        };
        if s.turns.is_empty() {
            return Err(invalid("no turns".into()));
        }
        let mut turn_images = Vec::with_capacity(s.turns.len());
        let mut turn_tokens = Vec::with_capacity(s.turns.len());
        for (i, t) in s.turns.iter().enumerate() {
            turn_images.push(self.image_index(&t.image_id).map_err(|e| invalid(e.to_string()))?);
            let seq = text.prepare(&t.feedback);
            if seq.is_empty() {
                return Err(invalid(format!("turn {i} feedback has no tokens")));
            }
            turn_tokens.push(embed_sequence(&seq, &text.table));
        }
        let target = if with_target {
            Some(self.image_index(&s.target_image_id).map_err(|e| invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(PreparedSession {
            id: s.session_id.clone(),
            category: s.category,
            turn_images,
            turn_tokens,
            target,
        })
    }
}

/// Corpus directory contents loaded into memory.
pub struct LoadedCorpus {
    pub store: ImageStore,
    pub catalog: AttributeCatalog,
    pub text: TextPipeline,
    pub sessions: Vec<Session>,
}

impl LoadedCorpus {
    /// Reads a corpus directory; `sessions` overrides the default sessions file.
    pub fn load(root: &Path, sessions: Option<&Path>, text_dim: usize) -> Result<Self> {
        let paths = CorpusPaths::new(root);
        let store = ImageStore::load(&paths.manifest())?;
        let catalog = load_attributes(&paths.attributes())?;
        let table = load_embedding_table(&paths.embeddings(), text_dim)?;
        let corrections = if paths.misspellings().exists() {
            load_misspellings(&paths.misspellings())?
        } else {
            HashMap::new()
        };
        let text = TextPipeline::new(table, corrections);
        let sessions_path = sessions.map(Path::to_path_buf).unwrap_or_else(|| paths.sessions());
        let sessions = load_sessions(&sessions_path, &SessionRules::default(), Some(&store.manifest))?;
        Ok(Self {
            store,
            catalog,
            text,
            sessions,
        })
    }

    pub fn prepare(&self) -> Result<Prepared> {
        Prepared::new(&self.store, &self.catalog, &self.text, &self.sessions)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.55,
            val: 0.15,
            seed: 0,
        }
    }
}

/// Session indices per split, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Seeded shuffle cut into train / val / test; the test share is the remainder.
    pub fn new(n: usize, config: &SplitConfig) -> Result<Self> {
        if config.train <= 0.0 || config.val < 0.0 || config.train + config.val >= 1.0 {
            return Err(Error::Parameter(format!("invalid split fractions {config:?}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        let n_train = (n as f64 * config.train).round() as usize;
        let n_val = ((n as f64 * config.val).round() as usize).min(n - n_train);
        let take = |range: std::ops::Range<usize>| {
            let mut v = order[range].to_vec();
            v.sort_unstable();
            v
        };
        Ok(Self {
            train: take(0..n_train),
            val: take(n_train..n_train + n_val),
            test: take(n_train + n_val..n),
        })
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Several sessions packed for one forward pass.
#[derive(Clone, Debug)]
pub struct SessionBatch {
    /// Turn rows grouped per session, sessions in input order.
    pub turns: Sequences,
    /// Image index of every packed turn.
    pub turn_images: Vec<usize>,
    /// All word vectors of all turns, stacked.
    pub tokens: Mat,
    pub token_lengths: Vec<usize>,
    /// Token mean of each turn.
    pub turn_means: Mat,
}

impl SessionBatch {
    pub fn new(sessions: &[&PreparedSession]) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::Empty("session batch".into()));
        }
        let lengths: Vec<usize> = sessions.iter().map(|s| s.turns()).collect();
        if let Some(s) = sessions.iter().find(|s| s.turns() == 0) {
            return Err(Error::InvalidSession {
                session_id: s.id.clone(),
                message: "no turns".into(),
            });
        }
        let mats: Vec<&Mat> = sessions.iter().flat_map(|s| &s.turn_tokens).collect();
        let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
        let tokens = concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))?;
        let means: Vec<_> = mats
            .iter()
            .map(|m| m.mean_axis(Axis(0)).expect("turns have tokens").insert_axis(Axis(0)))
            .collect();
        let mean_views: Vec<_> = means.iter().map(|m| m.view()).collect();
        Ok(Self {
            turns: Sequences::contiguous(&lengths),
            turn_images: sessions.iter().flat_map(|s| s.turn_images.iter().copied()).collect(),
            tokens,
            token_lengths: mats.iter().map(|m| m.nrows()).collect(),
            turn_means: concatenate(Axis(0), &mean_views).map_err(|e| Error::Dimension(e.to_string()))?,
        })
    }

    pub fn sessions(&self) -> usize {
        self.turns.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_partition_and_repeat() {
        let cfg = SplitConfig::default();
        let a = Splits::new(100, &cfg).unwrap();
        assert_eq!(a, Splits::new(100, &cfg).unwrap());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (55, 15, 30));
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(Splits::new(10, &SplitConfig { train: 0.9, val: 0.2, seed: 0 }).is_err());
    }

    #[test]
    fn batch_layout() {
        let s = |id: &str, lens: &[usize], imgs: &[usize]| PreparedSession {
            id: id.into(),
            category: Category::Dress,
            turn_images: imgs.to_vec(),
            turn_tokens: lens.iter().map(|&l| Mat::from_elem((l, 2), l as f64)).collect(),
            target: Some(9),
        };
        let a = s("a", &[2, 3], &[0, 1]);
        let b = s("b", &[1], &[4]);
        let batch = SessionBatch::new(&[&a, &b]).unwrap();
        assert_eq!(batch.sessions(), 2);
        assert_eq!(batch.turn_images, vec![0, 1, 4]);
        assert_eq!(batch.tokens.nrows(), 6);
        assert_eq!(batch.token_lengths, vec![2, 3, 1]);
        assert_eq!(batch.turn_means.column(0).to_vec(), vec![2.0, 3.0, 1.0]);
        assert!(SessionBatch::new(&[]).is_err());
    }
}
