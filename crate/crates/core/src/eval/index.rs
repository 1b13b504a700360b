use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use super::{rank_order, FusionWeights};
use crate::corpus::{read_json, write_json, Category, ImageManifest, Session, Turn};
use crate::data::Prepared;
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::persist::{read_archive, write_archive};
use crate::scoring::attribute::SLOTS;
use crate::scoring::{ImageTable, Model, ModuleId};
use crate::text::TextPipeline;
use crate::training::CheckpointManifest;

pub const INDEX_VERSION: u32 = 1;

/// Precomputed candidate embeddings and attribute vectors for every
/// corpus image, tied to the checkpoints that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateIndex {
    /// Checkpoint blob hash per module.
    pub checkpoints: BTreeMap<ModuleId, String>,
    pub image_ids: Vec<String>,
    pub categories: Vec<Category>,
    /// Eval-mode image embeddings per image-based module, rows follow `image_ids`.
    pub embeddings: BTreeMap<ModuleId, Mat>,
    /// `5 × d_t` attribute matrix per image.
    pub attributes: Vec<Mat>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    version: u32,
    checkpoints: BTreeMap<ModuleId, String>,
    image_ids: Vec<String>,
    categories: Vec<Category>,
    blob_sha256: String,
}

impl CandidateIndex {
    pub fn build(models: &[(&Model, &CheckpointManifest)], prepared: &Prepared) -> Result<Self> {
        let all: Vec<usize> = (0..prepared.len()).collect();
        let mut checkpoints = BTreeMap::new();
        let mut embeddings = BTreeMap::new();
        for (model, manifest) in models {
            if manifest.module_id != model.id {
                return Err(Error::Parameter(format!(
                    "manifest for {} paired with the {} model",
                    manifest.module_id, model.id
                )));
            }
            checkpoints.insert(model.id, manifest.blob_sha256.clone());
            if let Some(table) = model.embed_images(prepared, &all)? {
                embeddings.insert(model.id, table.values);
            }
        }
        Ok(Self {
            checkpoints,
            image_ids: prepared.image_ids.clone(),
            categories: prepared.categories.clone(),
            embeddings,
            attributes: prepared.attributes.clone(),
        })
    }

    /// Embedding table of `module` addressed by position in `image_ids`.
    pub fn table(&self, module: ModuleId) -> Option<ImageTable> {
        self.embeddings
            .get(&module)
            .map(|m| ImageTable::new((0..m.nrows()).collect(), m.clone()).expect("one row per image"))
    }

    pub fn pool(&self, category: Category) -> Vec<usize> {
        (0..self.image_ids.len()).filter(|&i| self.categories[i] == category).collect()
    }

    /// Writes a JSON header at `path` and matrices to `path` with a `.bin` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, &Mat)> = self
            .embeddings
            .iter()
            .map(|(m, e)| (format!("embeddings.{m}"), e))
            .collect();
        let attrs = if self.attributes.is_empty() {
            Mat::zeros((0, 0))
        } else {
            let views: Vec<_> = self.attributes.iter().map(|a| a.view()).collect();
            concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))?
        };
        entries.push(("attributes".into(), &attrs));
        let sha = write_archive(&path.with_extension("bin"), &entries)?;
        write_json(
            path,
            &IndexHeader {
                version: INDEX_VERSION,
                checkpoints: self.checkpoints.clone(),
                image_ids: self.image_ids.clone(),
                categories: self.categories.clone(),
                blob_sha256: sha,
            },
        )
    }

    /// Loads an index, refusing it unless it was built from exactly the
    /// given checkpoints.
    pub fn load(path: &Path, checkpoints: &[&CheckpointManifest]) -> Result<Self> {
        let header: IndexHeader = read_json(path)?;
        if header.version != INDEX_VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: INDEX_VERSION,
            });
        }
        for m in checkpoints {
            match header.checkpoints.get(&m.module_id) {
                Some(h) if *h == m.blob_sha256 => {}
                found => {
                    return Err(Error::ConfigHash {
                        found: found.cloned().unwrap_or_else(|| "missing".into()),
                        expected: m.blob_sha256.clone(),
                    })
                }
            }
        }
        let mut embeddings = BTreeMap::new();
        let mut attributes = Vec::new();
        for (name, m) in read_archive(&path.with_extension("bin"), Some(&header.blob_sha256))? {
            if let Some(module) = name.strip_prefix("embeddings.") {
                embeddings.insert(module.parse::<ModuleId>()?, m);
            } else if name == "attributes" {
                if m.nrows() != SLOTS * header.image_ids.len() {
                    return Err(Error::Integrity(format!("{}: attribute rows do not match images", path.display())));
                }
                attributes = (0..header.image_ids.len())
                    .map(|i| m.slice(ndarray::s![i * SLOTS..(i + 1) * SLOTS, ..]).to_owned())
                    .collect();
            }
        }
        Ok(Self {
            checkpoints: header.checkpoints,
            image_ids: header.image_ids,
            categories: header.categories,
            embeddings,
            attributes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub rank: usize,
    pub image_id: String,
    pub fused: f64,
    /// Composite, comparative, attribute.
    pub partial: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub session_id: String,
    pub category: Category,
    pub turns: Vec<Turn>,
    pub weights: [f64; 3],
    pub pool_size: usize,
    pub items: Vec<RetrievedItem>,
}

/// Session turns without a target, as read by `retrieve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPrefix {
    pub session_id: String,
    pub category: Category,
    pub turns: Vec<Turn>,
}

impl From<&Session> for SessionPrefix {
    fn from(s: &Session) -> Self {
        Self {
            session_id: s.session_id.clone(),
            category: s.category,
            turns: s.turns.clone(),
        }
    }
}

/// Ranks the session's category pool by fused score and returns the top `k`.
/// `models` are the composite, comparative and attribute models in that order.
pub fn retrieve_topk(
    prefix: &SessionPrefix,
    k: usize,
    models: [&Model; 3],
    index: &CandidateIndex,
    weights: &FusionWeights,
    prepared: &Prepared,
    text: &TextPipeline,
) -> Result<Retrieval> {
    if index.image_ids != prepared.image_ids {
        return Err(Error::Parameter("index was built for a different image set".into()));
    }
    for (m, want) in models.iter().zip(ModuleId::ALL) {
        if m.id != want {
            return Err(Error::Parameter(format!("expected the {want} model, got {}", m.id)));
        }
    }
    let session = Session {
        session_id: prefix.session_id.clone(),
        category: prefix.category,
        turns: prefix.turns.clone(),
        target_image_id: String::new(),
    };
    let prepared_session = prepared.prepare_session(&session, text, false)?;
    let pool = index.pool(prefix.category);
    if pool.is_empty() {
        return Err(Error::Empty(format!("{} candidate pool", prefix.category)));
    }
    let mut partial = Vec::with_capacity(3);
    for m in models {
        let table = index.table(m.id);
        let scores = m.score_matrix(prepared, &[&prepared_session], &pool, table.as_ref())?;
        partial.push(scores.row(0).to_owned());
    }
    let w = weights.w;
    let mut items: Vec<RetrievedItem> = pool
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let p = [partial[0][j], partial[1][j], partial[2][j]];
            RetrievedItem {
                rank: 0,
                image_id: index.image_ids[c].clone(),
                fused: w[0] * p[0] + w[1] * p[1] + w[2] * p[2],
                partial: p,
            }
        })
        .collect();
    items.sort_by(|a, b| rank_order((a.fused, &a.image_id), (b.fused, &b.image_id)));
    items.truncate(k);
    for (i, it) in items.iter_mut().enumerate() {
        it.rank = i + 1;
    }
    Ok(Retrieval {
        session_id: prefix.session_id.clone(),
        category: prefix.category,
        turns: prefix.turns.clone(),
        weights: w,
        pool_size: pool.len(),
        items,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Retrieval {
    pub fn to_text(&self) -> String {
        let mut out = format!("session {} ({}), pool of {}\n", self.session_id, self.category, self.pool_size);
        for (i, t) in self.turns.iter().enumerate() {
            let _ = writeln!(out, "  turn {}: {} | {}", i + 1, t.image_id, t.feedback);
        }
        let _ = writeln!(out, "rank  image  fused  composite  comparative  attribute");
        for it in &self.items {
            let _ = writeln!(
                out,
                "{:>4}  {}  {:.4}  {:.4}  {:.4}  {:.4}",
                it.rank, it.image_id, it.fused, it.partial[0], it.partial[1], it.partial[2]
            );
        }
        out
    }

    /// HTML page referencing images by their manifest paths, prefixed with `image_root`.
    pub fn to_html(&self, manifest: Option<&ImageManifest>, image_root: &str) -> String {
        let src = |id: &str| match manifest.and_then(|m| m.entries.get(id)) {
            Some(e) => format!("{image_root}{}", e.path),
            None => String::new(),
        };
        let mut out = format!(
            "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>{0}</title></head><body>\n<h1>Session {0} ({1})</h1>\n<h2>Turns</h2>\n<table>\n",
            escape(&self.session_id),
            self.category
        );
        for (i, t) in self.turns.iter().enumerate() {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td><img src=\"{}\" width=\"96\" alt=\"{}\"></td><td>{}</td></tr>",
                i + 1,
                escape(&src(&t.image_id)),
                escape(&t.image_id),
                escape(&t.feedback)
            );
        }
        let _ = writeln!(
            out,
            "</table>\n<h2>Top {} of {}</h2>\n<table>\n<tr><th>rank</th><th>image</th><th>id</th><th>fused</th><th>composite</th><th>comparative</th><th>attribute</th></tr>",
            self.items.len(),
            self.pool_size
        );
        for it in &self.items {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td><img src=\"{}\" width=\"96\" alt=\"{}\"></td><td>{}</td><td>{:.4}</td><td>{:.4}</td><td>{:.4}</td><td>{:.4}</td></tr>",
                it.rank,
                escape(&src(&it.image_id)),
                escape(&it.image_id),
                escape(&it.image_id),
                it.fused,
                it.partial[0],
                it.partial[1],
                it.partial[2]
            );
        }
        out.push_str("</table>\n</body></html>\n");
        out
    }
}
