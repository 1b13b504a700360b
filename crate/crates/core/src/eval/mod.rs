//! Score matrices, ranking metrics, fusion and evaluation reports.

pub mod fusion;
pub mod index;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

pub use fusion::{fuse, search_fusion_weights, FusionConfig, FusionResult, FusionWeights, Objective};
pub use index::{retrieve_topk, CandidateIndex, Retrieval, RetrievedItem, SessionPrefix};

use crate::corpus::{read_json, write_json, Category};
use crate::data::Prepared;
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::persist::{read_archive, write_archive};
use crate::scoring::{ImageTable, Model};

pub const SCORE_CACHE_VERSION: u32 = 1;

/// Sessions × candidates scores for one category pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub category: Category,
    pub session_ids: Vec<String>,
    pub candidate_ids: Vec<String>,
    /// Column of each session's target.
    pub targets: Vec<usize>,
    /// Turn count of each session.
    pub turns: Vec<usize>,
    pub values: Mat,
}

impl ScoreMatrix {
    pub fn new(
        category: Category,
        session_ids: Vec<String>,
        candidate_ids: Vec<String>,
        targets: Vec<usize>,
        turns: Vec<usize>,
        values: Mat,
    ) -> Result<Self> {
        let (r, c) = values.dim();
        if session_ids.len() != r || targets.len() != r || turns.len() != r || candidate_ids.len() != c {
            return Err(Error::Dimension(format!(
                "{category} score matrix is {r}×{c} but has {} sessions, {} targets, {} turn counts, {} candidates",
                session_ids.len(),
                targets.len(),
                turns.len(),
                candidate_ids.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::NotFound(format!("target column {t} outside the {c}-candidate pool")));
        }
        check_unique(&session_ids, "session")?;
        check_unique(&candidate_ids, "candidate")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("{category} score matrix has non-finite entries")));
        }
        Ok(Self {
            category,
            session_ids,
            candidate_ids,
            targets,
            turns,
            values,
        })
    }

    /// 1-based rank of each session's target.
    pub fn ranks(&self) -> Vec<usize> {
        self.values
            .rows()
            .into_iter()
            .zip(&self.targets)
            .map(|(row, &t)| target_rank(row, t, &self.candidate_ids))
            .collect()
    }

    /// Same layout (ids, targets, shape) as `other`.
    pub fn same_layout(&self, other: &ScoreMatrix) -> bool {
        self.category == other.category
            && self.session_ids == other.session_ids
            && self.candidate_ids == other.candidate_ids
            && self.targets == other.targets
            && self.values.dim() == other.values.dim()
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    match ids.iter().find(|id| !seen.insert(id.as_str())) {
        Some(dup) => Err(Error::Parameter(format!("duplicate {what} id {dup}"))),
        None => Ok(()),
    }
}

/// Descending score, ties broken by ascending candidate id.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// 1-based position of column `target` under [`rank_order`].
pub fn target_rank(row: ArrayView1<f64>, target: usize, ids: &[String]) -> usize {
    let t = (row[target], ids[target].as_str());
    1 + row
        .iter()
        .zip(ids)
        .filter(|(&s, id)| rank_order((s, id.as_str()), t) == Ordering::Less)
        .count()
}

pub fn recall_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Score matrices of one source (a module or a fusion) over an evaluation split.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub source: String,
    /// One matrix per category present, in category order.
    pub matrices: Vec<ScoreMatrix>,
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    category: Category,
    session_ids: Vec<String>,
    candidate_ids: Vec<String>,
    targets: Vec<usize>,
    turns: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ScoreSetHeader {
    version: u32,
    source: String,
    blob_sha256: String,
    matrices: Vec<MatrixHeader>,
}

fn blob_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

impl ScoreSet {
    pub fn ranks(&self) -> Vec<usize> {
        self.matrices.iter().flat_map(|m| m.ranks()).collect()
    }

    pub fn sessions(&self) -> usize {
        self.matrices.iter().map(|m| m.session_ids.len()).sum()
    }

    pub fn same_layout(&self, other: &ScoreSet) -> bool {
        self.matrices.len() == other.matrices.len()
            && self.matrices.iter().zip(&other.matrices).all(|(a, b)| a.same_layout(b))
    }

    pub fn max_abs_diff(&self, other: &ScoreSet) -> Result<f64> {
        if !self.same_layout(other) {
            return Err(Error::Parameter("score sets have different layouts".into()));
        }
        Ok(self
            .matrices
            .iter()
            .zip(&other.matrices)
            .flat_map(|(a, b)| a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }

    /// Writes a JSON header at `path` and the matrices to `path` with a `.bin` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, &Mat)> = self
            .matrices
            .iter()
            .map(|m| (m.category.to_string(), &m.values))
            .collect();
        let sha = write_archive(&blob_path(path), &entries)?;
        let header = ScoreSetHeader {
            version: SCORE_CACHE_VERSION,
            source: self.source.clone(),
            blob_sha256: sha,
            matrices: self
                .matrices
                .iter()
                .map(|m| MatrixHeader {
                    category: m.category,
                    session_ids: m.session_ids.clone(),
                    candidate_ids: m.candidate_ids.clone(),
                    targets: m.targets.clone(),
                    turns: m.turns.clone(),
                })
                .collect(),
        };
        write_json(path, &header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: ScoreSetHeader = read_json(path)?;
        if header.version != SCORE_CACHE_VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: SCORE_CACHE_VERSION,
            });
        }
        let blobs = read_archive(&blob_path(path), Some(&header.blob_sha256))?;
        if blobs.len() != header.matrices.len() {
            return Err(Error::Integrity(format!("{}: header and blob disagree", path.display())));
        }
        let matrices = header
            .matrices
            .into_iter()
            .zip(blobs)
            .map(|(h, (_, values))| ScoreMatrix::new(h.category, h.session_ids, h.candidate_ids, h.targets, h.turns, values))
            .collect::<Result<_>>()?;
        Ok(Self {
            source: header.source,
            matrices,
        })
    }
}

/// Scores each session against the pool of all corpus images in its
/// category. `images` defaults to embedding every corpus image.
pub fn score_sessions(model: &Model, prepared: &Prepared, sessions: &[usize], images: Option<&ImageTable>) -> Result<ScoreSet> {
    if sessions.is_empty() {
        return Err(Error::Empty("evaluation sessions".into()));
    }
    let owned;
    let images = match images {
        Some(t) => Some(t),
        None => {
            let all: Vec<usize> = (0..prepared.len()).collect();
            owned = model.embed_images(prepared, &all)?;
            owned.as_ref()
        }
    };
    let mut by_category: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    for &s in sessions {
        let sess = prepared
            .sessions
            .get(s)
            .ok_or_else(|| Error::NotFound(format!("session #{s}")))?;
        by_category.entry(sess.category).or_default().push(s);
    }
    let mut matrices = Vec::new();
    for (category, idx) in by_category {
        let pool = prepared.pool(category);
        let sess: Vec<_> = idx.iter().map(|&i| &prepared.sessions[i]).collect();
        let targets = sess
            .iter()
            .map(|s| {
                let t = s.target()?;
                pool.iter()
                    .position(|&c| c == t)
                    .ok_or_else(|| Error::NotFound(format!("target of session {} in the {category} pool", s.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = model.score_matrix(prepared, &sess, &pool, images)?;
        matrices.push(ScoreMatrix::new(
            category,
            sess.iter().map(|s| s.id.clone()).collect(),
            pool.iter().map(|&c| prepared.image_ids[c].clone()).collect(),
            targets,
            sess.iter().map(|s| s.turns()).collect(),
            values,
        )?);
    }
    Ok(ScoreSet {
        source: model.id.to_string(),
        matrices,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r5: f64,
    pub r8: f64,
    pub mrr: f64,
    pub sessions: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        Self {
            r5: recall_at_k(ranks, 5),
            r8: recall_at_k(ranks, 8),
            mrr: mrr(ranks),
            sessions: ranks.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRank {
    pub session_id: String,
    pub category: Category,
    pub turns: usize,
    pub target_rank: usize,
    pub pool_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub overall: Metrics,
    pub per_category: BTreeMap<Category, Metrics>,
    /// Keyed by turn count.
    pub per_turn_length: BTreeMap<usize, Metrics>,
    pub per_session: Vec<SessionRank>,
}

impl EvalReport {
    pub fn new(scores: &ScoreSet) -> Self {
        let mut per_session = Vec::with_capacity(scores.sessions());
        for m in &scores.matrices {
            for (i, r) in m.ranks().into_iter().enumerate() {
                per_session.push(SessionRank {
                    session_id: m.session_ids[i].clone(),
                    category: m.category,
                    turns: m.turns[i],
                    target_rank: r,
                    pool_size: m.candidate_ids.len(),
                });
            }
        }
        let all: Vec<usize> = per_session.iter().map(|s| s.target_rank).collect();
        let mut by_cat: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for s in &per_session {
            by_cat.entry(s.category).or_default().push(s.target_rank);
            by_len.entry(s.turns).or_default().push(s.target_rank);
        }
        Self {
            source: scores.source.clone(),
            overall: Metrics::from_ranks(&all),
            per_category: by_cat.into_iter().map(|(k, v)| (k, Metrics::from_ranks(&v))).collect(),
            per_turn_length: by_len.into_iter().map(|(k, v)| (k, Metrics::from_ranks(&v))).collect(),
            per_session,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n| group | sessions | R@5 | R@8 | MRR |\n|---|---|---|---|---|\n", self.source);
        let mut row = |name: String, m: &Metrics| {
            let _ = writeln!(
                out,
                "| {name} | {} | {:.2} | {:.2} | {:.3} |",
                m.sessions,
                100.0 * m.r5,
                100.0 * m.r8,
                m.mrr
            );
        };
        row("overall".into(), &self.overall);
        for (c, m) in &self.per_category {
            row(c.to_string(), m);
        }
        for (n, m) in &self.per_turn_length {
            row(format!("{n} turns"), m);
        }
        out
    }
}
