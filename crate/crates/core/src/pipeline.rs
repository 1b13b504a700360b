//! Run-directory layout and the steps the command line chains together.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::corpus::{load_sessions, read_json, write_json, CorpusPaths, Session, SessionRules};
use crate::data::{LoadedCorpus, Prepared, Split, Splits};
use crate::derive::{chain_triplets, load_triplets, run_filters, AntonymLexicon, FilterInputs, FilterOutcome, KeywordMap};
use crate::error::{Error, Result};
use crate::eval::{fuse, search_fusion_weights, score_sessions, CandidateIndex, EvalReport, FusionResult, ScoreSet};
use crate::scoring::{Model, ModuleId};
use crate::training::{load_checkpoint, read_manifest, save_checkpoint, train_module, CheckpointManifest, TrainOutcome};

/// Artifact locations inside a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn checkpoint(&self, module: ModuleId) -> PathBuf {
        self.root.join("checkpoints").join(format!("{module}.json"))
    }

    pub fn val_scores(&self, module: ModuleId) -> PathBuf {
        self.root.join("scores").join(format!("val_{module}.json"))
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.json")
    }

    pub fn weights(&self) -> PathBuf {
        self.root.join("weights.json")
    }

    pub fn report(&self, split: Split) -> PathBuf {
        self.root.join("reports").join(format!("{}.json", split_name(split)))
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

/// Raw chained sessions before filtering.
pub fn chained_path(corpus: &Path) -> PathBuf {
    corpus.join("chained.jsonl")
}

pub fn derive_sessions(corpus: &Path, triplets: Option<&Path>, cfg: &Config) -> Result<Vec<Session>> {
    let paths = CorpusPaths::new(corpus);
    let triplets = load_triplets(triplets.unwrap_or(&paths.triplets()))?;
    chain_triplets(&triplets, cfg.chain.min_images, cfg.chain.max_images)
}

/// Loads the lexicons from the corpus directory when present, else the defaults.
pub fn lexicons(corpus: &Path) -> Result<(AntonymLexicon, KeywordMap)> {
    let paths = CorpusPaths::new(corpus);
    let lexicon = if paths.antonyms().exists() {
        AntonymLexicon::load(&paths.antonyms())?
    } else {
        AntonymLexicon::fashion_default()
    };
    let keywords = if paths.keywords().exists() {
        KeywordMap::load(&paths.keywords())?
    } else {
        KeywordMap::fashion_default()
    };
    Ok((lexicon, keywords))
}

/// Runs every filter over `input` using the corpus catalog and pixel hashes.
pub fn filter_sessions(corpus: &Path, input: &Path) -> Result<FilterOutcome> {
    let paths = CorpusPaths::new(corpus);
    let store = crate::corpus::ImageStore::load(&paths.manifest())?;
    let catalog = crate::corpus::load_attributes(&paths.attributes())?;
    let sessions = load_sessions(input, &SessionRules::lenient(), Some(&store.manifest))?;
    let hashes: HashMap<String, String> = store.records().map(|r| (r.image_id.clone(), r.pixels.digest())).collect();
    let (lexicon, keywords) = lexicons(corpus)?;
    Ok(run_filters(
        &sessions,
        &FilterInputs {
            lexicon: Some(&lexicon),
            attributes: Some(&catalog),
            keywords: Some(&keywords),
            pixel_hashes: Some(&hashes),
        },
    ))
}

/// A loaded corpus with its session splits.
pub struct Workspace {
    pub corpus: LoadedCorpus,
    pub prepared: Prepared,
    pub splits: Splits,
}

impl Workspace {
    pub fn open(corpus: &Path, sessions: Option<&Path>, cfg: &Config) -> Result<Self> {
        let corpus = LoadedCorpus::load(corpus, sessions, cfg.model.text_dim)?;
        let prepared = corpus.prepare()?;
        let splits = Splits::new(prepared.sessions.len(), &cfg.split)?;
        Ok(Self {
            corpus,
            prepared,
            splits,
        })
    }
}

pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub manifest: CheckpointManifest,
}

/// Trains one module, then saves its best checkpoint and validation scores.
pub fn train(ws: &Workspace, module: ModuleId, cfg: &Config, run: &RunPaths) -> Result<TrainSummary> {
    let model = Model::new(module, &cfg.model, cfg.model_seed)?;
    let outcome = train_module(model, &ws.prepared, &ws.splits.train, &ws.splits.val, &cfg.train)?;
    let mut metrics = BTreeMap::new();
    if let Some(r5) = outcome.best_val_r5() {
        metrics.insert("val_r5".to_string(), r5);
    }
    let manifest = save_checkpoint(&outcome.model, outcome.best_epoch, metrics, &run.checkpoint(module))?;
    if let Some(scores) = &outcome.val_scores {
        scores.save(&run.val_scores(module))?;
    }
    Ok(TrainSummary { outcome, manifest })
}

/// The three checkpoints of a run, in module order.
pub fn load_models(run: &RunPaths) -> Result<Vec<(Model, CheckpointManifest)>> {
    ModuleId::ALL
        .iter()
        .map(|&m| load_checkpoint(&run.checkpoint(m), None))
        .collect()
}

pub fn build_index(ws: &Workspace, run: &RunPaths) -> Result<CandidateIndex> {
    let models = load_models(run)?;
    let pairs: Vec<(&Model, &CheckpointManifest)> = models.iter().map(|(m, c)| (m, c)).collect();
    let index = CandidateIndex::build(&pairs, &ws.prepared)?;
    index.save(&run.index())?;
    Ok(index)
}

/// Loads the run's index, refusing one built from other checkpoints.
pub fn load_index(run: &RunPaths) -> Result<CandidateIndex> {
    let manifests = ModuleId::ALL
        .iter()
        .map(|&m| read_manifest(&run.checkpoint(m)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&CheckpointManifest> = manifests.iter().collect();
    CandidateIndex::load(&run.index(), &refs)
}

pub fn load_val_scores(run: &RunPaths) -> Result<Vec<ScoreSet>> {
    ModuleId::ALL.iter().map(|&m| ScoreSet::load(&run.val_scores(m))).collect()
}

pub fn fuse_weights(run: &RunPaths, cfg: &Config) -> Result<FusionResult> {
    let sets = load_val_scores(run)?;
    let result = search_fusion_weights([&sets[0], &sets[1], &sets[2]], &cfg.fusion)?;
    write_json(&run.weights(), &result)?;
    Ok(result)
}

pub fn load_weights(run: &RunPaths) -> Result<FusionResult> {
    read_json(&run.weights())
}

/// Fused report plus one report per module.
pub struct Evaluation {
    pub fused: EvalReport,
    pub modules: BTreeMap<ModuleId, EvalReport>,
}

/// Scores `split` with every module through the candidate index, then
/// fuses with the run's weights.
pub fn evaluate(ws: &Workspace, split: Split, run: &RunPaths) -> Result<Evaluation> {
    let sessions = ws.splits.get(split);
    if sessions.is_empty() {
        return Err(Error::Empty(format!("{} split", split_name(split))));
    }
    let models = load_models(run)?;
    let index = load_index(run)?;
    if index.image_ids != ws.prepared.image_ids {
        return Err(Error::Parameter("index was built for a different image set".into()));
    }
    let weights = load_weights(run)?;
    let mut sets = Vec::with_capacity(3);
    for (model, _) in &models {
        let table = index.table(model.id);
        sets.push(score_sessions(model, &ws.prepared, sessions, table.as_ref())?);
    }
    let fused = fuse(&[&sets[0], &sets[1], &sets[2]], &weights.weights.w)?;
    let modules = models
        .iter()
        .zip(&sets)
        .map(|((m, _), s)| (m.id, EvalReport::new(s)))
        .collect();
    Ok(Evaluation {
        fused: EvalReport::new(&fused),
        modules,
    })
}
