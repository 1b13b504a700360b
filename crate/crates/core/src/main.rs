use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use convir::config::Config;
use convir::corpus::{load_sessions, save_sessions, write_json, write_jsonl, ImageManifest, SessionRules};
use convir::data::Split;
use convir::derive::dataset_stats;
use convir::eval::{retrieve_topk, Objective, SessionPrefix};
use convir::pipeline::{self, RunPaths, Workspace};
use convir::scoring::ModuleId;
use convir::synth::{generate_corpus, plant_violations};
use convir::{Error, Result};

#[derive(Parser)]
#[command(name = "convir", version, about = "Multiturn fashion image retrieval with fused scoring modules")]
struct Cli {
    /// JSON config; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a built-in preset instead of the library defaults.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (images, attributes, triplets, word vectors).
    SynthCorpus {
        #[arg(long, default_value = "corpus")]
        out: PathBuf,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        embedding_dim: Option<usize>,
        /// Also write `planted.jsonl` with this many duplicate, circle and
        /// conflict sessions each.
        #[arg(long, default_value_t = 0)]
        plant: usize,
    },
    /// Chain triplets into multiturn sessions.
    Derive {
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        #[arg(long)]
        triplets: Option<PathBuf>,
        /// Extra sessions appended to the chained ones (e.g. `planted.jsonl`).
        #[arg(long)]
        extra: Option<PathBuf>,
        /// Defaults to `chained.jsonl` in the corpus directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        min_images: Option<usize>,
        #[arg(long)]
        max_images: Option<usize>,
    },
    /// Remove duplicate, circular and conflicting sessions; flag inconsistent ones.
    Filter {
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        /// Defaults to `chained.jsonl` in the corpus directory.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to `sessions.jsonl` in the corpus directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-session verdicts; defaults to `filter_report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Review queue with evidence; defaults to `review.jsonl`.
        #[arg(long)]
        review: Option<PathBuf>,
    },
    /// Session counts by category and length.
    Stats {
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train one scoring module and save its best checkpoint.
    Train {
        #[arg(long, value_parser = parse_module)]
        module: ModuleId,
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        #[arg(long, default_value = "run")]
        run: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_augment: bool,
    },
    /// Precompute candidate embeddings and attribute vectors from the checkpoints.
    BuildIndex {
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        #[arg(long, default_value = "run")]
        run: PathBuf,
    },
    /// Search fusion weights on the cached validation scores.
    FuseWeights {
        #[arg(long, default_value = "run")]
        run: PathBuf,
        #[arg(long, value_parser = parse_objective)]
        objective: Option<Objective>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterative: bool,
    },
    /// R@5, R@8 and MRR on a split, overall and broken down.
    Evaluate {
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        #[arg(long, default_value = "run")]
        run: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Rank the category pool for one session and write a report.
    Retrieve {
        #[arg(long, default_value = "corpus")]
        corpus: PathBuf,
        #[arg(long, default_value = "run")]
        run: PathBuf,
        /// JSON file with `session_id`, `category` and `turns`.
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// `.html` writes a page, anything else plain text.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

fn parse_module(s: &str) -> Result<ModuleId> {
    s.parse()
}

fn parse_objective(s: &str) -> Result<Objective> {
    s.parse()
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<Config> {
    let base = match (&cli.config, cli.preset) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(Preset::Desk)) => Config::desk(),
        (None, _) => Config::default(),
    };
    Ok(base)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn read_prefix(path: &Path) -> Result<SessionPrefix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    match serde_json::from_str(&text) {
        Ok(p) => Ok(p),
        Err(whole) => {
            // JSONL input: use the first session
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
            serde_json::from_str(first).map_err(|_| Error::schema(path, 1, whole.to_string()))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::SynthCorpus {
            out,
            n_images,
            seed,
            image_size,
            embedding_dim,
            plant,
        } => {
            set(&mut cfg.synth.n_images, n_images);
            set(&mut cfg.synth.seed, seed);
            set(&mut cfg.synth.image_size, image_size);
            set(&mut cfg.synth.embedding_dim, embedding_dim);
            let mut corpus = generate_corpus(&cfg.synth)?;
            if plant > 0 {
                let clean = convir::derive::chain_triplets(&corpus.triplets, cfg.chain.min_images, cfg.chain.max_images)?;
                let planted = plant_violations(&mut corpus, &clean, plant, cfg.synth.seed)?;
                save_sessions(&out.join("planted.jsonl"), &planted.sessions)?;
            }
            corpus.save(&out)?;
            println!(
                "wrote {} images and {} triplets to {}",
                corpus.images.len(),
                corpus.triplets.len(),
                out.display()
            );
        }
        Command::Derive {
            corpus,
            triplets,
            extra,
            out,
            min_images,
            max_images,
        } => {
            set(&mut cfg.chain.min_images, min_images);
            set(&mut cfg.chain.max_images, max_images);
            let mut sessions = pipeline::derive_sessions(&corpus, triplets.as_deref(), &cfg)?;
            let chained = sessions.len();
            if let Some(extra) = extra {
                sessions.extend(load_sessions(&extra, &SessionRules::lenient(), None)?);
            }
            let out = out.unwrap_or_else(|| pipeline::chained_path(&corpus));
            save_sessions(&out, &sessions)?;
            println!("{chained} chained sessions, {} written to {}", sessions.len(), out.display());
        }
        Command::Filter {
            corpus,
            input,
            out,
            report,
            review,
        } => {
            let input = input.unwrap_or_else(|| pipeline::chained_path(&corpus));
            let outcome = pipeline::filter_sessions(&corpus, &input)?;
            let out = out.unwrap_or_else(|| corpus.join("sessions.jsonl"));
            save_sessions(&out, &outcome.kept)?;
            write_json(&report.unwrap_or_else(|| corpus.join("filter_report.json")), &outcome.report)?;
            write_jsonl(&review.unwrap_or_else(|| corpus.join("review.jsonl")), &outcome.review)?;
            for (verdict, n) in outcome.report.counts() {
                println!("{verdict:?}: {n}");
            }
            println!("kept {} of {} sessions in {}", outcome.kept.len(), outcome.report.total(), out.display());
        }
        Command::Stats { corpus, sessions, json } => {
            let path = sessions.unwrap_or_else(|| corpus.join("sessions.jsonl"));
            let sessions = load_sessions(&path, &SessionRules::lenient(), None)?;
            let stats = dataset_stats(&sessions);
            print!("{}", stats.to_markdown());
            if let Some(json) = json {
                write_json(&json, &stats)?;
            }
        }
        Command::Train {
            module,
            corpus,
            run,
            epochs,
            lr,
            batch_size,
            margin,
            seed,
            no_augment,
        } => {
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.learning_rate, lr);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.train.margin, margin);
            set(&mut cfg.train.seed, seed);
            if no_augment {
                cfg.train.augment = None;
            }
            cfg.validate()?;
            let run = RunPaths::new(run);
            let ws = Workspace::open(&corpus, None, &cfg)?;
            let t = Instant::now();
            let summary = pipeline::train(&ws, module, &cfg, &run)?;
            cfg.save(&run.config())?;
            println!(
                "{module}: best epoch {} val R@5 {:.2}% ({:.0}s), checkpoint {}",
                summary.outcome.best_epoch,
                100.0 * summary.outcome.best_val_r5().unwrap_or(0.0),
                t.elapsed().as_secs_f64(),
                run.checkpoint(module).display()
            );
        }
        Command::BuildIndex { corpus, run } => {
            let run = RunPaths::new(run);
            let ws = Workspace::open(&corpus, None, &cfg)?;
            let index = pipeline::build_index(&ws, &run)?;
            println!("indexed {} images into {}", index.image_ids.len(), run.index().display());
        }
        Command::FuseWeights {
            run,
            objective,
            budget,
            seed,
            iterative,
        } => {
            set(&mut cfg.fusion.objective, objective);
            set(&mut cfg.fusion.budget, budget);
            set(&mut cfg.fusion.seed, seed);
            cfg.fusion.iterative |= iterative;
            let run = RunPaths::new(run);
            let r = pipeline::fuse_weights(&run, &cfg)?;
            println!(
                "weights {:?}, validation {:?} = {:.4} after {} evaluations",
                r.weights.w, r.objective, r.value, r.evaluations
            );
        }
        Command::Evaluate { corpus, run, split } => {
            let run = RunPaths::new(run);
            let ws = Workspace::open(&corpus, None, &cfg)?;
            let ev = pipeline::evaluate(&ws, split, &run)?;
            let path = run.report(split);
            write_json(&path, &ev.fused)?;
            let mut md = ev.fused.to_markdown();
            for (m, r) in &ev.modules {
                write_json(&path.with_file_name(format!("{}_{m}.json", pipeline::split_name(split))), r)?;
                md.push_str(&format!(
                    "\n{m} alone: R@5 {:.2}%, R@8 {:.2}%, MRR {:.4}\n",
                    100.0 * r.overall.r5,
                    100.0 * r.overall.r8,
                    r.overall.mrr
                ));
            }
            std::fs::write(path.with_extension("md"), &md).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            print!("{md}");
        }
        Command::Retrieve {
            corpus,
            run,
            session,
            k,
            out,
        } => {
            let run = RunPaths::new(run);
            let prefix = read_prefix(&session)?;
            let ws = Workspace::open(&corpus, None, &cfg)?;
            let models = pipeline::load_models(&run)?;
            let index = pipeline::load_index(&run)?;
            let weights = pipeline::load_weights(&run)?;
            let r = retrieve_topk(
                &prefix,
                k,
                [&models[0].0, &models[1].0, &models[2].0],
                &index,
                &weights.weights,
                &ws.prepared,
                &ws.corpus.text,
            )?;
            print!("{}", r.to_text());
            if let Some(out) = out {
                let body = if out.extension().is_some_and(|e| e == "html") {
                    let root = std::fs::canonicalize(&corpus).unwrap_or(corpus.clone());
                    let manifest: Option<&ImageManifest> = Some(&ws.corpus.store.manifest);
                    r.to_html(manifest, &format!("file://{}/", root.display()))
                } else {
                    r.to_text()
                };
                std::fs::write(&out, body).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            }
        }
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
