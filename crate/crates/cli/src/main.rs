//! `metael`: batch front end for aligning, combining and scoring the outputs
//! of several entity-linking systems.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metael_core::alignment::AlignmentMode;
use metael_core::{Error, Feature, FeatureMask, Result};

use config::{RunConfig, SplitName};

#[derive(Parser, Debug)]
#[command(
    name = "metael",
    version,
    about = "Combine entity-linking system outputs mention by mention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Agreement statistics between the systems and the ground truth.
    Stats {
        #[command(flatten)]
        run: RunArgs,
        /// Split to describe.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Train the ensemble on the training split and write the model.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        learner: LearnerArgs,
        /// Model file to write [default: <output-dir>/model.json].
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Produce a unified annotation set with a trained model or a baseline.
    Annotate {
        #[command(flatten)]
        run: RunArgs,
        /// loose, strict, or a baseline: random, majority_random,
        /// majority_best, weighted_voting, weighted_voting_all, best_system,
        /// upper_bound.
        #[arg(long)]
        strategy: String,
        /// Trained model; required by loose and strict, and used as the
        /// source of training scores for the baselines that need them.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Output file [default: <output-dir>/<strategy>-<split>.jsonl].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score annotation files against the ground truth, with pairwise
    /// significance tests.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Annotation file to score, as NAME=PATH or PATH; repeatable.
        #[arg(long = "output", value_parser = parse_named_path, required = true)]
        outputs: Vec<(String, PathBuf)>,
        /// Also score each configured system's own output.
        #[arg(long)]
        with_systems: bool,
        /// Also report classifier diagnostics for this model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[command(flatten)]
        sig: SignificanceArgs,
        /// Write a CSV table next to the JSON report.
        #[arg(long)]
        csv: bool,
    },
    /// Retrain and score LOOSE on each standard feature subset.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        learner: LearnerArgs,
        /// Write a CSV table next to the JSON report.
        #[arg(long)]
        csv: bool,
    },
    /// Paired t-test between two annotation files.
    Ttest {
        #[command(flatten)]
        run: RunArgs,
        /// First annotation file, as NAME=PATH or PATH.
        #[arg(long, value_parser = parse_named_path)]
        a: (String, PathBuf),
        /// Second annotation file, as NAME=PATH or PATH.
        #[arg(long, value_parser = parse_named_path)]
        b: (String, PathBuf),
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[command(flatten)]
        sig: SignificanceArgs,
    },
    /// Generate a synthetic corpus, ground truth and system outputs, plus a
    /// run configuration pointing at them.
    Synth {
        /// Directory to write into.
        #[arg(long)]
        out: PathBuf,
        /// JSON generator parameters; the flags below override them.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_docs: Option<usize>,
        /// Number of distinct entities.
        #[arg(long)]
        vocab: Option<usize>,
        /// Number of simulated systems, with the default strength profiles.
        #[arg(long)]
        n_systems: Option<usize>,
        #[arg(long)]
        mentions_per_doc: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
}

/// Input locations and run-level settings shared by the data commands.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON run configuration; the flags below override its fields.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// System ids in order, comma separated.
    #[arg(long, value_delimiter = ',')]
    systems: Vec<String>,
    /// How system outputs and ground truth are matched: strong or overlap.
    #[arg(long)]
    alignment: Option<AlignmentMode>,
    #[arg(long)]
    train_docs: Option<PathBuf>,
    #[arg(long)]
    train_gt: Option<PathBuf>,
    /// Training annotation file as SYSTEM=PATH; repeatable.
    #[arg(long, value_parser = parse_assignment)]
    train_ann: Vec<(String, PathBuf)>,
    #[arg(long)]
    test_docs: Option<PathBuf>,
    #[arg(long)]
    test_gt: Option<PathBuf>,
    /// Test annotation file as SYSTEM=PATH; repeatable.
    #[arg(long, value_parser = parse_assignment)]
    test_ann: Vec<(String, PathBuf)>,
    /// Candidate dictionary (TSV of surface and candidate count).
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Directory for reports, models and outputs.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Seed for baseline tie breaking.
    #[arg(long)]
    baseline_seed: Option<u64>,
    /// Sum (default) or average the precisions in weighted voting.
    #[arg(long)]
    vote_normalization: Option<metael_core::VoteNormalization>,
}

#[derive(Args, Debug, Default)]
struct LearnerArgs {
    /// Sets both the forest and the margin-model seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Soft-margin penalty of the per-system binary models.
    #[arg(long)]
    c: Option<f64>,
    /// Reweight the margin penalty by class frequency.
    #[arg(long)]
    class_weighting: bool,
    /// Features to use, comma separated (e.g. s_words,m_pos,s_corr).
    #[arg(long, value_delimiter = ',')]
    features: Vec<Feature>,
    /// Send unanimous mentions through the classifier as well.
    #[arg(long)]
    no_unanimity_shortcut: bool,
    /// Drop training mentions that no system linked correctly.
    #[arg(long)]
    exclude_empty_label_sets: bool,
}

#[derive(Args, Debug)]
struct SignificanceArgs {
    /// Number of ground-truth splits for the paired t-test.
    #[arg(long, default_value_t = 20)]
    n_splits: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Shuffle ground-truth annotations before splitting.
    #[arg(long)]
    shuffle_seed: Option<u64>,
}

fn parse_assignment(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), PathBuf::from(v))),
        _ => Err(format!("expected SYSTEM=PATH, got {s:?}")),
    }
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    if let Ok(pair) = parse_assignment(s) {
        return Ok(pair);
    }
    let path = PathBuf::from(s);
    let name = path
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| format!("cannot name output {s:?}"))?;
    Ok((name, path))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if !self.systems.is_empty() {
            cfg.systems = self.systems.clone();
        }
        if let Some(a) = self.alignment {
            cfg.alignment = a;
        }
        for (split, docs, gt, anns) in [
            (&mut cfg.train, &self.train_docs, &self.train_gt, &self.train_ann),
            (&mut cfg.test, &self.test_docs, &self.test_gt, &self.test_ann),
        ] {
            if docs.is_some() {
                split.documents = docs.clone();
            }
            if gt.is_some() {
                split.ground_truth = gt.clone();
            }
            for (sys, path) in anns {
                split.annotations.insert(sys.clone(), path.clone());
            }
        }
        if cfg.systems.is_empty() {
            // no explicit order: take the order the annotation flags were given in
            let from = if self.test_ann.is_empty() {
                &self.train_ann
            } else {
                &self.test_ann
            };
            cfg.systems = from.iter().map(|(s, _)| s.clone()).collect();
        }
        if self.candidates.is_some() {
            cfg.candidates = self.candidates.clone();
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.baseline_seed {
            cfg.baseline_seed = s;
        }
        if let Some(n) = self.vote_normalization {
            cfg.vote_normalization = n;
        }
        Ok(cfg)
    }
}

impl LearnerArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let m = &mut cfg.metael;
        if let Some(s) = self.seed {
            m.forest.seed = s;
            m.margin.seed = s;
        }
        if let Some(n) = self.n_trees {
            m.forest.n_trees = n;
        }
        if self.max_depth.is_some() {
            m.forest.max_depth = self.max_depth;
        }
        if let Some(n) = self.min_leaf {
            m.forest.min_leaf = n;
        }
        if let Some(c) = self.c {
            m.margin.c = c;
        }
        if self.class_weighting {
            m.margin.class_weighting = true;
        }
        if !self.features.is_empty() {
            m.features = FeatureMask::new(self.features.iter().copied())?;
        }
        if self.no_unanimity_shortcut {
            m.unanimity_shortcut = false;
        }
        if self.exclude_empty_label_sets {
            m.include_empty_label_sets = false;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { run, split } => commands::stats(&run.resolve()?, split),
        Command::Train { run, learner, model } => {
            let mut cfg = run.resolve()?;
            learner.apply(&mut cfg)?;
            commands::train(&cfg, model)
        }
        Command::Annotate {
            run,
            strategy,
            model,
            split,
            output,
        } => commands::annotate(&run.resolve()?, &strategy, model, split, output),
        Command::Evaluate {
            run,
            outputs,
            with_systems,
            model,
            split,
            sig,
            csv,
        } => commands::evaluate(
            &run.resolve()?,
            &commands::EvaluateRequest {
                outputs,
                with_systems,
                model,
                split,
                n_splits: sig.n_splits,
                alpha: sig.alpha,
                shuffle_seed: sig.shuffle_seed,
                csv,
            },
        ),
        Command::Ablate { run, learner, csv } => {
            let mut cfg = run.resolve()?;
            learner.apply(&mut cfg)?;
            commands::ablate(&cfg, csv)
        }
        Command::Ttest { run, a, b, split, sig } => {
            commands::ttest(&run.resolve()?, a, b, split, sig.n_splits, sig.alpha, sig.shuffle_seed)
        }
        Command::Synth {
            out,
            params,
            seed,
            n_docs,
            vocab,
            n_systems,
            mentions_per_doc,
            train_fraction,
        } => {
            let mut p = match &params {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?
                }
                None => metael_core::synth::SynthParams::default(),
            };
            if let Some(n) = n_systems {
                p.profiles = metael_core::synth::default_profiles(n);
            }
            if let Some(s) = seed {
                p.seed = s;
            }
            if let Some(n) = n_docs {
                p.n_docs = n;
            }
            if let Some(v) = vocab {
                p.vocab = v;
            }
            if let Some(m) = mentions_per_doc {
                p.mentions_per_doc = m;
            }
            if let Some(f) = train_fraction {
                p.train_fraction = f;
            }
            commands::synth(&p, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
