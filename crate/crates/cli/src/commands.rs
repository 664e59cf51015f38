use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use metael_core::baselines::{apply_baseline, BaselineKind, BaselinePolicy};
use metael_core::corpus::{load_annotation_set, load_corpus, load_ground_truth, AnnotationSet, Corpus, GroundTruth};
use metael_core::evaluation::{
    ablation_run, el_prf, paired_t_test, prf_csv, render_ablation_table, render_prf_table, standard_ablation_masks,
    PrfScore, SignificanceResult, SplitData,
};
use metael_core::features::build_training_stats;
use metael_core::metael::{
    annotate as annotate_groups, classifier_diagnostics, ClassifierDiagnostics, Strategy, TrainingSummary,
};
use metael_core::synth::{generate, write_dataset, SynthParams};
use metael_core::{agreement_statistics, train_metael, Error, MetaElModel, Result, SystemTrainingStats};

use crate::config::{load_split, RunConfig, SplitName, SplitPaths};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn stats(cfg: &RunConfig, split: SplitName) -> Result<()> {
    let data = load_split(cfg, split, true)?;
    let report = agreement_statistics(&data.groups, cfg.systems.len())?;
    let table = report.render_table();
    let stem = cfg.output_dir.join(format!("stats-{}", split.name()));
    write_json(&stem.with_extension("json"), &report)?;
    write_text(&stem.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct SystemScore<'a> {
    system: &'a str,
    precision: f64,
    f1: f64,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    model: &'a Path,
    systems: &'a [String],
    summary: &'a TrainingSummary,
    per_system: Vec<SystemScore<'a>>,
}

pub fn train(cfg: &RunConfig, model_path: Option<PathBuf>) -> Result<()> {
    let data = load_split(cfg, SplitName::Train, true)?;
    let cand = cfg.candidates()?;
    let model = train_metael(&data.corpus, &data.groups, &cfg.systems, &cand, &cfg.learner())?;
    let path = model_path.unwrap_or_else(|| cfg.output_dir.join("model.json"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    model.save(&path)?;

    let per_system = cfg
        .systems
        .iter()
        .map(|s| SystemScore {
            system: s,
            precision: model.stats.overall_precision(s),
            f1: model.stats.overall_f1(s),
        })
        .collect();
    let report = TrainReport {
        model: &path,
        systems: &cfg.systems,
        summary: &model.summary,
        per_system,
    };
    write_json(&cfg.output_dir.join("training_summary.json"), &report)?;

    let s = &model.summary;
    println!("model written to {}", path.display());
    println!("gold mentions: {}", s.gold_groups);
    println!(
        "multi-label instances: {} ({} with no correct system)",
        s.multilabel_instances, s.empty_label_sets
    );
    for sys in &cfg.systems {
        let count = s.label_counts.get(sys).copied().unwrap_or(0);
        let bal = s.binary_balance.get(sys).cloned().unwrap_or_default();
        let constant = if s.constant_binary.contains(sys) {
            ", constant gate"
        } else {
            ""
        };
        println!(
            "{sys}: P {:.1}  F1 {:.1}  correct in {count} instances, gate {}+/{}-{constant}",
            100.0 * model.stats.overall_precision(sys),
            100.0 * model.stats.overall_f1(sys),
            bal.positive,
            bal.negative,
        );
    }
    Ok(())
}

fn baseline_policy(cfg: &RunConfig, kind: BaselineKind, model: Option<&MetaElModel>) -> Result<BaselinePolicy> {
    let priors: Option<SystemTrainingStats> = if !kind.needs_priors() {
        None
    } else if let Some(m) = model {
        Some(m.stats.clone())
    } else {
        let train = load_split(cfg, SplitName::Train, true)?;
        Some(build_training_stats(&train.groups, &cfg.systems)?)
    };
    let mut policy = BaselinePolicy::new(kind, priors, cfg.baseline_seed);
    policy.normalization = cfg.vote_normalization;
    Ok(policy)
}

fn check_model(cfg: &RunConfig, model: &MetaElModel) -> Result<()> {
    if model.systems != cfg.systems {
        return Err(Error::invalid(format!(
            "model was trained on systems {:?} but the run lists {:?}",
            model.systems, cfg.systems
        )));
    }
    if model.config.alignment != cfg.alignment {
        return Err(Error::invalid(format!(
            "model was trained with {} alignment but the run uses {}",
            model.config.alignment, cfg.alignment
        )));
    }
    Ok(())
}

pub fn annotate(
    cfg: &RunConfig,
    strategy: &str,
    model_path: Option<PathBuf>,
    split: SplitName,
    output: Option<PathBuf>,
) -> Result<()> {
    let model = model_path.as_ref().map(MetaElModel::load).transpose()?;
    if let Some(m) = &model {
        check_model(cfg, m)?;
    }
    let learned = match strategy {
        "loose" => Some(Strategy::Loose),
        "strict" => Some(Strategy::Strict),
        _ => None,
    };
    let kind = match learned {
        Some(_) => None,
        None => Some(strategy.parse::<BaselineKind>().map_err(|_| {
            Error::invalid(format!(
                "unknown strategy {strategy:?}; expected loose, strict or one of {}",
                BaselineKind::ALL.map(|k| k.name()).join(", ")
            ))
        })?),
    };
    let need_gt = kind == Some(BaselineKind::UpperBound);
    if need_gt && cfg.split(split).ground_truth.is_none() {
        return Err(Error::invalid(
            "the upper_bound strategy needs ground truth for the split",
        ));
    }
    let data = load_split(cfg, split, need_gt)?;
    let unified = match (learned, kind) {
        (Some(s), _) => {
            let model = model
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("strategy {strategy} needs --model")))?;
            let cand = cfg.candidates()?;
            annotate_groups(model, &data.corpus, &data.groups, &cand, s)?
        }
        (None, Some(k)) => apply_baseline(&baseline_policy(cfg, k, model.as_ref())?, &data.groups)?,
        (None, None) => unreachable!("strategy parsed above"),
    };
    let path = output.unwrap_or_else(|| cfg.output_dir.join(format!("{strategy}-{}.jsonl", split.name())));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    unified.save(&path)?;
    println!("{} annotations written to {}", unified.len(), path.display());
    Ok(())
}

fn load_gold(cfg: &RunConfig, split: SplitName) -> Result<(Corpus, GroundTruth)> {
    let paths: &SplitPaths = cfg.split(split);
    let name = split.name();
    let docs = paths
        .documents
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{name} split: no documents file configured")))?;
    let gt = paths
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{name} split: no ground truth configured")))?;
    let corpus = load_corpus(docs)?;
    let gt = load_ground_truth(gt, &corpus)?;
    Ok((corpus, gt))
}

pub struct EvaluateRequest {
    pub outputs: Vec<(String, PathBuf)>,
    pub with_systems: bool,
    pub model: Option<PathBuf>,
    pub split: SplitName,
    pub n_splits: usize,
    pub alpha: f64,
    pub shuffle_seed: Option<u64>,
    pub csv: bool,
}

#[derive(Serialize)]
struct NamedScore {
    name: String,
    score: PrfScore,
}

#[derive(Serialize)]
struct Comparison {
    a: String,
    b: String,
    #[serde(flatten)]
    result: SignificanceResult,
}

#[derive(Serialize)]
struct EvaluationReport {
    split: &'static str,
    scores: Vec<NamedScore>,
    significance: Vec<Comparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<ClassifierDiagnostics>,
}

fn render_significance(rows: &[Comparison]) -> String {
    let mut out = String::new();
    for c in rows {
        let verdict = if c.result.significant {
            "significant"
        } else {
            "not significant"
        };
        out.push_str(&format!(
            "{} vs {}: t = {:.4}, p = {:.4} ({verdict} at {})\n",
            c.a, c.b, c.result.t_statistic, c.result.p_value, c.result.alpha
        ));
    }
    out
}

fn render_diagnostics(d: &ClassifierDiagnostics) -> String {
    let ml = &d.multilabel;
    let mut out = format!(
        "Multi-label: {} instances, Jaccard {:.3}, Hamming loss {:.3}, exact match {:.3}, real prediction accuracy {:.3}\n",
        ml.instances, ml.jaccard, ml.hamming_loss, ml.exact_match, ml.real_prediction_accuracy
    );
    for (sys, b) in &d.binary {
        out.push_str(&format!(
            "Binary {sys}: F1(true) {:.3}, F1(false) {:.3}, macro F1 {:.3}\n",
            b.true_class.f1, b.false_class.f1, b.macro_f1
        ));
    }
    out
}

pub fn evaluate(cfg: &RunConfig, req: &EvaluateRequest) -> Result<()> {
    let mut named: Vec<(String, AnnotationSet)> = Vec::new();
    let mut diagnostics = None;
    let (corpus, gt) = if req.with_systems || req.model.is_some() {
        let data = load_split(cfg, req.split, true)?;
        if let Some(path) = &req.model {
            let model = MetaElModel::load(path)?;
            check_model(cfg, &model)?;
            let cand = cfg.candidates()?;
            diagnostics = Some(classifier_diagnostics(&model, &data.corpus, &data.groups, &cand)?);
        }
        if req.with_systems {
            named.extend(data.sets.into_iter().map(|s| (s.system_id.clone(), s)));
        }
        (data.corpus, data.gt.expect("ground truth required above"))
    } else {
        load_gold(cfg, req.split)?
    };
    for (name, path) in &req.outputs {
        if named.iter().any(|(n, _)| n == name) {
            return Err(Error::invalid(format!("output name {name:?} used twice")));
        }
        named.push((name.clone(), load_annotation_set(path, name, &corpus)?));
    }

    let scores: Vec<(String, PrfScore)> = named
        .iter()
        .map(|(n, s)| (n.clone(), el_prf(&s.annotations, &gt, cfg.alignment)))
        .collect();
    let mut significance = Vec::new();
    for i in 0..named.len() {
        for j in i + 1..named.len() {
            let result = paired_t_test(
                &named[i].1.annotations,
                &named[j].1.annotations,
                &gt,
                cfg.alignment,
                req.n_splits,
                req.alpha,
                req.shuffle_seed,
            )?;
            significance.push(Comparison {
                a: named[i].0.clone(),
                b: named[j].0.clone(),
                result,
            });
        }
    }

    let mut text = render_prf_table("Method", &scores);
    if !significance.is_empty() {
        text.push('\n');
        text.push_str(&render_significance(&significance));
    }
    if let Some(d) = &diagnostics {
        text.push('\n');
        text.push_str(&render_diagnostics(d));
    }
    let stem = cfg.output_dir.join(format!("evaluation-{}", req.split.name()));
    if req.csv {
        write_text(&stem.with_extension("csv"), &prf_csv(&scores))?;
    }
    let report = EvaluationReport {
        split: req.split.name(),
        scores: scores
            .into_iter()
            .map(|(name, score)| NamedScore { name, score })
            .collect(),
        significance,
        diagnostics,
    };
    write_json(&stem.with_extension("json"), &report)?;
    write_text(&stem.with_extension("txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn ablate(cfg: &RunConfig, csv: bool) -> Result<()> {
    let train = load_split(cfg, SplitName::Train, true)?;
    let test = load_split(cfg, SplitName::Test, true)?;
    let cand = cfg.candidates()?;
    let rows = ablation_run(
        SplitData {
            corpus: &train.corpus,
            groups: &train.groups,
        },
        SplitData {
            corpus: &test.corpus,
            groups: &test.groups,
        },
        test.gt()?,
        &cfg.systems,
        &cand,
        &standard_ablation_masks(),
        &cfg.learner(),
    )?;
    let table = render_ablation_table(&rows);
    let stem = cfg.output_dir.join("ablation");
    write_json(&stem.with_extension("json"), &rows)?;
    write_text(&stem.with_extension("txt"), &table)?;
    if csv {
        let named: Vec<(String, PrfScore)> = rows.iter().map(|r| (r.label.clone(), r.score)).collect();
        write_text(&stem.with_extension("csv"), &prf_csv(&named))?;
    }
    print!("{table}");
    Ok(())
}

pub fn ttest(
    cfg: &RunConfig,
    a: (String, PathBuf),
    b: (String, PathBuf),
    split: SplitName,
    n_splits: usize,
    alpha: f64,
    shuffle_seed: Option<u64>,
) -> Result<()> {
    let (corpus, gt) = load_gold(cfg, split)?;
    let set_a = load_annotation_set(&a.1, &a.0, &corpus)?;
    let set_b = load_annotation_set(&b.1, &b.0, &corpus)?;
    let result = paired_t_test(
        &set_a.annotations,
        &set_b.annotations,
        &gt,
        cfg.alignment,
        n_splits,
        alpha,
        shuffle_seed,
    )?;
    let cmp = Comparison { a: a.0, b: b.0, result };
    let text = render_significance(std::slice::from_ref(&cmp));
    write_json(&cfg.output_dir.join(format!("ttest-{}.json", split.name())), &cmp)?;
    print!("{text}");
    Ok(())
}

fn relative(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| path.to_path_buf())
}

pub fn synth(params: &SynthParams, out: &Path) -> Result<()> {
    let data = generate(params)?;
    ensure_dir(out)?;
    let files = write_dataset(&data, out)?;
    write_json(&out.join("synth_params.json"), params)?;

    // a run configuration next to the data, with paths relative to it
    let split_paths = |f: &metael_core::synth::SplitFiles| SplitPaths {
        documents: Some(relative(&f.documents, out)),
        ground_truth: Some(relative(&f.ground_truth, out)),
        annotations: f.systems.iter().map(|(s, p)| (s.clone(), relative(p, out))).collect(),
    };
    let cfg = RunConfig {
        systems: files.system_order.clone(),
        train: split_paths(&files.train),
        test: split_paths(&files.test),
        candidates: Some(relative(&files.candidates, out)),
        output_dir: PathBuf::from("results"),
        ..RunConfig::default()
    };
    write_json(&out.join("config.json"), &cfg)?;
    println!(
        "{} train and {} test documents, systems {}; run configuration at {}",
        data.train.corpus.len(),
        data.test.corpus.len(),
        files.system_order.join(", "),
        out.join("config.json").display()
    );
    Ok(())
}
