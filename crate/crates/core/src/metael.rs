//! The supervised ensemble: labelling of training mentions, model training,
//! and the LOOSE and STRICT unification strategies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentMode, MentionGroup};
use crate::baselines::BaselineKind;
use crate::corpus::{write_records, AnnotationRecord, Corpus, EntityAnnotation};
use crate::error::{Error, Result};
use crate::evaluation::{binary_metrics, multilabel_metrics, BinaryReport, MultiLabelReport};
use crate::features::{
    build_training_stats, CandidateDictionary, CorpusIndex, FeatureExtractor, FeatureMask, SystemTrainingStats,
};
use crate::learners::{
    train_binary_relevance, train_margin, BinaryInstance, BinaryRelevanceModel, ForestParams, MarginModel,
    MarginParams, MultiLabelInstance,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaElConfig {
    pub alignment: AlignmentMode,
    pub features: FeatureMask,
    pub forest: ForestParams,
    pub margin: MarginParams,
    /// Emit the consensus entity for unanimous groups without consulting
    /// the classifier.
    pub unanimity_shortcut: bool,
    /// Keep multi-recogniser training mentions that no system got right.
    pub include_empty_label_sets: bool,
}

impl Default for MetaElConfig {
    fn default() -> Self {
        Self {
            alignment: AlignmentMode::Strong,
            features: FeatureMask::all(),
            forest: ForestParams::default(),
            margin: MarginParams::default(),
            unanimity_shortcut: true,
            include_empty_label_sets: true,
        }
    }
}

/// Per-system gate used by STRICT for single-recogniser mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryDecider {
    Margin(MarginModel),
    /// Training data for the system held only one class (or none).
    Constant {
        accept: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub gold_groups: usize,
    pub multilabel_instances: usize,
    pub empty_label_sets: usize,
    pub label_counts: BTreeMap<String, usize>,
    pub binary_balance: BTreeMap<String, ClassBalance>,
    pub constant_binary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaElModel {
    pub format_version: u32,
    pub systems: Vec<String>,
    pub config: MetaElConfig,
    pub stats: SystemTrainingStats,
    pub br: BinaryRelevanceModel,
    pub per_system_binary: BTreeMap<String, BinaryDecider>,
    pub summary: TrainingSummary,
}

impl MetaElModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.check_version()?;
        Ok(model)
    }

    fn check_version(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_reader(BufReader::new(file))?;
        model.check_version()?;
        Ok(model)
    }

    pub fn feature_dim(&self) -> usize {
        self.config.features.dim(self.systems.len())
    }

    fn extractor<'a>(&'a self, index: &'a CorpusIndex, cand: &'a CandidateDictionary) -> FeatureExtractor<'a> {
        FeatureExtractor {
            index,
            cand,
            stats: &self.stats,
            systems: &self.systems,
            mask: &self.config.features,
        }
    }

    fn check_groups(&self, groups: &[MentionGroup]) -> Result<()> {
        let known: BTreeSet<&String> = self.systems.iter().collect();
        for g in groups {
            if let Some(sys) = g.per_system.keys().find(|s| !known.contains(s)) {
                return Err(Error::invalid(format!(
                    "system {sys:?} is not one of the model's systems {:?}",
                    self.systems
                )));
            }
        }
        Ok(())
    }

    /// The present system with the highest multi-label confidence. Exact
    /// ties go to the higher training F1, then to the earlier system.
    pub fn select_system(&self, group: &MentionGroup, x: &[f64]) -> Result<(String, BTreeMap<String, f64>)> {
        let confidences = self.br.predict_label_confidences(x)?;
        let mut best: Option<(&String, f64, f64)> = None;
        for sys in self.systems.iter().filter(|s| group.per_system.contains_key(*s)) {
            let conf = confidences[sys];
            let f1 = self.stats.overall_f1(sys);
            let better = match best {
                None => true,
                Some((_, bc, bf)) => conf > bc || (conf == bc && f1 > bf),
            };
            if better {
                best = Some((sys, conf, f1));
            }
        }
        let (sys, _, _) = best.ok_or_else(|| Error::invalid("group has no recognising system"))?;
        Ok((sys.clone(), confidences))
    }
}

/// Label set for a gold-bearing group: the systems whose entity equals gold.
pub fn correct_systems(group: &MentionGroup) -> BTreeSet<String> {
    match &group.gold {
        Some(gold) => group
            .per_system
            .iter()
            .filter(|(_, e)| *e == gold)
            .map(|(s, _)| s.clone())
            .collect(),
        None => BTreeSet::new(),
    }
}

fn multilabel_candidates(groups: &[MentionGroup], include_empty: bool) -> Vec<&MentionGroup> {
    groups
        .iter()
        .filter(|g| g.gold.is_some() && g.recognisers() >= 2)
        .filter(|g| include_empty || !correct_systems(g).is_empty())
        .collect()
}

/// One instance per gold-bearing group recognised by at least two systems.
pub fn label_multilabel_instances(
    groups: &[MentionGroup],
    extractor: &FeatureExtractor<'_>,
    include_empty: bool,
) -> Result<Vec<MultiLabelInstance>> {
    multilabel_candidates(groups, include_empty)
        .into_par_iter()
        .map(|g| {
            Ok(MultiLabelInstance {
                x: extractor.vector(g)?,
                labels: correct_systems(g),
            })
        })
        .collect()
}

/// One instance per gold-bearing group in which `system` is present.
pub fn label_binary_instances(
    groups: &[MentionGroup],
    system: &str,
    extractor: &FeatureExtractor<'_>,
) -> Result<Vec<BinaryInstance>> {
    groups
        .par_iter()
        .filter_map(|g| g.is_correct(system).map(|y| (g, y)))
        .map(|(g, y)| {
            Ok(BinaryInstance {
                x: extractor.vector(g)?,
                y,
            })
        })
        .collect()
}

/// Trains the multi-label forest ensemble and the per-system gates.
/// Feature statistics come from the training corpus only.
pub fn train_metael(
    corpus: &Corpus,
    train_groups: &[MentionGroup],
    systems: &[String],
    cand: &CandidateDictionary,
    config: &MetaElConfig,
) -> Result<MetaElModel> {
    if config.features.is_empty() {
        return Err(Error::invalid("feature mask selects no features"));
    }
    let gold_groups = train_groups.iter().filter(|g| g.gold.is_some()).count();
    if gold_groups == 0 {
        return Err(Error::invalid("training data has no ground-truth annotations"));
    }
    let stats = build_training_stats(train_groups, systems)?;
    let index = CorpusIndex::new(corpus, train_groups);
    let extractor = FeatureExtractor {
        index: &index,
        cand,
        stats: &stats,
        systems,
        mask: &config.features,
    };

    let ml = label_multilabel_instances(train_groups, &extractor, config.include_empty_label_sets)?;
    if ml.is_empty() {
        return Err(Error::invalid(
            "no training mention is recognised by two or more systems; cannot train the multi-label model",
        ));
    }
    let br = train_binary_relevance(&ml, systems, &config.forest)?;

    let mut summary = TrainingSummary {
        gold_groups,
        multilabel_instances: ml.len(),
        empty_label_sets: ml.iter().filter(|i| i.labels.is_empty()).count(),
        ..Default::default()
    };
    for sys in systems {
        summary
            .label_counts
            .insert(sys.clone(), ml.iter().filter(|i| i.labels.contains(sys)).count());
    }

    let mut per_system_binary = BTreeMap::new();
    for sys in systems {
        let data = label_binary_instances(train_groups, sys, &extractor)?;
        let positive = data.iter().filter(|d| d.y).count();
        let negative = data.len() - positive;
        summary
            .binary_balance
            .insert(sys.clone(), ClassBalance { positive, negative });
        let decider = if positive > 0 && negative > 0 {
            BinaryDecider::Margin(train_margin(&data, &config.margin)?)
        } else {
            summary.constant_binary.push(sys.clone());
            BinaryDecider::Constant { accept: negative == 0 }
        };
        per_system_binary.insert(sys.clone(), decider);
    }

    Ok(MetaElModel {
        format_version: MODEL_FORMAT_VERSION,
        systems: systems.to_vec(),
        config: config.clone(),
        stats,
        br,
        per_system_binary,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DecisionPath {
    Agreement,
    Predicted,
    SingleSystem,
    BinaryAccepted,
    ConstantAccepted,
    Baseline(BaselineKind),
}

impl fmt::Display for DecisionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Agreement => f.write_str("agreement"),
            Self::Predicted => f.write_str("predicted"),
            Self::SingleSystem => f.write_str("single-system"),
            Self::BinaryAccepted => f.write_str("binary-accepted"),
            Self::ConstantAccepted => f.write_str("constant-accepted"),
            Self::Baseline(k) => f.write_str(k.name()),
        }
    }
}

impl FromStr for DecisionPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "agreement" => Self::Agreement,
            "predicted" => Self::Predicted,
            "single-system" => Self::SingleSystem,
            "binary-accepted" => Self::BinaryAccepted,
            "constant-accepted" => Self::ConstantAccepted,
            other => Self::Baseline(other.parse()?),
        })
    }
}

impl From<DecisionPath> for String {
    fn from(p: DecisionPath) -> Self {
        p.to_string()
    }
}

impl TryFrom<String> for DecisionPath {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub system: String,
    pub path: DecisionPath,
}

/// The merged output; `provenance[i]` explains `annotations[i]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnifiedAnnotationSet {
    pub annotations: Vec<EntityAnnotation>,
    pub provenance: Vec<Provenance>,
}

impl UnifiedAnnotationSet {
    pub fn push(&mut self, annotation: EntityAnnotation, provenance: Provenance) {
        self.annotations.push(annotation);
        self.provenance.push(provenance);
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.annotations
            .iter()
            .zip(&self.provenance)
            .map(|(a, p)| AnnotationRecord {
                system: Some(p.system.clone()),
                path: Some(p.path.to_string()),
                ..AnnotationRecord::from(a)
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> std::io::Result<()> {
        write_records(writer, &self.records())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub(crate) fn from_parts(parts: Vec<Option<(EntityAnnotation, Provenance)>>) -> Self {
        let mut out = Self::default();
        for (a, p) in parts.into_iter().flatten() {
            out.push(a, p);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Loose,
    Strict,
}

fn emit(group: &MentionGroup, system: &str, path: DecisionPath) -> Option<(EntityAnnotation, Provenance)> {
    let entity = group.per_system.get(system)?.clone();
    Some((
        EntityAnnotation {
            mention: group.mention.clone(),
            entity,
        },
        Provenance {
            system: system.to_string(),
            path,
        },
    ))
}

fn decide(
    model: &MetaElModel,
    extractor: &FeatureExtractor<'_>,
    group: &MentionGroup,
    strategy: Strategy,
) -> Result<Option<(EntityAnnotation, Provenance)>> {
    let present: Vec<&String> = model
        .systems
        .iter()
        .filter(|s| group.per_system.contains_key(*s))
        .collect();
    match present.len() {
        0 => Ok(None),
        1 => {
            let sys = present[0];
            match strategy {
                Strategy::Loose => Ok(emit(group, sys, DecisionPath::SingleSystem)),
                Strategy::Strict => match &model.per_system_binary[sys] {
                    BinaryDecider::Margin(m) => {
                        if m.predict(&extractor.vector(group)?)? {
                            Ok(emit(group, sys, DecisionPath::BinaryAccepted))
                        } else {
                            Ok(None)
                        }
                    }
                    BinaryDecider::Constant { accept: true } => Ok(emit(group, sys, DecisionPath::ConstantAccepted)),
                    BinaryDecider::Constant { accept: false } => Ok(None),
                },
            }
        }
        _ => {
            if model.config.unanimity_shortcut && group.is_unanimous() {
                return Ok(emit(group, present[0], DecisionPath::Agreement));
            }
            let (sys, _) = model.select_system(group, &extractor.vector(group)?)?;
            Ok(emit(group, &sys, DecisionPath::Predicted))
        }
    }
}

/// Unifies the groups of a (test) corpus. Surface and document statistics
/// come from `corpus`; per-system correctness features come from training.
pub fn annotate(
    model: &MetaElModel,
    corpus: &Corpus,
    groups: &[MentionGroup],
    cand: &CandidateDictionary,
    strategy: Strategy,
) -> Result<UnifiedAnnotationSet> {
    model.check_groups(groups)?;
    let index = CorpusIndex::new(corpus, groups);
    let extractor = model.extractor(&index, cand);
    let parts = groups
        .par_iter()
        .map(|g| decide(model, &extractor, g, strategy))
        .collect::<Result<Vec<_>>>()?;
    Ok(UnifiedAnnotationSet::from_parts(parts))
}

/// Trusts single-recogniser mentions; uses the classifier when systems
/// disagree.
pub fn annotate_loose(
    model: &MetaElModel,
    corpus: &Corpus,
    groups: &[MentionGroup],
    cand: &CandidateDictionary,
) -> Result<UnifiedAnnotationSet> {
    annotate(model, corpus, groups, cand, Strategy::Loose)
}

/// As LOOSE, but single-recogniser mentions must pass the system's gate.
pub fn annotate_strict(
    model: &MetaElModel,
    corpus: &Corpus,
    groups: &[MentionGroup],
    cand: &CandidateDictionary,
) -> Result<UnifiedAnnotationSet> {
    annotate(model, corpus, groups, cand, Strategy::Strict)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierDiagnostics {
    pub multilabel: MultiLabelReport,
    pub binary: BTreeMap<String, BinaryReport>,
}

/// Scores the trained classifiers themselves on gold-bearing test groups.
pub fn classifier_diagnostics(
    model: &MetaElModel,
    corpus: &Corpus,
    groups: &[MentionGroup],
    cand: &CandidateDictionary,
) -> Result<ClassifierDiagnostics> {
    model.check_groups(groups)?;
    let index = CorpusIndex::new(corpus, groups);
    let extractor = model.extractor(&index, cand);

    let ml_groups: Vec<MentionGroup> = multilabel_candidates(groups, model.config.include_empty_label_sets)
        .into_iter()
        .cloned()
        .collect();
    let rows = ml_groups
        .par_iter()
        .map(|g| {
            let x = extractor.vector(g)?;
            let predicted = model.br.predict_labels(&x)?;
            let (chosen, _) = model.select_system(g, &x)?;
            Ok((predicted, correct_systems(g), Some(chosen)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut predicted = Vec::with_capacity(rows.len());
    let mut truth = Vec::with_capacity(rows.len());
    let mut chosen = Vec::with_capacity(rows.len());
    for (p, t, c) in rows {
        predicted.push(p);
        truth.push(t);
        chosen.push(c);
    }
    let multilabel = multilabel_metrics(&predicted, &truth, &model.systems, &chosen, &ml_groups)?;

    let mut binary = BTreeMap::new();
    for sys in &model.systems {
        let data = label_binary_instances(groups, sys, &extractor)?;
        let preds = data
            .iter()
            .map(|d| match &model.per_system_binary[sys] {
                BinaryDecider::Margin(m) => m.predict(&d.x),
                BinaryDecider::Constant { accept } => Ok(*accept),
            })
            .collect::<Result<Vec<bool>>>()?;
        let truth: Vec<bool> = data.iter().map(|d| d.y).collect();
        binary.insert(sys.clone(), binary_metrics(&preds, &truth)?);
    }
    Ok(ClassifierDiagnostics { multilabel, binary })
}
