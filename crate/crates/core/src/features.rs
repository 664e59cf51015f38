//! Per-mention features computed from the corpus itself, a candidate
//! dictionary, and each system's track record on the training data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::MentionGroup;
use crate::corpus::{surface_key, Corpus};
use crate::error::{Error, Result};
use crate::evaluation::PrfScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    SWords,
    SF,
    SDf,
    SCand,
    SCorr,
    SRatio,
    MPos,
    MSent,
    DWords,
    DEnts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    Surface,
    Mention,
    Document,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 3] = [Self::Surface, Self::Mention, Self::Document];

    pub fn label(self) -> &'static str {
        match self {
            Self::Surface => "surface form-based",
            Self::Mention => "mention-based",
            Self::Document => "document-based",
        }
    }
}

impl Feature {
    pub const ALL: [Feature; 10] = [
        Feature::SWords,
        Feature::SF,
        Feature::SDf,
        Feature::SCand,
        Feature::SCorr,
        Feature::SRatio,
        Feature::MPos,
        Feature::MSent,
        Feature::DWords,
        Feature::DEnts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::SWords => "s_words",
            Feature::SF => "s_f",
            Feature::SDf => "s_df",
            Feature::SCand => "s_cand",
            Feature::SCorr => "s_corr",
            Feature::SRatio => "s_ratio",
            Feature::MPos => "m_pos",
            Feature::MSent => "m_sent",
            Feature::DWords => "d_words",
            Feature::DEnts => "d_ents",
        }
    }

    pub fn category(self) -> FeatureCategory {
        match self {
            Feature::SWords | Feature::SF | Feature::SDf | Feature::SCand | Feature::SCorr | Feature::SRatio => {
                FeatureCategory::Surface
            }
            Feature::MPos | Feature::MSent => FeatureCategory::Mention,
            Feature::DWords | Feature::DEnts => FeatureCategory::Document,
        }
    }

    /// Per-system features expand into one column per system.
    pub fn is_per_system(self) -> bool {
        matches!(self, Feature::SCorr | Feature::SRatio)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature {s:?}")))
    }
}

/// The set of features a model is allowed to see.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureMask(BTreeSet<Feature>);

impl Default for FeatureMask {
    fn default() -> Self {
        Self::all()
    }
}

impl FeatureMask {
    pub fn all() -> Self {
        Self(Feature::ALL.into_iter().collect())
    }

    pub fn new(features: impl IntoIterator<Item = Feature>) -> Result<Self> {
        let set: BTreeSet<Feature> = features.into_iter().collect();
        if set.is_empty() {
            return Err(Error::invalid("feature mask selects no features"));
        }
        Ok(Self(set))
    }

    pub fn categories(cats: &[FeatureCategory]) -> Result<Self> {
        Self::new(Feature::ALL.into_iter().filter(|f| cats.contains(&f.category())))
    }

    pub fn without(feature: Feature) -> Result<Self> {
        Self::new(Feature::ALL.into_iter().filter(|&f| f != feature))
    }

    pub fn contains(&self, f: Feature) -> bool {
        self.0.contains(&f)
    }

    pub fn is_all(&self) -> bool {
        self.0.len() == Feature::ALL.len()
    }

    pub fn features(&self) -> impl Iterator<Item = Feature> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Width of the vector produced for `n_systems` systems.
    pub fn dim(&self, n_systems: usize) -> usize {
        self.0
            .iter()
            .map(|f| if f.is_per_system() { n_systems } else { 1 })
            .sum()
    }
}

/// Number of candidate entities per surface form. Unknown surfaces map to 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateDictionary {
    counts: BTreeMap<String, u64>,
}

impl CandidateDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keys are normalized; if two raw surfaces collapse onto one key the
    /// larger count wins.
    pub fn insert(&mut self, surface: &str, count: u64) {
        let entry = self.counts.entry(surface_key(surface)).or_insert(0);
        *entry = (*entry).max(count);
    }

    pub fn get(&self, surface: &str) -> u64 {
        self.counts.get(&surface_key(surface)).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    /// Normalized surfaces and counts in key order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), &path.display().to_string())
    }

    /// Parses `surface<TAB>count` lines.
    pub fn parse<R: BufRead>(reader: R, name: &str) -> Result<Self> {
        let mut dict = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record_err = |message: String| Error::Record {
                file: name.to_string(),
                line: i + 1,
                message,
            };
            let (surface, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| record_err("expected surface<TAB>count".into()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| record_err(format!("bad count {count:?}: {e}")))?;
            dict.insert(surface, count);
        }
        Ok(dict)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceRecord {
    pub correct: u32,
    pub wrong: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemStats {
    /// Keyed by lower-cased, whitespace-normalized surface.
    pub surfaces: BTreeMap<String, SurfaceRecord>,
    pub overall: PrfScore,
}

/// Per-system correctness bookkeeping on the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemTrainingStats {
    pub systems: Vec<String>,
    pub per_system: BTreeMap<String, SystemStats>,
}

impl SystemTrainingStats {
    fn get(&self, system: &str) -> Option<&SystemStats> {
        self.per_system.get(system)
    }

    pub fn overall_precision(&self, system: &str) -> f64 {
        self.get(system).map_or(0.0, |s| s.overall.precision)
    }

    pub fn overall_f1(&self, system: &str) -> f64 {
        self.get(system).map_or(0.0, |s| s.overall.f1)
    }

    pub fn surface(&self, system: &str, surface: &str) -> SurfaceRecord {
        self.get(system)
            .and_then(|s| s.surfaces.get(&surface_key(surface)))
            .copied()
            .unwrap_or_default()
    }

    /// Fraction of correct links for this surface, backing off to the
    /// system's overall precision for unseen surfaces.
    pub fn surface_ratio(&self, system: &str, surface: &str) -> f64 {
        let r = self.surface(system, surface);
        let seen = r.correct + r.wrong;
        if seen == 0 {
            self.overall_precision(system)
        } else {
            r.correct as f64 / seen as f64
        }
    }

    pub fn max_precision(&self) -> f64 {
        self.systems
            .iter()
            .map(|s| self.overall_precision(s))
            .fold(0.0, f64::max)
    }
}

/// Counts, per system and surface, how often the system's entity matched
/// gold. Overall precision/F1 use every group the system appears in, so
/// annotations without a gold counterpart count against precision.
pub fn build_training_stats(groups: &[MentionGroup], systems: &[String]) -> Result<SystemTrainingStats> {
    if systems.is_empty() {
        return Err(Error::invalid("training statistics need at least one system"));
    }
    let unique: BTreeSet<&String> = systems.iter().collect();
    if unique.len() != systems.len() {
        return Err(Error::invalid("duplicate system id in systems list"));
    }

    let gt_total = groups.iter().filter(|g| g.gold.is_some()).count();
    let mut per_system = BTreeMap::new();
    for sys in systems {
        let mut surfaces: BTreeMap<String, SurfaceRecord> = BTreeMap::new();
        let mut recognised = 0usize;
        let mut correct = 0usize;
        for g in groups {
            let Some(entity) = g.per_system.get(sys) else { continue };
            recognised += 1;
            let Some(gold) = &g.gold else { continue };
            let rec = surfaces.entry(surface_key(&g.mention.surface)).or_default();
            if entity == gold {
                rec.correct += 1;
                correct += 1;
            } else {
                rec.wrong += 1;
            }
        }
        per_system.insert(
            sys.clone(),
            SystemStats {
                surfaces,
                overall: PrfScore::from_counts(correct, recognised, gt_total),
            },
        );
    }
    Ok(SystemTrainingStats {
        systems: systems.to_vec(),
        per_system,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemFeatures {
    pub s_corr: u32,
    pub s_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub s_words: u32,
    pub s_f: u32,
    pub s_df: u32,
    pub s_cand: u64,
    pub per_system: BTreeMap<String, SystemFeatures>,
    pub m_pos: f64,
    pub m_sent: u32,
    pub d_words: u32,
    pub d_ents: u32,
}

const SENTENCE_MARKS: [char; 4] = ['.', '!', '?', ';'];

fn lower_char(c: char) -> char {
    let mut it = c.to_lowercase();
    match (it.next(), it.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Lower-cases char by char so character offsets are preserved.
fn lower_preserving_len(s: impl Iterator<Item = char>) -> String {
    s.map(lower_char).collect()
}

/// Counts case-folded occurrences, including overlapping ones.
fn count_occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut start = 0;
    while let Some(i) = haystack[start..].find(needle) {
        count += 1;
        let at = start + i;
        start = at + haystack[at..].chars().next().map_or(1, char::len_utf8);
    }
    count
}

#[derive(Debug, Clone)]
struct DocStats {
    chars: Vec<char>,
    lowered: String,
    char_len: usize,
    words: usize,
    marks: Vec<usize>,
    groups: usize,
}

/// Corpus-level statistics needed for feature extraction: lower-cased text,
/// sentence boundaries, word counts, recognised-entity counts, and document
/// frequencies of every surface present in the groups.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    docs: HashMap<String, DocStats>,
    df: HashMap<String, usize>,
}

impl CorpusIndex {
    pub fn new(corpus: &Corpus, groups: &[MentionGroup]) -> Self {
        let mut group_counts: HashMap<&str, usize> = HashMap::new();
        for g in groups {
            *group_counts.entry(g.mention.doc_id.as_str()).or_default() += 1;
        }
        let docs: HashMap<String, DocStats> = corpus
            .documents()
            .iter()
            .map(|d| {
                let chars: Vec<char> = d.text.chars().collect();
                let marks = chars
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| SENTENCE_MARKS.contains(c))
                    .map(|(i, _)| i)
                    .collect();
                let stats = DocStats {
                    lowered: lower_preserving_len(chars.iter().copied()),
                    char_len: chars.len(),
                    words: d.text.split_whitespace().count(),
                    marks,
                    groups: group_counts.get(d.id.as_str()).copied().unwrap_or(0),
                    chars,
                };
                (d.id.clone(), stats)
            })
            .collect();

        let mut index = Self {
            docs,
            df: HashMap::new(),
        };
        let needles: BTreeSet<String> = groups.iter().filter_map(|g| index.needle(g)).collect();
        let df: HashMap<String, usize> = needles
            .into_par_iter()
            .map(|n| {
                let c = index.count_docs(&n);
                (n, c)
            })
            .collect();
        index.df = df;
        index
    }

    /// The mention's own text span, case-folded. Searching for the span as it
    /// appears in the document guarantees the mention itself is found.
    fn needle(&self, g: &MentionGroup) -> Option<String> {
        let doc = self.docs.get(&g.mention.doc_id)?;
        let start = g.mention.position.min(doc.char_len);
        let end = g.mention.end().min(doc.char_len);
        Some(lower_preserving_len(doc.chars[start..end].iter().copied()))
    }

    fn count_docs(&self, needle: &str) -> usize {
        self.docs
            .values()
            .filter(|d| !needle.is_empty() && d.lowered.contains(needle))
            .count()
    }

    fn document_frequency(&self, needle: &str) -> usize {
        match self.df.get(needle) {
            Some(&c) => c,
            None => self.count_docs(needle),
        }
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.docs.contains_key(doc_id)
    }

    pub fn document_groups(&self, doc_id: &str) -> Option<usize> {
        self.docs.get(doc_id).map(|d| d.groups)
    }
}

pub fn extract_features(
    group: &MentionGroup,
    index: &CorpusIndex,
    cand: &CandidateDictionary,
    stats: &SystemTrainingStats,
    systems: &[String],
) -> Result<FeatureVector> {
    let m = &group.mention;
    let doc = index
        .docs
        .get(&m.doc_id)
        .ok_or_else(|| Error::invalid(format!("document {:?} is not in the corpus index", m.doc_id)))?;
    if m.end() > doc.char_len {
        return Err(Error::invalid(format!(
            "mention at {}:{} extends past the document end",
            m.doc_id, m.position
        )));
    }
    let needle = index.needle(group).unwrap_or_default();

    let sent_start = {
        let k = doc.marks.partition_point(|&p| p < m.position);
        if k == 0 {
            0
        } else {
            doc.marks[k - 1] + 1
        }
    };
    let sent_end = {
        let k = doc.marks.partition_point(|&p| p < m.end());
        doc.marks.get(k).map_or(doc.char_len, |&p| p + 1)
    };

    let per_system = systems
        .iter()
        .map(|sys| {
            let rec = stats.surface(sys, &m.surface);
            (
                sys.clone(),
                SystemFeatures {
                    s_corr: rec.correct,
                    s_ratio: stats.surface_ratio(sys, &m.surface),
                },
            )
        })
        .collect();

    Ok(FeatureVector {
        s_words: m.surface.split_whitespace().count() as u32,
        s_f: count_occurrences(&doc.lowered, &needle) as u32,
        s_df: index.document_frequency(&needle) as u32,
        s_cand: cand.get(&m.surface),
        per_system,
        m_pos: m.position as f64 / doc.char_len as f64,
        m_sent: (sent_end - sent_start) as u32,
        d_words: doc.words as u32,
        d_ents: doc.groups as u32,
    })
}

/// Flattens to `[s_words, s_f, s_df, s_cand, m_pos, m_sent, d_words, d_ents]`
/// followed by `(s_corr, s_ratio)` for each system in `systems` order.
pub fn vectorize(fv: &FeatureVector, systems: &[String]) -> Result<Vec<f64>> {
    vectorize_masked(fv, systems, &FeatureMask::all())
}

/// As [`vectorize`] but keeping only the columns of features in `mask`.
pub fn vectorize_masked(fv: &FeatureVector, systems: &[String], mask: &FeatureMask) -> Result<Vec<f64>> {
    if systems.len() != fv.per_system.len() {
        return Err(Error::invalid(format!(
            "feature vector covers {} systems, model expects {}",
            fv.per_system.len(),
            systems.len()
        )));
    }
    let mut out = Vec::with_capacity(mask.dim(systems.len()));
    let scalars = [
        (Feature::SWords, fv.s_words as f64),
        (Feature::SF, fv.s_f as f64),
        (Feature::SDf, fv.s_df as f64),
        (Feature::SCand, fv.s_cand as f64),
        (Feature::MPos, fv.m_pos),
        (Feature::MSent, fv.m_sent as f64),
        (Feature::DWords, fv.d_words as f64),
        (Feature::DEnts, fv.d_ents as f64),
    ];
    out.extend(scalars.iter().filter(|(f, _)| mask.contains(*f)).map(|(_, v)| *v));
    for sys in systems {
        let sf = fv
            .per_system
            .get(sys)
            .ok_or_else(|| Error::invalid(format!("feature vector has no entry for system {sys:?}")))?;
        if mask.contains(Feature::SCorr) {
            out.push(sf.s_corr as f64);
        }
        if mask.contains(Feature::SRatio) {
            out.push(sf.s_ratio);
        }
    }
    Ok(out)
}

/// Everything needed to turn a group into a model input vector.
#[derive(Clone, Copy)]
pub struct FeatureExtractor<'a> {
    pub index: &'a CorpusIndex,
    pub cand: &'a CandidateDictionary,
    pub stats: &'a SystemTrainingStats,
    pub systems: &'a [String],
    pub mask: &'a FeatureMask,
}

impl FeatureExtractor<'_> {
    pub fn features(&self, group: &MentionGroup) -> Result<FeatureVector> {
        extract_features(group, self.index, self.cand, self.stats, self.systems)
    }

    pub fn vector(&self, group: &MentionGroup) -> Result<Vec<f64>> {
        vectorize_masked(&self.features(group)?, self.systems, self.mask)
    }
}
