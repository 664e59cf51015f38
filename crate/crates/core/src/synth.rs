//! Seeded generator of small corpora with planted entity mentions and
//! simulated linking systems whose accuracy depends on mention features.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    canonicalize_entity, write_annotations, write_documents, AnnotationSet, Corpus, Document, EntityAnnotation,
    GroundTruth, Mention,
};
use crate::error::{Error, Result};
use crate::features::CandidateDictionary;
use crate::seed;

/// Mention property under which a simulated system is reliable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthRegime {
    /// Surfaces of two or more words.
    MultiWord,
    /// Mentions starting in the first third of the document.
    EarlyPosition,
    /// Mentions of the most popular entities.
    HighFrequency,
    /// Uniform accuracy.
    None,
}

impl StrengthRegime {
    fn applies(self, m: &PlantedMention) -> bool {
        match self {
            Self::MultiWord => m.words >= 2,
            Self::EarlyPosition => m.early,
            Self::HighFrequency => m.popular,
            Self::None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemProfile {
    pub name: String,
    pub regime: StrengthRegime,
    /// Probability of recognising a planted mention.
    pub recall: f64,
    /// Probability of the right link inside the regime.
    pub strong_accuracy: f64,
    /// Probability of the right link elsewhere.
    pub weak_accuracy: f64,
    /// Expected spurious annotations per document.
    pub spurious_per_doc: f64,
}

impl SystemProfile {
    fn validate(&self) -> Result<()> {
        for (what, p) in [
            ("recall", self.recall),
            ("strong_accuracy", self.strong_accuracy),
            ("weak_accuracy", self.weak_accuracy),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "system {}: {what} {p} outside [0, 1]",
                    self.name
                )));
            }
        }
        if !(self.spurious_per_doc >= 0.0 && self.spurious_per_doc.is_finite()) {
            return Err(Error::invalid(format!(
                "system {}: spurious_per_doc must be a non-negative number",
                self.name
            )));
        }
        if self.name.trim().is_empty() {
            return Err(Error::invalid("system name is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub n_docs: usize,
    /// Number of distinct entities.
    pub vocab: usize,
    pub mentions_per_doc: usize,
    /// Share of documents (leading) placed in the training split.
    pub train_fraction: f64,
    pub profiles: Vec<SystemProfile>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            n_docs: 500,
            vocab: 300,
            mentions_per_doc: 6,
            train_fraction: 0.5,
            profiles: default_profiles(3),
        }
    }
}

/// Complementary systems: the first is reliable on multi-word surfaces, the
/// second on early mentions, the third on frequent entities. Extra systems
/// get no particular strength.
pub fn default_profiles(n: usize) -> Vec<SystemProfile> {
    let regimes = [
        StrengthRegime::MultiWord,
        StrengthRegime::EarlyPosition,
        StrengthRegime::HighFrequency,
    ];
    (0..n)
        .map(|i| SystemProfile {
            name: format!("sys{}", i + 1),
            regime: regimes.get(i).copied().unwrap_or(StrengthRegime::None),
            recall: 0.85,
            strong_accuracy: 0.95,
            weak_accuracy: 0.5,
            spurious_per_doc: 0.3,
        })
        .collect()
}

impl SynthParams {
    pub fn with_systems(n: usize) -> Self {
        Self {
            profiles: default_profiles(n),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::invalid("at least one simulated system is required"));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        let names: BTreeSet<&str> = self.profiles.iter().map(|p| p.name.as_str()).collect();
        if names.len() != self.profiles.len() {
            return Err(Error::invalid("simulated system names must be distinct"));
        }
        if self.n_docs < 2 {
            return Err(Error::invalid("n_docs must be at least 2"));
        }
        if self.vocab < 4 {
            return Err(Error::invalid("vocab must be at least 4"));
        }
        if self.mentions_per_doc == 0 {
            return Err(Error::invalid("mentions_per_doc must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplit {
    pub corpus: Corpus,
    pub gt: GroundTruth,
    pub systems: Vec<AnnotationSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: SynthSplit,
    pub test: SynthSplit,
    pub candidates: CandidateDictionary,
    pub system_ids: Vec<String>,
}

struct Entity {
    id: String,
    surface: String,
    popular: bool,
}

struct PlantedMention {
    mention: Mention,
    entity: usize,
    words: usize,
    early: bool,
    popular: bool,
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "ri", "ven", "dor", "sa", "mi", "tel", "bra", "on", "gu", "zel", "po", "ran", "ti", "ver", "ma", "qua",
    "nel", "is", "fa", "ro", "den", "ul",
];

const FILLER: [&str; 20] = [
    "the",
    "report",
    "said",
    "on",
    "monday",
    "after",
    "a",
    "long",
    "meeting",
    "with",
    "officials",
    "from",
    "near",
    "and",
    "later",
    "visited",
    "team",
    "match",
    "city",
    "season",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    let mut w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
    w[..1].make_ascii_uppercase();
    w
}

/// Entity inventory. Surfaces are shared by a few entities so that wrong
/// links are plausible confusions; popularity follows a Zipf-like law.
fn entities(rng: &mut ChaCha8Rng, vocab: usize) -> (Vec<Entity>, Vec<f64>, BTreeMap<String, Vec<usize>>) {
    let n_surfaces = (vocab / 2).max(2);
    let mut surfaces: Vec<String> = Vec::with_capacity(n_surfaces);
    let mut seen = BTreeSet::new();
    while surfaces.len() < n_surfaces {
        let words = if rng.gen_bool(0.4) { rng.gen_range(2..=3) } else { 1 };
        let s = (0..words).map(|_| word(rng)).collect::<Vec<_>>().join(" ");
        if seen.insert(s.to_lowercase()) {
            surfaces.push(s);
        }
    }
    let popular_cut = (vocab / 10).max(1);
    let mut by_surface: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let ents: Vec<Entity> = (0..vocab)
        .map(|k| {
            let surface = surfaces[k % n_surfaces].clone();
            by_surface.entry(surface.clone()).or_default().push(k);
            Entity {
                id: format!("{}_({})", surface.replace(' ', "_"), k),
                surface,
                popular: k < popular_cut,
            }
        })
        .collect();
    let weights = (0..vocab).map(|k| 1.0 / (k as f64 + 1.0)).collect();
    (ents, weights, by_surface)
}

fn sample_weighted(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().expect("non-empty weights");
    let u = rng.gen::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn filler_run(rng: &mut ChaCha8Rng, text: &mut String, len: &mut usize, n: usize) {
    for _ in 0..n {
        let w = *FILLER.choose(rng).expect("non-empty");
        text.push_str(w);
        text.push(' ');
        *len += w.chars().count() + 1;
    }
}

fn document(
    rng: &mut ChaCha8Rng,
    id: &str,
    n_mentions: usize,
    ents: &[Entity],
    cumulative: &[f64],
) -> (Document, Vec<PlantedMention>, Vec<(usize, String)>) {
    let mut text = String::new();
    let mut len = 0usize;
    let mut planted = Vec::new();
    // capitalised filler words that systems may mislabel as entities
    let mut decoys = Vec::new();
    for i in 0..n_mentions {
        let lead = rng.gen_range(2..7);
        filler_run(rng, &mut text, &mut len, lead);
        if rng.gen_bool(0.5) {
            let w = word(rng);
            decoys.push((len, w.clone()));
            len += w.chars().count() + 1;
            text.push_str(&w);
            text.push(' ');
        }
        let e = sample_weighted(rng, cumulative);
        let surface = &ents[e].surface;
        planted.push(PlantedMention {
            mention: Mention::new(id, len, surface.clone()),
            entity: e,
            words: surface.split(' ').count(),
            early: false,
            popular: ents[e].popular,
        });
        text.push_str(surface);
        len += surface.chars().count();
        text.push_str(if i % 2 == 1 { ". " } else { " " });
        len += if i % 2 == 1 { 2 } else { 1 };
    }
    filler_run(rng, &mut text, &mut len, 3);
    text.push_str("end.");
    let total = len + 4;
    for p in &mut planted {
        p.early = p.mention.position * 3 < total;
    }
    (
        Document {
            id: id.to_string(),
            text,
        },
        planted,
        decoys,
    )
}

fn wrong_entity(
    rng: &mut ChaCha8Rng,
    right: usize,
    ents: &[Entity],
    by_surface: &BTreeMap<String, Vec<usize>>,
) -> usize {
    let alternatives: Vec<usize> = by_surface[&ents[right].surface]
        .iter()
        .copied()
        .filter(|&k| k != right)
        .collect();
    if !alternatives.is_empty() && rng.gen_bool(0.8) {
        return *alternatives.choose(rng).expect("non-empty");
    }
    loop {
        let k = rng.gen_range(0..ents.len());
        if k != right {
            return k;
        }
    }
}

fn annotation(mention: Mention, entity: &str) -> Result<EntityAnnotation> {
    Ok(EntityAnnotation {
        mention,
        entity: canonicalize_entity(entity)?,
    })
}

/// Generates the whole dataset from `params.seed`. Identical parameters give
/// identical data.
pub fn generate(params: &SynthParams) -> Result<SynthData> {
    params.validate()?;
    let mut rng = seed::rng(params.seed);
    let (ents, weights, by_surface) = entities(&mut rng, params.vocab);
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();

    let n_train = ((params.n_docs as f64 * params.train_fraction).round() as usize).clamp(1, params.n_docs - 1);
    let n_sys = params.profiles.len();
    // documents, gold, and per-system outputs of each split
    type Parts = (Vec<Document>, Vec<EntityAnnotation>, Vec<Vec<EntityAnnotation>>);
    let mut splits: Vec<Parts> = (0..2)
        .map(|_| (Vec::new(), Vec::new(), vec![Vec::new(); n_sys]))
        .collect();

    for d in 0..params.n_docs {
        let split = usize::from(d >= n_train);
        let id = format!("{}{:04}", if split == 0 { "train" } else { "test" }, d);
        let mut doc_rng = seed::rng(seed::derive(params.seed, d as u64 + 1));
        let lo = params.mentions_per_doc.saturating_sub(2).max(1);
        let n_mentions = doc_rng.gen_range(lo..=params.mentions_per_doc + 2);
        let (doc, planted, decoys) = document(&mut doc_rng, &id, n_mentions, &ents, &cumulative);
        let (docs, gt, outputs) = &mut splits[split];
        for p in &planted {
            gt.push(annotation(p.mention.clone(), &ents[p.entity].id)?);
            for (s, profile) in params.profiles.iter().enumerate() {
                if !doc_rng.gen_bool(profile.recall) {
                    continue;
                }
                let acc = if profile.regime.applies(p) {
                    profile.strong_accuracy
                } else {
                    profile.weak_accuracy
                };
                let e = if doc_rng.gen_bool(acc) {
                    p.entity
                } else {
                    wrong_entity(&mut doc_rng, p.entity, &ents, &by_surface)
                };
                outputs[s].push(annotation(p.mention.clone(), &ents[e].id)?);
            }
        }
        for (s, profile) in params.profiles.iter().enumerate() {
            if decoys.is_empty() {
                continue;
            }
            let rate = (profile.spurious_per_doc / decoys.len() as f64).min(1.0);
            for (pos, w) in &decoys {
                if doc_rng.gen_bool(rate) {
                    let e = doc_rng.gen_range(0..ents.len());
                    outputs[s].push(annotation(Mention::new(id.clone(), *pos, w.clone()), &ents[e].id)?);
                }
            }
        }
        docs.push(doc);
    }

    let mut candidates = CandidateDictionary::new();
    for (surface, list) in &by_surface {
        candidates.insert(surface, list.len() as u64);
    }

    let system_ids: Vec<String> = params.profiles.iter().map(|p| p.name.clone()).collect();
    let mut built = Vec::with_capacity(2);
    for (docs, gt, outputs) in splits {
        let systems = outputs
            .into_iter()
            .zip(&system_ids)
            .map(|(anns, id)| AnnotationSet::new(id.clone(), anns))
            .collect::<Result<Vec<_>>>()?;
        built.push(SynthSplit {
            corpus: Corpus::new(docs)?,
            gt: GroundTruth::new(gt)?,
            systems,
        });
    }
    let test = built.pop().expect("two splits");
    let train = built.pop().expect("two splits");
    Ok(SynthData {
        train,
        test,
        candidates,
        system_ids,
    })
}

/// Files written by [`write_dataset`], relative paths included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub documents: PathBuf,
    pub ground_truth: PathBuf,
    pub systems: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub train: SplitFiles,
    pub test: SplitFiles,
    pub candidates: PathBuf,
    pub system_order: Vec<String>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_split(dir: &Path, split: &SynthSplit) -> Result<SplitFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let documents = dir.join("documents.jsonl");
    write_documents(create(&documents)?, split.corpus.documents()).map_err(|e| Error::io(&documents, e))?;
    let ground_truth = dir.join("ground_truth.jsonl");
    write_annotations(create(&ground_truth)?, &split.gt.annotations).map_err(|e| Error::io(&ground_truth, e))?;
    let mut systems = BTreeMap::new();
    for set in &split.systems {
        let path = dir.join(format!("{}.jsonl", set.system_id));
        write_annotations(create(&path)?, &set.annotations).map_err(|e| Error::io(&path, e))?;
        systems.insert(set.system_id.clone(), path);
    }
    Ok(SplitFiles {
        documents,
        ground_truth,
        systems,
    })
}

/// Writes `train/` and `test/` directories plus `candidates.tsv`.
pub fn write_dataset(data: &SynthData, dir: impl AsRef<Path>) -> Result<DatasetFiles> {
    let dir = dir.as_ref();
    let train = write_split(&dir.join("train"), &data.train)?;
    let test = write_split(&dir.join("test"), &data.test)?;
    let candidates = dir.join("candidates.tsv");
    let mut w = create(&candidates)?;
    for (surface, count) in data.candidates.entries() {
        writeln!(w, "{surface}\t{count}").map_err(|e| Error::io(&candidates, e))?;
    }
    w.flush().map_err(|e| Error::io(&candidates, e))?;
    Ok(DatasetFiles {
        train,
        test,
        candidates,
        system_order: data.system_ids.clone(),
    })
}
