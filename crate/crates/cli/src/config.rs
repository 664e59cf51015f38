use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use metael_core::alignment::AlignmentMode;
use metael_core::baselines::VoteNormalization;
use metael_core::corpus::{load_annotation_set, load_corpus, load_ground_truth, AnnotationSet, Corpus, GroundTruth};
use metael_core::features::CandidateDictionary;
use metael_core::{build_mention_groups, Error, MentionGroup, MetaElConfig, Result};

/// Files of one data split. Annotation files are keyed by system id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub documents: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub annotations: BTreeMap<String, PathBuf>,
}

/// Everything a run needs, read from one JSON file and patched by flags.
/// Relative paths in the file are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub systems: Vec<String>,
    pub alignment: AlignmentMode,
    pub train: SplitPaths,
    pub test: SplitPaths,
    pub candidates: Option<PathBuf>,
    /// Learner settings, including the forest and margin seeds.
    pub metael: MetaElConfig,
    pub baseline_seed: u64,
    pub vote_normalization: VoteNormalization,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            systems: Vec::new(),
            alignment: AlignmentMode::Strong,
            train: SplitPaths::default(),
            test: SplitPaths::default(),
            candidates: None,
            metael: MetaElConfig::default(),
            baseline_seed: 1,
            vote_normalization: VoteNormalization::Sum,
            output_dir: PathBuf::from("metael-out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        for split in [&mut cfg.train, &mut cfg.test] {
            for p in [&mut split.documents, &mut split.ground_truth].into_iter().flatten() {
                rebase(&base, p);
            }
            for p in split.annotations.values_mut() {
                rebase(&base, p);
            }
        }
        if let Some(p) = cfg.candidates.as_mut() {
            rebase(&base, p);
        }
        rebase(&base, &mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn split(&self, which: SplitName) -> &SplitPaths {
        match which {
            SplitName::Train => &self.train,
            SplitName::Test => &self.test,
        }
    }

    /// The learner configuration with the run-level alignment mode applied.
    pub fn learner(&self) -> MetaElConfig {
        MetaElConfig {
            alignment: self.alignment,
            ..self.metael.clone()
        }
    }

    /// Checks that the system list matches the split's annotation files one
    /// to one and that every referenced file exists.
    pub fn validate_split(&self, which: SplitName, need_gt: bool) -> Result<()> {
        let name = which.name();
        if self.systems.is_empty() {
            return Err(Error::invalid("no systems configured"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.systems {
            if !seen.insert(s) {
                return Err(Error::invalid(format!("system {s:?} listed twice")));
            }
        }
        let split = self.split(which);
        let files: Vec<&String> = split.annotations.keys().collect();
        let listed: Vec<&String> = seen.into_iter().collect();
        if files != listed {
            return Err(Error::invalid(format!(
                "{name} split: systems {listed:?} do not match annotation files for {files:?}"
            )));
        }
        let docs = split
            .documents
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{name} split: no documents file configured")))?;
        let mut paths = vec![docs];
        if need_gt {
            paths.push(
                split
                    .ground_truth
                    .as_ref()
                    .ok_or_else(|| Error::invalid(format!("{name} split: no ground truth configured")))?,
            );
        }
        paths.extend(split.annotations.values());
        paths.extend(&self.candidates);
        for p in paths {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn candidates(&self) -> Result<CandidateDictionary> {
        match &self.candidates {
            Some(p) => CandidateDictionary::load(p),
            None => Ok(CandidateDictionary::new()),
        }
    }
}

/// A split loaded from disk and aligned.
pub struct LoadedSplit {
    pub corpus: Corpus,
    pub gt: Option<GroundTruth>,
    pub sets: Vec<AnnotationSet>,
    pub groups: Vec<MentionGroup>,
}

impl LoadedSplit {
    pub fn gt(&self) -> Result<&GroundTruth> {
        self.gt
            .as_ref()
            .ok_or_else(|| Error::invalid("this command needs ground truth for the split"))
    }
}

/// Validates, loads and aligns a split. Ground truth is loaded whenever it
/// is configured; `need_gt` makes it mandatory.
pub fn load_split(cfg: &RunConfig, which: SplitName, need_gt: bool) -> Result<LoadedSplit> {
    cfg.validate_split(which, need_gt)?;
    let split = cfg.split(which);
    let corpus = load_corpus(split.documents.as_ref().expect("validated"))?;
    let gt = match &split.ground_truth {
        Some(p) => Some(load_ground_truth(p, &corpus)?),
        None => None,
    };
    let sets = cfg
        .systems
        .iter()
        .map(|s| load_annotation_set(&split.annotations[s], s, &corpus))
        .collect::<Result<Vec<_>>>()?;
    let groups = build_mention_groups(&sets, gt.as_ref(), cfg.alignment, &corpus)?;
    Ok(LoadedSplit {
        corpus,
        gt,
        sets,
        groups,
    })
}
