//! Unsupervised combination policies and the oracle selector.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::MentionGroup;
use crate::corpus::{CanonicalEntityId, EntityAnnotation};
use crate::error::{Error, Result};
use crate::features::SystemTrainingStats;
use crate::metael::{DecisionPath, Provenance, UnifiedAnnotationSet};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    BestSystem,
    MajorityRandom,
    MajorityBest,
    WeightedVoting,
    WeightedVotingAll,
    UpperBound,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        Self::Random,
        Self::BestSystem,
        Self::MajorityRandom,
        Self::MajorityBest,
        Self::WeightedVoting,
        Self::WeightedVotingAll,
        Self::UpperBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::BestSystem => "best_system",
            Self::MajorityRandom => "majority_random",
            Self::MajorityBest => "majority_best",
            Self::WeightedVoting => "weighted_voting",
            Self::WeightedVotingAll => "weighted_voting_all",
            Self::UpperBound => "upper_bound",
        }
    }

    pub fn needs_priors(self) -> bool {
        !matches!(self, Self::Random | Self::UpperBound)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown baseline {s:?}")))
    }
}

/// How weighted-voting entity scores combine the supporters' precisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteNormalization {
    #[default]
    Sum,
    Mean,
}

impl FromStr for VoteNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            _ => Err(Error::invalid(format!("unknown vote normalization {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
    /// Training-set scores; required by every kind except random and
    /// upper_bound.
    pub priors: Option<SystemTrainingStats>,
    pub seed: u64,
    #[serde(default)]
    pub normalization: VoteNormalization,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind, priors: Option<SystemTrainingStats>, seed: u64) -> Self {
        Self {
            kind,
            priors,
            seed,
            normalization: VoteNormalization::Sum,
        }
    }
}

/// Ranks systems by training F1, ties by position in the priors' system list.
struct Ranking<'a> {
    priors: &'a SystemTrainingStats,
}

impl Ranking<'_> {
    fn key(&self, system: &str) -> (f64, std::cmp::Reverse<usize>) {
        let order = self
            .priors
            .systems
            .iter()
            .position(|s| s == system)
            .unwrap_or(usize::MAX);
        (self.priors.overall_f1(system), std::cmp::Reverse(order))
    }

    fn best<'s>(&self, systems: impl IntoIterator<Item = &'s String>) -> Option<&'s String> {
        systems
            .into_iter()
            .max_by(|a, b| self.key(a).partial_cmp(&self.key(b)).expect("finite F1"))
    }
}

/// Entities voted for in a group, each with its supporting systems.
pub fn votes(group: &MentionGroup) -> BTreeMap<&CanonicalEntityId, Vec<&String>> {
    let mut v: BTreeMap<&CanonicalEntityId, Vec<&String>> = BTreeMap::new();
    for (sys, e) in &group.per_system {
        v.entry(e).or_default().push(sys);
    }
    v
}

fn pick<'a>(group: &'a MentionGroup, system: &'a str, kind: BaselineKind) -> (EntityAnnotation, Provenance) {
    (
        EntityAnnotation {
            mention: group.mention.clone(),
            entity: group.per_system[system].clone(),
        },
        Provenance {
            system: system.to_string(),
            path: DecisionPath::Baseline(kind),
        },
    )
}

fn majority<'g>(group: &'g MentionGroup, best_on_tie: Option<&Ranking<'_>>, rng: &mut impl Rng) -> &'g String {
    let v = votes(group);
    let top = v.values().map(Vec::len).max().expect("non-empty group");
    let tied: Vec<(&CanonicalEntityId, &Vec<&String>)> =
        v.iter().filter(|(_, s)| s.len() == top).map(|(e, s)| (*e, s)).collect();
    if tied.len() == 1 {
        return tied[0].1[0];
    }
    match best_on_tie {
        Some(rank) => rank
            .best(tied.iter().flat_map(|(_, s)| s.iter().copied()))
            .expect("non-empty tie"),
        None => {
            let providers = tied[rng.gen_range(0..tied.len())].1;
            providers[rng.gen_range(0..providers.len())]
        }
    }
}

fn weighted<'g>(
    group: &'g MentionGroup,
    priors: &SystemTrainingStats,
    rank: &Ranking<'_>,
    normalization: VoteNormalization,
) -> (f64, &'g String) {
    let mut best: Option<(f64, &String)> = None;
    for supporters in votes(group).values() {
        let sum: f64 = supporters.iter().map(|s| priors.overall_precision(s)).sum();
        let score = match normalization {
            VoteNormalization::Sum => sum,
            VoteNormalization::Mean => sum / supporters.len() as f64,
        };
        let leader = rank.best(supporters.iter().copied()).expect("non-empty supporters");
        let better = match best {
            None => true,
            Some((bs, bl)) => score > bs || (score == bs && rank.key(leader) > rank.key(bl)),
        };
        if better {
            best = Some((score, leader));
        }
    }
    best.expect("non-empty group")
}

fn check_priors(policy: &BaselinePolicy, groups: &[MentionGroup]) -> Result<()> {
    if !policy.kind.needs_priors() {
        return Ok(());
    }
    let priors = policy
        .priors
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("baseline {} needs training priors", policy.kind)))?;
    for g in groups {
        if let Some(sys) = g.per_system.keys().find(|s| !priors.per_system.contains_key(*s)) {
            return Err(Error::invalid(format!("no training priors for system {sys:?}")));
        }
    }
    Ok(())
}

fn apply_one(policy: &BaselinePolicy, group: &MentionGroup) -> Option<(EntityAnnotation, Provenance)> {
    if group.per_system.is_empty() {
        return None;
    }
    let kind = policy.kind;
    let mut rng = seed::mention_rng(policy.seed, &group.mention.doc_id, group.mention.position);
    let rank = policy.priors.as_ref().map(|priors| Ranking { priors });
    let present: Vec<&String> = group.per_system.keys().collect();
    let system: &String = match kind {
        BaselineKind::Random => present[rng.gen_range(0..present.len())],
        BaselineKind::BestSystem => rank.as_ref()?.best(present.iter().copied())?,
        BaselineKind::MajorityRandom => majority(group, None, &mut rng),
        BaselineKind::MajorityBest => majority(group, rank.as_ref(), &mut rng),
        BaselineKind::WeightedVoting | BaselineKind::WeightedVotingAll => {
            let priors = policy.priors.as_ref()?;
            let (score, sys) = weighted(group, priors, rank.as_ref()?, policy.normalization);
            if kind == BaselineKind::WeightedVoting && score < priors.max_precision() {
                return None;
            }
            sys
        }
        BaselineKind::UpperBound => {
            let gold = group.gold.as_ref()?;
            group.per_system.iter().find(|(_, e)| *e == gold).map(|(s, _)| s)?
        }
    };
    Some(pick(group, system, kind))
}

/// Applies a baseline to every group. Output order follows `groups`.
pub fn apply_baseline(policy: &BaselinePolicy, groups: &[MentionGroup]) -> Result<UnifiedAnnotationSet> {
    check_priors(policy, groups)?;
    if policy.kind == BaselineKind::UpperBound && !groups.is_empty() && groups.iter().all(|g| g.gold.is_none()) {
        return Err(Error::invalid("upper_bound needs ground truth"));
    }
    let parts: Vec<_> = groups.par_iter().map(|g| apply_one(policy, g)).collect();
    Ok(UnifiedAnnotationSet::from_parts(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{canonicalize_entity, Mention};
    use crate::evaluation::PrfScore;
    use crate::features::SystemStats;

    fn group(pos: usize, systems: &[(&str, &str)], gold: Option<&str>) -> MentionGroup {
        MentionGroup {
            mention: Mention::new("d", pos, "x"),
            per_system: systems
                .iter()
                .map(|(s, e)| (s.to_string(), canonicalize_entity(e).unwrap()))
                .collect(),
            gold: gold.map(|g| canonicalize_entity(g).unwrap()),
        }
    }

    fn priors(p: &[(&str, f64, f64)]) -> SystemTrainingStats {
        SystemTrainingStats {
            systems: p.iter().map(|(s, _, _)| s.to_string()).collect(),
            per_system: p
                .iter()
                .map(|(s, prec, f1)| {
                    let overall = PrfScore {
                        precision: *prec,
                        f1: *f1,
                        ..Default::default()
                    };
                    (
                        s.to_string(),
                        SystemStats {
                            surfaces: BTreeMap::new(),
                            overall,
                        },
                    )
                })
                .collect(),
        }
    }

    fn run(kind: BaselineKind, pri: Option<SystemTrainingStats>, groups: &[MentionGroup]) -> UnifiedAnnotationSet {
        apply_baseline(&BaselinePolicy::new(kind, pri, 3), groups).unwrap()
    }

    #[test]
    fn plurality() {
        let g = [group(0, &[("A", "e1"), ("B", "e1"), ("C", "e2")], None)];
        let p = priors(&[("A", 0.1, 0.1), ("B", 0.1, 0.1), ("C", 0.9, 0.9)]);
        for kind in [BaselineKind::MajorityRandom, BaselineKind::MajorityBest] {
            let out = run(kind, Some(p.clone()), &g);
            assert_eq!(out.annotations[0].entity.as_str(), "E1");
            assert_eq!(out.provenance[0].path, DecisionPath::Baseline(kind));
        }
    }

    #[test]
    fn majority_best_breaks_ties_by_f1() {
        let g = [group(0, &[("A", "e1"), ("B", "e2"), ("C", "e3")], None)];
        let p = priors(&[("A", 0.5, 0.5), ("B", 0.5, 0.7), ("C", 0.5, 0.6)]);
        let out = run(BaselineKind::MajorityBest, Some(p), &g);
        assert_eq!(out.annotations[0].entity.as_str(), "E2");
    }

    #[test]
    fn weighted_voting_examples() {
        let p = priors(&[("A", 0.8, 0.5), ("B", 0.7, 0.5), ("C", 0.6, 0.5)]);
        let g = [group(0, &[("A", "e1"), ("B", "e2"), ("C", "e1")], None)];
        let out = run(BaselineKind::WeightedVoting, Some(p.clone()), &g);
        assert_eq!(out.annotations[0].entity.as_str(), "E1");

        let lone = [group(0, &[("B", "e1")], None)];
        assert!(run(BaselineKind::WeightedVoting, Some(p.clone()), &lone).is_empty());
        let out = run(BaselineKind::WeightedVotingAll, Some(p), &lone);
        assert_eq!(out.annotations[0].entity.as_str(), "E1");
    }

    #[test]
    fn best_system_picks_present_system() {
        let p = priors(&[("A", 0.5, 0.9), ("B", 0.5, 0.6), ("C", 0.5, 0.3)]);
        let g = [group(0, &[("B", "e2"), ("C", "e3")], None)];
        let out = run(BaselineKind::BestSystem, Some(p), &g);
        assert_eq!(out.provenance[0].system, "B");
    }

    #[test]
    fn upper_bound() {
        let g = [
            group(0, &[("A", "e1"), ("B", "e2")], Some("e2")),
            group(5, &[("A", "e1")], Some("e9")),
            group(9, &[("A", "e1")], None),
        ];
        let out = run(BaselineKind::UpperBound, None, &g);
        assert_eq!(out.len(), 1);
        assert_eq!(out.provenance[0].system, "B");
        let no_gold = [group(0, &[("A", "e1")], None)];
        assert!(apply_baseline(&BaselinePolicy::new(BaselineKind::UpperBound, None, 0), &no_gold).is_err());
    }

    #[test]
    fn priors_are_required() {
        let g = [group(0, &[("A", "e1")], None)];
        assert!(apply_baseline(&BaselinePolicy::new(BaselineKind::BestSystem, None, 0), &g).is_err());
        let p = priors(&[("B", 0.5, 0.5)]);
        assert!(apply_baseline(&BaselinePolicy::new(BaselineKind::BestSystem, Some(p), 0), &g).is_err());
        assert_eq!(run(BaselineKind::Random, None, &g).len(), 1);
    }

    #[test]
    fn random_is_seeded_per_mention() {
        let groups: Vec<_> = (0..50)
            .map(|i| group(i, &[("A", "a"), ("B", "b"), ("C", "c")], None))
            .collect();
        let full = run(BaselineKind::Random, None, &groups);
        let rev: Vec<_> = groups.iter().rev().cloned().collect();
        let mut back = run(BaselineKind::Random, None, &rev);
        back.annotations.reverse();
        assert_eq!(full.annotations, back.annotations);
        let chosen: std::collections::BTreeSet<_> = full.provenance.iter().map(|p| p.system.clone()).collect();
        assert_eq!(chosen.len(), 3);
    }

    #[test]
    fn kind_names_parse() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert_eq!(
            "weighted-voting".parse::<BaselineKind>().unwrap(),
            BaselineKind::WeightedVoting
        );
    }
}
