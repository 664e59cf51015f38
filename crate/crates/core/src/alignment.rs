//! Aligns the annotations of several systems (and optionally the ground truth)
//! into one group per mention, and computes recogniser/agreement statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, CanonicalEntityId, Corpus, GroundTruth, Mention, MentionKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    /// Same document, offset and normalized surface.
    #[default]
    Strong,
    /// Overlapping character spans in the same document, closed transitively.
    Overlap,
}

impl FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(Self::Strong),
            "overlap" => Ok(Self::Overlap),
            other => Err(Error::invalid(format!("unknown alignment mode {other:?}"))),
        }
    }
}

impl fmt::Display for AlignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Strong => "strong",
            Self::Overlap => "overlap",
        })
    }
}

/// One aligned mention: what each system linked it to, and the gold entity
/// when ground truth was supplied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionGroup {
    pub mention: Mention,
    pub per_system: BTreeMap<String, CanonicalEntityId>,
    pub gold: Option<CanonicalEntityId>,
}

impl MentionGroup {
    pub fn recognisers(&self) -> usize {
        self.per_system.len()
    }

    pub fn entity_of(&self, system: &str) -> Option<&CanonicalEntityId> {
        self.per_system.get(system)
    }

    pub fn distinct_entities(&self) -> BTreeSet<&CanonicalEntityId> {
        self.per_system.values().collect()
    }

    /// At least one system recognised the mention and all of them agree.
    pub fn is_unanimous(&self) -> bool {
        self.recognisers() > 0 && self.distinct_entities().len() == 1
    }

    /// Some recognising system provides the gold entity.
    pub fn correct_available(&self) -> bool {
        match &self.gold {
            Some(g) => self.per_system.values().any(|e| e == g),
            None => false,
        }
    }

    pub fn is_correct(&self, system: &str) -> Option<bool> {
        let gold = self.gold.as_ref()?;
        self.per_system.get(system).map(|e| e == gold)
    }
}

#[derive(Debug, Clone)]
enum Source {
    Gold,
    System(String),
}

#[derive(Debug, Clone)]
struct Item {
    mention: Mention,
    source: Source,
    entity: CanonicalEntityId,
}

impl Item {
    fn order_key(&self) -> (usize, usize, u8, &str, &str) {
        let (rank, sys) = match &self.source {
            Source::Gold => (0, ""),
            Source::System(s) => (1, s.as_str()),
        };
        (
            self.mention.position,
            self.mention.end(),
            rank,
            sys,
            &self.mention.surface,
        )
    }
}

/// Groups annotations by mention.
///
/// In strong mode the group key is `(doc, position, normalized surface)`. In
/// overlap mode connected components of overlapping spans form a group; its
/// representative mention is the gold span when present, else the longest
/// span (ties by smallest position). A system contributing several spans to
/// one component keeps the span matching the representative, else its
/// longest; its other spans are regrouped separately so every input
/// annotation lands in exactly one group.
pub fn build_mention_groups(
    sets: &[AnnotationSet],
    gt: Option<&GroundTruth>,
    mode: AlignmentMode,
    corpus: &Corpus,
) -> Result<Vec<MentionGroup>> {
    let mut seen_ids = HashSet::new();
    for set in sets {
        if !seen_ids.insert(set.system_id.as_str()) {
            return Err(Error::invalid(format!("duplicate system id {:?}", set.system_id)));
        }
    }

    let mut by_doc: BTreeMap<&str, Vec<Item>> = BTreeMap::new();
    let gold_items = gt
        .into_iter()
        .flat_map(|g| g.annotations.iter())
        .map(|a| (Source::Gold, a));
    let system_items = sets.iter().flat_map(|s| {
        s.annotations
            .iter()
            .map(move |a| (Source::System(s.system_id.clone()), a))
    });
    for (source, a) in gold_items.chain(system_items) {
        if !corpus.contains(&a.mention.doc_id) {
            return Err(Error::invalid(format!(
                "annotation refers to document {:?} which is not in the corpus",
                a.mention.doc_id
            )));
        }
        by_doc.entry(a.mention.doc_id.as_str()).or_default().push(Item {
            mention: a.mention.clone(),
            source,
            entity: a.entity.clone(),
        });
    }

    let per_doc: Vec<Vec<MentionGroup>> = by_doc
        .into_par_iter()
        .map(|(_, items)| match mode {
            AlignmentMode::Strong => group_strong(items),
            AlignmentMode::Overlap => group_overlap(items),
        })
        .collect();

    let mut groups: Vec<MentionGroup> = per_doc.into_iter().flatten().collect();
    groups.sort_by(|a, b| group_order(a).cmp(&group_order(b)));
    Ok(groups)
}

type GroupOrder<'a> = (
    &'a str,
    usize,
    usize,
    &'a str,
    Option<&'a CanonicalEntityId>,
    Vec<(&'a String, &'a CanonicalEntityId)>,
);

fn group_order(g: &MentionGroup) -> GroupOrder<'_> {
    (
        &g.mention.doc_id,
        g.mention.position,
        g.mention.end(),
        &g.mention.surface,
        g.gold.as_ref(),
        g.per_system.iter().collect(),
    )
}

fn group_strong(items: Vec<Item>) -> Vec<MentionGroup> {
    let mut groups: BTreeMap<MentionKey, MentionGroup> = BTreeMap::new();
    // gold first so its surface spelling is the one kept
    for item in items {
        let group = groups.entry(item.mention.key()).or_insert_with(|| MentionGroup {
            mention: item.mention.clone(),
            per_system: BTreeMap::new(),
            gold: None,
        });
        match item.source {
            Source::Gold => group.gold = Some(item.entity),
            Source::System(sys) => {
                group.per_system.insert(sys, item.entity);
            }
        }
    }
    groups.into_values().collect()
}

fn group_overlap(mut items: Vec<Item>) -> Vec<MentionGroup> {
    let mut out = Vec::new();
    while !items.is_empty() {
        items.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        let mut leftovers = Vec::new();
        let mut component: Vec<Item> = Vec::new();
        let mut component_end = 0usize;
        for item in items {
            if !component.is_empty() && item.mention.position >= component_end {
                resolve_component(std::mem::take(&mut component), &mut out, &mut leftovers);
            }
            component_end = if component.is_empty() {
                item.mention.end()
            } else {
                component_end.max(item.mention.end())
            };
            component.push(item);
        }
        if !component.is_empty() {
            resolve_component(component, &mut out, &mut leftovers);
        }
        items = leftovers;
    }
    out
}

/// Longest span first, then smallest position, then surface.
fn span_preference(m: &Mention) -> (std::cmp::Reverse<usize>, usize, &str) {
    (std::cmp::Reverse(m.char_len()), m.position, &m.surface)
}

fn resolve_component(component: Vec<Item>, out: &mut Vec<MentionGroup>, leftovers: &mut Vec<Item>) {
    let (golds, systems): (Vec<Item>, Vec<Item>) =
        component.into_iter().partition(|i| matches!(i.source, Source::Gold));

    let mut golds = golds;
    golds.sort_by(|a, b| {
        (
            a.mention.position,
            std::cmp::Reverse(a.mention.end()),
            &a.mention.surface,
        )
            .cmp(&(
                b.mention.position,
                std::cmp::Reverse(b.mention.end()),
                &b.mention.surface,
            ))
    });
    let mut golds = golds.into_iter();
    let gold = golds.next();
    leftovers.extend(golds);

    let representative = match &gold {
        Some(g) => g.mention.clone(),
        None => systems
            .iter()
            .map(|i| &i.mention)
            .min_by(|a, b| span_preference(a).cmp(&span_preference(b)))
            .expect("component is non-empty")
            .clone(),
    };
    let rep_key = representative.key();
    let rep_len = representative.char_len();

    let mut by_system: BTreeMap<String, Vec<Item>> = BTreeMap::new();
    for item in systems {
        if let Source::System(sys) = &item.source {
            by_system.entry(sys.clone()).or_default().push(item);
        }
    }

    let mut per_system = BTreeMap::new();
    for (sys, mut candidates) in by_system {
        candidates.sort_by(|a, b| {
            let a_match = a.mention.key() == rep_key
                || (a.mention.position == representative.position && a.mention.char_len() == rep_len);
            let b_match = b.mention.key() == rep_key
                || (b.mention.position == representative.position && b.mention.char_len() == rep_len);
            b_match
                .cmp(&a_match)
                .then_with(|| span_preference(&a.mention).cmp(&span_preference(&b.mention)))
        });
        let mut it = candidates.into_iter();
        let chosen = it.next().expect("non-empty");
        per_system.insert(sys, chosen.entity);
        leftovers.extend(it);
    }

    out.push(MentionGroup {
        mention: representative,
        per_system,
        gold: gold.map(|g| g.entity),
    });
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecogniserBucket {
    pub recognisers: usize,
    pub count: usize,
    /// Every recognising system gave the same entity (buckets with ≥ 2).
    pub all_same: usize,
    /// Some systems agree but not all (buckets with ≥ 3).
    pub majority_same: usize,
    /// Every recognising system gave a different entity (buckets with ≥ 2).
    pub all_different: usize,
    pub correct_available: usize,
}

/// Annotation and agreement statistics over gold-bearing groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_systems: usize,
    pub gt_total: usize,
    /// Annotations per system across all groups, gold-bearing or not.
    pub system_totals: BTreeMap<String, usize>,
    /// Indexed by recogniser count, `0..=n_systems`.
    pub buckets: Vec<RecogniserBucket>,
}

pub fn agreement_statistics(groups: &[MentionGroup], n: usize) -> Result<AgreementReport> {
    if n < 1 {
        return Err(Error::invalid("agreement statistics need at least one system"));
    }
    let mut buckets: Vec<RecogniserBucket> = (0..=n)
        .map(|r| RecogniserBucket {
            recognisers: r,
            ..Default::default()
        })
        .collect();
    let mut system_totals: BTreeMap<String, usize> = BTreeMap::new();
    let mut gt_total = 0;

    for g in groups {
        for sys in g.per_system.keys() {
            *system_totals.entry(sys.clone()).or_default() += 1;
        }
        if g.gold.is_none() {
            continue;
        }
        let r = g.recognisers();
        if r > n {
            return Err(Error::invalid(format!(
                "group at {}:{} has {r} recognisers but only {n} systems were declared",
                g.mention.doc_id, g.mention.position
            )));
        }
        gt_total += 1;
        let bucket = &mut buckets[r];
        bucket.count += 1;
        if g.correct_available() {
            bucket.correct_available += 1;
        }
        if r >= 2 {
            let distinct = g.distinct_entities().len();
            if distinct == 1 {
                bucket.all_same += 1;
            } else if distinct == r {
                bucket.all_different += 1;
            } else {
                bucket.majority_same += 1;
            }
        }
    }
    if system_totals.len() > n {
        return Err(Error::invalid(format!(
            "groups mention {} systems but only {n} were declared",
            system_totals.len()
        )));
    }

    Ok(AgreementReport {
        n_systems: n,
        gt_total,
        system_totals,
        buckets,
    })
}

fn pct(part: usize, whole: usize) -> String {
    if whole == 0 {
        "-".into()
    } else {
        format!("{:.1}%", 100.0 * part as f64 / whole as f64)
    }
}

impl AgreementReport {
    /// Rows as (label, count, share) in the order of the usual annotation
    /// statistics table.
    pub fn rows(&self) -> Vec<(String, usize, String)> {
        let n = self.n_systems;
        let mut rows = vec![(
            "Total number of GT annotations".to_string(),
            self.gt_total,
            String::new(),
        )];
        for (sys, total) in &self.system_totals {
            rows.push((format!("{sys} annotations"), *total, String::new()));
        }
        for b in &self.buckets {
            let r = b.recognisers;
            rows.push((
                format!("GT mentions recognised by {r}/{n} tools"),
                b.count,
                pct(b.count, self.gt_total),
            ));
            if r >= 2 {
                let all = if r == 2 {
                    "The 2 tools".to_string()
                } else {
                    format!("{r}/{n} tools")
                };
                rows.push((
                    format!("  {all} provide the same entity"),
                    b.all_same,
                    pct(b.all_same, b.count),
                ));
                if r >= 3 {
                    rows.push((
                        "  Some but not all tools provide the same entity".into(),
                        b.majority_same,
                        pct(b.majority_same, b.count),
                    ));
                }
                let diff = if r == 2 {
                    "  The 2 tools provide different entities".to_string()
                } else {
                    "  Each tool provides a different entity".to_string()
                };
                rows.push((diff, b.all_different, pct(b.all_different, b.count)));
            }
            if r >= 1 {
                rows.push((
                    "  Correct entity is provided".into(),
                    b.correct_available,
                    pct(b.correct_available, b.count),
                ));
            }
        }
        rows
    }

    pub fn render_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (label, count, share) in rows {
            let line = format!("{label:<width$}  {count:>8}  {share:>7}");
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{canonicalize_entity, Document, EntityAnnotation};

    fn e(s: &str) -> CanonicalEntityId {
        canonicalize_entity(s).unwrap()
    }

    fn corpus() -> Corpus {
        Corpus::new(vec![Document {
            id: "d1".into(),
            text: "Jordan played for the Wizards".into(),
        }])
        .unwrap()
    }

    fn ann(pos: usize, surface: &str, entity: &str) -> EntityAnnotation {
        EntityAnnotation {
            mention: Mention::new("d1", pos, surface),
            entity: e(entity),
        }
    }

    fn set(id: &str, anns: Vec<EntityAnnotation>) -> AnnotationSet {
        AnnotationSet::new(id, anns).unwrap()
    }

    #[test]
    fn identical_keys_merge() {
        let sets = [
            set("A", vec![ann(0, "Jordan", "e1")]),
            set("B", vec![ann(0, "Jordan", "e2")]),
        ];
        let groups = build_mention_groups(&sets, None, AlignmentMode::Strong, &corpus()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].per_system["A"], e("e1"));
        assert_eq!(groups[0].per_system["B"], e("e2"));
        assert!(groups[0].gold.is_none());
    }

    #[test]
    fn strong_mode_keeps_different_spans_apart() {
        let sets = [
            set("A", vec![ann(0, "Jordan", "e1")]),
            set("B", vec![ann(0, "Jordan played", "e2")]),
        ];
        let groups = build_mention_groups(&sets, None, AlignmentMode::Strong, &corpus()).unwrap();
        assert_eq!(groups.len(), 2);
    }

    #[test]
    fn overlap_mode_uses_gold_span_as_representative() {
        let sets = [
            set("A", vec![ann(0, "Jordan", "e1")]),
            set("B", vec![ann(0, "Jordan played", "e2")]),
        ];
        let gt = GroundTruth::new(vec![ann(0, "Jordan", "e1")]).unwrap();
        let groups = build_mention_groups(&sets, Some(&gt), AlignmentMode::Overlap, &corpus()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].mention, Mention::new("d1", 0, "Jordan"));
        assert_eq!(groups[0].recognisers(), 2);
        assert_eq!(groups[0].gold, Some(e("e1")));
    }

    #[test]
    fn overlap_without_gold_prefers_longest_span() {
        let sets = [
            set("A", vec![ann(0, "Jordan", "e1")]),
            set("B", vec![ann(0, "Jordan played", "e2")]),
        ];
        let groups = build_mention_groups(&sets, None, AlignmentMode::Overlap, &corpus()).unwrap();
        assert_eq!(groups[0].mention.surface, "Jordan played");
    }

    #[test]
    fn overlap_is_transitive() {
        // "Jordan played" overlaps "played for", which overlaps "for the"
        let sets = [
            set("A", vec![ann(0, "Jordan played", "e1")]),
            set("B", vec![ann(7, "played for", "e2")]),
            set("C", vec![ann(14, "for the", "e3")]),
        ];
        let groups = build_mention_groups(&sets, None, AlignmentMode::Overlap, &corpus()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].recognisers(), 3);
    }

    #[test]
    fn touching_spans_do_not_overlap() {
        let sets = [
            set("A", vec![ann(0, "Jordan", "e1")]),
            set("B", vec![ann(6, " played", "e2")]),
        ];
        let groups = build_mention_groups(&sets, None, AlignmentMode::Overlap, &corpus()).unwrap();
        assert_eq!(groups.len(), 2);
    }

    #[test]
    fn second_span_of_one_system_is_regrouped() {
        let sets = [
            set("A", vec![ann(0, "Jordan played", "e1"), ann(7, "played", "e9")]),
            set("B", vec![ann(0, "Jordan played", "e1")]),
        ];
        let groups = build_mention_groups(&sets, None, AlignmentMode::Overlap, &corpus()).unwrap();
        assert_eq!(groups.len(), 2);
        let total: usize = groups.iter().map(|g| g.recognisers()).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn unknown_document_is_an_error() {
        let bad = AnnotationSet::new(
            "A",
            vec![EntityAnnotation {
                mention: Mention::new("zz", 0, "x"),
                entity: e("x"),
            }],
        )
        .unwrap();
        assert!(build_mention_groups(&[bad], None, AlignmentMode::Strong, &corpus()).is_err());
    }

    #[test]
    fn zero_recogniser_gold_group() {
        let groups = vec![MentionGroup {
            mention: Mention::new("d1", 0, "Jordan"),
            per_system: BTreeMap::new(),
            gold: Some(e("e1")),
        }];
        let r = agreement_statistics(&groups, 3).unwrap();
        assert_eq!(r.buckets.len(), 4);
        assert_eq!(r.buckets[0].count, 1);
        assert_eq!(r.gt_total, 1);
    }

    #[test]
    fn majority_bucket_classification() {
        let groups = vec![MentionGroup {
            mention: Mention::new("d1", 0, "Jordan"),
            per_system: [("A", "e1"), ("B", "e2"), ("C", "e2")]
                .into_iter()
                .map(|(s, x)| (s.to_string(), e(x)))
                .collect(),
            gold: Some(e("e1")),
        }];
        let r = agreement_statistics(&groups, 3).unwrap();
        let b = &r.buckets[3];
        assert_eq!(
            (
                b.count,
                b.all_same,
                b.majority_same,
                b.all_different,
                b.correct_available
            ),
            (1, 0, 1, 0, 1)
        );
        assert!(r.render_table().contains("GT mentions recognised by 3/3 tools"));
    }

    #[test]
    fn zero_systems_is_an_error() {
        assert!(agreement_statistics(&[], 0).is_err());
    }
}
