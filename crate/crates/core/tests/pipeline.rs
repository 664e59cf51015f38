use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metael_core::alignment::{build_mention_groups, AlignmentMode, MentionGroup};
use metael_core::baselines::{apply_baseline, BaselineKind, BaselinePolicy};
use metael_core::corpus::{canonicalize_entity, surface_key, Mention};
use metael_core::evaluation::PrfScore;
use metael_core::evaluation::{el_prf, paired_t_statistic, split_ground_truth};
use metael_core::features::{
    build_training_stats, CorpusIndex, FeatureExtractor, FeatureMask, SystemStats, SystemTrainingStats,
};
use metael_core::learners::{train_forest, BinaryInstance, ForestParams};
use metael_core::metael::{annotate_loose, annotate_strict, train_metael, MetaElConfig, MetaElModel};
use metael_core::synth::{generate, write_dataset, SynthData, SynthParams};

struct Fixture {
    data: SynthData,
    train: Vec<MentionGroup>,
    test: Vec<MentionGroup>,
    model: MetaElModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = generate(&SynthParams {
            n_docs: 120,
            seed: 11,
            ..SynthParams::default()
        })
        .unwrap();
        let mode = AlignmentMode::Strong;
        let train = build_mention_groups(&data.train.systems, Some(&data.train.gt), mode, &data.train.corpus).unwrap();
        let test = build_mention_groups(&data.test.systems, Some(&data.test.gt), mode, &data.test.corpus).unwrap();
        let cfg = MetaElConfig {
            forest: ForestParams {
                n_trees: 30,
                ..ForestParams::default()
            },
            ..MetaElConfig::default()
        };
        let model = train_metael(&data.train.corpus, &train, &data.system_ids, &data.candidates, &cfg).unwrap();
        Fixture {
            data,
            train,
            test,
            model,
        }
    })
}

#[test]
fn feature_invariants() {
    let f = fixture();
    let systems = &f.data.system_ids;
    let stats = build_training_stats(&f.train, systems).unwrap();
    let index = CorpusIndex::new(&f.data.train.corpus, &f.train);
    let mask = FeatureMask::all();
    let ex = FeatureExtractor {
        index: &index,
        cand: &f.data.candidates,
        stats: &stats,
        systems,
        mask: &mask,
    };

    // training occurrences of each surface in groups where the system is present
    let mut present: BTreeMap<(String, String), u32> = BTreeMap::new();
    for g in &f.train {
        for sys in g.per_system.keys() {
            *present
                .entry((sys.clone(), surface_key(&g.mention.surface)))
                .or_default() += 1;
        }
    }
    let mut groups_per_doc: BTreeMap<&str, u32> = BTreeMap::new();
    for g in &f.train {
        *groups_per_doc.entry(g.mention.doc_id.as_str()).or_default() += 1;
    }

    let mut last: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for g in &f.train {
        let fv = ex.features(g).unwrap();
        assert_eq!(fv, ex.features(g).unwrap());
        assert_eq!(fv.d_ents, groups_per_doc[g.mention.doc_id.as_str()]);
        for (sys, sf) in &fv.per_system {
            assert!((0.0..=1.0).contains(&sf.s_ratio));
            let bound = present
                .get(&(sys.clone(), surface_key(&g.mention.surface)))
                .copied()
                .unwrap_or(0);
            assert!(sf.s_corr <= bound);
        }
        if let Some((pos, m_pos)) = last.get(g.mention.doc_id.as_str()) {
            if g.mention.position >= *pos {
                assert!(fv.m_pos >= *m_pos);
            }
        }
        last.insert(&g.mention.doc_id, (g.mention.position, fv.m_pos));
        assert_eq!(ex.vector(g).unwrap().len(), mask.dim(systems.len()));
    }
}

#[test]
fn metael_invariants() {
    let f = fixture();
    let d = &f.data;
    let loose = annotate_loose(&f.model, &d.test.corpus, &f.test, &d.candidates).unwrap();
    let strict = annotate_strict(&f.model, &d.test.corpus, &f.test, &d.candidates).unwrap();

    let by_mention: BTreeMap<&Mention, &MentionGroup> = f.test.iter().map(|g| (&g.mention, g)).collect();
    for (a, p) in loose.annotations.iter().zip(&loose.provenance) {
        let g = by_mention[&a.mention];
        assert_eq!(g.per_system.get(&p.system), Some(&a.entity));
        if g.is_unanimous() {
            assert_eq!(Some(&a.entity), g.per_system.values().next());
        }
    }
    let loose_set: BTreeSet<_> = loose.annotations.iter().collect();
    assert!(strict.annotations.iter().all(|a| loose_set.contains(a)));
    // every recognised group is emitted by LOOSE
    assert_eq!(loose.len(), f.test.iter().filter(|g| g.recognisers() > 0).count());

    let upper = apply_baseline(&BaselinePolicy::new(BaselineKind::UpperBound, None, 0), &f.test).unwrap();
    let gt = &d.test.gt;
    assert!(
        el_prf(&upper.annotations, gt, AlignmentMode::Strong).correct
            >= el_prf(&loose.annotations, gt, AlignmentMode::Strong).correct
    );

    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let again = single.install(|| annotate_loose(&f.model, &d.test.corpus, &f.test, &d.candidates).unwrap());
    assert_eq!(again, loose);
}

#[test]
fn model_file_round_trip() {
    let f = fixture();
    let d = &f.data;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    f.model.save(&path).unwrap();
    let back = MetaElModel::load(&path).unwrap();
    assert_eq!(back, f.model);
    assert_eq!(back.per_system_binary.len(), 3);

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let dim = f.model.feature_dim();
    for _ in 0..100 {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..50.0)).collect();
        let a = f.model.br.confidences(&x).unwrap();
        let b = back.br.confidences(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let a = annotate_strict(&f.model, &d.test.corpus, &f.test, &d.candidates).unwrap();
    let b = annotate_strict(&back, &d.test.corpus, &f.test, &d.candidates).unwrap();
    assert_eq!(a, b);

    let mut bad = serde_json::to_value(&f.model).unwrap();
    bad["format_version"] = serde_json::json!(99);
    assert!(MetaElModel::from_json(&bad.to_string()).is_err());
}

#[test]
fn synthetic_output_is_byte_identical() {
    let params = SynthParams {
        n_docs: 30,
        ..SynthParams::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = write_dataset(&generate(&params).unwrap(), a.path()).unwrap();
    write_dataset(&generate(&params).unwrap(), b.path()).unwrap();
    assert_eq!(fa.train.systems.len(), 3);
    for split in ["train", "test"] {
        for name in [
            "documents.jsonl",
            "ground_truth.jsonl",
            "sys1.jsonl",
            "sys2.jsonl",
            "sys3.jsonl",
        ] {
            let x = std::fs::read(a.path().join(split).join(name)).unwrap();
            let y = std::fs::read(b.path().join(split).join(name)).unwrap();
            assert!(!x.is_empty());
            assert_eq!(x, y, "{split}/{name}");
        }
    }
    assert_eq!(
        std::fs::read(a.path().join("candidates.tsv")).unwrap(),
        std::fs::read(b.path().join("candidates.tsv")).unwrap()
    );
}

fn priors(systems: &[&str], precisions: &[f64]) -> SystemTrainingStats {
    SystemTrainingStats {
        systems: systems.iter().map(|s| s.to_string()).collect(),
        per_system: systems
            .iter()
            .zip(precisions)
            .map(|(s, p)| {
                let overall = PrfScore {
                    precision: *p,
                    f1: *p,
                    ..PrfScore::default()
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

fn random_groups(seed: u64, n: usize) -> Vec<MentionGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let systems = ["A", "B", "C", "D"];
    (0..n)
        .map(|i| MentionGroup {
            mention: Mention::new("d", i, "x"),
            per_system: systems
                .iter()
                .filter_map(|s| {
                    let keep = rng.gen_bool(0.7);
                    let e = canonicalize_entity(&format!("e{}", rng.gen_range(0..3))).unwrap();
                    keep.then(|| (s.to_string(), e))
                })
                .collect(),
            gold: None,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weighted_voting_is_a_subset(seed in any::<u64>(), p in prop::collection::vec(0.0f64..1.0, 4)) {
        let groups = random_groups(seed, 200);
        let pri = priors(&["A", "B", "C", "D"], &p);
        let strict = apply_baseline(&BaselinePolicy::new(BaselineKind::WeightedVoting, Some(pri.clone()), seed), &groups).unwrap();
        let all = apply_baseline(&BaselinePolicy::new(BaselineKind::WeightedVotingAll, Some(pri.clone()), seed), &groups).unwrap();
        let all_set: BTreeSet<_> = all.annotations.iter().collect();
        prop_assert!(strict.annotations.iter().all(|a| all_set.contains(a)));

        let best = apply_baseline(&BaselinePolicy::new(BaselineKind::BestSystem, Some(pri), seed), &groups).unwrap();
        for (a, prov) in best.annotations.iter().zip(&best.provenance) {
            let g = groups.iter().find(|g| g.mention == a.mention).unwrap();
            prop_assert_eq!(g.per_system.get(&prov.system), Some(&a.entity));
        }
    }

    #[test]
    fn equal_weights_vote_like_majority(seed in any::<u64>(), w in 0.05f64..1.0) {
        let groups = random_groups(seed, 200);
        let pri = priors(&["A", "B", "C", "D"], &[w; 4]);
        let wv = apply_baseline(&BaselinePolicy::new(BaselineKind::WeightedVotingAll, Some(pri.clone()), seed), &groups).unwrap();
        let mv = apply_baseline(&BaselinePolicy::new(BaselineKind::MajorityRandom, Some(pri), seed), &groups).unwrap();
        let wv_map: BTreeMap<_, _> = wv.annotations.iter().map(|a| (&a.mention, &a.entity)).collect();
        let mv_map: BTreeMap<_, _> = mv.annotations.iter().map(|a| (&a.mention, &a.entity)).collect();
        for g in &groups {
            let mut counts: BTreeMap<_, usize> = BTreeMap::new();
            for e in g.per_system.values() {
                *counts.entry(e).or_default() += 1;
            }
            let Some(top) = counts.values().max() else { continue };
            if counts.values().filter(|c| *c == top).count() == 1 {
                prop_assert_eq!(wv_map[&g.mention], mv_map[&g.mention]);
            }
        }
    }

    #[test]
    fn forest_confidence_is_a_probability(x in prop::collection::vec(-1e6f64..1e6, 3)) {
        static FOREST: OnceLock<metael_core::learners::DecisionForestModel> = OnceLock::new();
        let forest = FOREST.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let data: Vec<BinaryInstance> = (0..150)
                .map(|_| {
                    let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
                    BinaryInstance { y: x[0] + x[1] * x[2] > 0.0 || rng.gen_bool(0.1), x }
                })
                .collect();
            train_forest(&data, &ForestParams { n_trees: 25, ..ForestParams::default() }).unwrap()
        });
        let c = forest.predict_confidence(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        let mut wider = x.clone();
        wider.push(x[0]);
        prop_assert!(forest.predict_confidence(&wider).is_err());
    }

    #[test]
    fn splits_partition_ground_truth(n_splits in 1usize..25, extra in 0usize..60, shuffle in prop::option::of(any::<u64>())) {
        let n = n_splits + extra;
        let gt = metael_core::corpus::GroundTruth::new(
            (0..n)
                .map(|i| metael_core::corpus::EntityAnnotation {
                    mention: Mention::new(format!("d{}", i % 7), i, "x"),
                    entity: canonicalize_entity("E").unwrap(),
                })
                .collect(),
        )
        .unwrap();
        let split = split_ground_truth(&gt, n_splits, shuffle).unwrap();
        prop_assert_eq!(split.len(), n);
        let mut sizes = vec![0usize; n_splits];
        for s in split {
            prop_assert!(s < n_splits);
            sizes[s] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert!(*lo >= 1);
    }
}

/// Two-tailed tail probability of Student's t with integer degrees of
/// freedom, by the closed-form finite series in theta = atan(t / sqrt(nu)).
fn series_two_tailed(t: f64, nu: u32) -> f64 {
    let theta = (t.abs() / (nu as f64).sqrt()).atan();
    let (s, c) = (theta.sin(), theta.cos());
    let c2 = c * c;
    let a = if nu % 2 == 1 {
        let mut sum = 0.0;
        if nu > 1 {
            let mut term = c;
            sum = term;
            let mut k = 3;
            while k <= nu - 2 {
                term *= (k - 1) as f64 / k as f64 * c2;
                sum += term;
                k += 2;
            }
        }
        2.0 / std::f64::consts::PI * (theta + s * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 2;
        while k <= nu - 2 {
            term *= (k - 1) as f64 / k as f64 * c2;
            sum += term;
            k += 2;
        }
        s * sum
    };
    1.0 - a
}

#[test]
fn t_distribution_matches_series_oracle() {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for n in 2..=31usize {
        let nu = (n - 1) as u32;
        for k in 0..60 {
            // difference vectors with a spread of t values
            let shift = k as f64 * 0.05;
            let diffs: Vec<f64> = (0..n).map(|i| shift + ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
            let r = paired_t_statistic(&diffs, &vec![0.0; n]).unwrap();
            if r.degenerate {
                continue;
            }
            let oracle = series_two_tailed(r.t_statistic, nu);
            if oracle < 1e-9 {
                continue;
            }
            let rel = (r.p_value - oracle).abs() / oracle;
            worst = worst.max(rel);
            assert!(
                rel <= 1e-6,
                "nu={nu} t={} p={} oracle={oracle}",
                r.t_statistic,
                r.p_value
            );
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} points checked (worst {worst})");
}

#[test]
fn series_oracle_known_values() {
    // tabulated two-sided critical values
    assert!((series_two_tailed(12.706, 1) - 0.05).abs() < 1e-4);
    assert!((series_two_tailed(2.093, 19) - 0.05).abs() < 1e-4);
    assert!((series_two_tailed(2.861, 19) - 0.01).abs() < 1e-4);
    assert!((series_two_tailed(0.0, 7) - 1.0).abs() < 1e-15);
}
