use std::collections::BTreeSet;

use gdv_core::backends::{NoiseSpec, NoisyOracleBackend};
use gdv_core::cases::{
    generate_synthetic_corpus, ground_truth_calls, ground_truth_profile, parse_case_line, split_by_panel,
    synthetic_split, CaseRecord, CorpusConfig,
};
use gdv_core::domain::{EvidenceCategory, ValidityClass};
use gdv_core::grpo::{clipped_surrogate_loss, group_advantages, rollout_policy};
use gdv_core::metrics::evaluate_run;
use gdv_core::orchestration::{
    execute_batch, inject_ground_truth, parse_tool_blocks, EvidenceFinding, Observer, ToolCall, Trajectory, TOOL_CLOSE,
    TOOL_OPEN,
};
use gdv_core::reward::{call_alignment_f1, hybrid_reward, outcome_reward, process_reward, rank_distance, RewardConfig};
use gdv_core::Policy64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> RewardConfig<f64> {
    RewardConfig::default()
}

fn any_class() -> impl Strategy<Value = ValidityClass> {
    proptest::sample::select(ValidityClass::ALL.to_vec())
}

fn any_prediction() -> impl Strategy<Value = Option<ValidityClass>> {
    proptest::option::weighted(0.85, any_class())
}

fn corpus(n: usize, seed: u64) -> Vec<CaseRecord> {
    generate_synthetic_corpus(&CorpusConfig { cases: n, ..Default::default() }, seed).unwrap()
}

// --- rewards ---------------------------------------------------------------

proptest! {
    #[test]
    fn outcome_reward_falls_with_distance(pred in any_prediction(), gold in any_class(), other in any_prediction()) {
        let (r1, r2) = (outcome_reward(pred, gold, &cfg()), outcome_reward(other, gold, &cfg()));
        let (d1, d2) = (rank_distance(pred, gold), rank_distance(other, gold));
        prop_assert_eq!(d1 < d2, r1 > r2);
        prop_assert_eq!(d1 == d2, r1 == r2);
    }

    #[test]
    fn process_reward_is_monotone(s in 0.0..=1.0f64, t in 0.0..=1.0f64, e in 0usize..20, k in 0usize..20) {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        prop_assert!(process_reward(lo, e, &cfg()) <= process_reward(hi, e, &cfg()));
        prop_assert!(process_reward(s, e + k, &cfg()) <= process_reward(s, e, &cfg()));
    }

    #[test]
    fn rewards_stay_in_range(s in 0.0..=1.0f64, e in 0usize..1000, pred in any_prediction(), gold in any_class()) {
        let r_proc = process_reward(s, e, &cfg());
        prop_assert!((-4.0..=4.0).contains(&r_proc));
        let r = hybrid_reward(outcome_reward(pred, gold, &cfg()), r_proc, &cfg());
        prop_assert!((-4.0..=4.0).contains(&r));
    }

    #[test]
    fn cubic_shaping_changes_sign_near_0_7937(s in 0.0..=1.0f64) {
        let r = process_reward(s, 0, &cfg());
        if s < 0.7937 {
            prop_assert!(r < 0.0);
        }
        if s > 0.7938 {
            prop_assert!(r > 0.0);
        }
    }

    #[test]
    fn call_f1_is_symmetric(
        a in proptest::collection::btree_set((0..6usize, 0..3usize), 0..8),
        b in proptest::collection::btree_set((0..6usize, 0..3usize), 0..8),
    ) {
        let to_calls = |s: &BTreeSet<(usize, usize)>| -> BTreeSet<ToolCall> {
            s.iter().map(|&(c, d)| ToolCall {
                category: EvidenceCategory::ALL[c],
                pmid: d.to_string(),
                pmcid: format!("PMC{d}"),
                gene: "G".into(),
                disease: "D".into(),
            }).collect()
        };
        let (a, b) = (to_calls(&a), to_calls(&b));
        let ab: f64 = call_alignment_f1(&a, &b);
        let ba: f64 = call_alignment_f1(&b, &a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }
}

// --- parser ----------------------------------------------------------------

fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(TOOL_OPEN.to_string()),
        Just(TOOL_CLOSE.to_string()),
        Just(r#"{"name": "ExperimentalEvidence_Rescue_agent", "args": {"pmid": "1", "pmcid": "PMC1", "gene": "G", "disease": "D"}}"#.to_string()),
        Just(r#"{"name": "ExperimentalEvidence_ModelSystems_agent", "args": {"pmid": "2", "pmcid": "PMC2", "gene": "G", "disease": "D"}}"#.to_string()),
        Just(r#"{"name": "Unknown_agent", "args": {"pmid": "1", "pmcid": "PMC1", "gene": "G", "disease": "D"}}"#.to_string()),
        Just(r#"{"name": "ExperimentalEvidence_Rescue_agent", "args": {"pmid": "1"}}"#.to_string()),
        Just("{\"name\": ".to_string()),
        Just("<tool_call".to_string()),
        "\\PC{0,12}",
    ]
}

/// Blocks counted the naive way: every open tag starts a block that runs to
/// the next open tag.
fn naive_block_counts(text: &str) -> (usize, usize) {
    let segments: Vec<&str> = text.split(TOOL_OPEN).skip(1).collect();
    let closed = segments.iter().filter(|s| s.contains(TOOL_CLOSE)).count();
    (segments.len(), closed)
}

proptest! {
    #[test]
    fn parser_is_total_on_arbitrary_text(text in "\\PC*") {
        let p = parse_tool_blocks(&text);
        prop_assert_eq!(p.calls.len() + p.n_err + p.n_duplicates, p.n_blocks);
    }

    #[test]
    fn parser_accounts_for_every_block(parts in proptest::collection::vec(fragment(), 0..24)) {
        let text = parts.concat();
        let p = parse_tool_blocks(&text);
        let (blocks, closed) = naive_block_counts(&text);
        prop_assert_eq!(p.n_blocks, blocks);
        prop_assert_eq!(p.calls.len() + p.n_err + p.n_duplicates, p.n_blocks);
        prop_assert!(p.calls.len() + p.n_err + p.n_duplicates >= closed);
        let distinct: BTreeSet<_> = p.calls.iter().collect();
        prop_assert_eq!(distinct.len(), p.calls.len());
    }
}

// --- advantages and clipping ----------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn advantages_are_centred_and_scaled(rewards in proptest::collection::vec(-4.0..=4.0f64, 2..17)) {
        let delta = 1e-6;
        let a = group_advantages(&rewards, delta);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() <= 1e-9);
        let m = rewards.iter().sum::<f64>() / n;
        let std = (rewards.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).sqrt();
        if std > 1e-3 {
            let a_std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!((a_std - 1.0).abs() <= delta / std + 1e-6);
        }
    }

    /// Rewards and shifts on a 2^-10 grid with power-of-two group sizes keep
    /// every intermediate exact, so shifting must not change a single bit.
    #[test]
    fn advantages_are_shift_invariant_bit_for_bit(
        ks in (1u32..5).prop_flat_map(|p| proptest::collection::vec(-4096i32..=4096, 1usize << p)),
        shift in -8192i32..=8192,
    ) {
        let rewards: Vec<f64> = ks.iter().map(|&k| f64::from(k) / 1024.0).collect();
        let shifted: Vec<f64> = rewards.iter().map(|r| r + f64::from(shift) / 1024.0).collect();
        let a = group_advantages(&rewards, 1e-6);
        let b = group_advantages(&shifted, 1e-6);
        prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn clipped_loss_matches_case_analysis_grid() {
    let (lo, hi) = (0.2, 0.35);
    for i in 1..=30 {
        let rho = f64::from(i) / 10.0;
        for adv in [-2.0, -1.0, 1.0, 2.0] {
            // For A > 0 the clip only bites from above, for A < 0 only from below.
            let term = if adv > 0.0 { adv * rho.min(1.0 + hi) } else { adv * rho.max(1.0 - lo) };
            let loss = clipped_surrogate_loss(&[rho], &[adv], lo, hi).unwrap();
            assert!((loss + term).abs() <= 1e-12, "rho {rho}, A {adv}: {loss} vs {}", -term);
        }
    }
}

// --- metrics ---------------------------------------------------------------

fn sampled_run(cases: &[CaseRecord], seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = Policy64::random(0.8, 1.0, &mut rng);
    let backend = NoisyOracleBackend { noise: NoiseSpec { miss_rate: 0.2, false_alarm_rate: 0.1, seed } };
    rollout_policy(&policy, cases, 1, seed, Observer::Live(&backend)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_ignore_episode_and_call_order(seed in 0u64..1000, perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let cases = corpus(30, seed);
        let run = sampled_run(&cases, seed);
        let base = evaluate_run(&run, &cases).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        let mut shuffled = run.clone();
        shuffled.shuffle(&mut rng);
        for t in &mut shuffled {
            if let Trajectory::Supervisor(s) = t {
                let mut pairs: Vec<_> = s.calls.drain(..).zip(s.observations.drain(..)).collect();
                pairs.shuffle(&mut rng);
                (s.calls, s.observations) = pairs.into_iter().unzip();
            }
        }
        prop_assert_eq!(evaluate_run(&shuffled, &cases).unwrap(), base);
    }

    #[test]
    fn spurious_empty_calls_leave_evidence_metrics_unchanged(seed in 0u64..1000, which in any::<prop::sample::Index>()) {
        let cases = corpus(30, seed);
        let run = sampled_run(&cases, seed);
        let base = evaluate_run(&run, &cases).unwrap();
        let mut tampered = run.clone();
        let i = which.index(tampered.len());
        if let Trajectory::Supervisor(s) = &mut tampered[i] {
            for category in EvidenceCategory::ALL {
                s.calls.push(ToolCall {
                    category,
                    pmid: "999".into(),
                    pmcid: "PMC999".into(),
                    gene: s.case.gene.clone(),
                    disease: s.case.disease.clone(),
                });
                s.observations.push(EvidenceFinding::absent(category, "999", "none"));
            }
        }
        let after = evaluate_run(&tampered, &cases).unwrap();
        prop_assert_eq!(after.evidence_acc, base.evidence_acc);
        prop_assert_eq!(after.evidence_f1, base.evidence_f1);
    }
}

// --- cases and orchestration ----------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cases_round_trip_through_jsonl(seed in any::<u64>(), n in 1usize..20) {
        for case in corpus(n, seed) {
            prop_assert_eq!(parse_case_line(&case.to_json_line(), 1).unwrap(), case);
        }
    }

    #[test]
    fn panel_split_is_a_partition(seed in any::<u64>(), n in 1usize..120, panels in 1usize..15) {
        let cases = generate_synthetic_corpus(&CorpusConfig { cases: n, panels, ..Default::default() }, seed).unwrap();
        let s = split_by_panel(&cases, &synthetic_split(panels)).unwrap();
        prop_assert_eq!(s.train.len() + s.dev.len() + s.test.len(), cases.len());
        let keys = |v: &[CaseRecord]| v.iter().map(|c| c.key()).collect::<BTreeSet<_>>();
        let (tr, dv, te) = (keys(&s.train), keys(&s.dev), keys(&s.test));
        prop_assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
        let panels_of = |v: &[CaseRecord]| v.iter().map(|c| c.panel.clone()).collect::<BTreeSet<_>>();
        prop_assert!(panels_of(&s.train).is_disjoint(&panels_of(&s.test)));
        prop_assert!(panels_of(&s.train).is_disjoint(&panels_of(&s.dev)));
    }

    #[test]
    fn injected_gold_reproduces_the_profile(seed in any::<u64>()) {
        for case in corpus(10, seed) {
            let calls: Vec<_> = ground_truth_calls(&case).into_iter().collect();
            let obs = inject_ground_truth(&calls, &case);
            let union: BTreeSet<_> = obs.iter().flat_map(EvidenceFinding::items).collect();
            prop_assert_eq!(union, ground_truth_profile(&case));
            for (c, o) in calls.iter().zip(&obs) {
                prop_assert_eq!((c.category, &c.pmid), (o.category, &o.pmid));
            }
        }
    }

    #[test]
    fn noisy_batches_do_not_depend_on_call_order(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let case = corpus(1, seed).remove(0);
        let mut calls = Vec::new();
        for a in &case.articles {
            for category in EvidenceCategory::ALL {
                calls.push(ToolCall {
                    category,
                    pmid: a.pmid.clone(),
                    pmcid: a.pmcid.clone(),
                    gene: case.gene.clone(),
                    disease: case.disease.clone(),
                });
            }
        }
        let backend = NoisyOracleBackend { noise: NoiseSpec { miss_rate: 0.3, false_alarm_rate: 0.3, seed } };
        let forward = execute_batch(&calls, &backend, &case).unwrap();
        let mut order: Vec<usize> = (0..calls.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted: Vec<ToolCall> = order.iter().map(|&i| calls[i].clone()).collect();
        let results = execute_batch(&permuted, &backend, &case).unwrap();
        for (&i, r) in order.iter().zip(&results) {
            prop_assert_eq!(r, &forward[i]);
        }
    }
}
