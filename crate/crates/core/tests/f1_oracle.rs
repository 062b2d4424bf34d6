mod support;

use std::collections::BTreeSet;

use gdv_core::cases::EvidenceItem;
use gdv_core::domain::EvidenceCategory;
use gdv_core::orchestration::ToolCall;
use gdv_core::reward::{call_alignment_f1, single_agent_process_base};
use proptest::prelude::*;
use support::brute_force_f1;

const DOCS: [(&str, &str); 2] = [("1001", "PMC1001"), ("1002", "PMC1002")];

fn call_universe() -> Vec<ToolCall> {
    DOCS.iter()
        .flat_map(|(pmid, pmcid)| {
            EvidenceCategory::ALL.into_iter().map(move |category| ToolCall {
                category,
                pmid: pmid.to_string(),
                pmcid: pmcid.to_string(),
                gene: "G".into(),
                disease: "D".into(),
            })
        })
        .collect()
}

fn item_universe() -> Vec<EvidenceItem> {
    DOCS.iter()
        .flat_map(|(pmid, _)| {
            EvidenceCategory::ALL
                .into_iter()
                .map(move |c| EvidenceItem { pmid: pmid.to_string(), subtype: c.subtypes()[0] })
        })
        .collect()
}

/// Every subset of at most four elements, as (vector, set) pairs.
fn small_subsets<T: Clone + Ord>(universe: &[T]) -> Vec<(Vec<T>, BTreeSet<T>)> {
    (0u32..1 << universe.len())
        .filter(|m| m.count_ones() <= 4)
        .map(|m| {
            let v: Vec<T> =
                universe.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, x)| x.clone()).collect();
            let s = v.iter().cloned().collect();
            (v, s)
        })
        .collect()
}

#[test]
fn call_f1_matches_pair_counting_exhaustively() {
    let subsets = small_subsets(&call_universe());
    assert_eq!(subsets.len(), 794);
    let mut mismatches = 0;
    for (pv, ps) in &subsets {
        for (gv, gs) in &subsets {
            let fast: f64 = call_alignment_f1(ps, gs);
            if (fast - brute_force_f1(pv, gv)).abs() > 1e-12 {
                mismatches += 1;
            }
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn evidence_f1_matches_pair_counting_exhaustively() {
    let subsets = small_subsets(&item_universe());
    let mut mismatches = 0;
    for (pv, ps) in &subsets {
        for (gv, gs) in &subsets {
            let fast: f64 = single_agent_process_base(ps, gs);
            if (fast - brute_force_f1(pv, gv)).abs() > 1e-12 {
                mismatches += 1;
            }
        }
    }
    assert_eq!(mismatches, 0);
}

fn any_item() -> impl Strategy<Value = EvidenceItem> {
    let subtypes: Vec<_> = gdv_core::domain::EvidenceSubtype::all().collect();
    (0..2usize, proptest::sample::select(subtypes))
        .prop_map(|(d, subtype)| EvidenceItem { pmid: DOCS[d].0.to_string(), subtype })
}

proptest! {
    #[test]
    fn evidence_f1_over_the_full_catalog(
        pred in proptest::collection::vec(any_item(), 0..6),
        gold in proptest::collection::vec(any_item(), 0..6),
    ) {
        let ps: BTreeSet<_> = pred.iter().cloned().collect();
        let gs: BTreeSet<_> = gold.iter().cloned().collect();
        let pv: Vec<_> = ps.iter().cloned().collect();
        let gv: Vec<_> = gs.iter().cloned().collect();
        let fast: f64 = single_agent_process_base(&ps, &gs);
        prop_assert!((fast - brute_force_f1(&pv, &gv)).abs() <= 1e-12);
        let swapped: f64 = single_agent_process_base(&gs, &ps);
        prop_assert_eq!(fast, swapped);
    }
}
