mod common;

use common::{random_state, rng};
use proptest::prelude::*;
use rocil::dmu::{eval_branch, select_branch, split_batch, Branch, DmuState, PriorDistribution};
use rocil::learner::Architecture;
use rocil::stream::LabeledVector;

fn batch_from(labels: &[u32], seed: u64) -> Vec<LabeledVector> {
    let mut r = rng(seed);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let f = (0..3)
                .map(|_| rand::Rng::random_range(&mut r, -1.0..1.0))
                .collect();
            LabeledVector::new(i as u64, f, y)
        })
        .collect()
}

fn prior_of(labels: &[u32]) -> PriorDistribution {
    let mut p = PriorDistribution::default();
    p.observe(labels.iter().copied());
    p
}

#[test]
fn selection_rule_examples() {
    assert_eq!(select_branch(0.8, 0.4, 0.6), Branch::Full);
    assert_eq!(select_branch(0.62, 0.71, 0.6), Branch::Novel);
    assert_eq!(select_branch(0.3, 0.2, 0.6), Branch::Full);
    assert_eq!(select_branch(0.7, 0.7, 0.6), Branch::Novel);
    assert_eq!(select_branch(0.6, 0.6, 0.6), Branch::Full);
    assert_eq!(select_branch(0.1, 0.9, 0.6), Branch::Novel);
}

#[test]
fn empty_novel_split_falls_back_to_full_batch() {
    let mut r = rng(0);
    let state = random_state(&mut r, Architecture::linear(3, 10));
    let batch = batch_from(&[1, 2, 2], 1);
    let mut dmu = DmuState::new();
    dmu.set_threshold(0.0).unwrap();
    dmu.observe_labels(&batch);
    let mut called = false;
    let d = dmu
        .gate(
            &batch,
            vec![],
            &state,
            |_| {
                called = true;
                Ok(vec![])
            },
            0,
            1,
        )
        .unwrap();
    assert!(!called);
    assert_eq!(d.acc_vm2, 0.0);
    assert_eq!(d.chosen, Branch::Full);
    assert_eq!(d.data, batch);
}

#[test]
fn gate_needs_threshold_and_threshold_is_set_once() {
    let mut r = rng(0);
    let state = random_state(&mut r, Architecture::linear(3, 4));
    let mut dmu = DmuState::new();
    assert!(dmu
        .gate(&batch_from(&[0], 0), vec![], &state, |_| Ok(vec![]), 0, 1)
        .is_err());
    assert!(dmu.set_threshold(1.2).is_err());
    dmu.set_threshold(0.73).unwrap();
    assert!(dmu.set_threshold(0.5).is_err());
    assert_eq!(dmu.threshold(), Some(0.73));
}

#[test]
fn branch_accuracy_counts_data_and_exemplars() {
    let mut r = rng(4);
    let state = random_state(&mut r, Architecture::linear(3, 5));
    let data = batch_from(&[0, 1, 2, 3], 2);
    let ex = batch_from(&[4, 4], 3);
    let predicted = state.predict(&[data.clone(), ex.clone()].concat()).unwrap();
    let want = predicted
        .iter()
        .zip(data.iter().chain(&ex))
        .filter(|(p, x)| **p == x.label)
        .count() as f64
        / 6.0;
    assert_eq!(eval_branch(&state, &data, &ex).unwrap(), want);
    assert_eq!(eval_branch(&state, &[], &[]).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn split_is_complete_and_order_preserving(
        labels in prop::collection::vec(0u32..20, 0..40),
        seen in prop::collection::vec(0u32..20, 0..20),
    ) {
        let batch = batch_from(&labels, 0);
        let prior = prior_of(&seen);
        let (repeated, novel) = split_batch(&batch, &prior);
        prop_assert_eq!(repeated.len() + novel.len(), batch.len());
        prop_assert!(repeated.iter().all(|x| prior.contains(x.label)));
        prop_assert!(novel.iter().all(|x| !prior.contains(x.label)));
        let mut ids: Vec<u64> = repeated.iter().chain(&novel).map(|x| x.id.0).collect();
        prop_assert!(repeated.windows(2).all(|w| w[0].id < w[1].id));
        prop_assert!(novel.windows(2).all(|w| w[0].id < w[1].id));
        ids.sort();
        prop_assert_eq!(ids, (0..batch.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn prior_never_shrinks(batches in prop::collection::vec(prop::collection::vec(0u32..30, 0..10), 1..20)) {
        let mut dmu = DmuState::new();
        let mut before = dmu.prior.labels().clone();
        for labels in batches {
            dmu.observe_labels(&batch_from(&labels, 1));
            let now = dmu.prior.labels().clone();
            prop_assert!(before.is_subset(&now));
            prop_assert!(labels.iter().all(|l| now.contains(l)));
            before = now;
        }
    }

    #[test]
    fn gating_is_deterministic_and_side_effect_free(
        labels in prop::collection::vec(0u32..8, 1..20),
        seen in prop::collection::vec(0u32..8, 0..8),
        th in 0.0f64..1.0,
        seed in 0u64..10_000,
    ) {
        let mut r = rng(seed);
        let state = random_state(&mut r, Architecture::hidden(3, 4, 8));
        let snapshot = state.clone();
        let batch = batch_from(&labels, seed);
        let exemplars = batch_from(&[0, 3, 5], seed + 1);
        let run = || {
            let mut dmu = DmuState::new();
            dmu.set_threshold(th).unwrap();
            dmu.prior = prior_of(&seen);
            let d = dmu
                .gate(&batch, exemplars.clone(), &state, |novel| Ok(novel.iter().take(2).cloned().collect()), 7, 2)
                .unwrap();
            (d, dmu.branch_log)
        };
        let (a, log_a) = run();
        let (b, log_b) = run();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&log_a, &log_b);
        prop_assert_eq!(log_a.len(), 1);
        prop_assert_eq!(&state, &snapshot);
        prop_assert_eq!(a.chosen, select_branch(a.acc_vm1, a.acc_vm2, th));
        let prior = prior_of(&seen);
        match a.chosen {
            Branch::Full => prop_assert_eq!(&a.data, &batch),
            Branch::Novel => prop_assert!(!a.data.is_empty() && a.data.iter().all(|x| !prior.contains(x.label))),
        }
    }
}
