mod common;

use common::{mir_oracle, random_batch, random_state, rng};
use proptest::prelude::*;
use rocil::buffer::{ExemplarBuffer, ReplayStrategy};
use rocil::learner::{Architecture, ClassifierState, SgdConfig};
use rocil::stream::LabeledVector;

#[test]
fn mir_matches_brute_force_with_full_candidate_set() {
    let sgd = SgdConfig {
        learning_rate: 0.5,
        weight_decay: 1e-4,
    };
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let arch = if seed % 2 == 0 {
            Architecture::linear(5, 4)
        } else {
            Architecture::hidden(5, 6, 4)
        };
        let state = random_state(&mut r, arch);
        let mut buffer = ExemplarBuffer::new(64);
        buffer.update_random(
            &random_batch(&mut r, 40 + (seed as usize % 25), 5, 4, 0),
            &mut r,
        );
        let incoming = random_batch(&mut r, 8, 5, 4, 10_000);
        let k = 1 + seed as usize % 10;
        let got: Vec<u64> = buffer
            .retrieve_mir(k, &incoming, &state, &sgd, None, &mut r)
            .unwrap()
            .iter()
            .map(|x| x.id.0)
            .collect();
        assert_eq!(
            got,
            mir_oracle(buffer.items(), k, &incoming, &state, &sgd),
            "seed {seed}"
        );
    }
}

#[test]
fn mir_leaves_state_untouched() {
    let mut r = rng(1);
    let state = random_state(&mut r, Architecture::hidden(3, 4, 3));
    let before = state.clone();
    let mut buffer = ExemplarBuffer::new(10);
    buffer.update_random(&random_batch(&mut r, 10, 3, 3, 0), &mut r);
    let incoming = random_batch(&mut r, 4, 3, 3, 100);
    buffer
        .retrieve_mir(3, &incoming, &state, &SgdConfig::default(), None, &mut r)
        .unwrap();
    assert_eq!(state, before);
}

#[test]
fn reservoir_capacity_one_is_uniform() {
    let n = 10usize;
    let trials = 50_000usize;
    let mut r = rng(2024);
    let stream: Vec<LabeledVector> = (0..n as u64)
        .map(|i| LabeledVector::new(i, vec![i as f64], 0))
        .collect();
    let mut kept = vec![0usize; n];
    for _ in 0..trials {
        let mut b = ExemplarBuffer::new(1);
        for x in &stream {
            b.update_random(std::slice::from_ref(x), &mut r);
        }
        kept[b.items()[0].id.0 as usize] += 1;
    }
    let p = 1.0 / n as f64;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    for (i, &k) in kept.iter().enumerate() {
        let z = (k as f64 - trials as f64 * p).abs() / sigma;
        assert!(z <= 3.0, "item {i} kept {k} times, z = {z:.2}");
    }
}

/// Per-sample gradient of a linear model, weights row-major then bias.
fn linear_sample_gradient(w: &[[f64; 2]; 2], b: &[f64; 2], x: &LabeledVector) -> Vec<f64> {
    let z: Vec<f64> = (0..2)
        .map(|j| b[j] + x.features[0] * w[0][j] + x.features[1] * w[1][j])
        .collect();
    let m = z[0].max(z[1]);
    let s = (z[0] - m).exp() + (z[1] - m).exp();
    let mut d: Vec<f64> = z.iter().map(|v| (v - m).exp() / s).collect();
    d[x.label as usize] -= 1.0;
    vec![
        x.features[0] * d[0],
        x.features[0] * d[1],
        x.features[1] * d[0],
        x.features[1] * d[1],
        d[0],
        d[1],
    ]
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn gss_four_item_trace() {
    let w = [[1.0, -0.5], [0.25, 0.75]];
    let bias = [0.1, -0.2];
    let mut state = ClassifierState::zeros(Architecture::linear(2, 2));
    for (i, row) in w.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            state.layers[0].weights[[i, j]] = *v;
        }
        state.layers[0].bias[i] = bias[i];
    }
    let xs = [
        LabeledVector::new(0, vec![1.0, 0.0], 0),
        LabeledVector::new(1, vec![0.0, 1.0], 1),
        LabeledVector::new(2, vec![1.0, 0.1], 0),
        LabeledVector::new(3, vec![-1.0, 1.0], 1),
    ];
    let g: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| linear_sample_gradient(&w, &bias, x))
        .collect();

    // Capacity 2 with the candidate count covering the whole buffer makes
    // the trace independent of the random draws.
    let mut expected: Vec<(u64, f64)> = Vec::new();
    for (i, gi) in g.iter().enumerate() {
        let score = expected
            .iter()
            .map(|(id, _)| cos(gi, &g[*id as usize]))
            .fold(None, |acc: Option<f64>, s| {
                Some(acc.map_or(s, |a| a.max(s)))
            })
            .unwrap_or(0.0);
        if expected.len() < 2 {
            expected.push((i as u64, score));
        } else {
            let victim = (0..2)
                .max_by(|&a, &b| expected[a].1.total_cmp(&expected[b].1).then(b.cmp(&a)))
                .unwrap();
            if score < expected[victim].1 {
                expected[victim] = (i as u64, score);
            }
        }
    }

    let mut buffer = ExemplarBuffer::new(2);
    let mut r = rng(5);
    buffer.update_gss(&xs, &state, 10, &mut r).unwrap();
    let got: Vec<(u64, f64)> = buffer
        .items()
        .iter()
        .zip(buffer.scores())
        .map(|(x, s)| (x.id.0, *s))
        .collect();
    assert_eq!(got.len(), 2);
    for ((gid, gs), (eid, es)) in got.iter().zip(&expected) {
        assert_eq!(gid, eid);
        assert!((gs - es).abs() < 1e-12);
    }
    assert_eq!(buffer.seen_count(), 4);
}

#[test]
fn class_means_are_per_label_averages() {
    let mut b = ExemplarBuffer::new(4);
    let mut r = rng(0);
    b.update_random(
        &[
            LabeledVector::new(0, vec![1.0, 2.0], 3),
            LabeledVector::new(1, vec![3.0, 4.0], 3),
            LabeledVector::new(2, vec![-1.0, 0.5], 1),
        ],
        &mut r,
    );
    let means = b.class_means();
    assert_eq!(means[&3], vec![2.0, 3.0]);
    assert_eq!(means[&1], vec![-1.0, 0.5]);
}

#[derive(Debug, Clone)]
enum Op {
    Random(usize),
    Gss(usize, usize),
    Retrieve(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (1usize..20).prop_map(Op::Random),
        (1usize..20, 1usize..6).prop_map(|(n, c)| Op::Gss(n, c)),
        (0usize..30).prop_map(Op::Retrieve),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn capacity_never_exceeded(capacity in 0usize..12, ops in prop::collection::vec(op(), 1..25), seed in 0u64..1000) {
        let mut r = rng(seed);
        let state = random_state(&mut r, Architecture::linear(3, 3));
        let mut b = ExemplarBuffer::new(capacity);
        let mut next_id = 0u64;
        for op in ops {
            match op {
                Op::Random(n) => {
                    let batch = random_batch(&mut r, n, 3, 3, next_id);
                    next_id += n as u64;
                    b.update_random(&batch, &mut r);
                }
                Op::Gss(n, c) => {
                    let batch = random_batch(&mut r, n, 3, 3, next_id);
                    next_id += n as u64;
                    ReplayStrategy::Gss { candidates: c }.update(&mut b, &batch, &state, &mut r).unwrap();
                }
                Op::Retrieve(k) => {
                    let got = b.retrieve_random(k, &mut r);
                    prop_assert_eq!(got.len(), k.min(b.len()));
                    let mut ids: Vec<u64> = got.iter().map(|x| x.id.0).collect();
                    ids.sort();
                    ids.dedup();
                    prop_assert_eq!(ids.len(), got.len());
                }
            }
            prop_assert!(b.len() <= capacity);
            prop_assert_eq!(b.scores().len(), b.len());
            let mut ids: Vec<u64> = b.items().iter().map(|x| x.id.0).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), b.len());
        }
    }

    #[test]
    fn below_capacity_reservoir_keeps_everything(n in 0usize..50, seed in 0u64..1000) {
        let mut r = rng(seed);
        let batch = random_batch(&mut r, n, 2, 2, 0);
        let mut b = ExemplarBuffer::new(50);
        b.update_random(&batch, &mut r);
        b.update_random(&batch, &mut r);
        prop_assert_eq!(b.len(), n);
        prop_assert_eq!(b.seen_count(), n as u64);
    }
}
