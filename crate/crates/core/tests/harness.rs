use proptest::prelude::*;
use storyline_core::gan::{channel_matrix, pretrain_generator, TrainConfig};
use storyline_core::harness::*;
use storyline_core::numerics::Tensor;
use storyline_core::policy::CandidateSet;
use storyline_core::seqdata::{synth_corpus, EventCorpus, ModalSequence, SynthSpec};
use storyline_core::{rng, Modality};

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

/// Compensated dot product, accurate as if computed in twice the precision.
fn dot2(a: &[f64], b: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (p, e) = two_prod(*x, *y);
        let (t, f) = two_sum(s, p);
        s = t;
        c += e + f;
    }
    s + c
}

fn naive_sum_sim(reference: &[Tensor], generated: &[Tensor]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for a in reference {
        for b in generated {
            let na = dot2(a.data(), a.data());
            let nb = dot2(b.data(), b.data());
            let v = if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot2(a.data(), b.data()) / (na.sqrt() * nb.sqrt())
            };
            let (t, e) = two_sum(s, v);
            s = t;
            c += e;
        }
    }
    s + c
}

fn random_mats(n: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| Tensor::matrix(3, 4, (0..12).map(|_| rng::normal(&mut r)).collect()).unwrap())
        .collect()
}

fn refs(v: &[Tensor]) -> Vec<&Tensor> {
    v.iter().collect()
}

#[test]
fn matches_extended_precision_recomputation() {
    for seed in 0..20 {
        let a = random_mats(7, seed);
        let b = random_mats(5, seed + 100);
        let fast = sum_sim_matrices(&refs(&a), &refs(&b)).unwrap();
        assert!((fast - naive_sum_sim(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn identical_sets_diagonal_is_exact() {
    let a = random_mats(6, 3);
    let diag: f64 = a
        .iter()
        .map(|m| sum_sim_matrices(&[m], &[m]).unwrap())
        .sum();
    assert_eq!(diag, 6.0);
    let total = sum_sim_matrices(&refs(&a), &refs(&a)).unwrap();
    assert!((-36.0..=36.0).contains(&total));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn symmetric_and_scale_invariant(seed in any::<u64>(), scale in 1e-3f64..1e3, which in 0usize..4) {
        let a = random_mats(4, seed);
        let b = random_mats(3, seed ^ 0xabc);
        let ab = sum_sim_matrices(&refs(&a), &refs(&b)).unwrap();
        let ba = sum_sim_matrices(&refs(&b), &refs(&a)).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let mut scaled = a.clone();
        let data: Vec<f64> = scaled[which].data().iter().map(|v| v * scale).collect();
        scaled[which] = Tensor::matrix(3, 4, data).unwrap();
        let s = sum_sim_matrices(&refs(&scaled), &refs(&b)).unwrap();
        prop_assert!((ab - s).abs() < 1e-9);
    }
}

fn seqs(mats: &[Tensor]) -> Vec<ModalSequence> {
    mats.iter()
        .map(|m| ModalSequence {
            txt: m.clone(),
            img: m.clone(),
            mm: m.clone(),
        })
        .collect()
}

#[test]
fn report_contributions_add_up() {
    let a = seqs(&random_mats(5, 8));
    let b = seqs(&random_mats(4, 9));
    let r = EvalReport::build("m", &a, &b, Modality::Img, 0, None).unwrap();
    let pair_total: f64 = r.pairs.iter().flatten().sum();
    assert!((r.sum_sim - pair_total).abs() < 1e-9);
    assert!((r.sum_sim - sum_sim(&a, &b, Modality::Img).unwrap()).abs() < 1e-9);
    assert_eq!(r.audit.unnormalized, 9);
}

fn projected(mut c: EventCorpus) -> EventCorpus {
    for e in &mut c.entities {
        e.image_vec = e.image_feat.clone();
    }
    c
}

#[test]
fn random_baseline_contracts() {
    let (train, _, _) = synth_corpus(&SynthSpec {
        d: 6,
        ..SynthSpec::default()
    })
    .unwrap();
    let cands = CandidateSet::from_corpus(&projected(train)).unwrap();
    let starts: Vec<usize> = (0..1000).map(|i| i % 20).collect();
    let out = baseline_random(&cands, &starts, 6, 3).unwrap();
    assert!(out.iter().all(|s| !s.has_repeats() && s.nodes.len() == 6));
    assert!(out.iter().zip(&starts).all(|(s, &st)| s.nodes[0] == st));
    assert_eq!(
        baseline_random(&cands, &[4], 1, 0).unwrap()[0].nodes,
        vec![4]
    );
    assert_eq!(baseline_random(&cands, &starts, 6, 3).unwrap(), out);
}

#[test]
fn similarity_baseline_contracts() {
    let (train, _, _) = synth_corpus(&SynthSpec::new(12, 4, 4, 3, 30, 2)).unwrap();
    let cfg = TrainConfig {
        length: 3,
        hidden: 6,
        batch_size: 4,
        rounds: 2,
        pretrain_g_epochs: 2,
        alpha: 0.0,
        ..TrainConfig::default()
    };
    let (data, pre) = pretrain_generator(&[projected(train)], &cfg).unwrap();
    assert_eq!(baseline_pg_similarity(&pre, &data, &cfg).unwrap(), pre);
    let moved = baseline_pg_similarity(&pre, &data, &TrainConfig { alpha: 0.5, ..cfg }).unwrap();
    assert_ne!(moved, pre);

    let reward = SimilarityReward::new(&data);
    for d in data.demos.iter().take(10) {
        for m in Modality::ALL {
            let replica = channel_matrix(data.candidates(d), &d.nodes, m);
            assert_eq!(reward.reward(&replica, m), 1.0);
        }
    }
}
