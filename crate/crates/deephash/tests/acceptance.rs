//! Acceptance suite: one test per release criterion, each printing a single
//! summary line. Run `cargo test --test acceptance -- --nocapture` to see
//! them all; the heavy training checks take a few minutes total.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deephash::baselines::{
    itq_train, load_itq, load_lsh, load_pq, load_pq_codes, lsh_train, pq_encode, pq_train,
    save_itq, save_lsh, save_pq, save_pq_codes,
};
use deephash::bits::BitMatrix;
use deephash::commands::{cmd_compare, COMPARE_FILE};
use deephash::config::{CompareConfig, Scheme};
use deephash::eval::{
    hamming_distance, mean_average_precision, rank_all, recall_at_r, roc_auc, ukb_score,
    GroundTruth,
};
use deephash::io::{
    expand_with_nonmatching, load_bit_matrix, load_feature_matrix, load_pairs, save_bit_matrix,
    save_feature_matrix, save_pairs, FeatureMatrix, Pair, PairSet, ThresholdVector,
};
use deephash::rbm::{
    make_targets, regularization_gradient, target_cross_entropy, RbmHyperParams, RbmLayer,
};
use deephash::siamese::{
    double_margin_loss, estimate_margins, objective_with_gradients, run_finetune,
    single_margin_loss, FinetuneConfig, LossVariant, MarginConfig,
};
use deephash::stack::{
    default_architecture, load_model, save_model, train_stack, Architecture, DeepHashModel,
};
use deephash::synthetic::{gaussian_clusters, matching_pairs, split_retrieval, RetrievalTask};

/// The training-scale checks run one at a time so their wall-clock budgets
/// mean something even when the harness runs tests on several threads.
static HEAVY: Mutex<()> = Mutex::new(());

fn report(number: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {name}: {verdict} ({detail})");
    assert!(pass, "criterion {number:02} {name}: {detail}");
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn recall10(model: &DeepHashModel, task: &RetrievalTask) -> f64 {
    let db = model.encode(&task.database).unwrap();
    let q = model.encode(&task.queries).unwrap();
    recall_at_r(&rank_all(&q, &db).unwrap(), &task.ground_truth, 10).unwrap()
}

/// Central finite differences of both arguments of a pair loss against the
/// closed-form gradient 2 * coef * (za - zb).
fn pair_loss_grad_err(
    f: &dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> f64,
    za: &Array1<f64>,
    zb: &Array1<f64>,
    coef: f64,
) -> f64 {
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..za.len() {
        let analytic = 2.0 * coef * (za[k] - zb[k]);
        let mut hi = za.clone();
        let mut lo = za.clone();
        hi[k] += eps;
        lo[k] -= eps;
        let fd = (f(hi.view(), zb.view()) - f(lo.view(), zb.view())) / (2.0 * eps);
        worst = worst.max(rel_err(analytic, fd));
        let mut hi = zb.clone();
        let mut lo = zb.clone();
        hi[k] += eps;
        lo[k] -= eps;
        let fd = (f(za.view(), hi.view()) - f(za.view(), lo.view())) / (2.0 * eps);
        worst = worst.max(rel_err(-analytic, fd));
    }
    worst
}

/// A margin value well clear of every observed pair distance, so hinge
/// branches cannot flip under the finite-difference perturbations.
fn clear_margin(d2s: &[f64]) -> f64 {
    let mut s = d2s.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    let mut candidates: Vec<f64> = s.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    candidates.push(s.last().unwrap() + 0.3);
    let clearance =
        |m: f64| s.iter().map(|d| (d - m).abs()).fold(f64::INFINITY, f64::min);
    let m = candidates
        .into_iter()
        .filter(|&m| m > 1e-3)
        .max_by(|a, b| clearance(*a).partial_cmp(&clearance(*b)).unwrap())
        .unwrap();
    assert!(clearance(m) > 1e-3, "no margin clear of the pair distances");
    m
}

#[test]
fn c01_gradients_match_finite_differences() {
    let start = Instant::now();
    let eps = 1e-5;
    let mut worst = 0.0f64;

    // Regularizer: d/dx of the target cross-entropy at p = sigmoid(x) is
    // p - t, entry by entry.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let targets = make_targets(12, 5, &mut rng).unwrap();
    let x = Array2::from_shape_fn((12, 5), |_| rng.random_range(-3.0..3.0));
    let analytic = regularization_gradient(&x.mapv(sigmoid), &targets).unwrap();
    for i in 0..12 {
        for j in 0..5 {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[[i, j]] += eps;
            lo[[i, j]] -= eps;
            let fd = (target_cross_entropy(&hi.mapv(sigmoid), &targets).unwrap()
                - target_cross_entropy(&lo.mapv(sigmoid), &targets).unwrap())
                / (2.0 * eps);
            worst = worst.max(rel_err(analytic[[i, j]], fd));
        }
    }

    // Pair losses on both sides of each hinge.
    let za = Array1::from_shape_fn(6, |_| rng.random_range(0.05..0.95));
    let zb = Array1::from_shape_fn(6, |_| rng.random_range(0.05..0.95));
    let d2: f64 = za
        .iter()
        .zip(zb.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    assert!(d2 > 0.2, "pair too close for clear hinge cases: d2 = {d2}");
    let cases: Vec<(
        Box<dyn Fn(ndarray::ArrayView1<f64>, ndarray::ArrayView1<f64>) -> f64>,
        f64,
    )> = vec![
        (
            Box::new(|a, b| single_margin_loss(a, b, true, 0.5).unwrap()),
            1.0,
        ),
        (
            Box::new(move |a, b| single_margin_loss(a, b, false, d2 + 0.7).unwrap()),
            -1.0,
        ),
        (
            Box::new(move |a, b| single_margin_loss(a, b, false, 0.5 * d2).unwrap()),
            0.0,
        ),
        (
            Box::new(move |a, b| double_margin_loss(a, b, true, 0.5 * d2, 0.5 * d2).unwrap()),
            1.0,
        ),
        (
            Box::new(move |a, b| double_margin_loss(a, b, true, d2 + 0.4, d2 + 0.4).unwrap()),
            0.0,
        ),
        (
            Box::new(move |a, b| double_margin_loss(a, b, false, 0.1, d2 + 0.6).unwrap()),
            -1.0,
        ),
        (
            Box::new(move |a, b| double_margin_loss(a, b, false, 0.1, 0.5 * d2).unwrap()),
            0.0,
        ),
    ];
    for (f, coef) in &cases {
        worst = worst.max(pair_loss_grad_err(f.as_ref(), &za, &zb, *coef));
    }

    // Full objective on a random three-layer model: finite differences over
    // every weight and bias entry against the analytic gradients.
    let dims = [16usize, 8, 4, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let layers: Vec<RbmLayer> = dims
        .windows(2)
        .map(|d| {
            let w = Array2::from_shape_fn((d[0], d[1]), |_| rng.random_range(-1.5..1.5));
            let b = Array1::from_shape_fn(d[1], |_| rng.random_range(-0.5..0.5));
            RbmLayer::from_parts(w, b, Array1::zeros(d[0]), None).unwrap()
        })
        .collect();
    let model = DeepHashModel::new(
        ThresholdVector::new(vec![0.0; dims[0]]).unwrap(),
        layers,
        BTreeMap::new(),
    )
    .unwrap();
    let batch = 6;
    let bit = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { 0.0 };
    let za0 = Array2::from_shape_fn((batch, dims[0]), |_| bit(&mut rng));
    let zb0 = Array2::from_shape_fn((batch, dims[0]), |_| bit(&mut rng));
    let labels = vec![true, false, true, false, true, false];

    let mut margins = Vec::new();
    let mut a = za0.clone();
    let mut b = zb0.clone();
    for layer in model.layers() {
        a = layer.hidden_preactivations(a.view()).unwrap().mapv(sigmoid);
        b = layer.hidden_preactivations(b.view()).unwrap().mapv(sigmoid);
        let d2s: Vec<f64> = (0..batch)
            .map(|i| {
                a.row(i)
                    .iter()
                    .zip(b.row(i).iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
            .collect();
        margins.push(clear_margin(&d2s));
    }
    let mc = MarginConfig::uniform(margins).unwrap();

    for loss in [LossVariant::DoubleMargin, LossVariant::SingleMargin] {
        let (_, _, grads_w, grads_b) =
            objective_with_gradients(&model, &za0, &zb0, &labels, &mc, loss).unwrap();
        let objective = |l: usize, wij: Option<(usize, usize)>, bj: Option<usize>, delta: f64| {
            let mut layers = model.layers().to_vec();
            let mut w = layers[l].w().clone();
            let mut bias = layers[l].b().clone();
            if let Some((i, j)) = wij {
                w[[i, j]] += delta;
            }
            if let Some(j) = bj {
                bias[j] += delta;
            }
            layers[l] =
                RbmLayer::from_parts(w, bias, layers[l].c().clone(), layers[l].center().cloned())
                    .unwrap();
            let m = DeepHashModel::new(model.thresholds().clone(), layers, BTreeMap::new())
                .unwrap();
            objective_with_gradients(&m, &za0, &zb0, &labels, &mc, loss)
                .unwrap()
                .0
        };
        for l in 0..model.depth() {
            for i in 0..dims[l] {
                for j in 0..dims[l + 1] {
                    let fd = (objective(l, Some((i, j)), None, eps)
                        - objective(l, Some((i, j)), None, -eps))
                        / (2.0 * eps);
                    worst = worst.max(rel_err(grads_w[l][[i, j]], fd));
                }
            }
            for j in 0..dims[l + 1] {
                let fd =
                    (objective(l, None, Some(j), eps) - objective(l, None, Some(j), -eps))
                        / (2.0 * eps);
                worst = worst.max(rel_err(grads_b[l][j], fd));
            }
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "gradient checks",
        worst < 1e-4 && elapsed < 10.0,
        &format!("max rel err {worst:.2e}, {elapsed:.1}s"),
    );
}

#[test]
fn c02_regularizer_balances_bits_and_lifts_recall() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let arch = Architecture::new(vec![128, 16]).unwrap();
    let mut avg = [0.0f64; 2];
    let mut min_balanced = usize::MAX;
    for seed in 0..5u64 {
        let corpus = gaussian_clusters(5000, 128, 20, 0.5, 1.0, 1000 + seed).unwrap();
        let task = split_retrieval(&corpus, 200, 2000 + seed).unwrap();
        for (slot, lambda) in [(0usize, 0.0), (1, 0.1)] {
            let hp = RbmHyperParams {
                learning_rate: 0.6,
                epochs: 30,
                batch_size: 100,
                lambda,
                seed,
                ..RbmHyperParams::default()
            };
            let (model, _) = train_stack(&task.database, &arch, &hp).unwrap();
            avg[slot] += recall10(&model, &task) / 5.0;
            if lambda > 0.0 {
                let codes = model.encode(&task.database).unwrap();
                let balanced = (0..codes.bits())
                    .filter(|&j| (0.35..=0.65).contains(&codes.column_mean(j)))
                    .count();
                min_balanced = min_balanced.min(balanced);
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = min_balanced * 10 >= 16 * 9 && avg[1] > avg[0] && elapsed < 300.0;
    report(
        2,
        "regularizer balance",
        pass,
        &format!(
            "lambda 0.1: >= {min_balanced}/16 balanced bits, recall {:.3} vs {:.3} unregularized, {elapsed:.0}s",
            avg[1], avg[0]
        ),
    );
}

/// Matching pairs over all clusters plus twice as many label-checked
/// non-matching pairs: the in-domain supervision regime.
fn labeled_pairs(labels: &[usize], count: usize, seed: u64) -> PairSet {
    let matching = matching_pairs(labels, count, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut pairs = matching.pairs().to_vec();
    for _ in 0..2 * count {
        loop {
            let a = rng.random_range(0..labels.len());
            let b = rng.random_range(0..labels.len());
            if labels[a] != labels[b] {
                pairs.push(Pair { a, b, matching: false });
                break;
            }
        }
    }
    PairSet::new(pairs, labels.len()).unwrap()
}

/// Matching pairs drawn only from clusters < max_label, then the 1:2
/// expansion with random third elements whose labels are never checked:
/// pair supervision that covers only part of the evaluated distribution.
fn partial_pairs(labels: &[usize], max_label: usize, count: usize, seed: u64) -> PairSet {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); max_label];
    for (i, &l) in labels.iter().enumerate() {
        if l < max_label {
            members[l].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let m = &members[rng.random_range(0..max_label)];
        let a = m[rng.random_range(0..m.len())];
        let mut b = a;
        while b == a {
            b = m[rng.random_range(0..m.len())];
        }
        pairs.push(Pair { a, b, matching: true });
    }
    let matching = PairSet::new(pairs, labels.len()).unwrap();
    expand_with_nonmatching(&matching, labels.len(), seed ^ 0x5bd1).unwrap()
}

fn pretrain(task: &RetrievalTask, seed: u64) -> DeepHashModel {
    let arch = Architecture::new(vec![128, 16]).unwrap();
    let hp = RbmHyperParams {
        learning_rate: 0.6,
        epochs: 30,
        batch_size: 100,
        lambda: 0.1,
        seed,
        ..RbmHyperParams::default()
    };
    train_stack(&task.database, &arch, &hp).unwrap().0
}

#[test]
fn c03_double_margin_finetuning_preserves_recall() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut avg_before = 0.0;
    let mut avg_after = 0.0;
    for seed in 0..5u64 {
        let corpus = gaussian_clusters(5000, 128, 20, 0.5, 1.0, 1000 + seed).unwrap();
        let task = split_retrieval(&corpus, 500, 2000 + seed).unwrap();
        let model = pretrain(&task, seed);
        let pairs = labeled_pairs(&task.db_labels, 1000, 3000 + seed);
        let margins = estimate_margins(&model, &pairs, &task.database).unwrap();
        let fc = FinetuneConfig {
            learning_rate: 1.0,
            iterations: 500,
            batch: 256,
            seed: 4000 + seed,
        };
        let mut before = f64::NAN;
        let (tuned, _) = run_finetune(
            &model,
            &pairs,
            &task.database,
            &margins,
            &fc,
            LossVariant::DoubleMargin,
            100,
            |it, snap| {
                if it == 0 {
                    before = recall10(snap, &task);
                }
                Ok(())
            },
        )
        .unwrap();
        avg_before += before / 5.0;
        avg_after += recall10(&tuned, &task) / 5.0;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let delta = avg_after - avg_before;
    let pass = delta >= -0.01 && elapsed < 300.0;
    report(
        3,
        "fine-tuning direction",
        pass,
        &format!("recall {avg_before:.3} -> {avg_after:.3} over 5 seeds (delta {delta:+.4}, tolerance -0.01), {elapsed:.0}s"),
    );
}

#[test]
fn c04_single_margin_collapses_where_double_holds() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut avg_drop = BTreeMap::from([("single", 0.0f64), ("double", 0.0f64)]);
    for seed in 0..5u64 {
        let corpus = gaussian_clusters(5000, 128, 20, 0.5, 1.0, 1000 + seed).unwrap();
        let task = split_retrieval(&corpus, 1000, 2000 + seed).unwrap();
        let model = pretrain(&task, seed);
        let pairs = partial_pairs(&task.db_labels, 5, 1000, 3000 + seed);
        let margins = estimate_margins(&model, &pairs, &task.database).unwrap();
        let fc = FinetuneConfig {
            learning_rate: 4.0,
            iterations: 500,
            batch: 512,
            seed: 4000 + seed,
        };
        for (name, loss) in [
            ("double", LossVariant::DoubleMargin),
            ("single", LossVariant::SingleMargin),
        ] {
            let mut first = f64::NAN;
            let mut max_drop = 0.0f64;
            let (tuned, _) = run_finetune(
                &model,
                &pairs,
                &task.database,
                &margins,
                &fc,
                loss,
                100,
                |it, snap| {
                    let r = recall10(snap, &task);
                    if it == 0 {
                        first = r;
                    }
                    max_drop = max_drop.max(first - r);
                    Ok(())
                },
            )
            .unwrap();
            max_drop = max_drop.max(first - recall10(&tuned, &task));
            *avg_drop.get_mut(name).unwrap() += max_drop / 5.0;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let single = avg_drop["single"];
    let double = avg_drop["double"];
    let pass = single >= 0.05 && double <= 0.02 && elapsed < 300.0;
    report(
        4,
        "single-margin collapse",
        pass,
        &format!("recall@10 drop within 500 iterations: single {single:.3} (need >= 0.05), double {double:.3} (need <= 0.02), {elapsed:.0}s"),
    );
}

#[test]
fn c05_itq_quantization_error_never_increases() {
    let start = Instant::now();
    let mut worst_rise = 0.0f64;
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + inst);
        let values: Vec<f32> = (0..80 * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = FeatureMatrix::new(80, 12, values).unwrap();
        let (_, errors) = itq_train(&x, 6, 50, inst).unwrap();
        assert_eq!(errors.len(), 50);
        for w in errors.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        5,
        "itq monotonicity",
        worst_rise <= 0.0,
        &format!("10 instances x 50 iterations, max increase {worst_rise:.1e}, {elapsed:.1}s"),
    );
}

fn random_codes(rows: usize, bits: usize, rng: &mut ChaCha8Rng) -> BitMatrix {
    let mut m = BitMatrix::zeros(rows, bits);
    for i in 0..rows {
        for j in 0..bits {
            m.set(i, j, rng.random());
        }
    }
    m
}

fn oracle_distance(m: &BitMatrix, a: usize, n: &BitMatrix, b: usize) -> u32 {
    (0..m.bits()).filter(|&j| m.get(a, j) != n.get(b, j)).count() as u32
}

#[test]
fn c06_metrics_match_bruteforce_oracles() {
    let start = Instant::now();
    for inst in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + inst);
        let db_size = rng.random_range(4..=50);
        let n_queries = rng.random_range(1..=6);
        let bits = rng.random_range(1..=16);
        let db = random_codes(db_size, bits, &mut rng);
        let qs = random_codes(n_queries, bits, &mut rng);

        // The ranking itself against a per-bit scan sorted by (distance, index).
        let rk = rank_all(&qs, &db).unwrap();
        let mut order = Vec::with_capacity(n_queries);
        for q in 0..n_queries {
            let mut idx: Vec<u32> = (0..db_size as u32).collect();
            idx.sort_by_key(|&i| (oracle_distance(&qs, q, &db, i as usize), i));
            assert_eq!(rk.order(q), &idx[..], "instance {inst} query {q}");
            order.push(idx);
        }

        // recall@r and MAP on a random relevance structure, replaying the
        // definitions over the verified ranking.
        let relevant: Vec<Vec<usize>> = (0..n_queries)
            .map(|_| {
                let mut rel: Vec<usize> =
                    (0..db_size).filter(|_| rng.random::<f64>() < 0.3).collect();
                if rel.is_empty() {
                    rel.push(rng.random_range(0..db_size));
                }
                rel
            })
            .collect();
        let gt = GroundTruth::new(relevant.clone(), db_size).unwrap();
        let r = rng.random_range(1..=db_size);
        let hits = (0..n_queries)
            .filter(|&q| order[q].iter().take(r).any(|i| relevant[q].contains(&(*i as usize))))
            .count();
        let expected_recall = hits as f64 / n_queries as f64;
        assert_eq!(recall_at_r(&rk, &gt, r).unwrap(), expected_recall, "instance {inst}");

        let mut total = 0.0;
        for q in 0..n_queries {
            let mut hits = 0usize;
            let mut precision_sum = 0.0;
            for (rank, &i) in order[q].iter().enumerate() {
                if relevant[q].contains(&(i as usize)) {
                    hits += 1;
                    precision_sum += hits as f64 / (rank + 1) as f64;
                }
            }
            total += precision_sum / relevant[q].len() as f64;
        }
        let expected_map = total / n_queries as f64;
        assert_eq!(mean_average_precision(&rk, &gt).unwrap(), expected_map, "instance {inst}");

        // UKB needs exactly four relevant items per query.
        let mut all: Vec<usize> = (0..db_size).collect();
        let four: Vec<Vec<usize>> = (0..n_queries)
            .map(|_| {
                all.shuffle(&mut rng);
                all[..4].to_vec()
            })
            .collect();
        let gt4 = GroundTruth::new(four.clone(), db_size).unwrap();
        let total: usize = (0..n_queries)
            .map(|q| order[q].iter().take(4).filter(|i| four[q].contains(&(**i as usize))).count())
            .sum();
        let expected_ukb = total as f64 / n_queries as f64;
        assert_eq!(ukb_score(&rk, &gt4).unwrap(), expected_ukb, "instance {inst}");

        // AUC against full pairwise enumeration, including the exact
        // complement identity.
        let md: Vec<f64> = (0..rng.random_range(1..=20))
            .map(|_| rng.random_range(0..=8u32) as f64)
            .collect();
        let nd: Vec<f64> = (0..rng.random_range(1..=20))
            .map(|_| rng.random_range(0..=8u32) as f64)
            .collect();
        let mut wins = 0u128;
        let mut ties = 0u128;
        for &a in &md {
            for &b in &nd {
                if a < b {
                    wins += 1;
                } else if a == b {
                    ties += 1;
                }
            }
        }
        let num = 2 * wins + ties;
        let den = 2 * (md.len() as u128) * (nd.len() as u128);
        let expected_auc = if 2 * num <= den {
            num as f64 / den as f64
        } else {
            1.0 - (den - num) as f64 / den as f64
        };
        assert_eq!(roc_auc(&md, &nd).unwrap(), expected_auc, "instance {inst}");
        assert_eq!(
            roc_auc(&md, &nd).unwrap() + roc_auc(&nd, &md).unwrap(),
            1.0,
            "instance {inst}: complement identity"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        6,
        "metric oracles",
        true,
        &format!("recall@R, MAP, UKB, AUC exact on 100 instances, {elapsed:.1}s"),
    );
}

#[test]
fn c07_hamming_distance_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut zero_cases = 0usize;
    for t in 0..10_000u64 {
        let bits = rng.random_range(1..=256);
        let mut m = random_codes(3, bits, &mut rng);
        if rng.random_range(0..8u32) == 0 {
            // Force an equal pair so the identity direction d == 0 => x == y
            // gets exercised, not just x == y => d == 0.
            for j in 0..bits {
                let v = m.get(0, j);
                m.set(1, j, v);
            }
        }
        let d = |a: usize, b: usize| hamming_distance(m.row(a), m.row(b)).unwrap();
        let (dxy, dyz, dxz) = (d(0, 1), d(1, 2), d(0, 2));
        assert_eq!(d(0, 0), 0, "triple {t}: identity");
        assert_eq!(dxy, d(1, 0), "triple {t}: symmetry");
        assert!(dxz <= dxy + dyz, "triple {t}: triangle");
        let equal = m.row_words(0) == m.row_words(1);
        assert_eq!(dxy == 0, equal, "triple {t}: zero iff equal");
        if dxy == 0 {
            zero_cases += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        7,
        "hamming properties",
        zero_cases > 100,
        &format!("10000 triples, {zero_cases} equal pairs exercised, {elapsed:.1}s"),
    );
}

#[test]
fn c08_compare_rerun_is_byte_identical() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = gaussian_clusters(240, 32, 6, 4.0, 0.8, 71).unwrap();
    let task = split_retrieval(&corpus, 30, 72).unwrap();
    let features = dir.path().join("db.dhf");
    let queries = dir.path().join("q.dhf");
    let gt = dir.path().join("gt.txt");
    save_feature_matrix(&features, &task.database).unwrap();
    save_feature_matrix(&queries, &task.queries).unwrap();
    task.ground_truth.save(&gt).unwrap();

    let mut cfg = CompareConfig::default();
    cfg.schemes = vec![Scheme::Deephash, Scheme::Itq, Scheme::Lsh, Scheme::Pq];
    cfg.bits = vec![8, 16];
    cfg.metrics = vec!["recall@5".into(), "map".into()];
    cfg.seed = 73;
    cfg.architectures.insert("8".into(), vec![32, 8]);
    cfg.architectures.insert("16".into(), vec![32, 16]);
    cfg.rbm.learning_rate = 0.3;
    cfg.rbm.epochs = 6;
    cfg.rbm.batch_size = 30;
    cfg.pq.k = 4;
    cfg.paths.features = Some(features);
    cfg.paths.queries = Some(queries);
    cfg.paths.ground_truth = Some(gt);

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    cmd_compare(&cfg, &out_a).unwrap();
    cmd_compare(&cfg, &out_b).unwrap();
    let a = std::fs::read(out_a.join(COMPARE_FILE)).unwrap();
    let b = std::fs::read(out_b.join(COMPARE_FILE)).unwrap();
    let rows = String::from_utf8(a.clone()).unwrap().lines().count();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = a == b && rows == 1 + 4 * 2 * 2;
    report(
        8,
        "compare determinism",
        pass,
        &format!("4 schemes x 2 widths x 2 metrics, {rows} CSV lines, reruns identical: {}, {elapsed:.1}s", a == b),
    );
}

#[test]
fn c09_default_architectures_for_supported_sizes() {
    let cases: [(usize, usize, &[usize]); 6] = [
        (1024, 8192, &[8192, 1024]),
        (1024, 4096, &[4096, 1024]),
        (256, 8192, &[8192, 4096, 256]),
        (256, 4096, &[4096, 2048, 256]),
        (64, 8192, &[8192, 4096, 2048, 64]),
        (64, 4096, &[4096, 2048, 1024, 64]),
    ];
    for (bits, dim, expected) in cases {
        let arch = default_architecture(bits, dim).unwrap();
        assert_eq!(arch.dims(), expected, "bits {bits}, input dim {dim}");
    }
    report(
        9,
        "architecture defaults",
        true,
        "all six published (bits, input dim) rows reproduced",
    );
}

#[test]
fn c10_file_formats_roundtrip_bit_exact() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut artifacts = 0;
    let mut roundtrip = |name: &str, save: &dyn Fn(&std::path::Path)| {
        let first = dir.path().join(format!("{name}.a"));
        let second = dir.path().join(format!("{name}.b"));
        save(&first);
        save(&second);
        let a = std::fs::read(&first).unwrap();
        let b = std::fs::read(&second).unwrap();
        assert!(!a.is_empty(), "{name}: empty file");
        assert_eq!(a, b, "{name}: re-saved bytes differ");
        artifacts += 1;
    };

    let values: Vec<f32> = (0..40 * 9)
        .map(|i| {
            if i % 17 == 0 {
                0.0
            } else {
                rng.random_range(-2.0..2.0)
            }
        })
        .collect();
    let x = FeatureMatrix::new(40, 9, values).unwrap();
    roundtrip("features", &|p| {
        save_feature_matrix(p, &x).unwrap();
        let back = load_feature_matrix(p).unwrap();
        assert_eq!(back, x);
        save_feature_matrix(p, &back).unwrap();
    });

    let codes = random_codes(40, 21, &mut rng);
    roundtrip("codes", &|p| {
        save_bit_matrix(p, &codes).unwrap();
        let back = load_bit_matrix(p).unwrap();
        assert_eq!(back, codes);
        save_bit_matrix(p, &back).unwrap();
    });

    let pairs = PairSet::new(
        vec![
            Pair { a: 0, b: 7, matching: true },
            Pair { a: 3, b: 12, matching: false },
            Pair { a: 5, b: 9, matching: true },
        ],
        40,
    )
    .unwrap();
    roundtrip("pairs", &|p| {
        save_pairs(p, &pairs).unwrap();
        let back = load_pairs(p, 40).unwrap();
        assert_eq!(back, pairs);
        save_pairs(p, &back).unwrap();
    });

    let corpus = gaussian_clusters(120, 16, 4, 5.0, 0.8, 91).unwrap();
    let arch = Architecture::new(vec![16, 8, 4]).unwrap();
    let hp = RbmHyperParams {
        learning_rate: 0.05,
        epochs: 2,
        batch_size: 30,
        lambda: 0.1,
        seed: 9,
        ..RbmHyperParams::default()
    };
    let (model, _) = train_stack(&corpus.features, &arch, &hp).unwrap();
    roundtrip("model", &|p| {
        save_model(p, &model).unwrap();
        let back = load_model(p).unwrap();
        assert_eq!(back, model);
        save_model(p, &back).unwrap();
    });

    let lsh = lsh_train(9, 21, 92).unwrap();
    roundtrip("lsh", &|p| {
        save_lsh(p, &lsh).unwrap();
        let back = load_lsh(p).unwrap();
        assert_eq!(back, lsh);
        save_lsh(p, &back).unwrap();
    });

    let (itq, _) = itq_train(&x, 5, 10, 93).unwrap();
    roundtrip("itq", &|p| {
        save_itq(p, &itq).unwrap();
        let back = load_itq(p).unwrap();
        assert_eq!(back, itq);
        save_itq(p, &back).unwrap();
    });

    let pq = pq_train(&x, 3, 4, 94).unwrap();
    roundtrip("pq", &|p| {
        save_pq(p, &pq).unwrap();
        let back = load_pq(p).unwrap();
        assert_eq!(back, pq);
        save_pq(p, &back).unwrap();
    });

    let pq_codes = pq_encode(&pq, &x).unwrap();
    roundtrip("pq_codes", &|p| {
        save_pq_codes(p, &pq_codes).unwrap();
        let back = load_pq_codes(p).unwrap();
        assert_eq!(back, pq_codes);
        save_pq_codes(p, &back).unwrap();
    });

    let elapsed = start.elapsed().as_secs_f64();
    report(
        10,
        "format round-trips",
        artifacts == 8,
        &format!("{artifacts} artifact types save/load/save byte-identical, {elapsed:.1}s"),
    );
}
