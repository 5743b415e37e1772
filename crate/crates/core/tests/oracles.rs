mod common;

use common::{
    dfs_path_count, direct_sps, instance, model_config, perturbed, random_graph, random_path,
    VARIANTS,
};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simgraph::evalkit::{precision_at_k, Denominator};
use simgraph::fusion::{
    forward_cached, predict_topk, Aggregator, ModelConfig, ModelParams, Variant,
};
use simgraph::metapath::{build_subgraph, path_count, Normalization};
use simgraph::sparse::Csr;
use simgraph::Exec;

#[test]
fn path_count_matches_enumeration_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let g = random_graph(&mut rng);
        let p = random_path(&mut rng, &g, 4);
        let oracle = dfs_path_count(&g, &p);
        for exec in [Exec::Sequential, Exec::Parallel] {
            let pc = path_count(&g, &p, exec).unwrap();
            assert_eq!(pc.counts.to_dense(), oracle, "path {p}");
        }
    }
}

#[test]
fn sps_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let g = random_graph(&mut rng);
        let p = random_path(&mut rng, &g, 4);
        let want = direct_sps(&g, &p, &dfs_path_count(&g, &p));
        let got = build_subgraph(&g, &p, Normalization::Sps, Exec::Sequential)
            .unwrap()
            .values
            .to_dense();
        let err = (&got - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err <= 1e-12, "path {p}: max error {err}");
    }
}

fn dense(m: &Csr<f64>) -> Array2<f64> {
    m.to_dense()
}

fn normalized(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let s = a + &Array2::<f64>::eye(n);
    let d: Vec<f64> = s.sum_axis(Axis(1)).iter().map(|v| 1.0 / v.sqrt()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| d[i] * s[[i, j]] * d[j])
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Per-pair attention fusion over the union support, written with loops.
fn attention_fusion(
    mats: &[Array2<f64>],
    f: &Array2<f64>,
    omega: &Array2<f64>,
    slope: f64,
) -> Array2<f64> {
    let n = f.nrows();
    let m = f.ncols();
    let k = mats.len();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if mats.iter().all(|a| a[[i, j]] == 0.0) {
                continue;
            }
            let scores: Vec<f64> = (0..k)
                .map(|kk| {
                    let mut s = 0.0;
                    for c in 0..m {
                        s += omega[[kk, c]] * f[[i, c]] + omega[[kk, m + c]] * f[[j, c]];
                    }
                    leaky(s, slope)
                })
                .collect();
            let w = softmax(&scores);
            out[[i, j]] = (0..k).map(|kk| w[kk] * mats[kk][[i, j]]).sum();
        }
    }
    out
}

fn dense_logits(
    mats: &[Array2<f64>],
    f: &Array2<f64>,
    p: &ModelParams,
    cfg: &ModelConfig,
) -> Array2<f64> {
    let k = mats.len();
    let slope = cfg.leaky_slope;
    let (a_meta, f_meta) = match cfg.variant {
        Variant::Sum => {
            let alpha = softmax(p.w.row(0).as_slice().unwrap());
            let mut a = Array2::zeros(mats[0].raw_dim());
            for kk in 0..k {
                a = a + &mats[kk] * alpha[kk];
            }
            (a, f.clone())
        }
        Variant::Attention => (attention_fusion(mats, f, &p.omega, slope), f.clone()),
        Variant::AggAttention => {
            let parts: Vec<Array2<f64>> = (0..k)
                .map(|kk| {
                    normalized(&mats[kk])
                        .dot(f)
                        .dot(&p.meta_gnn[kk])
                        .mapv(|x| x.max(0.0))
                })
                .collect();
            let fm = match cfg.aggregator {
                Aggregator::Mean => {
                    parts
                        .iter()
                        .fold(Array2::zeros(parts[0].raw_dim()), |acc, x| acc + x)
                        / k as f64
                }
                Aggregator::Concat => ndarray::concatenate(
                    Axis(1),
                    &parts.iter().map(|x| x.view()).collect::<Vec<_>>(),
                )
                .unwrap(),
            };
            (attention_fusion(mats, &fm, &p.omega, slope), fm)
        }
    };
    normalized(&a_meta).dot(&f_meta).dot(&p.head_weight) + p.head_bias.row(0)
}

#[test]
fn forward_matches_dense_oracle() {
    for (variant, agg) in VARIANTS {
        for seed in 0..3 {
            let inst = instance(40 + seed, 18, 3, 5, 4);
            let cfg = model_config(variant, agg, seed);
            let p = perturbed(&ModelParams::init(&cfg, 3, 5).unwrap(), seed);
            let mats: Vec<Array2<f64>> = inst.mats.iter().map(dense).collect();
            let want = dense_logits(&mats, &inst.features.to_dense(), &p, &cfg);
            for exec in [Exec::Sequential, Exec::Parallel] {
                let got = forward_cached(&inst.stack, &inst.features, &p, &cfg, exec).unwrap();
                let err = (got.logits() - &want)
                    .mapv(f64::abs)
                    .fold(0.0f64, |a, &b| a.max(b));
                assert!(err < 1e-10, "{variant:?}/{agg:?}: {err}");
            }
        }
    }
}

#[test]
fn sequential_and_parallel_forward_are_bit_identical() {
    let inst = instance(9, 30, 3, 6, 5);
    for (variant, agg) in VARIANTS {
        let cfg = ModelConfig {
            label_dim: 5,
            ..model_config(variant, agg, 3)
        };
        let p = perturbed(&ModelParams::init(&cfg, 3, 6).unwrap(), 3);
        let a = forward_cached(&inst.stack, &inst.features, &p, &cfg, Exec::Sequential).unwrap();
        let b = forward_cached(&inst.stack, &inst.features, &p, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a.logits(), b.logits());
    }
}

#[test]
fn topk_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(1..20);
        let l = rng.random_range(1..40);
        // Coarse values so ties happen.
        let logits = Array2::from_shape_simple_fn((n, l), || rng.random_range(0..6) as f64);
        let k = rng.random_range(1..=l + 3);
        let nodes: Vec<usize> = (0..n).collect();
        let got = predict_topk(&logits, k, &nodes);
        for i in 0..n {
            let mut idx: Vec<usize> = (0..l).collect();
            idx.sort_by(|&a, &b| {
                logits[[i, b]]
                    .partial_cmp(&logits[[i, a]])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            idx.truncate(k.min(l));
            assert_eq!(got[i], idx);
        }
    }
}

#[test]
fn precision_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let l = 30;
    let ranked: Vec<Vec<usize>> = (0..50)
        .map(|_| {
            let mut v: Vec<usize> = (0..l).collect();
            for i in (1..l).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            v
        })
        .collect();
    let truth: Vec<Vec<usize>> = (0..50)
        .map(|_| (0..l).filter(|_| rng.random_bool(0.2)).collect())
        .collect();
    for k in [1, 5, 10, 20] {
        for denom in [Denominator::Capped, Denominator::Plain] {
            let mut sum = 0.0;
            let mut n = 0;
            for (r, t) in ranked.iter().zip(&truth) {
                if t.is_empty() {
                    continue;
                }
                let hits = r[..k].iter().filter(|x| t.contains(x)).count() as f64;
                let d = match denom {
                    Denominator::Capped => k.min(t.len()),
                    Denominator::Plain => k,
                } as f64;
                sum += hits / d;
                n += 1;
            }
            let got = precision_at_k(&ranked, &truth, k, denom);
            assert!((got - sum / n as f64).abs() < 1e-15);
        }
    }
}
