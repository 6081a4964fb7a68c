//! End-to-end runs of the library on a tiny synthetic benchmark.

use emtransfer::adapt::{plan_budget, run_baseline, run_neuroadda, target_distances, AdaptConfig, Mode, SourceModel};
use emtransfer::data::{read_domain, write_domain, DomainPool, TRAIN_SPLIT};
use emtransfer::mmd::{domain_distance_matrix, select_optimal_source, MatrixConfig};
use emtransfer::model::{load_checkpoint, ModelConfig, SegModel, TrainConfig};
use emtransfer::pretrain::{pretrain_all, PretrainJob};
use emtransfer::segeval::{evaluate_model, EvalConfig};
use emtransfer::stats::{agglomerative_cluster, cut_at_k, symmetrize};
use emtransfer::synth::{make_benchmark_with, Benchmark, BenchmarkConfig};
use emtransfer::uncertainty::UncertaintyConfig;
use proptest::prelude::*;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        depth: 1,
        base_channels: 2,
        input_size: 48,
        ..ModelConfig::default()
    }
}

fn benchmark() -> Benchmark {
    make_benchmark_with(&BenchmarkConfig {
        layout: vec![2, 1],
        image_size: 48,
        samples_per_domain: 12,
        last_family_stripe_prob: 0.5,
        seed: 5,
    })
    .unwrap()
}

fn pretrained(b: &Benchmark, dir: Option<&std::path::Path>) -> Vec<SourceModel> {
    let jobs: Vec<PretrainJob> = b
        .specs
        .iter()
        .enumerate()
        .map(|(i, s)| PretrainJob {
            domain: s.name.clone(),
            model: tiny_model(),
            train: TrainConfig {
                steps: 20,
                learning_rate: 1e-2,
                seed: i as u64,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            output: dir.map(|d| d.join(&s.name)),
        })
        .collect();
    pretrain_all(&b.domains, &jobs)
        .unwrap()
        .into_iter()
        .map(|o| SourceModel {
            name: o.domain,
            model: o.model,
        })
        .collect()
}

fn adapt_config() -> AdaptConfig {
    AdaptConfig {
        annotations: 3,
        training_steps: 9,
        iterations: 2,
        model: tiny_model(),
        uncertainty: UncertaintyConfig {
            k_passes: 2,
            ..UncertaintyConfig::default()
        },
        seed: 4,
        ..AdaptConfig::default()
    }
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let b = benchmark();
    let dir = tempfile::tempdir().unwrap();
    let sources = pretrained(&b, Some(dir.path()));
    for s in &sources {
        let (loaded, desc) = load_checkpoint(dir.path().join(&s.name)).unwrap();
        assert_eq!(loaded.params(), s.model.params());
        assert_eq!(desc.param_hash, s.model.param_hash());
    }
}

#[test]
fn domain_layout_round_trips() {
    let b = benchmark();
    let dir = tempfile::tempdir().unwrap();
    for d in &b.domains {
        write_domain(dir.path(), d, TRAIN_SPLIT).unwrap();
        let back = read_domain(dir.path(), d.name(), TRAIN_SPLIT).unwrap();
        assert_eq!(back.len(), d.len());
        for (x, y) in back.samples().iter().zip(d.samples()) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.artifacts, y.artifacts);
        }
    }
}

#[test]
fn selection_adaptation_and_evaluation() {
    let b = benchmark();
    let sources = pretrained(&b, None);
    let models: Vec<&SegModel> = sources.iter().map(|s| &s.model).collect();
    let matrix = domain_distance_matrix(&b.domains, &models, &MatrixConfig::default()).unwrap();
    let names = b.names();
    for n in &names {
        assert_eq!(matrix.get(n, n).unwrap(), 0.0);
    }
    let clusters = cut_at_k(&agglomerative_cluster(&symmetrize(&matrix).unwrap()).unwrap(), 2).unwrap();
    assert_eq!(clusters.k, 2);

    let target = &b.domains[0];
    let (pool, test) = target.split_at_fraction(0.75);
    let mut unlabeled = pool.clone();
    unlabeled.reset_unlabeled();
    let others: Vec<SourceModel> = sources[1..].to_vec();
    let pools: Vec<&DomainPool> = b.domains[1..].iter().collect();
    let distances = target_distances(&unlabeled, &others, &pools, &MatrixConfig::default()).unwrap();
    assert_eq!(distances.len(), 2);
    let candidates: Vec<String> = names[1..].to_vec();
    let nearest = select_optimal_source(&matrix, &names[0], &candidates).unwrap();
    assert!(candidates.contains(&nearest));

    let cfg = adapt_config();
    let (model, rec) = run_neuroadda(&pool, Some(&test), &others, &distances, &cfg).unwrap();
    assert_eq!(rec.mode, Mode::ActiveMinMmd);
    assert_eq!((rec.annotations_used, rec.steps_used), (3, 9));
    let best = distances.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(rec.source.as_deref(), Some(best.0.as_str()));
    let report = evaluate_model(&model, &test, &EvalConfig::default()).unwrap();
    assert_eq!(rec.eval.unwrap(), report.mean);

    let (_, again) = run_neuroadda(&pool, Some(&test), &others, &distances, &cfg).unwrap();
    assert_eq!(again.final_hash, rec.final_hash);

    for mode in Mode::ALL {
        let (_, r) = run_baseline(&pool, Some(&test), &others, &distances, mode, &cfg).unwrap();
        assert_eq!((r.annotations_used, r.steps_used), (3, 9));
        assert_eq!(r.source.is_none(), mode == Mode::Scratch);
    }
}

proptest! {
    #[test]
    fn budget_plans_conserve_totals(a in 1usize..200, t in 1usize..20, extra in 0usize..500) {
        let b = t.min(a) + extra;
        let plan = plan_budget(a, b, t).unwrap();
        prop_assert_eq!(plan.iterations, t.min(a));
        prop_assert_eq!(plan.annotations_per_iteration.iter().sum::<usize>(), a);
        prop_assert_eq!(plan.steps_per_iteration.iter().sum::<usize>(), b);
        prop_assert!(plan.annotations_per_iteration.iter().all(|&x| x >= 1));
        prop_assert!(plan.steps_per_iteration.iter().all(|&x| x >= 1));
    }
}
