use structgraph_core::backbone::BackboneConfig;
use structgraph_core::data::{generate_samples, Sample, SynthConfig};
use structgraph_core::metrics::evaluate;
use structgraph_core::parallel::Execution;
use structgraph_core::sgnn::ModelConfig;
use structgraph_core::training::{fit, AugmentConfig, TrainConfig};

fn samples(seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let cfg = SynthConfig {
        n_per_class: 10,
        image_size: 32,
        lesion_radius_px: (3.0, 6.0),
        seed,
        ..SynthConfig::default()
    };
    let all: Vec<Sample> = generate_samples(&cfg)
        .unwrap()
        .into_iter()
        .map(Sample::from)
        .collect();
    let (train, test) = all.split_at(16);
    (train.to_vec(), test.to_vec())
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            image_size: 32,
            backbone: BackboneConfig { blocks: vec![4, 8] },
            hidden: 8,
            ..ModelConfig::default()
        },
        lr: 1e-3,
        batch_size: 4,
        epochs: 2,
        seed: 3,
        augment: AugmentConfig::default(),
        ..TrainConfig::default()
    }
}

/// Threshold-0.5 counts and pairwise AUC from a dump of `(score, label)` text lines.
fn recompute(dump: &str) -> (u64, u64, u64, u64, f64) {
    let rows: Vec<(f64, u8)> = dump
        .lines()
        .map(|l| {
            let (s, y) = l.split_once(',').unwrap();
            (s.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    let (mut tn, mut fp, mut fn_, mut tp) = (0, 0, 0, 0);
    for &(s, y) in &rows {
        match (s >= 0.5, y) {
            (true, 1) => tp += 1,
            (true, _) => fp += 1,
            (false, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let (mut wins, mut pairs) = (0.0, 0.0);
    for &(sp, yp) in &rows {
        for &(sn, yn) in &rows {
            if yp == 1 && yn == 0 {
                pairs += 1.0;
                wins += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (tn, fp, fn_, tp, wins / pairs)
}

#[test]
fn metrics_match_recomputation_from_dumped_scores() {
    let (train, _) = samples(21);
    let (_, test) = samples(22);
    let all_eval: Vec<Sample> = train.iter().chain(&test).cloned().collect();
    let result = fit(&train, &test, &train_cfg()).unwrap();
    let e = evaluate(&result.model, &all_eval, 0.0, Execution::default()).unwrap();
    let dump: String = e
        .graph_scores
        .iter()
        .zip(&all_eval)
        .map(|(s, x)| format!("{s:?},{}\n", x.label))
        .collect();
    let (tn, fp, fn_, tp, auc) = recompute(&dump);
    let g = &e.report.graph;
    assert_eq!(
        (
            g.confusion.tn,
            g.confusion.fp,
            g.confusion.fn_,
            g.confusion.tp
        ),
        (tn, fp, fn_, tp)
    );
    assert_eq!(g.count, 20);
    assert!((g.accuracy - (tn + tp) as f64 / 20.0).abs() < 1e-15);
    assert!((g.auc.unwrap() - auc).abs() < 1e-12);
}

#[test]
fn training_is_bit_reproducible_across_execution_modes() {
    let (train, val) = samples(5);
    let run = |exec| {
        let cfg = TrainConfig {
            exec,
            ..train_cfg()
        };
        let r = fit(&train, &val, &cfg).unwrap();
        (r.model.flat_values(), r.history)
    };
    let (p1, h1) = run(Execution::Sequential);
    let (p2, h2) = run(Execution::Parallel);
    let (p3, _) = run(Execution::Sequential);
    assert_eq!(h1, h2);
    assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(p1.iter().zip(&p3).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn loss_components_are_nonnegative_and_sum_exactly() {
    let (train, val) = samples(6);
    let cfg = train_cfg();
    let r = fit(&train, &val, &cfg).unwrap();
    for rec in &r.history {
        let l = rec.train.loss;
        assert!(l.graph >= 0.0 && l.node >= 0.0 && l.explain >= 0.0);
        let weighted =
            l.graph + cfg.weights.lambda_node * l.node + cfg.weights.lambda_explain * l.explain;
        assert!((l.total - weighted).abs() <= 1e-12 * l.total.max(1.0));
    }
}
