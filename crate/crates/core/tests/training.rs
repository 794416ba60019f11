//! Whole-run properties of the strategies on small synthetic streams.

use driftguard_core::data::{synthetic_tasks, SyntheticSpec, TaskStream};
use driftguard_core::rng::{stream, stream_rng};
use driftguard_core::strategies::{
    build_strategy, train_task, train_task_observed, BuildContext, Strategy, StrategyConfig, StrategyKind,
    TrainOptions,
};
use driftguard_core::{Architecture, HeadMode, Network, Optimizer, OptimizerKind};

const SEED: u64 = 17;

fn small_stream(head: HeadMode) -> TaskStream {
    synthetic_tasks(
        &SyntheticSpec {
            n_tasks: 3,
            dim: 8,
            classes: 3,
            n_per_class: 40,
            n_test_per_class: 20,
            head,
            ..SyntheticSpec::default()
        },
        SEED,
    )
    .unwrap()
}

struct Run {
    strategy: Box<dyn Strategy>,
    /// Parameters after every optimizer step, across all tasks.
    trajectory: Vec<Vec<f64>>,
}

fn run(cfg: &StrategyConfig, stream: &TaskStream, kind: OptimizerKind, lr: f64) -> Run {
    let arch = Architecture::new(stream.input_dim(), vec![12, 10], stream.head_policy(), stream.len()).unwrap();
    let mut net = Network::new(arch, &mut stream_rng(SEED, stream::INIT));
    let mut strategy = build_strategy(
        cfg,
        &BuildContext {
            net: &net,
            seed: SEED,
            batch_size: 8,
            permuted: false,
        },
    )
    .unwrap();
    let mut opt = Optimizer::new(kind, lr, net.param_count()).unwrap();
    let mut rng = stream_rng(SEED, stream::SHUFFLE);
    let opts = TrainOptions {
        epochs: 2,
        batch_size: 8,
    };
    let mut trajectory = Vec::new();
    for split in stream.tasks() {
        train_task_observed(
            &mut net,
            strategy.as_mut(),
            &split.train,
            opts,
            &mut opt,
            &mut rng,
            &mut |p| trajectory.push(p.to_vec()),
        )
        .unwrap();
    }
    Run {
        strategy,
        trajectory,
    }
}

fn same_bits(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
}

#[test]
fn null_strategies_reproduce_naive_bit_for_bit() {
    for head in [HeadMode::PerTask, HeadMode::Shared] {
        let stream = small_stream(head);
        for (kind, lr) in [(OptimizerKind::Sgd, 0.05), (OptimizerKind::Adam, 1e-3)] {
            let naive = run(&StrategyConfig::of(StrategyKind::Naive), &stream, kind, lr);
            let nulls = [
                StrategyConfig {
                    lambda: 0.0,
                    ..StrategyConfig::of(StrategyKind::Ewc)
                },
                StrategyConfig {
                    lambda: 0.0,
                    ..StrategyConfig::of(StrategyKind::EwcOnline)
                },
                StrategyConfig {
                    lambda: 0.0,
                    ..StrategyConfig::of(StrategyKind::Lwf)
                },
                StrategyConfig {
                    lambda: 0.0,
                    ..StrategyConfig::of(StrategyKind::Er)
                },
                StrategyConfig {
                    c: Some(0.0),
                    ..StrategyConfig::of(StrategyKind::Si)
                },
            ];
            for cfg in nulls {
                let other = run(&cfg, &stream, kind, lr);
                assert!(
                    same_bits(&naive.trajectory, &other.trajectory),
                    "{} with {head:?} heads and {kind:?} diverged from naive",
                    cfg.kind.name()
                );
            }
        }
    }
}

#[test]
fn er_matches_naive_until_memory_fills() {
    let stream = small_stream(HeadMode::PerTask);
    let naive = run(&StrategyConfig::of(StrategyKind::Naive), &stream, OptimizerKind::Sgd, 0.05);
    let er = run(&StrategyConfig::of(StrategyKind::Er), &stream, OptimizerKind::Sgd, 0.05);
    let first_task_steps = 2 * stream.tasks()[0].train.len().div_ceil(8);
    assert!(same_bits(
        &naive.trajectory[..first_task_steps],
        &er.trajectory[..first_task_steps]
    ));
    assert!(!same_bits(&naive.trajectory, &er.trajectory));
    assert!(er.strategy.stats().er_steps > 0);
}

#[test]
fn runs_are_deterministic() {
    let stream = small_stream(HeadMode::Shared);
    for kind in [
        StrategyKind::Naive,
        StrategyKind::Ewc,
        StrategyKind::EwcOnline,
        StrategyKind::Si,
        StrategyKind::Lwf,
        StrategyKind::Gem,
        StrategyKind::Agem,
        StrategyKind::Er,
    ] {
        let cfg = StrategyConfig::of(kind);
        let a = run(&cfg, &stream, OptimizerKind::Adam, 1e-3);
        let b = run(&cfg, &stream, OptimizerKind::Adam, 1e-3);
        assert!(same_bits(&a.trajectory, &b.trajectory), "{}", kind.name());
        assert_eq!(a.strategy.stats(), b.strategy.stats());
    }
}

#[test]
fn gem_steps_never_increase_past_losses() {
    for head in [HeadMode::PerTask, HeadMode::Shared] {
        let stream = small_stream(head);
        let cfg = StrategyConfig {
            memory_per_task: Some(20),
            ..StrategyConfig::of(StrategyKind::Gem)
        };
        let gem = run(&cfg, &stream, OptimizerKind::Sgd, 0.05);
        let stats = gem.strategy.stats();
        assert!(stats.checked_steps > 0);
        assert!(stats.projected_steps > 0, "{stats:?}");
        assert_eq!(stats.qp_failures, 0);
        let worst = stats.worst_alignment.unwrap();
        assert!(worst >= -1e-6, "worst alignment {worst}");
    }
}

#[test]
fn agem_projection_keeps_reference_alignment() {
    let stream = small_stream(HeadMode::Shared);
    let agem = run(&StrategyConfig::of(StrategyKind::Agem), &stream, OptimizerKind::Sgd, 0.05);
    let stats = agem.strategy.stats();
    assert!(stats.projected_steps > 0);
    assert!(stats.worst_alignment.unwrap() >= -1e-6);
}

#[test]
fn huge_ewc_weight_pins_parameters() {
    let stream = small_stream(HeadMode::Shared);
    let arch = Architecture::new(stream.input_dim(), vec![12, 10], stream.head_policy(), stream.len()).unwrap();
    let mut net = Network::new(arch, &mut stream_rng(SEED, stream::INIT));
    let cfg = StrategyConfig {
        lambda: 1e6,
        ..StrategyConfig::of(StrategyKind::Ewc)
    };
    let ctx = BuildContext {
        net: &net,
        seed: SEED,
        batch_size: 8,
        permuted: false,
    };
    let mut strategy = build_strategy(&cfg, &ctx).unwrap();
    let mut opt = Optimizer::adam(1e-3, net.param_count()).unwrap();
    let mut rng = stream_rng(SEED, stream::SHUFFLE);
    let opts = TrainOptions {
        epochs: 2,
        batch_size: 8,
    };
    train_task(&mut net, strategy.as_mut(), &stream.tasks()[0].train, opts, &mut opt, &mut rng).unwrap();
    let theta_star = net.params().to_vec();
    let fisher = driftguard_core::strategies::fisher_diagonal(
        &net,
        &stream.tasks()[0].train.inputs(),
        stream.tasks()[0].train.labels(),
        0,
    )
    .unwrap();
    train_task(&mut net, strategy.as_mut(), &stream.tasks()[1].train, opts, &mut opt, &mut rng).unwrap();
    let weighted: f64 = net
        .params()
        .iter()
        .zip(&theta_star)
        .zip(&fisher)
        .map(|((p, s), f)| f * (p - s).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(weighted <= 1e-2, "weighted distance {weighted}");
}
