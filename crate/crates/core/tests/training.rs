//! Training loop, voting inference and their determinism.

mod common;

use common::{max_abs_diff, random_cloud, rng, small_scene, tiny_config};
use kpfusion::layers::Network;
use kpfusion::train::{
    accumulate_votes, forward_probabilities, load_network, plan_crops, train, vote_probabilities,
    OptimizerKind, Trainer,
};
use kpfusion::Error;

fn fresh_rounded(cfg: &kpfusion::train::NetworkConfig) -> Network {
    let mut net = Network::new(cfg.model.clone(), cfg.seed).unwrap();
    net.store.round_to_f32();
    net
}

#[test]
fn zero_steps_returns_initialisation() {
    let cfg = tiny_config(0);
    let (net, log) = train(&cfg, &[small_scene(0)], &[], None).unwrap();
    assert!(log.steps.is_empty());
    assert_eq!(net.store.all(), fresh_rounded(&cfg).store.all());
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let mut cfg = tiny_config(5);
        cfg.optimizer.kind = kind;
        cfg.optimizer.lr = 0.0;
        let (net, log) = train(&cfg, &[small_scene(0)], &[], None).unwrap();
        assert_eq!(log.steps.len(), 5);
        assert_eq!(net.store.params, fresh_rounded(&cfg).store.params, "{kind:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_config(8);
    let scene = [small_scene(0)];
    let (a, la) = train(&cfg, &scene, &[], None).unwrap();
    let (b, lb) = train(&cfg, &scene, &[], None).unwrap();
    assert_eq!(la.losses(), lb.losses());
    assert_eq!(a.store.all(), b.store.all());

    let mut other = cfg.clone();
    other.seed = 1;
    let (_, lc) = train(&other, &scene, &[], None).unwrap();
    assert_ne!(la.losses(), lc.losses());
}

#[test]
fn loss_column_round_trips_through_tsv() {
    let (_, log) = train(&tiny_config(4), &[small_scene(0)], &[], None).unwrap();
    let tsv = log.to_tsv();
    let parsed: Vec<f64> = tsv
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(parsed, log.losses());
}

#[test]
fn loss_decreases_on_small_scene() {
    let mut cfg = tiny_config(200);
    cfg.optimizer.lr = 0.02;
    let (_, log) = train(&cfg, &[small_scene(0)], &[], None).unwrap();
    let init = log.initial_loss().unwrap();
    let tail = log.tail_loss(10).unwrap();
    assert!(tail < 0.5 * init, "initial {init} tail {tail}");
}

#[test]
fn validation_is_recorded_every_k_steps() {
    let mut cfg = tiny_config(6);
    cfg.eval_every = 3;
    let (_, log) = train(&cfg, &[small_scene(0)], &[small_scene(1000)], None).unwrap();
    let steps: Vec<usize> = log.evals.iter().map(|e| e.step).collect();
    assert_eq!(steps, vec![2, 5]);
    assert!(log.evals.iter().all(|e| (0.0..=1.0).contains(&e.miou)));
}

#[test]
fn final_checkpoint_matches_returned_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut cfg = tiny_config(5);
    cfg.checkpoint_every = 2;
    let (net, _) = train(&cfg, &[small_scene(0)], &[], Some(&path)).unwrap();
    let loaded = load_network(&cfg, &path).unwrap();
    assert_eq!(loaded.store.all(), net.store.all());
}

#[test]
fn pga_disabled_equals_zero_theta_step_for_step() {
    let scene = [small_scene(0)];
    let mut off = tiny_config(10);
    off.pga.enabled = false;
    let mut zero = tiny_config(10);
    zero.pga.theta = 0.0;
    let (a, la) = train(&off, &scene, &[], None).unwrap();
    let (b, lb) = train(&zero, &scene, &[], None).unwrap();
    assert_eq!(la.losses(), lb.losses());
    assert_eq!(a.store.all(), b.store.all());

    let (_, lc) = train(&tiny_config(10), &scene, &[], None).unwrap();
    assert_ne!(la.losses(), lc.losses());
}

#[test]
fn non_finite_loss_aborts_with_crop_diagnostic() {
    let cfg = tiny_config(5);
    let mut net = Network::new(cfg.model.clone(), cfg.seed).unwrap();
    let w = net.store.params.values_mut().next().unwrap();
    w.data_mut()[0] = f64::NAN;
    let mut t = Trainer::from_network(net, cfg);
    match t.step(&[small_scene(0)]) {
        Err(Error::NonFiniteLoss { step, crop, .. }) => {
            assert_eq!(step, 0);
            assert!(crop.starts_with("cloud 0 centre point "), "{crop}");
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
    assert_eq!(t.steps_done(), 0);
    assert!(t.log.steps.is_empty());
}

#[test]
fn single_covering_sphere_equals_plain_forward() {
    let cfg = tiny_config(0);
    let net = Network::new(cfg.model.clone(), 3).unwrap();
    let cloud = random_cloud(&mut rng(5), 150, 1.0, 2);
    let v = vote_probabilities(&net, &cloud, 100.0, 1).unwrap();
    assert_eq!(v.n_crops, 1);
    let plain = forward_probabilities(&net, &cloud).unwrap();
    assert!(max_abs_diff(&v.probs, &plain) <= 1e-12);
}

#[test]
fn accumulated_votes_match_manual_average() {
    let cfg = tiny_config(0);
    let net = Network::new(cfg.model.clone(), 4).unwrap();
    let cloud = random_cloud(&mut rng(6), 200, 2.0, 2);
    let nc = net.n_classes();
    let crops = plan_crops(&cloud.positions, 0.6, 2).unwrap();
    let got = accumulate_votes(&net, &cloud, &crops).unwrap();

    let mut sum = vec![0.0; cloud.len() * nc];
    let mut counts = vec![0u32; cloud.len()];
    for ids in &crops {
        let p = net.predict_proba(&cloud.select(ids)).unwrap();
        for (k, &i) in ids.iter().enumerate() {
            counts[i] += 1;
            for c in 0..nc {
                sum[i * nc + c] += p[k * nc + c];
            }
        }
    }
    for row in sum.chunks_mut(nc) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    assert_eq!(got.counts, counts);
    assert!(counts.iter().all(|&c| c >= 2));
    assert!(max_abs_diff(&got.probs, &sum) <= 1e-12);

    // Crop order changes only rounding, never the arg-max.
    let reversed: Vec<Vec<usize>> = crops.iter().rev().cloned().collect();
    let again = accumulate_votes(&net, &cloud, &reversed).unwrap();
    assert!(max_abs_diff(&again.probs, &got.probs) <= 1e-12);
    assert_eq!(again.predictions(), got.predictions());
}

#[test]
fn duplicated_crops_keep_the_argmax() {
    let cfg = tiny_config(0);
    let net = Network::new(cfg.model.clone(), 5).unwrap();
    let cloud = random_cloud(&mut rng(8), 200, 2.0, 2);
    let crops = plan_crops(&cloud.positions, 0.7, 1).unwrap();
    let once = accumulate_votes(&net, &cloud, &crops).unwrap();
    let doubled: Vec<Vec<usize>> = crops.iter().flat_map(|c| [c.clone(), c.clone()]).collect();
    let twice = accumulate_votes(&net, &cloud, &doubled).unwrap();
    assert_eq!(twice.predictions(), once.predictions());
    assert!(max_abs_diff(&twice.probs, &once.probs) <= 1e-12);
    assert!(twice.counts.iter().zip(&once.counts).all(|(&t, &o)| t == 2 * o));
}

#[test]
fn uncovered_points_are_a_coverage_error() {
    let cfg = tiny_config(0);
    let net = Network::new(cfg.model.clone(), 0).unwrap();
    let cloud = random_cloud(&mut rng(7), 20, 1.0, 2);
    let crops = vec![(0..10).collect::<Vec<_>>()];
    match accumulate_votes(&net, &cloud, &crops) {
        Err(Error::Coverage { uncovered, total }) => assert_eq!((uncovered, total), (10, 20)),
        other => panic!("expected a coverage error, got {other:?}"),
    }
}
