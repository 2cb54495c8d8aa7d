//! Finite-difference checks of every op and block over ten seeds, plus
//! gradients that must vanish analytically.

mod common;

use common::{random_tensor, rng};
use kpfusion::autodiff::{Graph, Mode, Tensor};
use kpfusion::gradsuite::{case_names, run_suite, CaseKind};

#[test]
fn every_op_and_block_passes_over_ten_seeds() {
    let seeds: Vec<u64> = (0..10).collect();
    let results = run_suite(&seeds).unwrap();
    assert_eq!(results.len(), case_names().len());
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<28} {:?} max rel error {:.3e} (seed {})",
            r.name, r.kind, r.max_rel_error, r.worst_seed
        );
        assert!(r.coordinates > 0, "{} checked nothing", r.name);
        if !r.passed() {
            failed.push(r.name);
        }
    }
    assert!(failed.is_empty(), "failing cases: {failed:?}");
    assert!(results.iter().any(|r| r.kind == CaseKind::Op));
    assert!(results.iter().any(|r| r.kind == CaseKind::Composed));
}

#[test]
fn bias_before_batch_norm_gets_no_gradient() {
    let mut r = rng(3);
    let mut g = Graph::new(Mode::Training);
    let x = g.constant(random_tensor(&mut r, vec![12, 3], 1.0));
    let w = g.param(random_tensor(&mut r, vec![3, 4], 1.0));
    let b = g.param(random_tensor(&mut r, vec![4], 1.0));
    let gamma = g.param(random_tensor(&mut r, vec![4], 1.0));
    let beta = g.param(random_tensor(&mut r, vec![4], 1.0));
    let proj = g.constant(random_tensor(&mut r, vec![12, 4], 1.0));
    let h = g.matmul(x, w).unwrap();
    let h = g.add_row(h, b).unwrap();
    let y = g.batch_norm(h, gamma, beta, (&[0.0; 4], &[1.0; 4])).unwrap();
    let y = g.mul(y, proj).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    let gb = g.grad(b).unwrap();
    assert!(gb.iter().all(|v| v.abs() <= 1e-12), "{gb:?}");
    assert!(g.grad(w).unwrap().iter().any(|v| v.abs() > 1e-6));
}

#[test]
fn bias_before_segment_softmax_gets_no_gradient() {
    // A per-channel shift of every logit cancels inside the neighbourhood
    // softmax, so the output bias of the logit perceptron is inert.
    let mut r = rng(4);
    let mut g = Graph::new(Mode::Training);
    let logits = g.constant(random_tensor(&mut r, vec![10, 3], 1.0));
    let b = g.param(Tensor::new(vec![3], vec![0.3, -0.2, 0.5]).unwrap());
    let z = g.add_row(logits, b).unwrap();
    let s = g.segment_softmax(z, vec![0, 4, 4, 10]).unwrap();
    let proj = g.constant(random_tensor(&mut r, vec![10, 3], 1.0));
    let y = g.mul(s, proj).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    let gb = g.grad(b).unwrap();
    assert!(gb.iter().all(|v| v.abs() <= 1e-12), "{gb:?}");
}
