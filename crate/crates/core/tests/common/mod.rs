#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trifit::nn::{Ablation, Dropout, FusionDims, FusionModel};
use trifit::objectives::{loss_and_gradients, loss_value};
use trifit::tensor::Matrix;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor: central differences carry roundoff near eps * loss / h.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn small_dims() -> FusionDims {
    FusionDims {
        inputs: [7, 6, 5],
        fused: 6,
        expert_hidden: 5,
        router_hidden: 4,
        classifier_hidden: 5,
        classes: 2,
    }
}

pub fn random_batch(dims: &FusionDims, rows: usize, seed: u64) -> ([Matrix; 3], Vec<u8>) {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let inputs = std::array::from_fn(|m| {
        Matrix::from_vec(
            rows,
            dims.inputs[m],
            (0..rows * dims.inputs[m]).map(|_| g.random_range(-2.0..2.0)).collect(),
        )
    });
    let labels = (0..rows).map(|i| (i % 2) as u8).collect();
    (inputs, labels)
}

/// Random non-trivial LayerNorm parameters so their gradients are exercised
/// away from the identity initialisation.
pub fn perturb_norms(model: &mut FusionModel, seed: u64) {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    for id in 0..model.params.specs.len() {
        let name = model.params.specs[id].name.clone();
        if name.ends_with(".scale") || name.ends_with(".shift") || name.ends_with(".bias") {
            for v in model.params.get_mut(id) {
                *v += g.random_range(-0.3..0.3);
            }
        }
    }
}

pub struct CheckResult {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central finite differences on the total loss for the chosen scalar indices.
pub fn check_gradients(
    model: &FusionModel,
    inputs: &[Matrix; 3],
    labels: &[u8],
    ablation: &Ablation,
    dropout: Dropout,
    indices: &[usize],
) -> CheckResult {
    let (lambda, tau) = (0.3, 0.07);
    let x = [&inputs[0], &inputs[1], &inputs[2]];
    let fwd = model.forward(x, ablation, dropout).unwrap();
    let (_, grads) = loss_and_gradients(model, &fwd, labels, lambda, tau).unwrap();
    let mut probe = model.clone();
    let mut result = CheckResult {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for &idx in indices {
        let orig = probe.params.values[idx];
        let mut eval = |v: f64| {
            probe.params.values[idx] = v;
            let f = probe.forward(x, ablation, dropout).unwrap();
            loss_value(&f, labels, lambda, tau).unwrap().total
        };
        let fd = (eval(orig + FD_STEP) - eval(orig - FD_STEP)) / (2.0 * FD_STEP);
        probe.params.values[idx] = orig;
        let an = grads.params[idx];
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(GRAD_FLOOR);
        if rel > result.max_rel_error {
            let spec = model.params.specs.iter().find(|s| s.range().contains(&idx)).unwrap();
            result.max_rel_error = rel;
            result.worst = format!("{}[{}] analytic {an:e} numeric {fd:e}", spec.name, idx - spec.offset);
        }
        result.checked += 1;
    }
    result
}

/// `per_tensor` evenly spaced entries of every parameter tensor (all when smaller).
pub fn sampled_indices(model: &FusionModel, per_tensor: usize, seed: u64) -> Vec<usize> {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for spec in &model.params.specs {
        let n = spec.numel();
        if n <= per_tensor {
            out.extend(spec.range());
        } else {
            for _ in 0..per_tensor {
                out.push(spec.offset + g.random_range(0..n));
            }
        }
    }
    out
}
