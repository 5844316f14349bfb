//! Training objective: cross-entropy plus a symmetric InfoNCE term averaged
//! over modality pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Ablation, Forward, FusionModel, Gradients};
use crate::tensor::{gemm, Matrix};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;
pub const DEFAULT_LAMBDA: f64 = 0.3;
const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    /// Pair losses; `None` when a modality of the pair is disabled.
    pub nce_seq_str: Option<f64>,
    pub nce_seq_dyn: Option<f64>,
    pub nce_str_dyn: Option<f64>,
    pub ctr: f64,
    pub total: f64,
    pub lambda: f64,
    pub tau: f64,
}

fn unit_rows(z: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut u = z.clone();
    let mut norms = Vec::with_capacity(z.rows);
    for i in 0..z.rows {
        let n = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < MIN_ROW_NORM {
            return Err(Error::ZeroNormRow(i));
        }
        u.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((u, norms))
}

/// Cosine-similarity matrix `S[i][j] = cos(z_i, z'_j)` plus the unit rows.
fn similarities(z: &Matrix, zp: &Matrix) -> Result<(Matrix, Matrix, Vec<f64>, Matrix, Vec<f64>)> {
    if z.rows < 2 {
        return Err(Error::BatchTooSmall(z.rows));
    }
    if zp.rows != z.rows || zp.cols != z.cols {
        return Err(Error::DimMismatch {
            expected: z.rows * z.cols,
            got: zp.rows * zp.cols,
        });
    }
    let (u, nu) = unit_rows(z)?;
    let (v, nv) = unit_rows(zp)?;
    let b = z.rows;
    let mut s = Matrix::zeros(b, b);
    gemm(b, z.cols, b, &u.data, false, &v.data, true, &mut s.data, false);
    Ok((s, u, nu, v, nv))
}

/// Log-sum-exp of `values / tau`.
fn lse(values: impl Iterator<Item = f64> + Clone, tau: f64) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max) / tau;
    max + values.map(|x| (x / tau - max).exp()).sum::<f64>().ln()
}

fn nce_from_similarities(s: &Matrix, tau: f64) -> f64 {
    let b = s.rows;
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..b {
        rows += lse(s.row(i).iter().copied(), tau) - s.get(i, i) / tau;
        cols += lse((0..b).map(|k| s.get(k, i)), tau) - s.get(i, i) / tau;
    }
    (rows + cols) / (2 * b) as f64
}

/// Symmetric InfoNCE on cosine similarity, batch mean of both directions.
pub fn info_nce(z: &Matrix, zp: &Matrix, tau: f64) -> Result<f64> {
    let (s, ..) = similarities(z, zp)?;
    Ok(nce_from_similarities(&s, tau))
}

/// Backward through row normalisation: `(du - u (u·du)) / |z|`.
fn unit_rows_backward(u: &Matrix, norms: &[f64], du: &Matrix) -> Matrix {
    let mut dz = du.clone();
    for i in 0..u.rows {
        let ur = u.row(i);
        let dot: f64 = ur.iter().zip(du.row(i)).map(|(a, b)| a * b).sum();
        for (o, x) in dz.row_mut(i).iter_mut().zip(ur) {
            *o = (*o - x * dot) / norms[i];
        }
    }
    dz
}

/// InfoNCE value and its gradients with respect to both inputs.
pub fn info_nce_with_grad(z: &Matrix, zp: &Matrix, tau: f64) -> Result<(f64, Matrix, Matrix)> {
    let (s, u, nu, v, nv) = similarities(z, zp)?;
    let loss = nce_from_similarities(&s, tau);
    let b = s.rows;
    let scale = 1.0 / (2.0 * b as f64 * tau);
    let mut g = Matrix::zeros(b, b);
    for i in 0..b {
        let l = lse(s.row(i).iter().copied(), tau);
        for j in 0..b {
            g.row_mut(i)[j] += (s.get(i, j) / tau - l).exp();
        }
        g.row_mut(i)[i] -= 1.0;
    }
    for j in 0..b {
        let l = lse((0..b).map(|k| s.get(k, j)), tau);
        for i in 0..b {
            g.row_mut(i)[j] += (s.get(i, j) / tau - l).exp();
        }
        g.row_mut(j)[j] -= 1.0;
    }
    g.data.iter_mut().for_each(|x| *x *= scale);
    let d = z.cols;
    let mut du = Matrix::zeros(b, d);
    gemm(b, b, d, &g.data, false, &v.data, false, &mut du.data, false);
    let mut dv = Matrix::zeros(b, d);
    gemm(b, b, d, &g.data, true, &u.data, false, &mut dv.data, false);
    Ok((loss, unit_rows_backward(&u, &nu, &du), unit_rows_backward(&v, &nv, &dv)))
}

/// Contrastive term over the given modality pairs.
#[derive(Clone, Debug)]
pub struct Contrastive {
    /// Mean of the pair losses, zero when no pair is active.
    pub ctr: f64,
    /// Losses for (seq,str), (seq,dyn), (str,dyn).
    pub pairs: [Option<f64>; 3],
    /// `dctr/dz` per modality.
    pub grads: [Option<Matrix>; 3],
}

fn pair_slot(a: usize, b: usize) -> usize {
    match (a, b) {
        (0, 1) => 0,
        (0, 2) => 1,
        (1, 2) => 2,
        _ => panic!("unordered modality pair ({a}, {b})"),
    }
}

/// `ctr = mean over pairs of InfoNCE(z_a, z_b)`.
pub fn trimodal_contrastive(
    z: [&Matrix; 3],
    pairs: &[(usize, usize)],
    tau: f64,
    with_grad: bool,
) -> Result<Contrastive> {
    let mut out = Contrastive {
        ctr: 0.0,
        pairs: [None; 3],
        grads: Default::default(),
    };
    if pairs.is_empty() {
        return Ok(out);
    }
    let w = 1.0 / pairs.len() as f64;
    let mut sum = 0.0;
    for &(a, b) in pairs {
        let loss = if with_grad {
            let (loss, ga, gb) = info_nce_with_grad(z[a], z[b], tau)?;
            for (m, g) in [(a, ga), (b, gb)] {
                let g = Matrix::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * w).collect());
                match &mut out.grads[m] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            loss
        } else {
            info_nce(z[a], z[b], tau)?
        };
        out.pairs[pair_slot(a, b)] = Some(loss);
        sum += loss;
    }
    out.ctr = sum / pairs.len() as f64;
    Ok(out)
}

/// Mean of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Matrix, labels: &[u8]) -> f64 {
    cross_entropy_with_grad(logits, labels).0
}

pub fn cross_entropy_with_grad(logits: &Matrix, labels: &[u8]) -> (f64, Matrix) {
    assert_eq!(logits.rows, labels.len(), "one label per row");
    let b = logits.rows as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let l = lse(row.iter().copied(), 1.0);
        loss += l - row[y as usize];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = ((row[j] - l).exp() - f64::from(u8::from(j == y as usize))) / b;
        }
    }
    (loss / b, grad)
}

/// `total = ce + λ ctr`.
pub fn total_loss(ce: f64, contrastive: &Contrastive, lambda: f64, tau: f64) -> LossBreakdown {
    LossBreakdown {
        ce,
        nce_seq_str: contrastive.pairs[0],
        nce_seq_dyn: contrastive.pairs[1],
        nce_str_dyn: contrastive.pairs[2],
        ctr: contrastive.ctr,
        total: ce + lambda * contrastive.ctr,
        lambda,
        tau,
    }
}

/// Loss weight actually applied to the contrastive term.
pub fn effective_lambda(ablation: &Ablation, lambda: f64) -> f64 {
    if ablation.contrastive {
        lambda
    } else {
        0.0
    }
}

/// Full objective on a recorded forward pass, with parameter gradients.
pub fn loss_and_gradients(
    model: &FusionModel,
    fwd: &Forward,
    labels: &[u8],
    lambda: f64,
    tau: f64,
) -> Result<(LossBreakdown, Gradients)> {
    let lambda = effective_lambda(&fwd.ablation, lambda);
    let (ce, dlogits) = cross_entropy_with_grad(&fwd.out.logits, labels);
    let z = &fwd.out.z;
    let ctr = trimodal_contrastive(
        [&z[0], &z[1], &z[2]],
        &fwd.ablation.contrastive_pairs(),
        tau,
        lambda != 0.0,
    )?;
    let dz: [Option<Matrix>; 3] = std::array::from_fn(|m| {
        ctr.grads[m]
            .as_ref()
            .map(|g| Matrix::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * lambda).collect()))
    });
    let grads = model.backward(fwd, &dlogits, [dz[0].as_ref(), dz[1].as_ref(), dz[2].as_ref()], false);
    Ok((total_loss(ce, &ctr, lambda, tau), grads))
}

/// Objective value only.
pub fn loss_value(fwd: &Forward, labels: &[u8], lambda: f64, tau: f64) -> Result<LossBreakdown> {
    let lambda = effective_lambda(&fwd.ablation, lambda);
    let ce = cross_entropy(&fwd.out.logits, labels);
    let z = &fwd.out.z;
    let ctr = trimodal_contrastive([&z[0], &z[1], &z[2]], &fwd.ablation.contrastive_pairs(), tau, false)?;
    Ok(total_loss(ce, &ctr, lambda, tau))
}
