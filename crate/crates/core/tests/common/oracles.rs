//! Brute-force reference implementations used by the oracle and acceptance
//! tests. Each one recomputes its quantity from scratch by a different route
//! than the library.

use nalgebra::DMatrix;
use rand::Rng;
use trifit::data::AminoAcid;
use trifit::structure::{ProteinStructure, Residue};

/// Pairwise count: positive above negative scores 2, a tie scores 1.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (pos > 0 && neg > 0).then(|| twice as f64 / (2 * pos * neg) as f64)
}

/// Enumerates every distinct score as a threshold (highest first) and counts
/// predictions at or above it.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    if pos == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_tp = 0u64;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l == 1).count() as u64;
        let predicted = scores.iter().filter(|&&s| s >= t).count() as u64;
        if tp > prev_tp {
            area += ((tp - prev_tp) as f64 / pos as f64) * (tp as f64 / predicted as f64);
        }
        prev_tp = tp;
    }
    Some(area)
}

/// `(acc, macro_f1, macro_recall, macro_precision)` from per-class counts.
pub fn classification(scores: &[f64], labels: &[u8], threshold: f64) -> (f64, f64, f64, f64) {
    let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut f1 = 0.0;
    let mut recall = 0.0;
    let mut precision = 0.0;
    for c in 0..2u8 {
        let tp = (0..labels.len())
            .filter(|&i| labels[i] == c && predicted[i] == c)
            .count();
        let pred_c = predicted.iter().filter(|&&p| p == c).count();
        let true_c = labels.iter().filter(|&&l| l == c).count();
        let p = ratio(tp, pred_c);
        let r = ratio(tp, true_c);
        precision += p;
        recall += r;
        f1 += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let correct = (0..labels.len()).filter(|&i| labels[i] == predicted[i]).count();
    (ratio(correct, labels.len()), f1 / 2.0, recall / 2.0, precision / 2.0)
}

/// Quantile-binned ECE computed group by group over the sorted probabilities.
pub fn ece(probs: &[f64], labels: &[u8], n_bins: usize) -> f64 {
    let n = probs.len();
    let mut pairs: Vec<(f64, u8)> = probs.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut bins: Vec<Vec<(f64, u8)>> = vec![Vec::new(); n_bins];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && pairs[end].0 == pairs[start].0 {
            end += 1;
        }
        bins[start * n_bins / n].extend_from_slice(&pairs[start..end]);
        start = end;
    }
    bins.iter()
        .filter(|b| !b.is_empty())
        .map(|b| {
            let m = b.len() as f64;
            let mean_p = b.iter().map(|x| x.0).sum::<f64>() / m;
            let rate = b.iter().filter(|x| x.1 == 1).count() as f64 / m;
            m / n as f64 * (mean_p - rate).abs()
        })
        .sum()
}

/// Scores drawn from a small grid so ties are common, with random labels.
pub fn metric_instance<R: Rng>(g: &mut R) -> (Vec<f64>, Vec<u8>) {
    let n = g.random_range(2..=50);
    let levels = g.random_range(2..=12);
    let scores = (0..n)
        .map(|_| g.random_range(0..levels) as f64 / levels as f64)
        .collect();
    let labels = (0..n).map(|_| u8::from(g.random_bool(0.5))).collect();
    (scores, labels)
}

/// Kirchhoff matrix straight from the contact definition.
pub fn kirchhoff(structure: &ProteinStructure, cutoff: f64) -> DMatrix<f64> {
    let l = structure.len();
    let mut k = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            if i == j {
                continue;
            }
            let a = structure.residues[i].ca;
            let b = structure.residues[j].ca;
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            if d <= cutoff {
                k[(i, j)] = -1.0;
                k[(i, i)] += 1.0;
            }
        }
    }
    k
}

/// Diagonal of the pseudo-inverse of a connected Laplacian, using
/// `pinv(K) = (K + J/n)^-1 - J/n` with `J` the all-ones matrix. An LU inverse
/// is far more accurate here than SVD when singular values repeat.
pub fn pinv_diagonal(k: &DMatrix<f64>) -> Vec<f64> {
    let n = k.nrows();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let inv = (k + &j).try_inverse().expect("connected graph");
    (0..n).map(|i| inv[(i, i)] - j[(i, i)]).collect()
}

/// Random 3.8 Å Cα walk; consecutive residues are always in contact at a
/// 10 Å cutoff, so the contact graph is connected.
pub fn random_chain<R: Rng>(g: &mut R, len: usize) -> ProteinStructure {
    let mut ca = [0.0f64; 3];
    let residues = (0..len)
        .map(|i| {
            if i > 0 {
                let z: f64 = g.random_range(-1.0..1.0);
                let phi: f64 = g.random_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                ca = [
                    ca[0] + 3.8 * r * phi.cos(),
                    ca[1] + 3.8 * r * phi.sin(),
                    ca[2] + 3.8 * z,
                ];
            }
            Residue {
                index: i as i32 + 1,
                residue: AminoAcid::ALL[g.random_range(0..20)],
                ca,
            }
        })
        .collect();
    ProteinStructure {
        protein_id: "RND".into(),
        residues,
    }
}
