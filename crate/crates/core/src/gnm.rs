//! Gaussian Network Model over Cα contacts.
//!
//! The Kirchhoff matrix Γ is the Laplacian of the contact graph (contact iff
//! the Cα–Cα distance is at most the cutoff). Its nonzero eigenpairs give
//! per-residue flexibility (diagonal of the pseudo-inverse), slow mode shapes
//! and per-mode correlation contributions. The zero mode is the rigid-body
//! translation and is always discarded; more than one zero eigenvalue means
//! the contact graph falls apart into several components.
//!
//! Cross-correlation features: the mean-projection reading
//! `C[i,k] = u[i,k] * sum_j u[j,k] / (L * lambda_k)` vanishes for every
//! nonzero mode of a connected graph (modes are orthogonal to the all-ones
//! zero mode). Whenever the column sum is below 1e-9 the per-mode
//! self-correlation `u[i,k]^2 / lambda_k` is used instead; summed over all
//! nonzero modes it reproduces the raw B-factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, SquareMatrix};
use crate::structure::{norm, sub, ProteinStructure};

pub const DEFAULT_CUTOFF: f64 = 10.0;
pub const DEFAULT_MODES: usize = 20;
/// Eigenvalues at or below this are treated as zero modes.
pub const ZERO_EIGENVALUE: f64 = 1e-8;
const FALLBACK_SUM: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Kirchhoff {
    pub matrix: SquareMatrix,
    pub cutoff: f64,
}

impl Kirchhoff {
    pub fn len(&self) -> usize {
        self.matrix.n
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.n == 0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.matrix.n).map(|i| self.matrix.get(i, i)).collect()
    }
}

/// Nonzero GNM modes in ascending eigenvalue order.
///
/// All `L - 1` nonzero modes are kept (B-factors need them); `k` is the number
/// of slow modes exposed as mode-shape features.
#[derive(Clone, Debug, PartialEq)]
pub struct GnmModes {
    pub len: usize,
    pub values: Vec<f64>,
    /// `vectors[m]` is mode `m`, unit norm, largest-magnitude entry positive.
    pub vectors: Vec<Vec<f64>>,
    pub k: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossCorrelation {
    /// Mean projection of mode k onto residue i's correlations with all
    /// residues, falling back to the self term when the projection vanishes.
    #[default]
    MeanProjection,
    /// Always the per-mode self term `u[i,k]^2 / lambda_k`.
    SelfContribution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnmResult {
    /// z-normalised B-factors.
    pub b: Vec<f64>,
    /// `L x k` mode shapes, zero-padded to `k` columns.
    pub u: Vec<Vec<f64>>,
    /// `L x k` cross-correlation features, zero-padded likewise.
    pub c: Vec<Vec<f64>>,
    /// z-normalised Kirchhoff diagonal (contact counts).
    pub s: Vec<f64>,
    pub k: usize,
    /// Number of zero columns appended to `u` and `c`.
    pub pad: usize,
}

pub fn build_kirchhoff(structure: &ProteinStructure, cutoff: f64) -> Result<Kirchhoff> {
    let l = structure.len();
    if l < 2 {
        return Err(Error::TooShort(l));
    }
    let coords = structure.coords();
    let mut contacts = vec![0i64; l * l];
    for i in 0..l {
        for j in i + 1..l {
            if norm(sub(coords[j], coords[i])) <= cutoff {
                contacts[i * l + j] = 1;
                contacts[j * l + i] = 1;
            }
        }
    }
    let mut matrix = SquareMatrix::zeros(l);
    for i in 0..l {
        let degree: i64 = contacts[i * l..(i + 1) * l].iter().sum();
        for j in 0..l {
            let v = if i == j { degree } else { -contacts[i * l + j] };
            matrix.set(i, j, v as f64);
        }
    }
    Ok(Kirchhoff { matrix, cutoff })
}

/// Flips `v` so its largest-magnitude entry is positive. Entries within a
/// relative 1e-9 of the maximum count as tied and the first one decides.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let Some(best) = v.iter().position(|x| x.abs() >= max * (1.0 - 1e-9)) else {
        return;
    };
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn decompose(kirchhoff: &Kirchhoff, k: usize) -> Result<GnmModes> {
    let l = kirchhoff.len();
    if l < 2 {
        return Err(Error::TooShort(l));
    }
    let eig = symmetric_eigen(&kirchhoff.matrix);
    let zero_modes = eig.values.iter().filter(|&&v| v <= ZERO_EIGENVALUE).count();
    if zero_modes > 1 {
        return Err(Error::Disconnected(zero_modes));
    }
    let mut values = Vec::with_capacity(l - 1);
    let mut vectors = Vec::with_capacity(l - 1);
    for (m, &value) in eig.values.iter().enumerate() {
        if value <= ZERO_EIGENVALUE {
            continue;
        }
        let mut v = eig.vector(m);
        fix_sign(&mut v);
        values.push(value);
        vectors.push(v);
    }
    Ok(GnmModes {
        len: l,
        k: k.min(values.len()),
        values,
        vectors,
    })
}

/// Diagonal of the Kirchhoff pseudo-inverse, summed over every nonzero mode.
pub fn raw_bfactors(modes: &GnmModes) -> Vec<f64> {
    (0..modes.len)
        .map(|i| {
            modes
                .values
                .iter()
                .zip(&modes.vectors)
                .map(|(lambda, u)| u[i] * u[i] / lambda)
                .sum()
        })
        .collect()
}

/// Mean 0, population standard deviation 1. A constant vector (relative
/// spread below 1e-9) maps to zeros.
pub fn z_normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return vec![];
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-9 * mean.abs().max(1e-300) || std == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

pub fn bfactors(modes: &GnmModes) -> Vec<f64> {
    z_normalize(&raw_bfactors(modes))
}

/// `L x k` cross-correlation features for the `k` slowest modes.
pub fn cross_correlations(modes: &GnmModes, kind: CrossCorrelation) -> Vec<Vec<f64>> {
    let l = modes.len;
    let mut c = vec![vec![0.0; modes.k]; l];
    for m in 0..modes.k {
        let u = &modes.vectors[m];
        let lambda = modes.values[m];
        let column_sum: f64 = u.iter().sum();
        let use_self = kind == CrossCorrelation::SelfContribution || column_sum.abs() < FALLBACK_SUM;
        for i in 0..l {
            c[i][m] = if use_self {
                u[i] * u[i] / lambda
            } else {
                u[i] * column_sum / (l as f64 * lambda)
            };
        }
    }
    c
}

pub fn gnm_features(structure: &ProteinStructure, cutoff: f64, k: usize, kind: CrossCorrelation) -> Result<GnmResult> {
    let kirchhoff = build_kirchhoff(structure, cutoff)?;
    let modes = decompose(&kirchhoff, k)?;
    let l = modes.len;
    let mut u = vec![vec![0.0; k]; l];
    for (m, vector) in modes.vectors.iter().take(modes.k).enumerate() {
        for i in 0..l {
            u[i][m] = vector[i];
        }
    }
    let mut c = cross_correlations(&modes, kind);
    for row in &mut c {
        row.resize(k, 0.0);
    }
    Ok(GnmResult {
        b: bfactors(&modes),
        u,
        c,
        s: z_normalize(&kirchhoff.diagonal()),
        k,
        pad: k - modes.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AminoAcid;
    use crate::structure::Residue;

    fn chain(xs: &[f64]) -> ProteinStructure {
        ProteinStructure {
            protein_id: "T".into(),
            residues: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| Residue {
                    index: i as i32 + 1,
                    residue: AminoAcid::Gly,
                    ca: [x, 0.0, 0.0],
                })
                .collect(),
        }
    }

    fn rows(k: &Kirchhoff) -> Vec<Vec<f64>> {
        (0..k.len())
            .map(|i| (0..k.len()).map(|j| k.matrix.get(i, j)).collect())
            .collect()
    }

    #[test]
    fn kirchhoff_fixtures() {
        let s = chain(&[0.0, 3.8, 7.6]);
        assert_eq!(
            rows(&build_kirchhoff(&s, 10.0).unwrap()),
            vec![vec![2.0, -1.0, -1.0], vec![-1.0, 2.0, -1.0], vec![-1.0, -1.0, 2.0]]
        );
        assert_eq!(
            rows(&build_kirchhoff(&s, 5.0).unwrap()),
            vec![vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]
        );
        let far = chain(&[0.0, 12.0]);
        assert_eq!(rows(&build_kirchhoff(&far, 10.0).unwrap()), vec![vec![0.0; 2]; 2]);
    }

    #[test]
    fn decompose_fixtures() {
        let s = chain(&[0.0, 3.8, 7.6]);
        let full = decompose(&build_kirchhoff(&s, 10.0).unwrap(), 20).unwrap();
        assert_eq!(full.k, 2);
        for v in &full.values {
            assert!((v - 3.0).abs() < 1e-12);
        }
        let path = decompose(&build_kirchhoff(&s, 5.0).unwrap(), 20).unwrap();
        assert!((path.values[0] - 1.0).abs() < 1e-12);
        assert!((path.values[1] - 3.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mode = &path.vectors[0];
        assert!((mode[0] - h).abs() < 1e-12 && mode[1].abs() < 1e-12 && (mode[2] + h).abs() < 1e-12);

        let far = chain(&[0.0, 12.0]);
        let err = decompose(&build_kirchhoff(&far, 10.0).unwrap(), 20).unwrap_err();
        assert!(matches!(err, Error::Disconnected(2)));
        assert_eq!(err.to_string(), "disconnected contact graph (2 components)");
    }

    #[test]
    fn bfactor_fixtures() {
        let s = chain(&[0.0, 3.8, 7.6]);
        let full = decompose(&build_kirchhoff(&s, 10.0).unwrap(), 20).unwrap();
        for r in raw_bfactors(&full) {
            assert!((r - 2.0 / 9.0).abs() < 1e-12);
        }
        assert_eq!(bfactors(&full), vec![0.0; 3]);

        let path = decompose(&build_kirchhoff(&s, 5.0).unwrap(), 20).unwrap();
        let raw = raw_bfactors(&path);
        for (r, want) in raw.iter().zip([5.0 / 9.0, 2.0 / 9.0, 5.0 / 9.0]) {
            assert!((r - want).abs() < 1e-12);
        }
        let b = bfactors(&path);
        let want = [0.5f64.sqrt(), -(2.0f64.sqrt()), 0.5f64.sqrt()];
        for (x, w) in b.iter().zip(want) {
            assert!((x - w).abs() < 1e-9, "{x} vs {w}");
        }
    }

    #[test]
    fn cross_correlation_falls_back_and_sums_to_bfactors() {
        let s = chain(&[0.0, 3.8, 7.6]);
        let path = decompose(&build_kirchhoff(&s, 5.0).unwrap(), 20).unwrap();
        let c = cross_correlations(&path, CrossCorrelation::MeanProjection);
        let col0: Vec<f64> = c.iter().map(|r| r[0]).collect();
        for (x, w) in col0.iter().zip([0.5, 0.0, 0.5]) {
            assert!((x - w).abs() < 1e-12);
        }
        let selfc = cross_correlations(&path, CrossCorrelation::SelfContribution);
        assert_eq!(c, selfc);
        let raw = raw_bfactors(&path);
        for i in 0..3 {
            let total: f64 = c[i].iter().sum();
            assert!((total - raw[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn features_pad_to_k() {
        let s = chain(&[0.0, 3.8, 7.6]);
        let g = gnm_features(&s, 10.0, 20, CrossCorrelation::default()).unwrap();
        assert_eq!(g.pad, 18);
        assert_eq!(g.u[0].len(), 20);
        assert!(g.u.iter().all(|r| r[2..].iter().all(|&x| x == 0.0)));
        assert!(g.c.iter().all(|r| r[2..].iter().all(|&x| x == 0.0)));
        assert_eq!(g.s, vec![0.0; 3]);
        assert_eq!(g.b, vec![0.0; 3]);
    }

    #[test]
    fn z_normalize_moments() {
        let z = z_normalize(&[1.0, 2.0, 4.0, 9.0]);
        let mean: f64 = z.iter().sum::<f64>() / 4.0;
        let var: f64 = z.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(z_normalize(&[3.0; 5]), vec![0.0; 5]);
    }
}
