//! Elementwise activations and LayerNorm with their derivatives.

use crate::tensor::Matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// `Φ(x) + x φ(x)`.
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn gelu_matrix(x: &Matrix) -> Matrix {
    Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|&v| gelu(v)).collect())
}

/// `dy ⊙ gelu'(x)`.
pub fn gelu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    Matrix::from_vec(
        x.rows,
        x.cols,
        x.data.iter().zip(&dy.data).map(|(&v, &g)| g * gelu_grad(v)).collect(),
    )
}

/// Row-wise normalisation output: `xhat` and `1/σ` per row.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
}

pub fn normalize_rows(a: &Matrix) -> Normalized {
    let n = a.cols as f64;
    let mut xhat = Matrix::zeros(a.rows, a.cols);
    let mut inv_std = Vec::with_capacity(a.rows);
    for i in 0..a.rows {
        let row = a.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    Normalized { xhat, inv_std }
}

/// `γ ⊙ xhat + β` per row.
pub fn scale_shift(xhat: &Matrix, scale: &[f64], shift: &[f64]) -> Matrix {
    let mut out = xhat.clone();
    for i in 0..out.rows {
        for ((o, g), b) in out.row_mut(i).iter_mut().zip(scale).zip(shift) {
            *o = *o * g + b;
        }
    }
    out
}

/// Backward through `γ ⊙ normalize(a) + β`. Accumulates `dγ`, `dβ` and
/// returns `da`.
pub fn layer_norm_backward(
    norm: &Normalized,
    scale: &[f64],
    ds: &Matrix,
    dscale: &mut [f64],
    dshift: &mut [f64],
) -> Matrix {
    let n = ds.cols as f64;
    let mut da = Matrix::zeros(ds.rows, ds.cols);
    let mut dxhat = vec![0.0; ds.cols];
    for i in 0..ds.rows {
        let xh = norm.xhat.row(i);
        let g = ds.row(i);
        for j in 0..ds.cols {
            dscale[j] += g[j] * xh[j];
            dshift[j] += g[j];
            dxhat[j] = g[j] * scale[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / n;
        let inv = norm.inv_std[i];
        for ((o, d), x) in da.row_mut(i).iter_mut().zip(&dxhat).zip(xh) {
            *o = inv * (d - mean_d - x * mean_dx);
        }
    }
    da
}

/// Row-wise softmax with the max subtracted.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
        for x in [-3.0, -0.7, 0.0, 0.2, 1.5, 4.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_row_normalizes_to_zero() {
        let a = Matrix::from_rows(&[vec![3.0; 8]]);
        let n = normalize_rows(&a);
        assert!(n.xhat.data.iter().all(|&v| v == 0.0));
        let s = scale_shift(&n.xhat, &[1.0; 8], &[0.0; 8]);
        assert!(gelu_matrix(&s).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance() {
        let a = Matrix::from_rows(&[
            vec![1.0, 5.0, -2.0, 0.5, 9.0, 3.0],
            vec![100.0, 101.0, 99.0, 100.5, 98.0, 102.0],
        ]);
        let n = normalize_rows(&a);
        for i in 0..2 {
            let r = n.xhat.row(i);
            let mean = r.iter().sum::<f64>() / 6.0;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let a = Matrix::from_rows(&[vec![0.3, -1.2, 2.0, 0.7, -0.1], vec![1.0, 1.5, -0.5, 0.0, 2.5]]);
        let scale = [1.1, 0.9, -0.4, 2.0, 0.5];
        let shift = [0.1, 0.0, -0.2, 0.3, 0.05];
        let weights = Matrix::from_rows(&[vec![0.5, -1.0, 0.25, 2.0, 1.0], vec![-0.3, 0.7, 1.2, -0.8, 0.1]]);
        let loss = |a: &Matrix| -> f64 {
            let s = scale_shift(&normalize_rows(a).xhat, &scale, &shift);
            s.data.iter().zip(&weights.data).map(|(x, w)| x * w).sum()
        };
        let norm = normalize_rows(&a);
        let (mut dg, mut db) = (vec![0.0; 5], vec![0.0; 5]);
        let da = layer_norm_backward(&norm, &scale, &weights, &mut dg, &mut db);
        let h = 1e-6;
        for idx in 0..a.data.len() {
            let (mut p, mut m) = (a.clone(), a.clone());
            p.data[idx] += h;
            m.data[idx] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - da.data[idx]).abs() < 1e-7, "{idx}: {fd} vs {}", da.data[idx]);
        }
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let p = softmax_rows(&Matrix::from_rows(&[vec![1000.0, 0.0, -1000.0, 999.0]]));
        assert!((p.data.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.data.iter().all(|v| v.is_finite() && *v >= 0.0));
        let u = softmax_rows(&Matrix::zeros(1, 4));
        assert_eq!(u.data, vec![0.25; 4]);
    }
}
