use crate::error::{Error, Result};
use crate::rng;

pub const STRUCTURE_SEED: u64 = 83512;
pub const DYNAMICS_SEED: u64 = 42256;

/// Fixed Gaussian projection `e = Wᵀ x`, entries `N(0, 1/in_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomProjection {
    pub seed: u64,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `in_dim x out_dim`.
    pub matrix: Vec<f64>,
}

impl RandomProjection {
    pub fn new(seed: u64, in_dim: usize, out_dim: usize) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let mut gen = rng::seeded(seed);
        let matrix = rng::normals(&mut gen, in_dim * out_dim)
            .into_iter()
            .map(|z| z * scale)
            .collect();
        Self {
            seed,
            in_dim,
            out_dim,
            matrix,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.out_dim..(i + 1) * self.out_dim]
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::DimMismatch {
                expected: self.in_dim,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.out_dim];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += w * xi;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_maps_to_zero() {
        let p = RandomProjection::new(STRUCTURE_SEED, 83, 512);
        assert_eq!(p.apply(&[0.0; 83]).unwrap(), vec![0.0; 512]);
        assert!(matches!(
            p.apply(&[0.0; 42]),
            Err(Error::DimMismatch { expected: 83, got: 42 })
        ));
    }

    #[test]
    fn linear() {
        let p = RandomProjection::new(DYNAMICS_SEED, 42, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a: Vec<f64> = (0..42).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..42).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c: f64 = rng.random_range(-5.0..5.0);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
            let (ea, eb) = (p.apply(&a).unwrap(), p.apply(&b).unwrap());
            for (j, (s, sc)) in p.apply(&sum).unwrap().iter().zip(p.apply(&scaled).unwrap()).enumerate() {
                assert!((s - (ea[j] + eb[j])).abs() < 1e-6);
                assert!((sc - c * ea[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn basis_vector_selects_row_of_regenerated_matrix() {
        let p = RandomProjection::new(17, 83, 512);
        let mut x = vec![0.0; 83];
        x[0] = 1.0;
        let e = p.apply(&x).unwrap();
        // Independent regeneration straight from the seeded stream.
        let mut gen = ChaCha8Rng::seed_from_u64(17);
        let mut row0 = Vec::new();
        while row0.len() < 512 {
            let u1 = 1.0 - gen.random::<f64>();
            let u2 = gen.random::<f64>();
            let r = (-2.0 * u1.ln()).sqrt();
            row0.push(r * (std::f64::consts::TAU * u2).cos() * (1.0 / 83f64.sqrt()));
            row0.push(r * (std::f64::consts::TAU * u2).sin() * (1.0 / 83f64.sqrt()));
        }
        assert_eq!(e, row0);
        assert_eq!(RandomProjection::new(17, 83, 512), p);
    }

    #[test]
    fn entry_scale() {
        let p = RandomProjection::new(STRUCTURE_SEED, 83, 512);
        let n = p.matrix.len() as f64;
        let mean = p.matrix.iter().sum::<f64>() / n;
        let var = p.matrix.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01 / 83f64.sqrt());
        assert!((var * 83.0 - 1.0).abs() < 0.03, "{}", var * 83.0);
    }
}
