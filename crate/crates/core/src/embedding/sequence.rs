use crate::data::AminoAcid;
use crate::rng;

/// Masked-position context vector plus the residue token table.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceContext {
    pub h: Vec<f64>,
    /// 20 rows indexed by [`AminoAcid::index`].
    pub token_table: Vec<Vec<f64>>,
}

/// `h + (t_mut - t_wt)`.
pub fn compose_sequence_embedding(ctx: &SequenceContext, wt: AminoAcid, mutant: AminoAcid) -> Vec<f64> {
    let t_wt = &ctx.token_table[wt.index()];
    let t_mut = &ctx.token_table[mutant.index()];
    ctx.h
        .iter()
        .zip(t_mut.iter().zip(t_wt))
        .map(|(h, (m, w))| h + (m - w))
        .collect()
}

/// Deterministic stand-in for a frozen protein language model.
///
/// Context vectors are standard normal draws keyed by a hash of
/// `(seed, position, sequence)`; the token table depends on the seed only.
#[derive(Clone, Debug)]
pub struct MockEncoder {
    pub seed: u64,
    pub dim: usize,
    token_table: Vec<Vec<f64>>,
}

impl MockEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut gen = rng::hashed(&[b"mock-token-table", &seed.to_le_bytes()]);
        let token_table = (0..20).map(|_| rng::normals(&mut gen, dim)).collect();
        Self { seed, dim, token_table }
    }

    pub fn token_table(&self) -> &[Vec<f64>] {
        &self.token_table
    }

    pub fn context_vector(&self, sequence: &str, position: u32) -> Vec<f64> {
        let mut gen = rng::hashed(&[
            b"mock-context",
            &self.seed.to_le_bytes(),
            &position.to_le_bytes(),
            sequence.as_bytes(),
        ]);
        rng::normals(&mut gen, self.dim)
    }

    pub fn context(&self, sequence: &str, position: u32) -> SequenceContext {
        SequenceContext {
            h: self.context_vector(sequence, position),
            token_table: self.token_table.clone(),
        }
    }
}

pub fn mock_sequence_encoder(sequence: &str, position: u32, dim: usize, seed: u64) -> SequenceContext {
    MockEncoder::new(seed, dim).context(sequence, position)
}
