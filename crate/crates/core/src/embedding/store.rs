use std::collections::HashSet;
use std::path::Path;

use crate::data::{AminoAcid, VariantKey};
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"TFES";
pub const STORE_VERSION: u32 = 1;
/// magic + version + tag + dim + count.
pub const HEADER_SIZE: usize = 4 + 4 + 1 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Sequence = 1,
    Structure = 2,
    Dynamics = 3,
    /// Masked-position context vectors from an external encoder.
    Context = 4,
    /// 20-row residue token table.
    TokenTable = 5,
}

impl Modality {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => Self::Sequence,
            2 => Self::Structure,
            3 => Self::Dynamics,
            4 => Self::Context,
            5 => Self::TokenTable,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoreEntry {
    pub key: VariantKey,
    pub vector: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub modality: Modality,
    pub dim: usize,
    pub entries: Vec<StoreEntry>,
}

impl EmbeddingStore {
    pub fn new(modality: Modality, dim: usize) -> Self {
        Self {
            modality,
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, key: VariantKey, vector: &[f64]) {
        self.entries.push(StoreEntry {
            key,
            vector: vector.iter().map(|&x| x as f32).collect(),
        });
    }
}

/// Bytes taken by one record with the given protein id.
pub fn record_size(protein_id: &str, dim: usize) -> usize {
    2 + protein_id.len() + 4 + 1 + 1 + 4 * dim
}

pub fn encode_store(store: &EmbeddingStore) -> Result<Vec<u8>> {
    let size = HEADER_SIZE
        + store
            .entries
            .iter()
            .map(|e| record_size(&e.key.protein_id, store.dim))
            .sum::<usize>();
    let mut out = Vec::with_capacity(size);
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.push(store.modality.tag());
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    out.extend_from_slice(&(store.entries.len() as u64).to_le_bytes());
    let mut seen = HashSet::new();
    for e in &store.entries {
        if e.vector.len() != store.dim {
            return Err(Error::DimMismatch {
                expected: store.dim,
                got: e.vector.len(),
            });
        }
        if !seen.insert(&e.key) {
            return Err(Error::DuplicateKey(e.key.to_string()));
        }
        let id = e.key.protein_id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidStore(format!("protein id longer than {} bytes", u16::MAX)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&e.key.position.to_le_bytes());
        out.push(e.key.wt.code() as u8);
        out.push(e.key.mutant.code() as u8);
        for v in &e.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("need {n} bytes at offset {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length"))
    }
}

fn residue(byte: u8) -> Result<AminoAcid> {
    AminoAcid::from_byte(byte).map_err(|_| Error::InvalidStore(format!("bad residue byte {byte}")))
}

pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut r = Reader { bytes, at: 0 };
    if bytes.len() < 4 || r.take(4)? != STORE_MAGIC {
        return Err(Error::BadStoreMagic);
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != STORE_VERSION {
        return Err(Error::BadStoreVersion(version));
    }
    let tag = r.array::<1>()?[0];
    let modality = Modality::from_tag(tag).ok_or_else(|| Error::InvalidStore(format!("unknown modality tag {tag}")))?;
    let dim = u32::from_le_bytes(r.array()?) as usize;
    let count = u64::from_le_bytes(r.array()?);
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let protein_id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::InvalidStore("protein id is not UTF-8".into()))?
            .to_string();
        let position = u32::from_le_bytes(r.array()?);
        let wt = residue(r.array::<1>()?[0])?;
        let mutant = residue(r.array::<1>()?[0])?;
        let vector = r
            .take(4 * dim)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk")))
            .collect();
        let key = VariantKey {
            protein_id,
            position,
            wt,
            mutant,
        };
        if !seen.insert(key.clone()) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        entries.push(StoreEntry { key, vector });
    }
    if r.at != bytes.len() {
        return Err(Error::InvalidStore(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(EmbeddingStore { modality, dim, entries })
}

pub fn write_store(path: &Path, store: &EmbeddingStore) -> Result<()> {
    let bytes = encode_store(store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn key(id: &str, position: u32, wt: AminoAcid, mutant: AminoAcid) -> VariantKey {
        VariantKey {
            protein_id: id.into(),
            position,
            wt,
            mutant,
        }
    }

    fn sample() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(Modality::Structure, 3);
        s.push(key("P1", 1, AminoAcid::Ala, AminoAcid::Gly), &[1.0, -2.5, 0.125]);
        s.push(
            key("P1", 7, AminoAcid::Trp, AminoAcid::Tyr),
            &[0.0, f64::MIN_POSITIVE, 3e30],
        );
        s.push(
            key("Q_long_name", 300, AminoAcid::Lys, AminoAcid::Arg),
            &[-0.0, 1e-8, 7.0],
        );
        s
    }

    #[test]
    fn three_entries_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tfes");
        let s = sample();
        write_store(&path, &s).unwrap();
        let back = read_store(&path).unwrap();
        assert_eq!(back.modality, Modality::Structure);
        assert_eq!(back.entries.len(), 3);
        for (a, b) in s.entries.iter().zip(&back.entries) {
            assert_eq!(a.key, b.key);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.vector), bits(&b.vector));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_store(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"TFES");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(bytes[8], 2);
        assert_eq!(&bytes[9..13], &[3, 0, 0, 0]);
        assert_eq!(&bytes[13..21], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[21..23], &[2, 0]);
        assert_eq!(&bytes[23..25], b"P1");
        assert_eq!(&bytes[25..29], &[1, 0, 0, 0]);
        assert_eq!(&bytes[29..31], b"AG");
        assert_eq!(&bytes[31..35], &1.0f32.to_le_bytes());
    }

    #[test]
    fn distinct_errors() {
        let good = encode_store(&sample()).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        let err = decode_store(&bad).unwrap_err();
        assert!(matches!(err, Error::BadStoreMagic));
        assert_eq!(err.to_string(), "not an embedding store");

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_store(&bad), Err(Error::BadStoreVersion(2))));

        assert!(matches!(
            decode_store(&good[..good.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(decode_store(&good[..10]), Err(Error::Truncated(_))));

        let mut dup = sample();
        dup.entries.push(dup.entries[0].clone());
        assert!(matches!(encode_store(&dup), Err(Error::DuplicateKey(_))));
        // Forge a duplicate on disk by repeating the first record.
        let first = record_size("P1", 3);
        let mut forged = good[..HEADER_SIZE].to_vec();
        forged[13] = 2;
        forged.extend_from_slice(&good[HEADER_SIZE..HEADER_SIZE + first]);
        forged.extend_from_slice(&good[HEADER_SIZE..HEADER_SIZE + first]);
        assert!(matches!(decode_store(&forged), Err(Error::DuplicateKey(_))));
    }

    #[test]
    fn ten_thousand_entries_size_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 7;
        let mut s = EmbeddingStore::new(Modality::Dynamics, dim);
        let mut expected = HEADER_SIZE;
        for i in 0..10_000u32 {
            let id = format!("prot{}", i % 37);
            expected += record_size(&id, dim);
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1e3..1e3)).collect();
            s.push(
                key(
                    &id,
                    i,
                    AminoAcid::ALL[(i % 20) as usize],
                    AminoAcid::ALL[((i + 1) % 20) as usize],
                ),
                &v,
            );
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.tfes");
        write_store(&path, &s).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected);
        assert_eq!(read_store(&path).unwrap(), s);
    }
}
