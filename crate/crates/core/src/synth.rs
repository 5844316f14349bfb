//! Desk-scale synthetic proteins, structures and scored variants.
//!
//! Each variant score is a weighted sum of three standardised components,
//! one readable from each embedding modality, plus Gaussian noise:
//! a residue substitution term aligned with the mock encoder's token table,
//! a burial term (negative mean Cα neighbour distance) and a flexibility term
//! (normalised GNM B-factor with its linear dependence on burial removed, so
//! the three components are uncorrelated). Folds are assigned after per-assay binarisation
//! so the labelled variants split 200/50/50 per protein for the defaults,
//! grouped by position.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{binarize_labels, AminoAcid, VariantRecord, DEFAULT_QUANTILE};
use crate::embedding::{MockEncoder, NEIGHBORS, SEQ_DIM};
use crate::error::{Error, Result};
use crate::gnm::{gnm_features, CrossCorrelation, DEFAULT_CUTOFF, DEFAULT_MODES};
use crate::rng;
use crate::structure::{knn, parse_pdb, ProteinStructure, Residue, Vec3};

const BOND: f64 = 3.8;
const MIN_SEPARATION: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub proteins: usize,
    pub variants_per_protein: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Seed for structures, variants, noise and folds.
    pub seed: u64,
    /// Seed of the mock sequence encoder whose token table defines the
    /// substitution term.
    pub encoder_seed: u64,
    /// Weights of the sequence, structure and dynamics components.
    pub weights: [f64; 3],
    pub noise: f64,
    /// Labelled fraction at each tail, used to place folds.
    pub quantile: f64,
    pub folds: FoldScheme,
}

/// How labelled variants are dealt to folds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldScheme {
    /// Each variant independently.
    Random,
    /// Whole positions at a time, so held-out sites are unseen in training.
    #[default]
    ByPosition,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            proteins: 10,
            variants_per_protein: 500,
            min_len: 40,
            max_len: 90,
            seed: 0,
            encoder_seed: 0,
            weights: [1.0, 1.0, 1.0],
            noise: 0.1,
            quantile: DEFAULT_QUANTILE,
            folds: FoldScheme::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthProtein {
    pub structure: ProteinStructure,
    /// Scored variants with folds, unlabelled.
    pub variants: Vec<VariantRecord>,
}

/// Self-avoiding Cα walk confined to a sphere, restarted when it gets stuck.
fn compact_chain<R: Rng>(gen: &mut R, len: usize) -> Vec<Vec3> {
    let radius = 2.5 * (len as f64).cbrt() + 5.0;
    'restart: loop {
        let mut chain: Vec<Vec3> = vec![[0.0; 3]];
        while chain.len() < len {
            let last = *chain.last().expect("non-empty");
            let mut placed = false;
            for _ in 0..500 {
                let z: f64 = gen.random_range(-1.0..1.0);
                let phi: f64 = gen.random_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                let next = [
                    last[0] + BOND * r * phi.cos(),
                    last[1] + BOND * r * phi.sin(),
                    last[2] + BOND * z,
                ];
                if next.iter().map(|c| c * c).sum::<f64>().sqrt() > radius {
                    continue;
                }
                let clash = chain[..chain.len() - 1].iter().any(|p| {
                    let d: f64 = p.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum();
                    d < MIN_SEPARATION * MIN_SEPARATION
                });
                if !clash {
                    chain.push(next);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return chain;
    }
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in x.iter_mut() {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
}

/// Per-residue substitution score `v · t_a` with `v` a fixed mix of the token rows.
fn residue_scores(encoder: &MockEncoder, seed: u64) -> [f64; 20] {
    let table = encoder.token_table();
    let mut gen = rng::hashed(&[b"synth-residue-mix", &seed.to_le_bytes()]);
    let mix: Vec<f64> = (0..20).map(|_| gen.random_range(-1.0..1.0)).collect();
    let dim = table[0].len() as f64;
    std::array::from_fn(|b| (0..20).map(|a| mix[a] * dot(&table[a], &table[b])).sum::<f64>() / dim)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthProtein>> {
    if cfg.min_len < 3 || cfg.max_len < cfg.min_len {
        return Err(Error::Config("synthetic lengths need 3 <= min_len <= max_len".into()));
    }
    if cfg.variants_per_protein > cfg.min_len * 19 {
        return Err(Error::Config(format!(
            "{} variants per protein exceed the {} substitutions of the shortest protein",
            cfg.variants_per_protein,
            cfg.min_len * 19
        )));
    }
    let encoder = MockEncoder::new(cfg.encoder_seed, SEQ_DIM);
    let residue_score = residue_scores(&encoder, cfg.seed);
    let mut gen = rng::hashed(&[b"synth", &cfg.seed.to_le_bytes()]);

    let mut proteins = Vec::with_capacity(cfg.proteins);
    let mut components: [Vec<f64>; 3] = Default::default();
    for p in 0..cfg.proteins {
        let id = format!("SYN{:03}", p + 1);
        let len = gen.random_range(cfg.min_len..=cfg.max_len);
        let coords = compact_chain(&mut gen, len);
        let generated = ProteinStructure {
            protein_id: id.clone(),
            residues: coords
                .into_iter()
                .enumerate()
                .map(|(i, ca)| Residue {
                    index: i as i32 + 1,
                    residue: AminoAcid::ALL[gen.random_range(0..20)],
                    ca,
                })
                .collect(),
        };
        // Score against the structure exactly as it will be read back.
        let structure = parse_pdb(&id, &generated.to_pdb(), None)?;
        let table = knn(&structure, NEIGHBORS)?;
        let burial: Vec<f64> = table
            .neighbors
            .iter()
            .map(|n| -n.iter().map(|x| x.distance).sum::<f64>() / n.len() as f64)
            .collect();
        let gnm = gnm_features(&structure, DEFAULT_CUTOFF, DEFAULT_MODES, CrossCorrelation::default())?;

        let mut sites: Vec<(u32, AminoAcid)> = Vec::with_capacity(len * 19);
        for r in &structure.residues {
            for a in AminoAcid::ALL {
                if a != r.residue {
                    sites.push((r.index as u32, a));
                }
            }
        }
        let (chosen, _) = sites.partial_shuffle(&mut gen, cfg.variants_per_protein);
        let mut chosen = chosen.to_vec();
        chosen.sort();
        let variants: Vec<VariantRecord> = chosen
            .iter()
            .map(|&(position, mutant)| {
                let row = position as usize - 1;
                let wt = structure.residues[row].residue;
                components[0].push(residue_score[mutant.index()] - residue_score[wt.index()]);
                components[1].push(burial[row]);
                components[2].push(gnm.b[row]);
                VariantRecord {
                    protein_id: id.clone(),
                    position,
                    wt,
                    mutant,
                    dms_score: 0.0,
                    label: None,
                    fold: None,
                }
            })
            .collect();
        proteins.push(SynthProtein { structure, variants });
    }

    for c in &mut components {
        standardize(c);
    }
    let r = dot(&components[1], &components[2]) / components[1].len() as f64;
    let burial = components[1].clone();
    for (d, b) in components[2].iter_mut().zip(&burial) {
        *d -= r * b;
    }
    standardize(&mut components[2]);
    let noise = rng::normals(&mut gen, components[0].len());
    let mut at = 0;
    for protein in &mut proteins {
        for v in &mut protein.variants {
            v.dms_score = (0..3).map(|m| cfg.weights[m] * components[m][at]).sum::<f64>() + cfg.noise * noise[at];
            at += 1;
        }
        assign_folds(&mut protein.variants, cfg.quantile, cfg.folds, &mut gen)?;
    }
    Ok(proteins)
}

/// Labelled variants go 4/6 train (folds 0-2), 1/6 validation, 1/6 test.
///
/// By position, whole positions are dealt to test, then
/// validation, until each holds exactly its share, so a held-out variant
/// rarely shares its site with a training variant. If no combination of
/// whole positions fits, the last position needed is split. Unlabelled
/// variants get the fold of their position, or a uniform one.
fn assign_folds<R: Rng>(variants: &mut [VariantRecord], quantile: f64, scheme: FoldScheme, gen: &mut R) -> Result<()> {
    let labelled: HashSet<_> = binarize_labels(variants, quantile)?.iter().map(|r| r.key()).collect();
    if scheme == FoldScheme::Random {
        let mut kept: Vec<usize> = (0..variants.len())
            .filter(|&i| labelled.contains(&variants[i].key()))
            .collect();
        kept.shuffle(gen);
        let share = kept.len() / 6;
        let train = kept.len() - 2 * share;
        for (slot, &i) in kept.iter().enumerate() {
            variants[i].fold = Some(match slot {
                s if s < train => (s % 3) as u8,
                s if s < train + share => 3,
                _ => 4,
            });
        }
        for v in variants.iter_mut().filter(|v| v.fold.is_none()) {
            v.fold = Some(gen.random_range(0..5));
        }
        return Ok(());
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, v) in variants.iter().enumerate() {
        if labelled.contains(&v.key()) {
            groups.entry(v.position).or_default().push(i);
        }
    }
    let mut positions: Vec<u32> = groups.keys().copied().collect();
    positions.shuffle(gen);
    let n = labelled.len();
    let share = n / 6;
    let mut fold_of: BTreeMap<u32, u8> = BTreeMap::new();
    let mut split: HashSet<u32> = HashSet::new();
    for fold in [4u8, 3] {
        let mut filled = 0;
        for &p in &positions {
            let size = groups[&p].len();
            if !fold_of.contains_key(&p) && !split.contains(&p) && filled + size <= share {
                fold_of.insert(p, fold);
                filled += size;
            }
        }
        for &p in &positions {
            if filled == share {
                break;
            }
            if !fold_of.contains_key(&p) && !split.contains(&p) {
                // Every remaining group is larger than the gap.
                for &i in &groups[&p][..share - filled] {
                    variants[i].fold = Some(fold);
                }
                split.insert(p);
                filled = share;
            }
        }
    }
    let mut train_slot = 0;
    for &p in &positions {
        let fold = *fold_of.entry(p).or_insert_with(|| {
            train_slot += 1;
            (train_slot % 3) as u8
        });
        for &i in &groups[&p] {
            variants[i].fold.get_or_insert(fold);
        }
    }
    for v in variants.iter_mut().filter(|v| v.fold.is_none()) {
        v.fold = Some(match fold_of.get(&v.position) {
            Some(&f) => f,
            None => gen.random_range(0..5),
        });
    }
    Ok(())
}

/// Writes `structures/<id>.pdb` and `variants/<id>.csv` under `dir`.
pub fn write_dataset(dir: &Path, proteins: &[SynthProtein]) -> Result<()> {
    let structures = dir.join("structures");
    let variants = dir.join("variants");
    for d in [&structures, &variants] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for p in proteins {
        let id = &p.structure.protein_id;
        let pdb = structures.join(format!("{id}.pdb"));
        std::fs::write(&pdb, p.structure.to_pdb()).map_err(|e| Error::io(&pdb, e))?;
        let csv_path = variants.join(format!("{id}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["mutant", "DMS_score", "fold_random_5"])?;
        for v in &p.variants {
            let fold = v.fold.map(|f| f.to_string()).unwrap_or_default();
            w.write_record([v.mutation(), v.dms_score.to_string(), fold])?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{binarize_per_assay, split_by_fold};

    fn small() -> SynthConfig {
        SynthConfig {
            proteins: 3,
            variants_per_protein: 120,
            min_len: 20,
            max_len: 30,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn chain_geometry() {
        let mut gen = rng::seeded(1);
        let c = compact_chain(&mut gen, 60);
        for w in c.windows(2) {
            let d: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((d - BOND).abs() < 1e-9);
        }
        for i in 0..c.len() {
            for j in i + 2..c.len() {
                let d: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(d >= MIN_SEPARATION);
            }
        }
    }

    #[test]
    fn deterministic_and_consistent() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.len(), 3);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.structure, q.structure);
            assert_eq!(p.variants, q.variants);
            assert_eq!(p.variants.len(), 120);
            for v in &p.variants {
                assert_eq!(p.structure.residues[v.position as usize - 1].residue, v.wt);
                assert_ne!(v.wt, v.mutant);
            }
        }
    }

    #[test]
    fn labelled_split_proportions() {
        let proteins = generate(&SynthConfig {
            proteins: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let all: Vec<VariantRecord> = proteins.iter().flat_map(|p| p.variants.clone()).collect();
        let split = split_by_fold(&binarize_per_assay(&all, 0.3).unwrap()).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (400, 100, 100));
        let held_out: HashSet<(String, u32)> = split.test.iter().map(|v| (v.protein_id.clone(), v.position)).collect();
        let shared = split
            .train
            .iter()
            .filter(|v| held_out.contains(&(v.protein_id.clone(), v.position)))
            .count();
        assert!(shared <= 10, "{shared} training variants share a test site");
    }

    #[test]
    fn exact_shares_with_awkward_groups() {
        let mut gen = rng::seeded(4);
        for trial in 0..50 {
            let mut variants: Vec<VariantRecord> = (0..60)
                .map(|i| VariantRecord {
                    protein_id: "P".into(),
                    position: 1 + (i % (3 + trial % 7)) as u32,
                    wt: AminoAcid::Ala,
                    mutant: AminoAcid::ALL[1 + i / 7 % 19],
                    dms_score: (i * 37 % 61) as f64,
                    label: None,
                    fold: None,
                })
                .collect();
            variants.sort_by_key(|v| (v.position, v.mutant));
            variants.dedup_by_key(|v| (v.position, v.mutant));
            assign_folds(&mut variants, 0.3, FoldScheme::ByPosition, &mut gen).unwrap();
            let labelled = binarize_labels(&variants, 0.3).unwrap();
            let count = |f: u8| labelled.iter().filter(|v| v.fold == Some(f)).count();
            assert_eq!(count(4), labelled.len() / 6);
            assert_eq!(count(3), labelled.len() / 6);
            assert!(variants.iter().all(|v| v.fold.is_some()));
        }
    }

    #[test]
    fn written_files_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let proteins = generate(&small()).unwrap();
        write_dataset(dir.path(), &proteins).unwrap();
        let p = &proteins[0];
        let id = &p.structure.protein_id;
        let text = std::fs::read_to_string(dir.path().join(format!("variants/{id}.csv"))).unwrap();
        let parsed = crate::data::parse_variant_csv(&text, id, &Default::default()).unwrap();
        assert_eq!(parsed, p.variants);
        let pdb = std::fs::read_to_string(dir.path().join(format!("structures/{id}.pdb"))).unwrap();
        assert_eq!(parse_pdb(id, &pdb, None).unwrap(), p.structure);
    }
}
