//! File-level orchestration shared by the command-line tool and the tests:
//! embedding extraction per protein, sequence composition, training runs,
//! evaluation and the derived reports.
//!
//! Embedding builders isolate failures per protein (or per variant where the
//! failure is local to a site) and keep going; callers decide the exit status.
//!
//! External context stores (modality tag 4) key each masked-position vector
//! by `(protein, position, wt, wt)`. Token-table stores (tag 5) hold twenty
//! rows keyed `("", 0, aa, aa)`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{
    binarize_per_assay, parse_variant_csv, split_by_fold, AminoAcid, ColumnMap, DatasetSplit, VariantKey,
    VariantRecord, DEFAULT_QUANTILE,
};
use crate::embedding::{
    compose_sequence_embedding, dynamics_features, structure_features_at, EmbeddingStore, MockEncoder, Modality,
    RandomProjection, SequenceContext, SiteGeometry, DYNAMICS_SEED, DYN_DIM, NEIGHBORS, SEQ_DIM, STRUCTURE_SEED,
    STR_DIM,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_report, default_window, ece, per_position_accuracy, router_utilization, Aggregate, AggregateReport,
    CalibrationReport, PositionOutcome, PositionRow, DEFAULT_THRESHOLD,
};
use crate::gnm::{gnm_features, CrossCorrelation, DEFAULT_CUTOFF, DEFAULT_MODES};
use crate::nn::{read_checkpoint, write_checkpoint, Ablation, Checkpoint, EXPERTS};
use crate::structure::{knn, parse_pdb, ProteinStructure};
use crate::trainer::{assemble_examples, predict, train, Resume, TrainConfig, TrainHistory, TrainOutcome};

/// A failure attributed to one protein or variant.
#[derive(Debug)]
pub struct ItemError {
    pub item: String,
    pub error: Error,
}

/// A store built item by item, with whatever failed along the way.
#[derive(Debug)]
pub struct Built {
    pub store: EmbeddingStore,
    pub errors: Vec<ItemError>,
}

/// Variants from one CSV file, or from every `*.csv` in a directory (sorted by
/// file name). The protein id is the file stem.
pub fn read_variants(path: &Path) -> Result<Vec<VariantRecord>> {
    let files = if path.is_dir() {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if p.extension().is_some_and(|x| x == "csv") {
                files.push(p);
            }
        }
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for file in files {
        let id = file
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("{}: file name is not a protein id", file.display())))?
            .to_string();
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        out.extend(parse_variant_csv(&text, &id, &ColumnMap::default())?);
    }
    Ok(out)
}

/// `<dir>/<protein_id>.pdb`, first chain.
pub fn read_structure(dir: &Path, protein_id: &str) -> Result<ProteinStructure> {
    let path = dir.join(format!("{protein_id}.pdb"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_pdb(protein_id, &text, None)
}

fn by_protein(variants: &[VariantRecord]) -> Vec<(&str, Vec<&VariantRecord>)> {
    let mut groups: BTreeMap<&str, Vec<&VariantRecord>> = BTreeMap::new();
    for v in variants {
        groups.entry(&v.protein_id).or_default().push(v);
    }
    groups.into_iter().collect()
}

/// Maps `f` over `items` on up to `available_parallelism` threads; results
/// keep the input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

type ProteinRows = std::result::Result<Vec<(VariantKey, Vec<f64>)>, Error>;

/// Runs `per_protein` for each protein and collects rows and failures.
fn build_store(
    modality: Modality,
    dim: usize,
    variants: &[VariantRecord],
    per_protein: impl Fn(&str, &[&VariantRecord], &mut Vec<ItemError>) -> ProteinRows + Sync,
) -> Built {
    let groups = by_protein(variants);
    let results = parallel_map(&groups, |(id, vs)| {
        let mut errors = Vec::new();
        let rows = per_protein(id, vs, &mut errors);
        (rows, errors)
    });
    let mut store = EmbeddingStore::new(modality, dim);
    let mut errors = Vec::new();
    for ((id, _), (rows, item_errors)) in groups.iter().zip(results) {
        errors.extend(item_errors);
        match rows {
            Ok(rows) => {
                for (key, v) in rows {
                    store.push(key, &v);
                }
            }
            Err(error) => errors.push(ItemError {
                item: id.to_string(),
                error,
            }),
        }
    }
    Built { store, errors }
}

/// Row of the variant's site, checking the wild-type residue.
fn site_row(structure: &ProteinStructure, v: &VariantRecord) -> Result<usize> {
    let row = structure.row_of(v.position)?;
    let found = structure.residues[row].residue;
    if found != v.wt {
        return Err(Error::Config(format!(
            "wild type {} at {} does not match structure residue {}",
            v.wt, v.position, found
        )));
    }
    Ok(row)
}

fn sites(
    structure: &ProteinStructure,
    variants: &[&VariantRecord],
    errors: &mut Vec<ItemError>,
) -> Vec<(VariantKey, usize)> {
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        match site_row(structure, v) {
            Ok(row) => out.push((v.key(), row)),
            Err(error) => errors.push(ItemError {
                item: v.key().to_string(),
                error,
            }),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicsOptions {
    pub cutoff: f64,
    pub modes: usize,
    pub cross_correlation: CrossCorrelation,
    pub projection_seed: u64,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            modes: DEFAULT_MODES,
            cross_correlation: CrossCorrelation::default(),
            projection_seed: DYNAMICS_SEED,
        }
    }
}

/// 256-d dynamics embeddings for every variant whose protein has a structure.
pub fn embed_dynamics(structures: &Path, variants: &[VariantRecord], opts: &DynamicsOptions) -> Built {
    let projection = RandomProjection::new(opts.projection_seed, 2 * opts.modes + 2, DYN_DIM);
    build_store(Modality::Dynamics, DYN_DIM, variants, |id, vs, errors| {
        let structure = read_structure(structures, id)?;
        let gnm = gnm_features(&structure, opts.cutoff, opts.modes, opts.cross_correlation)?;
        sites(&structure, vs, errors)
            .into_iter()
            .map(|(key, row)| Ok((key, projection.apply(&dynamics_features(&gnm, row)?)?)))
            .collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureOptions {
    pub neighbors: usize,
    pub projection_seed: u64,
    pub site_geometry: SiteGeometry,
}

impl Default for StructureOptions {
    fn default() -> Self {
        Self {
            neighbors: NEIGHBORS,
            projection_seed: STRUCTURE_SEED,
            site_geometry: SiteGeometry::default(),
        }
    }
}

/// 512-d structure embeddings for every variant whose protein has a structure.
pub fn embed_structure(structures: &Path, variants: &[VariantRecord], opts: &StructureOptions) -> Built {
    let projection = RandomProjection::new(opts.projection_seed, 4 * opts.neighbors + 3, STR_DIM);
    build_store(Modality::Structure, STR_DIM, variants, |id, vs, errors| {
        let structure = read_structure(structures, id)?;
        let table = knn(&structure, opts.neighbors)?;
        sites(&structure, vs, errors)
            .into_iter()
            .map(|(key, row)| {
                let x = structure_features_at(&structure, &table, row, opts.site_geometry);
                Ok((key, projection.apply(&x)?))
            })
            .collect()
    })
}

/// 1280-d sequence embeddings from the mock encoder over each structure's
/// sequence.
pub fn compose_mock(structures: &Path, variants: &[VariantRecord], seed: u64) -> Built {
    let encoder = MockEncoder::new(seed, SEQ_DIM);
    build_store(Modality::Sequence, SEQ_DIM, variants, |id, vs, errors| {
        let structure = read_structure(structures, id)?;
        let sequence = structure.sequence();
        Ok(sites(&structure, vs, errors)
            .into_iter()
            .map(|(key, row)| {
                let ctx = encoder.context(&sequence, structure.residues[row].index as u32);
                let e = compose_sequence_embedding(&ctx, key.wt, key.mutant);
                (key, e)
            })
            .collect())
    })
}

/// The twenty token rows of a tag-5 store, indexed by [`AminoAcid::index`].
pub fn token_table_from_store(tokens: &EmbeddingStore) -> Result<Vec<Vec<f64>>> {
    if tokens.modality != Modality::TokenTable {
        return Err(Error::Config(format!(
            "expected a TokenTable store, got {:?}",
            tokens.modality
        )));
    }
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; 20];
    for e in &tokens.entries {
        rows[e.key.wt.index()] = Some(e.vector.iter().map(|&x| x as f64).collect());
    }
    rows.into_iter()
        .zip(AminoAcid::ALL)
        .map(|(r, aa)| r.ok_or_else(|| Error::InvalidStore(format!("token table has no row for {aa}"))))
        .collect()
}

/// Sequence embeddings from an external context store and token table.
pub fn compose_from_stores(
    context: &EmbeddingStore,
    tokens: &EmbeddingStore,
    variants: &[VariantRecord],
) -> Result<Built> {
    if context.modality != Modality::Context {
        return Err(Error::Config(format!(
            "expected a Context store, got {:?}",
            context.modality
        )));
    }
    let token_table = token_table_from_store(tokens)?;
    if tokens.dim != context.dim {
        return Err(Error::DimMismatch {
            expected: context.dim,
            got: tokens.dim,
        });
    }
    let h: HashMap<(&str, u32), (AminoAcid, &[f32])> = context
        .entries
        .iter()
        .map(|e| {
            (
                (e.key.protein_id.as_str(), e.key.position),
                (e.key.wt, e.vector.as_slice()),
            )
        })
        .collect();
    let mut store = EmbeddingStore::new(Modality::Sequence, context.dim);
    let mut errors = Vec::new();
    for v in variants {
        let item = v.key().to_string();
        match h.get(&(v.protein_id.as_str(), v.position)) {
            None => errors.push(ItemError {
                item,
                error: Error::Config(format!("position {} missing from context store", v.position)),
            }),
            Some((wt, _)) if *wt != v.wt => errors.push(ItemError {
                item,
                error: Error::Config(format!("context store has wild type {wt} at {}", v.position)),
            }),
            Some((_, vector)) => {
                let ctx = SequenceContext {
                    h: vector.iter().map(|&x| x as f64).collect(),
                    token_table: token_table.clone(),
                };
                store.push(v.key(), &compose_sequence_embedding(&ctx, v.wt, v.mutant));
            }
        }
    }
    Ok(Built { store, errors })
}

/// Training configuration plus the labelling quantile; the form echoed to
/// `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub quantile: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            quantile: DEFAULT_QUANTILE,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-assay labels followed by the fold split.
pub fn labelled_split(variants: &[VariantRecord], quantile: f64) -> Result<DatasetSplit> {
    split_by_fold(&binarize_per_assay(variants, quantile)?)
}

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const HISTORY_FILE: &str = "history.json";
pub const BEST_CHECKPOINT: &str = "best.tfck";
pub const LAST_CHECKPOINT: &str = "last.tfck";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const ROUTER_FILE: &str = "router_utilization.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const RELIABILITY_FILE: &str = "reliability.svg";
pub const POSITION_FILE: &str = "position_accuracy.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a resume point: the checkpoint at `path` plus a `best.tfck` next to it.
pub fn load_resume(path: &Path) -> Result<Resume> {
    let last = read_checkpoint(path)?;
    let best_path = path.with_file_name(BEST_CHECKPOINT);
    let best = if best_path.exists() && best_path != path {
        Some(read_checkpoint(&best_path)?.model)
    } else {
        None
    };
    Ok(Resume { last, best })
}

/// Trains on folds 0-2, selects on fold 3 and writes `config.json`,
/// `train_log.jsonl`, `history.json`, `best.tfck` and `last.tfck` under `out`.
pub fn run_train(
    variants: &[VariantRecord],
    stores: [&EmbeddingStore; 3],
    cfg: &RunConfig,
    out: &Path,
    resume: Option<Resume>,
) -> Result<TrainOutcome> {
    cfg.train.validate()?;
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let split = labelled_split(variants, cfg.quantile)?;
    let train_set = assemble_examples(&split.train, stores)?;
    let val_set = assemble_examples(&split.val, stores)?;
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let outcome = train(&train_set, &val_set, &cfg.train, resume, &mut log)?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    write_json(&out.join(HISTORY_FILE), &outcome.history)?;
    write_checkpoint(&out.join(BEST_CHECKPOINT), &outcome.best_checkpoint(&cfg.train))?;
    write_checkpoint(&out.join(LAST_CHECKPOINT), &outcome.last_checkpoint(&cfg.train))?;
    Ok(outcome)
}

pub fn read_history(dir: &Path) -> Result<TrainHistory> {
    let path = dir.join(HISTORY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Val,
    #[default]
    Test,
    /// All labelled variants regardless of fold.
    All,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Self::Train,
            "val" => Self::Val,
            "test" => Self::Test,
            "all" => Self::All,
            other => return Err(Error::Config(format!("unknown split '{other}'"))),
        })
    }
}

/// One evaluated variant, as written to `predictions.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub protein_id: String,
    pub position: u32,
    pub wt: char,
    #[serde(rename = "mut")]
    pub mutant: char,
    pub label: u8,
    pub prob: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl PredictionRow {
    pub fn weights(&self) -> [f64; EXPERTS] {
        [self.w1, self.w2, self.w3, self.w4]
    }

    pub fn correct(&self) -> bool {
        u8::from(self.prob >= DEFAULT_THRESHOLD) == self.label
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: SplitName,
    pub ablation: Ablation,
    pub metrics: AggregateReport,
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRow>,
}

/// Scores the labelled variants of `split` with the checkpoint's model under
/// the ablation it was trained with.
pub fn run_eval(
    checkpoint: &Checkpoint,
    variants: &[VariantRecord],
    stores: [&EmbeddingStore; 3],
    split: SplitName,
    quantile: f64,
    aggregate: Aggregate,
) -> Result<EvalOutput> {
    let records = match split {
        SplitName::All => binarize_per_assay(variants, quantile)?,
        _ => {
            let s = labelled_split(variants, quantile)?;
            match split {
                SplitName::Train => s.train,
                SplitName::Val => s.val,
                _ => s.test,
            }
        }
    };
    let examples = assemble_examples(&records, stores)?;
    let labels = examples.required_labels()?;
    let p = predict(&checkpoint.model, &checkpoint.ablation, &examples.inputs)?;
    let metrics = aggregate_report(&p.prob, &labels, &examples.proteins(), aggregate, DEFAULT_THRESHOLD)?;
    let predictions = examples
        .keys
        .iter()
        .zip(&labels)
        .zip(p.prob.iter().zip(&p.weights))
        .map(|((k, &label), (&prob, w))| PredictionRow {
            protein_id: k.protein_id.clone(),
            position: k.position,
            wt: k.wt.code(),
            mutant: k.mutant.code(),
            label,
            prob,
            w1: w[0],
            w2: w[1],
            w3: w[2],
            w4: w[3],
        })
        .collect();
    Ok(EvalOutput {
        report: EvalReport {
            split,
            ablation: checkpoint.ablation,
            metrics,
        },
        predictions,
    })
}

/// Writes `metrics.json` and `predictions.csv` under `out`.
pub fn write_eval(out: &Path, eval: &EvalOutput) -> Result<()> {
    create_dir(out)?;
    write_json(&out.join(METRICS_FILE), &eval.report)?;
    write_predictions(&out.join(PREDICTIONS_FILE), &eval.predictions)
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean router weights per protein, plus an `all` row over every variant.
pub fn router_report(rows: &[PredictionRow]) -> BTreeMap<String, [f64; EXPERTS]> {
    let mut table = router_utilization(rows.iter().map(|r| (r.protein_id.as_str(), r.weights())));
    if !rows.is_empty() {
        let all = router_utilization(rows.iter().map(|r| ("all", r.weights())));
        table.extend(all);
    }
    table
}

pub fn write_router_report(path: &Path, table: &BTreeMap<String, [f64; EXPERTS]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["protein_id", "w1", "w2", "w3", "w4"])?;
    for (p, m) in table {
        let mut rec = vec![p.clone()];
        rec.extend(m.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn calibration_report(rows: &[PredictionRow], n_bins: usize) -> CalibrationReport {
    let probs: Vec<f64> = rows.iter().map(|r| r.prob).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    ece(&probs, &labels, n_bins)
}

/// Per-position accuracy for each protein. Protein lengths come from
/// `lengths` when present there, else from the largest evaluated position.
pub fn position_report(rows: &[PredictionRow], lengths: &BTreeMap<String, u32>) -> Vec<(String, Vec<PositionRow>)> {
    let mut groups: BTreeMap<&str, Vec<PositionOutcome>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.protein_id).or_default().push(PositionOutcome {
            position: r.position,
            correct: r.correct(),
            label: r.label,
        });
    }
    groups
        .into_iter()
        .map(|(p, outcomes)| {
            let len = lengths
                .get(p)
                .copied()
                .unwrap_or_else(|| outcomes.iter().map(|o| o.position).max().unwrap_or(0));
            (
                p.to_string(),
                per_position_accuracy(&outcomes, len, default_window(len)),
            )
        })
        .collect()
}

/// Largest residue number of each protein's structure in `dir`.
pub fn structure_lengths(dir: &Path, proteins: impl IntoIterator<Item = String>) -> Result<BTreeMap<String, u32>> {
    proteins
        .into_iter()
        .map(|p| {
            let s = read_structure(dir, &p)?;
            let len = s.residues.last().map_or(0, |r| r.index.max(0) as u32);
            Ok((p, len))
        })
        .collect()
}

pub fn write_position_report(path: &Path, table: &[(String, Vec<PositionRow>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "protein_id",
        "position",
        "count",
        "accuracy",
        "functional_rate",
        "sliding_accuracy",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for (p, rows) in table {
        for r in rows {
            w.write_record([
                p.clone(),
                r.position.to_string(),
                r.count.to_string(),
                opt(r.accuracy),
                opt(r.functional_rate),
                opt(r.sliding_accuracy),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, write_dataset, SynthConfig};

    fn dataset() -> (tempfile::TempDir, Vec<VariantRecord>) {
        let dir = tempfile::tempdir().unwrap();
        let proteins = generate(&SynthConfig {
            proteins: 2,
            variants_per_protein: 40,
            min_len: 15,
            max_len: 25,
            ..SynthConfig::default()
        })
        .unwrap();
        write_dataset(dir.path(), &proteins).unwrap();
        let variants = read_variants(&dir.path().join("variants")).unwrap();
        (dir, variants)
    }

    #[test]
    fn builders_cover_every_variant() {
        let (dir, variants) = dataset();
        let structures = dir.path().join("structures");
        let d = embed_dynamics(&structures, &variants, &DynamicsOptions::default());
        let s = embed_structure(&structures, &variants, &StructureOptions::default());
        let q = compose_mock(&structures, &variants, 0);
        for (b, dim) in [(&d, DYN_DIM), (&s, STR_DIM), (&q, SEQ_DIM)] {
            assert!(b.errors.is_empty(), "{:?}", b.errors);
            assert_eq!(b.store.entries.len(), 80);
            assert!(b.store.entries.iter().all(|e| e.vector.len() == dim));
        }
    }

    #[test]
    fn missing_structure_is_isolated() {
        let (dir, variants) = dataset();
        let structures = dir.path().join("structures");
        std::fs::remove_file(structures.join("SYN002.pdb")).unwrap();
        let b = embed_structure(&structures, &variants, &StructureOptions::default());
        assert_eq!(b.store.entries.len(), 40);
        assert_eq!(b.errors.len(), 1);
        assert_eq!(b.errors[0].item, "SYN002");
    }

    #[test]
    fn wild_type_mismatch_is_a_variant_error() {
        let (dir, mut variants) = dataset();
        let structures = dir.path().join("structures");
        let v = &mut variants[0];
        v.wt = AminoAcid::ALL
            .into_iter()
            .find(|&a| a != v.wt && a != v.mutant)
            .unwrap();
        let b = embed_dynamics(&structures, &variants, &DynamicsOptions::default());
        assert_eq!(b.store.entries.len(), 79);
        assert_eq!(b.errors.len(), 1);
        assert!(b.errors[0].item.starts_with("SYN001:"));
    }

    #[test]
    fn external_stores_match_mock_composition() {
        let (dir, variants) = dataset();
        let structures = dir.path().join("structures");
        let encoder = MockEncoder::new(5, SEQ_DIM);
        let mut context = EmbeddingStore::new(Modality::Context, SEQ_DIM);
        let mut tokens = EmbeddingStore::new(Modality::TokenTable, SEQ_DIM);
        for aa in AminoAcid::ALL {
            let key = VariantKey {
                protein_id: String::new(),
                position: 0,
                wt: aa,
                mutant: aa,
            };
            tokens.push(key, &encoder.token_table()[aa.index()]);
        }
        for id in ["SYN001", "SYN002"] {
            let s = read_structure(&structures, id).unwrap();
            let seq = s.sequence();
            for r in &s.residues {
                let key = VariantKey {
                    protein_id: id.into(),
                    position: r.index as u32,
                    wt: r.residue,
                    mutant: r.residue,
                };
                context.push(key, &encoder.context_vector(&seq, r.index as u32));
            }
        }
        let real = compose_from_stores(&context, &tokens, &variants).unwrap();
        assert!(real.errors.is_empty());
        let mock = compose_mock(&structures, &variants, 5);
        // Stored values are f32, so the two agree to single precision.
        for (a, b) in real.store.entries.iter().zip(&mock.store.entries) {
            assert_eq!(a.key, b.key);
            for (x, y) in a.vector.iter().zip(&b.vector) {
                assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()));
            }
        }

        context
            .entries
            .retain(|e| e.key.position != variants[0].position || e.key.protein_id != "SYN001");
        let partial = compose_from_stores(&context, &tokens, &variants).unwrap();
        assert!(!partial.errors.is_empty());
        assert!(partial.errors[0]
            .error
            .to_string()
            .contains("missing from context store"));
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![PredictionRow {
            protein_id: "P".into(),
            position: 3,
            wt: 'A',
            mutant: 'G',
            label: 1,
            prob: 0.1 + 0.2,
            w1: 0.25,
            w2: 1.0 / 3.0,
            w3: 0.2,
            w4: 1.0 - 0.25 - 1.0 / 3.0 - 0.2,
        }];
        let path = dir.path().join("p.csv");
        write_predictions(&path, &rows).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), rows);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("protein_id,position,wt,mut,label,prob,w1,w2,w3,w4\n"));
    }

    #[test]
    fn run_config_merges_partial_json() {
        let cfg: RunConfig = serde_json::from_str(r#"{"epochs": 3, "ablation": "seq+dyn", "quantile": 0.25}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.ablation.to_string(), "seq+dyn");
        assert_eq!(cfg.quantile, 0.25);
        assert_eq!(cfg.train.lr_max, 3e-4);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
