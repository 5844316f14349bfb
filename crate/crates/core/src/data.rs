//! Variant records, per-assay label binarization and fold splitting.
//!
//! Labels follow the top/bottom quantile rule: within one assay the highest
//! `quantile` fraction of DMS scores become functional (label 1), the lowest
//! fraction damaging (label 0), and the middle band is discarded. Thresholds
//! are always computed per assay because DMS scores from different
//! experiments are not on a common scale.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 20 canonical amino acids, ordered by one-letter code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum AminoAcid {
    Ala,
    Cys,
    Asp,
    Glu,
    Phe,
    Gly,
    His,
    Ile,
    Lys,
    Leu,
    Met,
    Asn,
    Pro,
    Gln,
    Arg,
    Ser,
    Thr,
    Val,
    Trp,
    Tyr,
}

const ONE_LETTER: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
const THREE_LETTER: [&str; 20] = [
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU", "MET", "ASN", "PRO", "GLN", "ARG", "SER",
    "THR", "VAL", "TRP", "TYR",
];

impl AminoAcid {
    pub const ALL: [AminoAcid; 20] = [
        AminoAcid::Ala,
        AminoAcid::Cys,
        AminoAcid::Asp,
        AminoAcid::Glu,
        AminoAcid::Phe,
        AminoAcid::Gly,
        AminoAcid::His,
        AminoAcid::Ile,
        AminoAcid::Lys,
        AminoAcid::Leu,
        AminoAcid::Met,
        AminoAcid::Asn,
        AminoAcid::Pro,
        AminoAcid::Gln,
        AminoAcid::Arg,
        AminoAcid::Ser,
        AminoAcid::Thr,
        AminoAcid::Val,
        AminoAcid::Trp,
        AminoAcid::Tyr,
    ];

    pub fn from_code(c: char) -> Result<Self> {
        let upper = c.to_ascii_uppercase();
        ONE_LETTER
            .iter()
            .position(|&b| b as char == upper)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::UnknownResidue(c.to_string()))
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        Self::from_code(b as char)
    }

    pub fn from_three_letter(name: &str) -> Result<Self> {
        let upper = name.trim().to_ascii_uppercase();
        THREE_LETTER
            .iter()
            .position(|&n| n == upper)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::UnknownResidue(name.trim().to_string()))
    }

    pub fn code(self) -> char {
        ONE_LETTER[self as usize] as char
    }

    pub fn three_letter(self) -> &'static str {
        THREE_LETTER[self as usize]
    }

    /// Position in the canonical ordering, 0..20.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AminoAcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One single amino acid substitution with its assay measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub protein_id: String,
    /// 1-based residue index.
    pub position: u32,
    pub wt: AminoAcid,
    pub mutant: AminoAcid,
    pub dms_score: f64,
    /// 1 = functional, 0 = damaging; set by [`binarize_labels`].
    pub label: Option<u8>,
    pub fold: Option<u8>,
}

impl VariantRecord {
    /// Mutation token in `A24G` form.
    pub fn mutation(&self) -> String {
        format!("{}{}{}", self.wt, self.position, self.mutant)
    }

    pub fn key(&self) -> VariantKey {
        VariantKey {
            protein_id: self.protein_id.clone(),
            position: self.position,
            wt: self.wt,
            mutant: self.mutant,
        }
    }
}

/// Identity of a variant, shared by the embedding stores and predictions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariantKey {
    pub protein_id: String,
    pub position: u32,
    pub wt: AminoAcid,
    pub mutant: AminoAcid,
}

impl fmt::Display for VariantKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}{}{}", self.protein_id, self.wt, self.position, self.mutant)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<VariantRecord>,
    pub val: Vec<VariantRecord>,
    pub test: Vec<VariantRecord>,
}

/// Column names used when reading a per-assay CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub mutant: String,
    pub score: String,
    pub fold: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            mutant: "mutant".into(),
            score: "DMS_score".into(),
            fold: "fold_random_5".into(),
        }
    }
}

/// Parses a `<wt><position><mut>` token such as `A24G`.
pub fn parse_mutation(token: &str, line: usize) -> Result<(AminoAcid, u32, AminoAcid)> {
    let malformed = |reason: &str| Error::MalformedMutation {
        token: token.to_string(),
        line,
        reason: reason.to_string(),
    };
    let token = token.trim();
    if token.contains(':') {
        return Err(malformed("multi-mutant tokens are not supported"));
    }
    let chars: Vec<char> = token.chars().collect();
    if chars.len() < 3 {
        return Err(malformed("expected <wt><position><mut>"));
    }
    let (first, last) = (chars[0], chars[chars.len() - 1]);
    let digits: String = chars[1..chars.len() - 1].iter().collect();
    if !first.is_ascii_alphabetic() || !last.is_ascii_alphabetic() {
        return Err(malformed("expected <wt><position><mut>"));
    }
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(malformed("position is not an integer"));
    }
    let position: u32 = digits.parse().map_err(|_| malformed("position out of range"))?;
    if position == 0 {
        return Err(malformed("positions are 1-based"));
    }
    let residue = |c: char| {
        AminoAcid::from_code(c).map_err(|_| Error::UnknownResidueAtLine {
            residue: c.to_string(),
            line,
        })
    };
    let wt = residue(first)?;
    let mutant = residue(last)?;
    if wt == mutant {
        return Err(malformed("wild-type and mutant residue are identical"));
    }
    Ok((wt, position, mutant))
}

/// Reads a per-assay variant CSV. Line numbers in errors count the header as
/// line 1.
pub fn parse_variant_csv(text: &str, protein_id: &str, columns: &ColumnMap) -> Result<Vec<VariantRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mutant_col = find(&columns.mutant).ok_or_else(|| Error::MissingColumn(columns.mutant.clone()))?;
    let score_col = find(&columns.score).ok_or_else(|| Error::MissingColumn(columns.score.clone()))?;
    let fold_col = find(&columns.fold);

    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let line = row + 2;
        let rec = result?;
        let field = |col: usize| rec.get(col).unwrap_or("");
        let (wt, position, mutant) = parse_mutation(field(mutant_col), line)?;
        let score_text = field(score_col);
        let dms_score: f64 = score_text.parse().map_err(|_| Error::BadField {
            column: columns.score.clone(),
            line,
            reason: format!("'{score_text}' is not a number"),
        })?;
        if !dms_score.is_finite() {
            return Err(Error::BadField {
                column: columns.score.clone(),
                line,
                reason: "score is not finite".into(),
            });
        }
        let fold = match fold_col.map(field) {
            None | Some("") => None,
            Some(text) => {
                let fold: u8 = text.parse().ok().filter(|f| *f <= 4).ok_or_else(|| Error::BadField {
                    column: columns.fold.clone(),
                    line,
                    reason: format!("fold '{text}' is not an integer in 0..=4"),
                })?;
                Some(fold)
            }
        };
        records.push(VariantRecord {
            protein_id: protein_id.to_string(),
            position,
            wt,
            mutant,
            dms_score,
            label: None,
            fold,
        });
    }
    Ok(records)
}

/// Fraction labelled at each tail of an assay.
pub const DEFAULT_QUANTILE: f64 = 0.3;

/// Number of records per class for `n` records: `ceil(quantile * n)`.
///
/// The small offset keeps products such as `0.3 * 10` from rounding up to 4.
pub fn class_count(n: usize, quantile: f64) -> usize {
    (quantile * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Assigns labels by per-assay top/bottom quantile thresholding and drops the
/// middle band.
///
/// With `k = ceil(quantile * n)`, a record is labelled 0 when its score is
/// strictly below the (k+1)-th smallest score and 1 when strictly above the
/// (k+1)-th largest. For distinct scores this is exactly the bottom and top
/// `k`; a tie group that straddles a cut falls into the middle band.
pub fn binarize_labels(records: &[VariantRecord], quantile: f64) -> Result<Vec<VariantRecord>> {
    if !(quantile > 0.0 && quantile <= 0.5) {
        return Err(Error::Config(format!("quantile {quantile} must lie in (0, 0.5]")));
    }
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| r.protein_id != first.protein_id) {
            return Err(Error::Config(format!(
                "binarize_labels expects a single assay, found {} and {}",
                first.protein_id, other.protein_id
            )));
        }
    }
    let n = records.len();
    let min = (1.0 / quantile - 1e-9).ceil() as usize;
    if n < min {
        return Err(Error::AssayTooSmall { n, min });
    }
    let mut sorted: Vec<f64> = records.iter().map(|r| r.dms_score).collect();
    sorted.sort_by(f64::total_cmp);
    let k = class_count(n, quantile);
    if 2 * k > n {
        return Err(Error::Config(format!(
            "quantile {quantile} selects overlapping classes for {n} records"
        )));
    }
    let low_cut = sorted[k];
    let high_cut = sorted[n - 1 - k];

    Ok(records
        .iter()
        .filter_map(|r| {
            let label = if r.dms_score < low_cut {
                0
            } else if r.dms_score > high_cut {
                1
            } else {
                return None;
            };
            Some(VariantRecord {
                label: Some(label),
                ..r.clone()
            })
        })
        .collect())
}

/// Applies [`binarize_labels`] to each assay separately. Output is grouped by
/// protein id (sorted), preserving input order inside each assay.
pub fn binarize_per_assay(records: &[VariantRecord], quantile: f64) -> Result<Vec<VariantRecord>> {
    let mut by_assay: BTreeMap<&str, Vec<VariantRecord>> = BTreeMap::new();
    for r in records {
        by_assay.entry(r.protein_id.as_str()).or_default().push(r.clone());
    }
    let mut out = Vec::new();
    for group in by_assay.values() {
        out.extend(binarize_labels(group, quantile)?);
    }
    Ok(out)
}

/// Folds 0–2 train, fold 3 validates, fold 4 tests.
pub fn split_by_fold(records: &[VariantRecord]) -> Result<DatasetSplit> {
    let mut split = DatasetSplit::default();
    for r in records {
        match r.fold {
            Some(0..=2) => split.train.push(r.clone()),
            Some(3) => split.val.push(r.clone()),
            Some(4) => split.test.push(r.clone()),
            Some(f) => return Err(Error::Config(format!("fold {f} out of range for {}", r.key()))),
            None => return Err(Error::MissingFold(r.key().to_string())),
        }
    }
    Ok(split)
}
