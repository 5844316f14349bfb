use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision threshold on the positive-class probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Variant indices sorted by score, ascending, ties in input order.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Runs of equal scores in `order`, as index ranges into `order`.
fn tie_groups(scores: &[f64], order: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || scores[order[i]] != scores[order[start]] {
            groups.push(start..i);
            start = i;
        }
    }
    groups
}

fn count_classes(labels: &[u8]) -> (u64, u64) {
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    (pos, labels.len() as u64 - pos)
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let (pos, neg) = count_classes(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::AurocUndefined);
    }
    let order = ascending(scores);
    // Twice the Mann-Whitney U, kept in integers: 2·midrank = first + last rank.
    let mut twice_rank_sum: u64 = 0;
    for g in tie_groups(scores, &order) {
        let positives = order[g.clone()].iter().filter(|&&i| labels[i] == 1).count() as u64;
        twice_rank_sum += positives * (g.start as u64 + 1 + g.end as u64);
    }
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Area under the precision-recall step curve, sweeping thresholds from the
/// top score down with tied scores entering together.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let (pos, _) = count_classes(labels);
    if pos == 0 {
        return Err(Error::AuprcUndefined);
    }
    let mut order = ascending(scores);
    order.reverse();
    let (mut tp, mut fp, mut area) = (0u64, 0u64, 0.0);
    for g in tie_groups(scores, &order) {
        let gained = order[g.clone()].iter().filter(|&&i| labels[i] == 1).count() as u64;
        tp += gained;
        fp += g.len() as u64 - gained;
        if gained > 0 {
            area += (gained as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(area)
}

/// Accuracy and macro-averaged F1, recall and precision over both classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub acc: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
}

/// Predicts class 1 when `score >= threshold`. A class that is never
/// predicted has precision 0; a class that never occurs has recall 0.
pub fn classification_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> ClassificationMetrics {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    // confusion[actual][predicted]
    let mut confusion = [[0u64; 2]; 2];
    for (&s, &l) in scores.iter().zip(labels) {
        confusion[l as usize][usize::from(s >= threshold)] += 1;
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut f1 = 0.0;
    let mut recall = 0.0;
    let mut precision = 0.0;
    for c in 0..2 {
        let tp = confusion[c][c];
        let p = ratio(tp, confusion[0][c] + confusion[1][c]);
        let r = ratio(tp, confusion[c][0] + confusion[c][1]);
        precision += p;
        recall += r;
        f1 += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    ClassificationMetrics {
        acc: ratio(confusion[0][0] + confusion[1][1], scores.len() as u64),
        macro_f1: f1 / 2.0,
        macro_recall: recall / 2.0,
        macro_precision: precision / 2.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub acc: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    /// Variants evaluated.
    pub n: usize,
}

pub fn metric_report(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricReport> {
    let c = classification_metrics(scores, labels, threshold);
    Ok(MetricReport {
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        acc: c.acc,
        macro_f1: c.macro_f1,
        macro_recall: c.macro_recall,
        macro_precision: c.macro_precision,
        n: scores.len(),
    })
}

/// How per-variant results become one headline number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregate {
    /// Unweighted mean of per-protein reports.
    #[default]
    PerAssay,
    /// One report over all variants.
    Pooled,
}

impl std::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-assay" => Ok(Self::PerAssay),
            "pooled" => Ok(Self::Pooled),
            _ => Err(Error::Config(format!("unknown aggregation '{s}' (per-assay|pooled)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mode: Aggregate,
    pub overall: MetricReport,
    /// Per-protein reports for proteins with both classes present.
    pub per_protein: BTreeMap<String, MetricReport>,
    /// Proteins left out because one class is missing.
    pub skipped: Vec<String>,
}

/// Metrics under the chosen aggregation.
pub fn aggregate_report(
    scores: &[f64],
    labels: &[u8],
    proteins: &[String],
    mode: Aggregate,
    threshold: f64,
) -> Result<AggregateReport> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in proteins.iter().enumerate() {
        groups.entry(p).or_default().push(i);
    }
    let mut per_protein = BTreeMap::new();
    let mut skipped = Vec::new();
    for (p, idx) in &groups {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        match metric_report(&s, &l, threshold) {
            Ok(r) => {
                per_protein.insert(p.to_string(), r);
            }
            Err(Error::AurocUndefined | Error::AuprcUndefined) => skipped.push(p.to_string()),
            Err(e) => return Err(e),
        }
    }
    let overall = match mode {
        Aggregate::Pooled => metric_report(scores, labels, threshold)?,
        Aggregate::PerAssay => {
            if per_protein.is_empty() {
                return Err(Error::AurocUndefined);
            }
            let k = per_protein.len() as f64;
            let mean = |f: fn(&MetricReport) -> f64| per_protein.values().map(f).sum::<f64>() / k;
            MetricReport {
                auroc: mean(|r| r.auroc),
                auprc: mean(|r| r.auprc),
                acc: mean(|r| r.acc),
                macro_f1: mean(|r| r.macro_f1),
                macro_recall: mean(|r| r.macro_recall),
                macro_precision: mean(|r| r.macro_precision),
                n: per_protein.values().map(|r| r.n).sum(),
            }
        }
    };
    Ok(AggregateReport {
        mode,
        overall,
        per_protein,
        skipped,
    })
}
