use serde::{Deserialize, Serialize};

pub const QUANTILE_BINS: usize = 15;
pub const CONFIDENCE_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub mean_p: f64,
    pub positive_rate: f64,
    pub count: usize,
}

/// Confidence `max(p, 1-p)` bucketed on `[0.5, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence, `None` for an empty bin.
    pub mean_confidence: Option<f64>,
    /// Fraction of correct predictions, `None` for an empty bin.
    pub accuracy: Option<f64>,
    /// Counts by true label 0 and 1.
    pub by_label: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub n: usize,
    /// Non-empty quantile bins in ascending probability.
    pub bins: Vec<ReliabilityBin>,
    pub confidence: Vec<ConfidenceBin>,
}

/// Quantile bin of each variant. Variants are ranked by probability; rank `r`
/// falls in bin `floor(r * n_bins / n)`, and a run of equal probabilities
/// stays in the bin of its first member.
pub fn quantile_bins(probs: &[f64], n_bins: usize) -> Vec<usize> {
    let n = probs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    let mut bin = vec![0; n];
    let mut current = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank == 0 || probs[i] != probs[order[rank - 1]] {
            current = rank * n_bins / n;
        }
        bin[i] = current;
    }
    bin
}

/// Equal-width bin on `[0.5, 1]`; 1.0 falls in the last bin.
pub fn confidence_bin(confidence: f64) -> usize {
    let b = CONFIDENCE_BINS as f64;
    ((confidence * 2.0 * b - b).floor().max(0.0) as usize).min(CONFIDENCE_BINS - 1)
}

/// Expected calibration error over quantile bins, with the confidence table.
pub fn ece(probs: &[f64], labels: &[u8], n_bins: usize) -> CalibrationReport {
    assert_eq!(probs.len(), labels.len(), "one label per probability");
    let n = probs.len();
    let assignment = quantile_bins(probs, n_bins);
    let mut sum_p = vec![0.0; n_bins];
    let mut positives = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..n {
        let b = assignment[i];
        sum_p[b] += probs[i];
        positives[b] += labels[i] as usize;
        counts[b] += 1;
    }
    let mut bins = Vec::new();
    let mut ece = 0.0;
    for b in 0..n_bins {
        if counts[b] == 0 {
            continue;
        }
        let mean_p = sum_p[b] / counts[b] as f64;
        let positive_rate = positives[b] as f64 / counts[b] as f64;
        ece += counts[b] as f64 / n as f64 * (mean_p - positive_rate).abs();
        bins.push(ReliabilityBin {
            mean_p,
            positive_rate,
            count: counts[b],
        });
    }

    let width = 0.5 / CONFIDENCE_BINS as f64;
    let mut confidence: Vec<ConfidenceBin> = (0..CONFIDENCE_BINS)
        .map(|b| ConfidenceBin {
            lower: 0.5 + b as f64 * width,
            upper: 0.5 + (b + 1) as f64 * width,
            count: 0,
            mean_confidence: None,
            accuracy: None,
            by_label: [0, 0],
        })
        .collect();
    let mut conf_sum = [0.0; CONFIDENCE_BINS];
    let mut correct = [0usize; CONFIDENCE_BINS];
    for (&p, &l) in probs.iter().zip(labels) {
        let c = p.max(1.0 - p);
        let b = confidence_bin(c);
        confidence[b].count += 1;
        confidence[b].by_label[l as usize] += 1;
        conf_sum[b] += c;
        correct[b] += usize::from(u8::from(p >= 0.5) == l);
    }
    for (b, bin) in confidence.iter_mut().enumerate() {
        if bin.count > 0 {
            bin.mean_confidence = Some(conf_sum[b] / bin.count as f64);
            bin.accuracy = Some(correct[b] as f64 / bin.count as f64);
        }
    }
    CalibrationReport {
        ece: if n == 0 { 0.0 } else { ece },
        n,
        bins,
        confidence,
    }
}

/// Reliability diagram: mean predicted probability against positive rate.
pub fn reliability_svg(report: &CalibrationReport) -> String {
    let (size, pad) = (320.0, 40.0);
    let span = size - 2.0 * pad;
    let x = |p: f64| pad + p * span;
    let y = |p: f64| size - pad - p * span;
    let max_count = report.bins.iter().map(|b| b.count).max().unwrap_or(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    svg +=
        &format!("<rect x=\"{pad}\" y=\"{pad}\" width=\"{span}\" height=\"{span}\" fill=\"none\" stroke=\"#444\"/>\n");
    svg += &format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n",
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let points: Vec<String> = report
        .bins
        .iter()
        .map(|b| format!("{:.3},{:.3}", x(b.mean_p), y(b.positive_rate)))
        .collect();
    svg += &format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n",
        points.join(" ")
    );
    for b in &report.bins {
        let r = 2.0 + 4.0 * (b.count as f64 / max_count).sqrt();
        svg += &format!(
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{r:.2}\" fill=\"#1f77b4\"/>\n",
            x(b.mean_p),
            y(b.positive_rate)
        );
    }
    svg += &format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">mean predicted probability</text>\n",
        size / 2.0,
        size - 10.0
    );
    svg += &format!(
        "<text x=\"12\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 12 {})\">positive rate</text>\n",
        size / 2.0,
        size / 2.0
    );
    svg += &format!(
        "<text x=\"{pad}\" y=\"24\" font-size=\"12\">ECE = {:.4} (n = {})</text>\n</svg>\n",
        report.ece, report.n
    );
    svg
}
