use serde::{Deserialize, Serialize};

/// One variant outcome at a residue position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionOutcome {
    pub position: u32,
    pub correct: bool,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub position: u32,
    pub count: usize,
    pub accuracy: Option<f64>,
    /// Fraction of variants labelled functional.
    pub functional_rate: Option<f64>,
    /// Mean accuracy over populated positions in the centred window.
    pub sliding_accuracy: Option<f64>,
}

/// `ceil(L / 20)`, at least 1.
pub fn default_window(length: u32) -> u32 {
    length.div_ceil(20).max(1)
}

/// Per-position accuracy for positions `1..=length` with a centred sliding
/// mean of width `window`, truncated at the ends.
pub fn per_position_accuracy(outcomes: &[PositionOutcome], length: u32, window: u32) -> Vec<PositionRow> {
    let l = length as usize;
    let mut count = vec![0usize; l + 1];
    let mut correct = vec![0usize; l + 1];
    let mut functional = vec![0usize; l + 1];
    for o in outcomes {
        let p = o.position as usize;
        if p == 0 || p > l {
            continue;
        }
        count[p] += 1;
        correct[p] += usize::from(o.correct);
        functional[p] += o.label as usize;
    }
    let accuracy: Vec<Option<f64>> = (0..=l)
        .map(|p| (count[p] > 0).then(|| correct[p] as f64 / count[p] as f64))
        .collect();
    let w = window.max(1) as i64;
    (1..=l)
        .map(|p| {
            let lo = p as i64 - (w - 1) / 2;
            let hi = lo + w - 1;
            let populated: Vec<f64> = (lo.max(1)..=hi.min(l as i64))
                .filter_map(|q| accuracy[q as usize])
                .collect();
            PositionRow {
                position: p as u32,
                count: count[p],
                accuracy: accuracy[p],
                functional_rate: (count[p] > 0).then(|| functional[p] as f64 / count[p] as f64),
                sliding_accuracy: (!populated.is_empty())
                    .then(|| populated.iter().sum::<f64>() / populated.len() as f64),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(position: u32, correct: bool) -> PositionOutcome {
        PositionOutcome {
            position,
            correct,
            label: 1,
        }
    }

    #[test]
    fn all_correct() {
        let o: Vec<_> = [1, 3, 3, 7].iter().map(|&p| outcome(p, true)).collect();
        let rows = per_position_accuracy(&o, 8, 3);
        for r in &rows {
            if r.count > 0 {
                assert_eq!(r.accuracy, Some(1.0));
            }
        }
        assert_eq!(rows[2].count, 2);
        assert_eq!(rows[4].sliding_accuracy, None);
    }

    #[test]
    fn single_populated_position_fills_its_window() {
        let rows = per_position_accuracy(&[outcome(10, false), outcome(10, true)], 30, 5);
        for r in &rows {
            let in_window = (8..=12).contains(&r.position);
            assert_eq!(r.sliding_accuracy, in_window.then_some(0.5), "{}", r.position);
        }
    }

    #[test]
    fn window_sizes() {
        assert_eq!(default_window(100), 5);
        assert_eq!(default_window(41), 3);
        assert_eq!(default_window(5), 1);
    }
}
