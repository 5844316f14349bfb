use std::collections::BTreeMap;

use crate::nn::EXPERTS;

/// Mean router weights per protein, ordered by protein id.
pub fn router_utilization<'a>(
    rows: impl IntoIterator<Item = (&'a str, [f64; EXPERTS])>,
) -> BTreeMap<String, [f64; EXPERTS]> {
    let mut sums: BTreeMap<String, ([f64; EXPERTS], usize)> = BTreeMap::new();
    for (protein, w) in rows {
        let e = sums.entry(protein.to_string()).or_insert(([0.0; EXPERTS], 0));
        for (s, v) in e.0.iter_mut().zip(w) {
            *s += v;
        }
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(p, (s, n))| (p, s.map(|v| v / n as f64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means() {
        let u = router_utilization([
            ("p", [1.0, 0.0, 0.0, 0.0]),
            ("p", [0.0, 1.0, 0.0, 0.0]),
            ("a", [0.1, 0.2, 0.3, 0.4]),
        ]);
        assert_eq!(u["p"], [0.5, 0.5, 0.0, 0.0]);
        assert_eq!(u["a"], [0.1, 0.2, 0.3, 0.4]);
        assert_eq!(u.keys().collect::<Vec<_>>(), vec!["a", "p"]);
    }
}
