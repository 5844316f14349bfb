//! Cα traces from PDB files and k-nearest-neighbour tables over them.

use crate::data::AminoAcid;
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residue {
    /// Residue sequence number from the file (1-based by convention).
    pub index: i32,
    pub residue: AminoAcid,
    pub ca: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProteinStructure {
    pub protein_id: String,
    pub residues: Vec<Residue>,
}

impl ProteinStructure {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn sequence(&self) -> String {
        self.residues.iter().map(|r| r.residue.code()).collect()
    }

    /// Row of the residue with file index `index`.
    pub fn row_of(&self, index: u32) -> Result<usize> {
        self.residues
            .binary_search_by_key(&(index as i64), |r| r.index as i64)
            .map_err(|_| Error::SiteNotFound(index))
    }

    pub fn coords(&self) -> Vec<Vec3> {
        self.residues.iter().map(|r| r.ca).collect()
    }

    /// Renders the trace as fixed-column PDB ATOM records (chain A).
    pub fn to_pdb(&self) -> String {
        let mut out = String::new();
        for (serial, r) in self.residues.iter().enumerate() {
            out.push_str(&format!(
                "ATOM  {:>5}  CA  {} A{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           C\n",
                serial + 1,
                r.residue.three_letter(),
                r.index,
                r.ca[0],
                r.ca[1],
                r.ca[2]
            ));
        }
        out.push_str("TER\nEND\n");
        out
    }
}

fn column(line: &str, start: usize, end: usize) -> &str {
    line.get(start.min(line.len())..end.min(line.len())).unwrap_or("")
}

/// Extracts the Cα trace of one chain from PDB text.
///
/// Only the first model is read. Without a `chain` filter the first chain that
/// carries a CA atom is used. Alternate locations other than blank or `A` are
/// skipped.
pub fn parse_pdb(protein_id: &str, text: &str, chain: Option<char>) -> Result<ProteinStructure> {
    let mut residues: Vec<Residue> = Vec::new();
    let mut selected = chain;
    let mut seen_model = false;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let record = column(line, 0, 6).trim_end();
        match record {
            "MODEL" => {
                if seen_model {
                    break;
                }
                seen_model = true;
                continue;
            }
            "ENDMDL" => break,
            "ATOM" => {}
            _ => continue,
        }
        if column(line, 12, 16).trim() != "CA" {
            continue;
        }
        let altloc = column(line, 16, 17);
        if !(altloc.trim().is_empty() || altloc == "A") {
            continue;
        }
        let chain_id = column(line, 21, 22).chars().next().unwrap_or(' ');
        match selected {
            Some(c) if c != chain_id => continue,
            None => selected = Some(chain_id),
            _ => {}
        }
        let bad = |reason: String| Error::PdbLine { line: lineno, reason };
        let index: i32 = column(line, 22, 26)
            .trim()
            .parse()
            .map_err(|_| bad("residue number is not an integer".into()))?;
        let residue = AminoAcid::from_three_letter(column(line, 17, 20)).map_err(|e| bad(e.to_string()))?;
        if line.len() < 54 {
            return Err(bad("line too short for coordinates (columns 31-54)".into()));
        }
        let mut ca = [0.0; 3];
        for (k, (start, end)) in [(30, 38), (38, 46), (46, 54)].into_iter().enumerate() {
            let text = column(line, start, end).trim();
            ca[k] = text
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(format!("unparseable coordinate '{text}' in columns 31-54")))?;
        }
        if let Some(last) = residues.last() {
            if residues.iter().any(|r| r.index == index) {
                return Err(Error::DuplicateResidue { index, chain: chain_id });
            }
            if index < last.index {
                return Err(bad(format!(
                    "residue numbering decreases ({} after {})",
                    index, last.index
                )));
            }
        }
        residues.push(Residue { index, residue, ca });
    }

    if residues.is_empty() {
        return Err(Error::NoCaAtoms);
    }
    Ok(ProteinStructure {
        protein_id: protein_id.to_string(),
        residues,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Row of the neighbour in the structure (0-based).
    pub row: usize,
    pub distance: f64,
    /// Unit vector from the query residue towards the neighbour.
    pub direction: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborTable {
    pub k: usize,
    /// `min(k, L-1)` entries per residue, ascending distance.
    pub neighbors: Vec<Vec<Neighbor>>,
    /// Number of slots short of `k` on every row.
    pub pad: usize,
}

/// Rejects structures with two Cα atoms closer than 1e-6 Å.
pub fn check_coincident(structure: &ProteinStructure) -> Result<()> {
    let coords = structure.coords();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            if norm(sub(coords[j], coords[i])) < 1e-6 {
                return Err(Error::CoincidentCa(
                    structure.residues[i].index as usize,
                    structure.residues[j].index as usize,
                ));
            }
        }
    }
    Ok(())
}

/// Exact all-pairs k-nearest neighbours. Distance ties go to the lower row.
pub fn knn(structure: &ProteinStructure, k: usize) -> Result<NeighborTable> {
    let l = structure.len();
    if l < 2 {
        return Err(Error::TooShort(l));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    check_coincident(structure)?;
    let coords = structure.coords();
    let take = k.min(l - 1);
    let neighbors = (0..l)
        .map(|i| {
            let mut cands: Vec<(f64, usize)> = (0..l)
                .filter(|&j| j != i)
                .map(|j| (norm(sub(coords[j], coords[i])), j))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands
                .into_iter()
                .take(take)
                .map(|(distance, j)| {
                    let d = sub(coords[j], coords[i]);
                    Neighbor {
                        row: j,
                        distance,
                        direction: [d[0] / distance, d[1] / distance, d[2] / distance],
                    }
                })
                .collect()
        })
        .collect();
    Ok(NeighborTable {
        k,
        neighbors,
        pad: k - take,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_structure(xs: &[f64]) -> ProteinStructure {
        ProteinStructure {
            protein_id: "T".into(),
            residues: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| Residue {
                    index: i as i32 + 1,
                    residue: AminoAcid::Ala,
                    ca: [x, 0.0, 0.0],
                })
                .collect(),
        }
    }

    #[test]
    fn single_atom_line() {
        let text = "ATOM      2  CA  ALA A   1       0.000   0.000   0.000  1.00 90.00           C\n";
        let s = parse_pdb("X", text, None).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.residues[0].ca, [0.0, 0.0, 0.0]);
        assert_eq!(s.residues[0].residue, AminoAcid::Ala);
        assert_eq!(s.residues[0].index, 1);
    }

    fn atom(serial: usize, name: &str, res: &str, chain: char, idx: i32, xyz: [f64; 3]) -> String {
        format!(
            "ATOM  {:>5} {:<4} {} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           C",
            serial, name, res, chain, idx, xyz[0], xyz[1], xyz[2]
        )
    }

    #[test]
    fn first_model_only() {
        let text = [
            "MODEL        1".to_string(),
            atom(1, " CA ", "GLY", 'A', 1, [1.0, 2.0, 3.0]),
            atom(2, " CA ", "SER", 'A', 2, [4.0, 2.0, 3.0]),
            "ENDMDL".to_string(),
            "MODEL        2".to_string(),
            atom(1, " CA ", "GLY", 'A', 1, [9.0, 9.0, 9.0]),
            atom(2, " CA ", "SER", 'A', 2, [9.0, 9.0, 9.0]),
            atom(3, " CA ", "SER", 'A', 3, [9.0, 9.0, 9.0]),
            "ENDMDL".to_string(),
        ]
        .join("\n");
        let s = parse_pdb("X", &text, None).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.residues[0].ca, [1.0, 2.0, 3.0]);
        assert_eq!(s.sequence(), "GS");
    }

    #[test]
    fn chain_filter_and_side_chains() {
        let text = [
            atom(1, " N  ", "MET", 'A', 1, [0.0, 0.0, 0.0]),
            atom(2, " CA ", "MET", 'A', 1, [1.0, 0.0, 0.0]),
            atom(3, " CA ", "LYS", 'A', 2, [2.0, 0.0, 0.0]),
            "TER".to_string(),
            atom(4, " CA ", "TRP", 'B', 5, [3.0, 0.0, 0.0]),
            atom(5, " CB ", "TRP", 'B', 5, [3.5, 0.0, 0.0]),
            atom(6, " CA ", "TYR", 'B', 6, [4.0, 0.0, 0.0]),
        ]
        .join("\n");
        let b = parse_pdb("X", &text, Some('B')).unwrap();
        assert_eq!(b.sequence(), "WY");
        assert_eq!(b.residues[0].index, 5);
        let default = parse_pdb("X", &text, None).unwrap();
        assert_eq!(default.sequence(), "MK");
    }

    #[test]
    fn altloc_keeps_blank_or_a() {
        let mut a = atom(1, " CA ", "ALA", 'A', 1, [1.0, 0.0, 0.0]);
        a.replace_range(16..17, "A");
        let mut b = atom(2, " CA ", "ALA", 'A', 1, [5.0, 0.0, 0.0]);
        b.replace_range(16..17, "B");
        let s = parse_pdb("X", &format!("{a}\n{b}\n"), None).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.residues[0].ca[0], 1.0);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_pdb("X", "HEADER x\nEND\n", None), Err(Error::NoCaAtoms)));
        let dup = [
            atom(1, " CA ", "ALA", 'A', 1, [0.0; 3]),
            atom(2, " CA ", "ALA", 'A', 1, [1.0, 0.0, 0.0]),
        ]
        .join("\n");
        assert!(matches!(
            parse_pdb("X", &dup, None),
            Err(Error::DuplicateResidue { index: 1, .. })
        ));
        let mut bad = atom(1, " CA ", "ALA", 'A', 1, [0.0; 3]);
        bad.replace_range(30..38, "   abcde");
        let err = parse_pdb("X", &format!("REMARK\n{bad}"), None).unwrap_err();
        assert!(matches!(err, Error::PdbLine { line: 2, .. }), "{err}");
        let short = "ATOM      2  CA  ALA A   1       0.000   0.000";
        assert!(matches!(
            parse_pdb("X", short, None),
            Err(Error::PdbLine { line: 1, .. })
        ));
    }

    #[test]
    fn pdb_writer_round_trips() {
        let s = line_structure(&[0.0, 3.8, 7.6, -12.25]);
        let back = parse_pdb("T", &s.to_pdb(), None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn knn_tie_breaks_by_lower_index() {
        let s = line_structure(&[0.0, 3.8, 7.6]);
        let t = knn(&s, 1).unwrap();
        assert_eq!(t.neighbors[1][0].row, 0);
        assert_eq!(t.pad, 0);
        let t = knn(&s, 2).unwrap();
        let mid = &t.neighbors[1];
        assert_eq!((mid[0].row, mid[1].row), (0, 2));
        assert_eq!((mid[0].distance, mid[1].distance), (3.8, 3.8));
        assert_eq!(mid[0].direction, [-1.0, 0.0, 0.0]);
        assert_eq!(mid[1].direction, [1.0, 0.0, 0.0]);
        let t = knn(&s, 20).unwrap();
        assert_eq!((t.neighbors[0].len(), t.pad), (2, 18));
    }

    #[test]
    fn knn_rejects_coincident_and_short() {
        assert!(matches!(
            knn(&line_structure(&[0.0, 1.0, 1.0]), 2),
            Err(Error::CoincidentCa(2, 3))
        ));
        assert!(matches!(knn(&line_structure(&[0.0]), 2), Err(Error::TooShort(1))));
    }
}
