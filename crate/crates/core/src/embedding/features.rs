use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnm::GnmResult;
use crate::structure::{knn, norm, sub, NeighborTable, ProteinStructure};

/// What fills the last three structure features after the neighbour block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteGeometry {
    /// Unit vector from the site towards the Cα centroid (zero at the centroid).
    #[default]
    CentroidDirection,
    /// Three zeros.
    Zeros,
}

/// Structure features of the residue at `row`, from a precomputed neighbour
/// table: `[d_1..d_k | u_1..u_k (xyz) | extra(3)]`, missing neighbours zero.
pub fn structure_features_at(
    structure: &ProteinStructure,
    table: &NeighborTable,
    row: usize,
    extra: SiteGeometry,
) -> Vec<f64> {
    let k = table.k;
    let mut out = vec![0.0; 4 * k + 3];
    for (slot, n) in table.neighbors[row].iter().enumerate() {
        out[slot] = n.distance;
        out[k + 3 * slot..k + 3 * slot + 3].copy_from_slice(&n.direction);
    }
    if extra == SiteGeometry::CentroidDirection {
        let l = structure.len() as f64;
        let mut centroid = [0.0; 3];
        for r in &structure.residues {
            for (c, x) in centroid.iter_mut().zip(r.ca) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= l);
        let to_centroid = sub(centroid, structure.residues[row].ca);
        let d = norm(to_centroid);
        if d > 1e-9 {
            for (o, t) in out[4 * k..].iter_mut().zip(to_centroid) {
                *o = t / d;
            }
        }
    }
    out
}

/// Structure features at residue number `site`.
pub fn structure_features(structure: &ProteinStructure, site: u32, k: usize) -> Result<Vec<f64>> {
    let row = structure.row_of(site)?;
    let table = knn(structure, k)?;
    Ok(structure_features_at(structure, &table, row, SiteGeometry::default()))
}

/// `[b | U row | C row | s]` for the residue at `row`.
pub fn dynamics_features(gnm: &GnmResult, row: usize) -> Result<Vec<f64>> {
    if row >= gnm.b.len() {
        return Err(Error::SiteNotFound(row as u32 + 1));
    }
    let mut out = Vec::with_capacity(2 * gnm.k + 2);
    out.push(gnm.b[row]);
    out.extend_from_slice(&gnm.u[row]);
    out.extend_from_slice(&gnm.c[row]);
    out.push(gnm.s[row]);
    Ok(out)
}
