use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ReprError;
use crate::corpus::EmbeddingTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub coords: BTreeMap<String, Vec<f64>>,
    /// Unit principal axes, one per output dimension (zero when missing).
    pub axes: Vec<Vec<f64>>,
    /// Variance captured by each axis.
    pub explained_variance: Vec<f64>,
    /// Set when the data span fewer than `dims` directions; the missing
    /// components are zero.
    pub rank_deficient: bool,
}

/// Project mean-centred rows onto their top `dims` principal axes.
///
/// Each axis is oriented so that its largest-magnitude loading is positive
/// (first such index on ties).
pub fn pca_project(table: &EmbeddingTable, dims: usize) -> Result<Projection, ReprError> {
    let n = table.len();
    if n <= dims {
        return Err(ReprError::TooFewRows { rows: n, dims });
    }
    let d = table.dim();
    let rows: Vec<&Vec<f64>> = table.rows().values().collect();
    let mut centre = vec![0.0; d];
    for r in &rows {
        for (c, v) in centre.iter_mut().zip(r.iter()) {
            *c += v;
        }
    }
    for c in &mut centre {
        *c /= n as f64;
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - centre[j]);
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let s_max = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let cutoff = s_max * (n.max(d) as f64) * f64::EPSILON;

    let mut axes = Vec::with_capacity(dims);
    let mut explained_variance = Vec::with_capacity(dims);
    let mut rank_deficient = false;
    for k in 0..dims {
        match order.get(k).filter(|&&i| svd.singular_values[i] > cutoff && s_max > 0.0) {
            Some(&i) => {
                let mut axis: Vec<f64> = v_t.row(i).iter().copied().collect();
                let lead = axis
                    .iter()
                    .enumerate()
                    .fold(0, |best, (j, v)| if v.abs() > axis[best].abs() { j } else { best });
                if axis[lead] < 0.0 {
                    axis.iter_mut().for_each(|v| *v = -*v);
                }
                explained_variance.push(svd.singular_values[i].powi(2) / (n - 1) as f64);
                axes.push(axis);
            }
            None => {
                rank_deficient = true;
                explained_variance.push(0.0);
                axes.push(vec![0.0; d]);
            }
        }
    }
    let coords = table
        .rows()
        .keys()
        .enumerate()
        .map(|(i, id)| {
            let row = x.row(i);
            (id.clone(), axes.iter().map(|a| row.iter().zip(a).map(|(u, v)| u * v).sum()).collect())
        })
        .collect();
    Ok(Projection { coords, axes, explained_variance, rank_deficient })
}
