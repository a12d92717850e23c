//! Scores for transfer maps against known memberships and gene-map
//! comparison on a tile grid.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::distance::{cosine_similarity, js_divergence};
use crate::error::{DotError, Result};
use crate::types::normalize_columns;

fn same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(DotError::dim(format!(
            "{}x{} predictions against {}x{} truth",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.ncols() == 0 {
        return Err(DotError::invalid("no spots to score"));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(col: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (c, &v) in col.iter().enumerate() {
        if v > col[best] {
            best = c;
        }
    }
    best
}

/// Fraction of spots whose largest entry is on the true category.
pub fn accuracy(y: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    same_shape(y, truth)?;
    let hits = y
        .columns()
        .into_iter()
        .zip(truth.columns())
        .filter(|(p, t)| argmax(*p) == argmax(*t))
        .count();
    Ok(hits as f64 / y.ncols() as f64)
}

/// Mean squared error per spot after normalizing the columns of `y`.
pub fn brier_score(y: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    same_shape(y, truth)?;
    let p = normalize_columns(&y.to_owned());
    let total: f64 = Zip::from(&p).and(truth).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
    Ok(total / y.ncols() as f64)
}

/// Ground truth averaged over nearby spots with a Gaussian kernel.
#[derive(Debug, Clone)]
pub struct SmoothedLabels {
    pub values: Array2<f64>,
    pub sigma: f64,
}

/// Kernel width as a fraction of the neighbor distance threshold.
pub const SMOOTHING_FRACTION: f64 = 0.5;

/// Smooths `truth` (categories × spots) with width `0.5 * threshold`. The
/// kernel includes each spot itself.
pub fn smooth_labels(truth: ArrayView2<f64>, coordinates: ArrayView2<f64>, threshold: f64) -> Result<SmoothedLabels> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(DotError::invalid(format!("smoothing threshold {threshold} must be positive")));
    }
    if coordinates.nrows() != truth.ncols() {
        return Err(DotError::dim(format!(
            "{} coordinates for {} spots",
            coordinates.nrows(),
            truth.ncols()
        )));
    }
    let sigma = SMOOTHING_FRACTION * threshold;
    let denom = 2.0 * sigma * sigma;
    let n = truth.ncols();
    let columns: Vec<Vec<f64>> = Zip::from(coordinates.rows())
        .par_map_collect(|xi| {
            let mut acc = vec![0.0; truth.nrows()];
            let mut weight = 0.0;
            for j in 0..n {
                let d2: f64 = xi
                    .iter()
                    .zip(coordinates.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let k = (-d2 / denom).exp();
                if k == 0.0 {
                    continue;
                }
                weight += k;
                for (a, &p) in acc.iter_mut().zip(truth.column(j)) {
                    *a += k * p;
                }
            }
            acc.iter().map(|a| a / weight).collect()
        })
        .to_vec();
    let mut values = Array2::zeros(truth.dim());
    for (i, col) in columns.iter().enumerate() {
        for (c, v) in col.iter().enumerate() {
            values[[c, i]] = *v;
        }
    }
    Ok(SmoothedLabels { values, sigma })
}

/// Mean base-2 Jensen-Shannon divergence between matching columns.
pub fn mean_js(y: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<f64> {
    same_shape(y, reference)?;
    let mut total = 0.0;
    for (a, b) in y.columns().into_iter().zip(reference.columns()) {
        total += js_divergence(&a.to_vec(), &b.to_vec())?;
    }
    Ok(total / y.ncols() as f64)
}

/// Mean divergence of predictions from the smoothed ground truth.
pub fn spatial_js(y: ArrayView2<f64>, smoothed: &SmoothedLabels) -> Result<f64> {
    mean_js(y, smoothed.values.view())
}

/// Gene values at scattered locations (rows) with their coordinates.
#[derive(Debug, Clone, Copy)]
pub struct GeneMap<'a> {
    pub values: ArrayView2<'a, f64>,
    pub coordinates: ArrayView2<'a, f64>,
}

/// Per-gene cosine similarity of tile sums on a `k × k` grid over the
/// joint bounding box of both maps (first two coordinate axes).
pub fn grid_map_similarity<'a>(a: GeneMap<'a>, b: GeneMap<'a>, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(DotError::invalid("grid size must be at least 1"));
    }
    if a.values.ncols() != b.values.ncols() {
        return Err(DotError::dim("maps have different gene counts"));
    }
    for m in [a, b] {
        if m.coordinates.ncols() < 2 || m.coordinates.nrows() != m.values.nrows() {
            return Err(DotError::dim("each location needs x and y coordinates"));
        }
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for m in [a, b] {
        for row in m.coordinates.rows() {
            for d in 0..2 {
                lo[d] = lo[d].min(row[d]);
                hi[d] = hi[d].max(row[d]);
            }
        }
    }
    if !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(DotError::Degenerate("bounding box has zero area".into()));
    }
    let tile = |v: f64, d: usize| -> usize {
        let t = ((v - lo[d]) / (hi[d] - lo[d]) * k as f64).floor() as usize;
        t.min(k - 1)
    };
    let sums = |m: &GeneMap| -> Array2<f64> {
        let mut out = Array2::zeros((k * k, m.values.ncols()));
        for (row, vals) in m.coordinates.rows().into_iter().zip(m.values.rows()) {
            let cell = tile(row[1], 1) * k + tile(row[0], 0);
            out.row_mut(cell).scaled_add(1.0, &vals);
        }
        out
    };
    let sa = sums(&a);
    let sb = sums(&b);
    sa.axis_iter(Axis(1))
        .zip(sb.axis_iter(Axis(1)))
        .map(|(x, y)| cosine_similarity(&x.to_vec(), &y.to_vec()))
        .collect()
}
