//! Spatial neighborhoods: distance threshold, similarity cutoff and the pair
//! set used by the spatial term.

use std::collections::HashMap;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

use crate::distance::cosine_from_parts;
use crate::types::{SpatialDataset, SpatialPair, SpatialPairSet};

/// Number of nearest spots whose distances feed the threshold.
pub const NEIGHBOR_COUNT: usize = 8;
/// Percentile of the nearest-neighbor distances used as threshold.
pub const THRESHOLD_PERCENTILE: f64 = 90.0;
/// Lower bound on the similarity cutoff.
pub const MIN_SIMILARITY_CUTOFF: f64 = 0.6;

type CellKey = [i64; 3];

/// Uniform grid of square buckets over the spot coordinates.
struct GridIndex<'a> {
    coords: ArrayView2<'a, f64>,
    origin: [f64; 3],
    cell: f64,
    buckets: HashMap<CellKey, Vec<usize>>,
    lo: CellKey,
    hi: CellKey,
}

impl<'a> GridIndex<'a> {
    fn new(coords: ArrayView2<'a, f64>, cell: f64) -> Self {
        let dims = coords.ncols();
        let mut origin = [0.0; 3];
        for (d, o) in origin.iter_mut().enumerate().take(dims) {
            *o = coords.column(d).iter().copied().fold(f64::INFINITY, f64::min);
        }
        let cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        let mut index = Self {
            coords,
            origin,
            cell,
            buckets: HashMap::new(),
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        };
        for i in 0..coords.nrows() {
            let key = index.key(i);
            for d in 0..3 {
                index.lo[d] = index.lo[d].min(key[d]);
                index.hi[d] = index.hi[d].max(key[d]);
            }
            index.buckets.entry(key).or_default().push(i);
        }
        index
    }

    fn key(&self, i: usize) -> CellKey {
        let mut k = [0i64; 3];
        for (d, kd) in k.iter_mut().enumerate().take(self.coords.ncols()) {
            *kd = ((self.coords[[i, d]] - self.origin[d]) / self.cell).floor() as i64;
        }
        k
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        let a = self.coords.row(i);
        let b = self.coords.row(j);
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    /// Visits every point in cells at Chebyshev distance exactly `ring` from `center`.
    fn for_ring(&self, center: CellKey, ring: i64, mut f: impl FnMut(usize)) {
        let dims = self.coords.ncols();
        let span = |d: usize| if d < dims { ring } else { 0 };
        for dx in -span(0)..=span(0) {
            for dy in -span(1)..=span(1) {
                for dz in -span(2)..=span(2) {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if let Some(members) = self.buckets.get(&key) {
                        members.iter().for_each(|&j| f(j));
                    }
                }
            }
        }
    }

    fn max_ring(&self) -> i64 {
        (0..3).map(|d| self.hi[d] - self.lo[d]).max().unwrap_or(0)
    }

    /// Distances from spot `i` to its `k` nearest other spots, ascending.
    fn knn_distances(&self, i: usize, k: usize) -> Vec<f64> {
        let center = self.key(i);
        let mut found: Vec<f64> = Vec::new();
        let max_ring = self.max_ring();
        let mut ring = 0;
        loop {
            self.for_ring(center, ring, |j| {
                if j != i {
                    found.push(self.dist(i, j));
                }
            });
            found.sort_by(f64::total_cmp);
            found.truncate(k);
            // Points in later rings are at least `ring * cell` away.
            let done = found.len() == k && found[k - 1] <= ring as f64 * self.cell;
            if done || ring > max_ring {
                return found;
            }
            ring += 1;
        }
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

/// 90th percentile of each spot's distances to its 8 nearest other spots.
///
/// With fewer than 9 spots every other spot is used instead.
pub fn neighbor_distance_threshold(coordinates: ArrayView2<f64>) -> f64 {
    let n = coordinates.nrows();
    if n < 2 {
        return 0.0;
    }
    let k = if n < NEIGHBOR_COUNT + 1 {
        log::warn!("only {n} spots; using all pairwise distances for the neighbor threshold");
        n - 1
    } else {
        NEIGHBOR_COUNT
    };
    let index = GridIndex::new(coordinates, bucket_size(coordinates));
    let mut distances: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| index.knn_distances(i, k))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    percentile(&mut distances, THRESHOLD_PERCENTILE)
}

/// Bucket edge giving roughly two spots per bucket over the axes that
/// actually vary, and never more than `n` buckets along the widest axis.
fn bucket_size(coords: ArrayView2<f64>) -> f64 {
    let n = coords.nrows() as f64;
    let (lo, hi) = bounding_extent(coords);
    let extent: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
    let widest = extent.iter().copied().fold(0.0, f64::max);
    if widest <= 0.0 {
        return 1.0;
    }
    let varying: Vec<f64> = extent.into_iter().filter(|&e| e > widest * 1e-9).collect();
    let volume: f64 = varying.iter().product();
    let cell = (2.0 * volume / n).powf(1.0 / varying.len() as f64);
    cell.max(widest / n)
}

fn bounding_extent(coords: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let lo = coords
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let hi = coords
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    (lo, hi)
}

/// All pairs `i < j` with `‖x_i - x_j‖ <= threshold`, weighted by the cosine
/// similarity of their full expression profiles. Sorted by `(i, j)`.
pub fn candidate_pairs(spatial: &SpatialDataset, threshold: f64) -> Vec<SpatialPair> {
    let coords = spatial.coordinates().view();
    let expr = spatial.expressions();
    let norms: Vec<f64> = expr.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let index = GridIndex::new(coords, threshold);
    (0..spatial.n_spots())
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            let center = index.key(i);
            for ring in 0..=1 {
                index.for_ring(center, ring, |j| {
                    if j > i && index.dist(i, j) <= threshold {
                        let w = cosine_from_parts(expr.row(i).dot(&expr.row(j)), norms[i], norms[j]);
                        out.push(SpatialPair { i, j, w });
                    }
                });
            }
            out.sort_by_key(|p| p.j);
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Largest useful similarity cutoff: `max(0.6, w*)` where `w*` is the
/// smallest candidate weight keeping at most `spot_count` pairs at or above
/// it. When the weights at the cut are tied, the cutoff moves up to the next
/// strictly larger weight.
pub fn similarity_cutoff(weights: &[f64], spot_count: usize) -> f64 {
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cut = if sorted.len() <= spot_count {
        f64::NEG_INFINITY
    } else if spot_count == 0 {
        sorted[0].next_up()
    } else {
        let v = sorted[spot_count - 1];
        if sorted[spot_count] < v {
            v
        } else {
            sorted[..spot_count]
                .iter()
                .rev()
                .copied()
                .find(|&w| w > v)
                .unwrap_or_else(|| v.next_up())
        }
    };
    cut.max(MIN_SIMILARITY_CUTOFF)
}

/// Optional overrides for the automatically chosen neighborhood parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairOptions {
    pub distance_threshold: Option<f64>,
    pub similarity_cutoff: Option<f64>,
}

pub fn build_spatial_pairs(spatial: &SpatialDataset) -> SpatialPairSet {
    build_spatial_pairs_with(spatial, PairOptions::default())
}

pub fn build_spatial_pairs_with(spatial: &SpatialDataset, options: PairOptions) -> SpatialPairSet {
    let threshold = options
        .distance_threshold
        .unwrap_or_else(|| neighbor_distance_threshold(spatial.coordinates().view()));
    let candidates = candidate_pairs(spatial, threshold);
    let cutoff = options.similarity_cutoff.unwrap_or_else(|| {
        let w: Vec<f64> = candidates.iter().map(|p| p.w).collect();
        similarity_cutoff(&w, spatial.n_spots())
    });
    SpatialPairSet {
        pairs: candidates.into_iter().filter(|p| p.w >= cutoff).collect(),
        distance_threshold: threshold,
        similarity_cutoff: cutoff,
    }
}
