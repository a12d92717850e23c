//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 100;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centers: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
}

/// Nearest center and squared distance; ties go to the lower index.
fn nearest(point: ArrayView1<f64>, centers: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, centers.row(0)))
        .collect();
    for j in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point coincides with a chosen center.
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(j).assign(&points.row(pick));
        for (d, p) in d2.iter_mut().zip(points.rows()) {
            *d = d.min(sq_dist(p, centers.row(j)));
        }
    }
    centers
}

/// Clusters the rows of `points` into `k` groups. `k` must not exceed the
/// number of points. Deterministic for a given seed.
pub fn kmeans(points: ArrayView2<f64>, k: usize, seed: u64) -> KMeansFit {
    let n = points.nrows();
    assert!(k >= 1 && k <= n, "k = {k} for {n} points");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let nearest_all: Vec<(usize, f64)> = Zip::from(points.rows())
            .par_map_collect(|p| nearest(p, centers.view()))
            .to_vec();
        inertia = nearest_all.iter().map(|x| x.1).sum();
        for (a, (k_best, _)) in assignments.iter_mut().zip(&nearest_all) {
            *a = *k_best;
        }

        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (p, &a) in points.rows().into_iter().zip(&assignments) {
            sums.row_mut(a).scaled_add(1.0, &p);
            counts[a] += 1;
        }
        for (j, &cnt) in counts.iter().enumerate() {
            // An empty cluster keeps its previous center.
            if cnt > 0 {
                let mean = &sums.row(j) / cnt as f64;
                centers.row_mut(j).assign(&mean);
            }
        }

        let change = (prev_inertia - inertia).abs();
        if change <= RELATIVE_TOLERANCE * inertia.max(f64::MIN_POSITIVE) || inertia == 0.0 {
            break;
        }
        prev_inertia = inertia;
    }

    KMeansFit {
        centers,
        assignments,
        inertia,
        iterations,
    }
}

/// Arithmetic mean of the listed rows, summed in the listed order.
pub(crate) fn mean_of_rows(points: ArrayView2<f64>, rows: &[usize]) -> ndarray::Array1<f64> {
    let mut acc = ndarray::Array1::zeros(points.ncols());
    for &r in rows {
        acc += &points.index_axis(Axis(0), r);
    }
    acc / rows.len() as f64
}
