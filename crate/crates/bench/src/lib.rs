//! Instance builders shared by the benchmarks.

use dot_core::preprocess::build_spatial_pairs;
use dot_core::{AbundancePrior, Problem, ReferenceProfiles, SpatialDataset};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Profiles, spot expressions and square-grid coordinates. Each spot is a
/// noisy copy of one random profile.
fn grid_layout(spots: usize, categories: usize, genes: usize, seed: u64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = Array2::from_shape_fn((categories, genes), |_| {
        if rng.random_bool(0.3) {
            rng.random_range(0.0..5.0) + 0.01
        } else {
            0.01
        }
    });
    let mut expr = Array2::zeros((spots, genes));
    for i in 0..spots {
        let c = rng.random_range(0..categories);
        for g in 0..genes {
            expr[[i, g]] = profiles[[c, g]] * rng.random_range(0.5..1.5);
        }
    }
    let side = (spots as f64).sqrt().ceil() as usize;
    let coords = Array2::from_shape_fn((spots, 2), |(i, d)| if d == 0 { (i % side) as f64 } else { (i / side) as f64 });
    (profiles, expr, coords)
}

pub fn grid_instance(spots: usize, categories: usize, genes: usize, seed: u64) -> Problem {
    let (profiles, expr, coords) = grid_layout(spots, categories, genes, seed);
    let pairs = build_spatial_pairs(&SpatialDataset::all_shared(expr.clone(), coords).unwrap());
    let labels = (0..categories).map(|k| format!("c{k}")).collect();
    Problem::new(
        ReferenceProfiles::from_populations(profiles, labels).unwrap(),
        expr,
        pairs,
        AbundancePrior::new(vec![1.0; categories]).unwrap(),
        Array1::from_elem(spots, 1.0),
    )
    .unwrap()
}

pub fn grid_spatial(spots: usize, genes: usize, seed: u64) -> SpatialDataset {
    let (_, expr, coords) = grid_layout(spots, 10, genes, seed);
    SpatialDataset::all_shared(expr, coords).unwrap()
}
