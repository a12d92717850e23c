//! Synthetic benchmark instances: grid pooling, multiplicative noise, gene
//! masking and planted mixtures.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::distance::{cosine_from_parts, dot, norm};
use crate::error::{DotError, Result};
use crate::preprocess::CellTable;
use crate::types::{ReferenceProfiles, SpatialDataset};

/// Multiplicative noise `1 + β` with `β ~ U(-phi, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub phi: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.phi) {
            return Err(DotError::invalid(format!("noise level phi = {} must lie in [0, 1)", self.phi)));
        }
        Ok(())
    }
}

pub fn inject_noise(x: ArrayView2<f64>, spec: NoiseSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(noisy(x, spec.phi, &mut rng))
}

fn noisy(x: ArrayView2<f64>, phi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if phi == 0.0 {
        return x.to_owned();
    }
    // Row-major draw order keeps the stream independent of memory layout.
    let mut out = Array2::zeros(x.dim());
    for ((r, c), v) in out.indexed_iter_mut() {
        *v = x[[r, c]] * (1.0 + rng.random_range(-phi..=phi));
    }
    out
}

/// Keeps the first `count` genes.
pub fn mask_genes(x: ArrayView2<f64>, genes: &[String], count: usize) -> Result<(Array2<f64>, Vec<String>)> {
    if genes.len() != x.ncols() {
        return Err(DotError::dim(format!("{} gene ids for {} columns", genes.len(), x.ncols())));
    }
    if count == 0 || count > genes.len() {
        return Err(DotError::invalid(format!(
            "cannot keep {count} of {} genes",
            genes.len()
        )));
    }
    Ok((x.slice(ndarray::s![.., ..count]).to_owned(), genes[..count].to_vec()))
}

/// Cells aggregated into square tiles.
#[derive(Debug, Clone)]
pub struct PooledDataset {
    /// Tiles × genes, sums of member expressions.
    pub expressions: Array2<f64>,
    /// Tile centers.
    pub coordinates: Array2<f64>,
    /// Labels × tiles, fraction of member cells per label.
    pub truth: Array2<f64>,
    pub cell_counts: Vec<usize>,
    pub tile_ids: Vec<String>,
}

/// Bins cells into tiles of edge `tile_length` anchored at the bounding-box
/// minimum. Tiles are ordered by their grid index, last axis slowest.
pub fn pool_to_grid(
    expressions: ArrayView2<f64>,
    coordinates: ArrayView2<f64>,
    labels: &[usize],
    n_labels: usize,
    tile_length: f64,
) -> Result<PooledDataset> {
    if !(tile_length > 0.0 && tile_length.is_finite()) {
        return Err(DotError::invalid(format!("tile length {tile_length} must be positive")));
    }
    let n = expressions.nrows();
    if coordinates.nrows() != n || labels.len() != n {
        return Err(DotError::dim("expressions, coordinates and labels disagree on cell count"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_labels) {
        return Err(DotError::invalid(format!("label index {l} out of range")));
    }
    let dims = coordinates.ncols();
    let lo: Vec<f64> = (0..dims)
        .map(|d| coordinates.column(d).iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let mut tiles: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (cell, row) in coordinates.rows().into_iter().enumerate() {
        let mut key: Vec<i64> = (0..dims)
            .map(|d| ((row[d] - lo[d]) / tile_length).floor() as i64)
            .collect();
        key.reverse();
        tiles.entry(key).or_default().push(cell);
    }

    let t = tiles.len();
    let mut out = PooledDataset {
        expressions: Array2::zeros((t, expressions.ncols())),
        coordinates: Array2::zeros((t, dims)),
        truth: Array2::zeros((n_labels, t)),
        cell_counts: Vec::with_capacity(t),
        tile_ids: Vec::with_capacity(t),
    };
    for (k, (key, cells)) in tiles.iter().enumerate() {
        for &c in cells {
            out.expressions.row_mut(k).scaled_add(1.0, &expressions.row(c));
            out.truth[[labels[c], k]] += 1.0;
        }
        let size = cells.len() as f64;
        out.truth.column_mut(k).mapv_inplace(|v| v / size);
        for d in 0..dims {
            out.coordinates[[k, d]] = lo[d] + (key[dims - 1 - d] as f64 + 0.5) * tile_length;
        }
        out.cell_counts.push(cells.len());
        let name: Vec<String> = key.iter().rev().map(|v| v.to_string()).collect();
        out.tile_ids.push(format!("tile_{}", name.join("_")));
    }
    Ok(out)
}

/// Parameters of a planted mixture instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub populations: usize,
    pub genes: usize,
    pub spots: usize,
    pub min_cells_per_spot: usize,
    pub max_cells_per_spot: usize,
    /// Upper bound on the cosine similarity of any two centroids.
    pub separation: f64,
    pub noise: NoiseSpec,
    /// Reference cells drawn per population.
    pub reference_cells: usize,
    /// Distance between neighboring spots on the layout grid.
    pub spacing: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            populations: 10,
            genes: 100,
            spots: 1000,
            min_cells_per_spot: 1,
            max_cells_per_spot: 1,
            separation: 0.5,
            noise: NoiseSpec { phi: 0.0, seed: 0 },
            reference_cells: 20,
            spacing: 10.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.populations == 0 || self.genes == 0 || self.spots == 0 {
            return Err(DotError::invalid("populations, genes and spots must be positive"));
        }
        if self.min_cells_per_spot == 0 || self.min_cells_per_spot > self.max_cells_per_spot {
            return Err(DotError::invalid("cells per spot range must satisfy 1 <= min <= max"));
        }
        if !(self.separation > 0.0 && self.separation < 1.0) {
            return Err(DotError::invalid("separation must lie in (0, 1)"));
        }
        if self.reference_cells == 0 {
            return Err(DotError::invalid("need at least one reference cell per population"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(DotError::invalid("spacing must be positive"));
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub reference: ReferenceProfiles,
    /// Noisy copies of the centroids, labelled by population.
    pub cells: CellTable,
    pub spatial: SpatialDataset,
    pub spot_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    /// Populations × spots, fraction of each spot's cells per population.
    pub truth: Array2<f64>,
    pub cell_counts: Vec<usize>,
}

/// Attempts allowed per centroid before giving up on the separation bound.
pub const CENTROID_ATTEMPTS: usize = 10_000;
const ACTIVE_GENE_FRACTION: f64 = 0.3;

fn draw_centroid(genes: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..genes)
            .map(|_| {
                let active = rng.random_bool(ACTIVE_GENE_FRACTION);
                let x: f64 = Exp1.sample(rng);
                if active {
                    x
                } else {
                    0.0
                }
            })
            .collect();
        if v.iter().any(|&x| x > 0.0) {
            return v;
        }
    }
}

fn planted_centroids(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(spec.populations);
    while rows.len() < spec.populations {
        let mut accepted = false;
        for _ in 0..CENTROID_ATTEMPTS {
            let v = draw_centroid(spec.genes, rng);
            let nv = norm(&v);
            let ok = rows
                .iter()
                .all(|r| cosine_from_parts(dot(r, &v), norm(r), nv) <= spec.separation);
            if ok {
                rows.push(v);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(DotError::invalid(format!(
                "could not place {} centroids with pairwise cosine <= {} after {CENTROID_ATTEMPTS} attempts; \
                 loosen the separation or add genes",
                spec.populations, spec.separation
            )));
        }
    }
    Ok(Array2::from_shape_fn((spec.populations, spec.genes), |(c, g)| rows[c][g]))
}

/// Planted instance: sparse well-separated centroids, spots made of
/// `min..=max` cells with uniformly random composition, multiplicative noise
/// on the spot expressions.
pub fn synth_planted(spec: &SynthSpec) -> Result<PlantedInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids = planted_centroids(spec, &mut rng)?;
    let (c_count, g_count) = centroids.dim();

    let mut clean = Array2::zeros((spec.spots, g_count));
    let mut truth = Array2::zeros((c_count, spec.spots));
    let mut cell_counts = Vec::with_capacity(spec.spots);
    for i in 0..spec.spots {
        let k = rng.random_range(spec.min_cells_per_spot..=spec.max_cells_per_spot);
        // Flat Dirichlet via normalized exponentials.
        let weights: Vec<f64> = (0..c_count).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        for _ in 0..k {
            let mut u = rng.random::<f64>() * total;
            let mut pick = c_count - 1;
            for (c, &w) in weights.iter().enumerate() {
                if u < w {
                    pick = c;
                    break;
                }
                u -= w;
            }
            truth[[pick, i]] += 1.0;
            clean.row_mut(i).scaled_add(1.0, &centroids.row(pick));
        }
        truth.column_mut(i).mapv_inplace(|v| v / k as f64);
        cell_counts.push(k);
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.noise.seed);
    let expressions = noisy(clean.view(), spec.noise.phi, &mut noise_rng);

    let side = (spec.spots as f64).sqrt().ceil() as usize;
    let coordinates = Array2::from_shape_fn((spec.spots, 2), |(i, d)| {
        let idx = if d == 0 { i % side } else { i / side };
        idx as f64 * spec.spacing
    });

    let labels: Vec<String> = (0..c_count).map(|c| format!("pop{c}")).collect();
    let gene_ids: Vec<String> = (0..g_count).map(|g| format!("g{g}")).collect();
    let spot_ids: Vec<String> = (0..spec.spots).map(|i| format!("spot{i}")).collect();

    let n_cells = c_count * spec.reference_cells;
    let member = |k: usize| k / spec.reference_cells;
    let mut cell_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let cell_template = Array2::from_shape_fn((n_cells, g_count), |(k, g)| centroids[[member(k), g]]);
    let cell_expr = noisy(cell_template.view(), spec.noise.phi, &mut cell_rng);
    let cells = CellTable::new(
        cell_expr,
        Some((0..n_cells).map(|k| labels[member(k)].clone()).collect()),
        (0..n_cells).map(|k| format!("cell{k}")).collect(),
        gene_ids.clone(),
    )?;

    Ok(PlantedInstance {
        reference: ReferenceProfiles::from_populations(centroids, labels)?,
        cells,
        spatial: SpatialDataset::all_shared(expressions, coordinates)?,
        spot_ids,
        gene_ids,
        truth,
        cell_counts,
    })
}

/// Composition that puts equal mass on every category.
pub fn uniform_composition(categories: usize, spots: usize) -> Array2<f64> {
    Array2::from_elem((categories, spots), 1.0 / categories as f64)
}

/// Per-population cell totals implied by a composition and spot sizes.
pub fn population_totals(truth: ArrayView2<f64>, cell_counts: &[usize]) -> Array1<f64> {
    let mut out = Array1::zeros(truth.nrows());
    for (col, &k) in truth.columns().into_iter().zip(cell_counts) {
        out.scaled_add(k as f64, &col);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use dot_testkit::{cosine, solve_linear_system};
    use ndarray::array;

    #[test]
    fn noise_cases() {
        let x = array![[1.0, 2.0], [0.0, 4.0]];
        assert_eq!(inject_noise(x.view(), NoiseSpec { phi: 0.0, seed: 3 }).unwrap(), x);
        let z = Array2::zeros((3, 3));
        assert_eq!(inject_noise(z.view(), NoiseSpec { phi: 0.5, seed: 3 }).unwrap(), z);
        assert!(inject_noise(x.view(), NoiseSpec { phi: 1.0, seed: 3 }).is_err());

        let big = Array2::from_shape_fn((50, 40), |(i, j)| 1.0 + (i * j) as f64);
        let spec = NoiseSpec { phi: 0.25, seed: 8 };
        let a = inject_noise(big.view(), spec).unwrap();
        let b = inject_noise(big.view(), spec).unwrap();
        assert_eq!(a, b);
        for (v, o) in a.iter().zip(big.iter()) {
            let ratio = v / o;
            assert!((0.75..=1.25).contains(&ratio));
        }
    }

    #[test]
    fn noise_is_unbiased() {
        let ones = Array2::from_elem((100, 200), 1.0);
        let phi = 0.5;
        let out = inject_noise(ones.view(), NoiseSpec { phi, seed: 1 }).unwrap();
        let n = out.len() as f64;
        let mean = out.sum() / n;
        // Variance of U(-phi, phi) is phi^2 / 3.
        let se = (phi * phi / 3.0 / n).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean ratio {mean}");
    }

    #[test]
    fn masking() {
        let x = Array2::from_shape_fn((3, 254), |(i, j)| (i * 1000 + j) as f64);
        let genes: Vec<String> = (0..254).map(|g| format!("g{g}")).collect();
        let (full, names) = mask_genes(x.view(), &genes, 254).unwrap();
        assert_eq!(full, x);
        assert_eq!(names, genes);
        let (one, _) = mask_genes(x.view(), &genes, 1).unwrap();
        assert_eq!(one.dim(), (3, 1));
        let (fifty, names) = mask_genes(x.view(), &genes, 50).unwrap();
        for j in 0..50 {
            assert_eq!(fifty.column(j), x.column(j));
        }
        assert_eq!(names, genes[..50].to_vec());
        assert!(mask_genes(x.view(), &genes, 0).is_err());
        assert!(mask_genes(x.view(), &genes, 255).is_err());
    }

    #[test]
    fn pooling_small_cases() {
        let p = pool_to_grid(array![[1.0, 2.0]].view(), array![[5.0, 5.0]].view(), &[1], 2, 100.0).unwrap();
        assert_eq!(p.truth, array![[0.0], [1.0]]);
        assert_eq!(p.cell_counts, vec![1]);

        let expr = Array2::from_elem((4, 1), 1.0);
        let coords = array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        let p = pool_to_grid(expr.view(), coords.view(), &[0, 1, 0, 1], 2, 100.0).unwrap();
        assert_eq!(p.truth, array![[0.5], [0.5]]);
        assert_eq!(p.expressions, array![[4.0]]);
    }

    #[test]
    fn pooling_matches_binning_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 200;
        let coords = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..450.0));
        let expr = Array2::from_shape_fn((n, 3), |_| rng.random_range(0.0..5.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let p = pool_to_grid(expr.view(), coords.view(), &labels, 3, 100.0).unwrap();

        let min_x = coords.column(0).iter().copied().fold(f64::INFINITY, f64::min);
        let min_y = coords.column(1).iter().copied().fold(f64::INFINITY, f64::min);
        let mut oracle: BTreeMap<(i64, i64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for c in 0..n {
            let key = (
                ((coords[[c, 1]] - min_y) / 100.0).floor() as i64,
                ((coords[[c, 0]] - min_x) / 100.0).floor() as i64,
            );
            let e = oracle.entry(key).or_insert((vec![0.0; 3], vec![0.0; 3]));
            for g in 0..3 {
                e.0[g] += expr[[c, g]];
            }
            e.1[labels[c]] += 1.0;
        }
        assert_eq!(p.cell_counts.len(), oracle.len());
        for (k, ((ty, tx), (sum, counts))) in oracle.iter().enumerate() {
            let size: f64 = counts.iter().sum();
            assert_eq!(p.cell_counts[k] as f64, size);
            for g in 0..3 {
                assert_abs_diff_eq!(p.expressions[[k, g]], sum[g], epsilon = 1e-12);
                assert_abs_diff_eq!(p.truth[[g, k]], counts[g] / size, epsilon = 1e-15);
            }
            assert_abs_diff_eq!(p.coordinates[[k, 0]], min_x + (*tx as f64 + 0.5) * 100.0);
            assert_abs_diff_eq!(p.coordinates[[k, 1]], min_y + (*ty as f64 + 0.5) * 100.0);
        }
        for g in 0..3 {
            assert_abs_diff_eq!(p.expressions.column(g).sum(), expr.column(g).sum(), epsilon = 1e-9);
        }
    }

    #[test]
    fn single_cell_spots_equal_centroids() {
        let spec = SynthSpec { populations: 4, genes: 30, spots: 25, ..Default::default() };
        let inst = synth_planted(&spec).unwrap();
        let xr = inst.reference.centroids();
        for i in 0..25 {
            let c = (0..4).find(|&c| inst.truth[[c, i]] == 1.0).unwrap();
            assert_eq!(inst.spatial.expressions().row(i), xr.row(c));
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                assert!(cosine(&xr.row(a).to_vec(), &xr.row(b).to_vec()) <= 0.5);
            }
        }
    }

    #[test]
    fn loose_separation_is_deterministic() {
        let spec = SynthSpec { populations: 2, genes: 10, spots: 9, separation: 0.99, seed: 5, ..Default::default() };
        let a = synth_planted(&spec).unwrap();
        let b = synth_planted(&spec).unwrap();
        assert_eq!(a.spatial.expressions(), b.spatial.expressions());
        assert_eq!(a.truth, b.truth);
        let tight = SynthSpec { populations: 5, genes: 2, separation: 0.01, ..spec };
        assert!(synth_planted(&tight).is_err());
    }

    #[test]
    fn mixtures_are_recovered_by_least_squares() {
        let spec = SynthSpec {
            populations: 5,
            genes: 60,
            spots: 20,
            min_cells_per_spot: 3,
            max_cells_per_spot: 8,
            seed: 2,
            ..Default::default()
        };
        let inst = synth_planted(&spec).unwrap();
        let xr = inst.reference.centroids();
        let gram = xr.dot(&xr.t());
        for i in 0..20 {
            let rhs = xr.dot(&inst.spatial.expressions().row(i));
            let counts = solve_linear_system(&gram, &rhs.to_vec());
            let k = inst.cell_counts[i] as f64;
            for c in 0..5 {
                assert_abs_diff_eq!(counts[c] / k, inst.truth[[c, i]], epsilon = 1e-6);
            }
        }
    }
}
