//! Frank-Wolfe solver, initialization and automatic parameter selection.

use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{DotError, Result};
use crate::objective::{evaluate, EvalFlags, Problem, TermValues};
use crate::types::{AbundancePrior, ObjectiveWeights, SpatialPairSet, TransferMap};

/// Stopping rule and execution settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the gap falls to this fraction of the initial gap.
    pub gap_tolerance: f64,
    pub seed: u64,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            gap_tolerance: 1e-6,
            seed: 0,
            threads: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(DotError::invalid("max_iterations must be at least 1"));
        }
        if !(self.gap_tolerance > 0.0 && self.gap_tolerance.is_finite()) {
            return Err(DotError::invalid("gap tolerance must be positive"));
        }
        if self.threads == Some(0) {
            return Err(DotError::invalid("thread count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective_trajectory: Vec<f64>,
    pub gap_trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
    pub final_terms: TermValues,
    pub final_objective: f64,
    pub estimated_cells: Option<f64>,
    pub flags: EvalFlags,
}

/// Linear-minimization vertex: one category per spot at value 1 or `n_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub category: Vec<usize>,
    pub value: Vec<f64>,
}

impl Atom {
    pub fn to_dense(&self, n_categories: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n_categories, self.category.len()));
        for (i, (&c, &v)) in self.category.iter().zip(&self.value).enumerate() {
            out[[c, i]] = v;
        }
        out
    }
}

fn argmin_first(col: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, col[0]);
    for (c, &v) in col.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (c, v);
        }
    }
    best
}

/// Exact minimizer of `<V, gradient>` over the feasible region.
pub fn atom_solution(gradient: ArrayView2<f64>, bounds: ArrayView1<f64>) -> Atom {
    let picks: Vec<(usize, f64)> = Zip::from(gradient.columns())
        .and(bounds)
        .par_map_collect(|col, &n| {
            let (c, g) = argmin_first(col);
            (c, if g < 0.0 { n } else { 1.0 })
        })
        .to_vec();
    Atom {
        category: picks.iter().map(|p| p.0).collect(),
        value: picks.iter().map(|p| p.1).collect(),
    }
}

/// Frank-Wolfe gap `<Y - atom, gradient>`.
pub fn fw_gap(y: ArrayView2<f64>, atom: &Atom, gradient: ArrayView2<f64>) -> Result<f64> {
    if y.dim() != gradient.dim() || atom.category.len() != y.ncols() {
        return Err(DotError::dim("map, atom and gradient shapes differ"));
    }
    let per_spot: Vec<(f64, f64)> = Zip::from(y.columns())
        .and(gradient.columns())
        .and(&atom.category)
        .and(&atom.value)
        .par_map_collect(|yc, gc, &c, &v| {
            let inner = yc.dot(&gc);
            let scale = Zip::from(yc).and(gc).fold(0.0, |a, &p, &q| a + (p * q).abs());
            (inner - v * gc[c], scale + (v * gc[c]).abs())
        })
        .to_vec();
    let gap: f64 = per_spot.iter().map(|p| p.0).sum();
    let magnitude: f64 = per_spot.iter().map(|p| p.1).sum();
    if gap < -1e-9 * magnitude.max(1.0) {
        return Err(DotError::Internal(format!("negative Frank-Wolfe gap {gap}")));
    }
    Ok(gap)
}

/// Ridge regression of spot profiles on reference profiles with negative
/// entries set to zero, plus the implied total cell count.
pub fn ridge_estimate(reference: ArrayView2<f64>, spots: ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
    if reference.ncols() != spots.ncols() {
        return Err(DotError::dim("reference and spots have different gene counts"));
    }
    let gram = reference.dot(&reference.t());
    let rhs = reference.dot(&spots.t());
    let c = gram.nrows();
    let mut a = DMatrix::from_fn(c, c, |r, k| gram[[r, k]]);
    for d in 0..c {
        a[(d, d)] += 1.0;
    }
    let b = DMatrix::from_fn(c, rhs.ncols(), |r, k| rhs[[r, k]]);
    let chol = a
        .cholesky()
        .ok_or_else(|| DotError::Internal("ridge system is not positive definite".into()))?;
    let x = chol.solve(&b);
    let y0 = Array2::from_shape_fn(rhs.dim(), |(r, k)| x[(r, k)].max(0.0));
    let total = y0.sum();
    Ok((y0, total))
}

/// Rescales each column into `[1, n_i]`; zero columns become uniform with
/// total 1.
fn clamp_columns(mut y: Array2<f64>, bounds: ArrayView1<f64>) -> Array2<f64> {
    let n_cat = y.nrows() as f64;
    for (mut col, &n) in y.columns_mut().into_iter().zip(bounds) {
        let s = col.sum();
        if s <= 0.0 {
            col.fill(1.0 / n_cat);
        } else if s < 1.0 {
            col /= s;
        } else if s > n {
            col *= n / s;
        }
    }
    y
}

/// One-hot at `n_i` on the category with the closest centroid.
pub fn nearest_centroid_part(problem: &Problem) -> Array2<f64> {
    let cost = problem.linear_cost();
    let mut out = Array2::zeros(cost.dim());
    for (i, (col, &n)) in cost.columns().into_iter().zip(problem.spot_bounds()).enumerate() {
        out[[argmin_first(col).0, i]] = n;
    }
    out
}

/// Ridge estimate rescaled into the feasible box.
pub fn ridge_part(problem: &Problem) -> Result<Array2<f64>> {
    let (y0, _) = ridge_estimate(problem.reference().centroids().view(), problem.spots().view())?;
    Ok(clamp_columns(y0, problem.spot_bounds().view()))
}

/// Per-row share of the prior; a population's share is split evenly among
/// its rows. Uniform when the prior is disabled.
pub fn row_prior(problem: &Problem) -> Array1<f64> {
    let c = problem.n_categories();
    let prior = problem.prior();
    if !prior.enabled {
        return Array1::from_elem(c, 1.0 / c as f64);
    }
    let pop = problem.reference().population_of();
    let mut rows_per_pop = vec![0usize; prior.r.len()];
    for &p in pop {
        rows_per_pop[p] += 1;
    }
    let raw: Array1<f64> = pop.iter().map(|&p| prior.r[p] / rows_per_pop[p] as f64).collect();
    let s = raw.sum();
    if s > 0.0 {
        raw / s
    } else {
        Array1::from_elem(c, 1.0 / c as f64)
    }
}

/// Fill `n_i * share_c` from the prior.
pub fn prior_part(problem: &Problem) -> Array2<f64> {
    let share = row_prior(problem);
    let bounds = problem.spot_bounds();
    Array2::from_shape_fn((problem.n_categories(), problem.n_spots()), |(c, i)| bounds[i] * share[c])
}

pub const INITIAL_WEIGHTS: [f64; 3] = [0.4, 0.4, 0.2];

/// Convex combination of the nearest-centroid, ridge and prior solutions.
pub fn initial_solution(problem: &Problem) -> Result<TransferMap> {
    let a = nearest_centroid_part(problem);
    let b = ridge_part(problem)?;
    let c = prior_part(problem);
    let y = a * INITIAL_WEIGHTS[0] + b * INITIAL_WEIGHTS[1] + c * INITIAL_WEIGHTS[2];
    let y = clamp_columns(y, problem.spot_bounds().view());
    TransferMap::new(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    /// Every spot is a single cell.
    High,
    /// Spots hold several cells.
    Low,
}

/// User-fixed values that take precedence over the automatic choice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterOverrides {
    pub lambda_c: Option<f64>,
    pub lambda_g: Option<f64>,
    pub lambda_s: Option<f64>,
    pub lambda_a: Option<f64>,
    pub theta: Option<f64>,
    pub cells_per_spot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoParameters {
    pub weights: ObjectiveWeights,
    pub cells_per_spot: f64,
    pub prior: AbundancePrior,
}

/// Sizes of the instance that drive the automatic weights.
#[derive(Debug, Clone, Copy)]
pub struct ProblemSize {
    pub spots: usize,
    pub categories: usize,
    pub genes: usize,
}

/// Weights that make every term contribute on the same scale.
///
/// `estimated_cells` is only used at low resolution and when scaling the prior.
pub fn auto_parameters(
    size: ProblemSize,
    pairs: &SpatialPairSet,
    prior: &AbundancePrior,
    resolution: Resolution,
    estimated_cells: f64,
    overrides: &ParameterOverrides,
) -> Result<AutoParameters> {
    let spots = size.spots as f64;
    let (auto_n, auto_theta) = match resolution {
        Resolution::High => (1.0, 1.0),
        Resolution::Low => ((estimated_cells / spots).ceil().max(1.0), 0.0),
    };
    let n = overrides.cells_per_spot.unwrap_or(auto_n);
    if !(n >= 1.0 && n.is_finite()) {
        return Err(DotError::invalid(format!("cells per spot {n} must be at least 1")));
    }
    let lambda_s = if pairs.is_empty() {
        0.0
    } else {
        spots / (n * pairs.len() as f64)
    };
    let weights = ObjectiveWeights {
        lambda_c: overrides.lambda_c.unwrap_or(spots / size.categories as f64),
        lambda_g: overrides.lambda_g.unwrap_or(spots / size.genes as f64),
        lambda_s: overrides.lambda_s.unwrap_or(lambda_s),
        lambda_a: overrides
            .lambda_a
            .unwrap_or(if prior.enabled { 1.0 / n } else { 0.0 }),
        theta: overrides.theta.unwrap_or(auto_theta),
        sparsity_scale: None,
    };
    weights.validate()?;
    let prior = if prior.enabled {
        let target = match resolution {
            Resolution::High => spots,
            Resolution::Low => estimated_cells,
        };
        let s: f64 = prior.r.iter().sum();
        if target > 0.0 {
            AbundancePrior::new(prior.r.iter().map(|v| v * target / s).collect())?
        } else {
            prior.clone()
        }
    } else {
        prior.clone()
    };
    Ok(AutoParameters {
        weights,
        cells_per_spot: n,
        prior,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the ambient pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| DotError::Internal(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Minimizes the weighted objective from `initial` with step `2 / (2 + t)`.
pub fn frank_wolfe(
    problem: &Problem,
    weights: &ObjectiveWeights,
    initial: TransferMap,
    config: &SolverConfig,
) -> Result<(TransferMap, SolveReport)> {
    config.validate()?;
    with_threads(config.threads, || solve_loop(problem, weights, initial, config))?
}

fn solve_loop(
    problem: &Problem,
    weights: &ObjectiveWeights,
    initial: TransferMap,
    config: &SolverConfig,
) -> Result<(TransferMap, SolveReport)> {
    let start = Instant::now();
    let bounds = problem.spot_bounds().view();
    initial.check_feasible(bounds)?;
    let mut y = initial.into_values();
    let mut objectives = Vec::new();
    let mut gaps = Vec::new();
    let mut flags = EvalFlags::default();
    let mut t = 0usize;

    loop {
        let eval = evaluate(y.view(), problem, weights, true)?;
        let gradient = eval.gradient.expect("gradient requested");
        flags.degenerate_rows = flags.degenerate_rows.max(eval.flags.degenerate_rows);
        flags.degenerate_genes = flags.degenerate_genes.max(eval.flags.degenerate_genes);
        flags.clamped |= eval.flags.clamped;

        let atom = atom_solution(gradient.view(), bounds);
        let gap = fw_gap(y.view(), &atom, gradient.view())?;
        objectives.push(eval.objective);
        gaps.push(gap);

        let converged = gap <= config.gap_tolerance * gaps[0];
        if converged || t == config.max_iterations {
            let report = SolveReport {
                objective_trajectory: objectives,
                gap_trajectory: gaps,
                iterations: t,
                converged,
                wall_time_seconds: start.elapsed().as_secs_f64(),
                final_terms: eval.terms,
                final_objective: eval.objective,
                estimated_cells: None,
                flags,
            };
            return Ok((TransferMap::new(y.mapv(|v| v.max(0.0)))?, report));
        }

        let step = 2.0 / (2.0 + t as f64);
        y *= 1.0 - step;
        for (i, (&c, &v)) in atom.category.iter().zip(&atom.value).enumerate() {
            y[[c, i]] += step * v;
        }
        t += 1;
    }
}

/// Column sums of a map, e.g. the cell count estimate per spot.
pub fn spot_totals(y: ArrayView2<f64>) -> Array1<f64> {
    y.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::build_spatial_pairs;
    use crate::types::{ReferenceProfiles, SpatialDataset};
    use approx::assert_abs_diff_eq;
    use dot_testkit::{cosine, exhaustive_atom_oracle, solve_linear_system};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(xr: Array2<f64>, xs: Array2<f64>, prior: AbundancePrior, n: f64) -> Problem {
        let c = xr.nrows();
        let i = xs.nrows();
        let labels = (0..c).map(|k| format!("t{k}")).collect();
        Problem::new(
            ReferenceProfiles::from_populations(xr, labels).unwrap(),
            xs,
            SpatialPairSet::empty(),
            prior,
            Array1::from_elem(i, n),
        )
        .unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng, c: usize, i: usize, g: usize, n: f64) -> Problem {
        let xr = Array2::from_shape_fn((c, g), |_| rng.random_range(0.05..3.0));
        let xs = Array2::from_shape_fn((i, g), |_| rng.random_range(0.0..3.0));
        problem(xr, xs, AbundancePrior::disabled(), n)
    }

    #[test]
    fn atom_examples() {
        let a = atom_solution(array![[0.5], [-0.3]].view(), array![5.0].view());
        assert_eq!(a.to_dense(2), array![[0.0], [5.0]]);
        let a = atom_solution(array![[0.2], [0.7]].view(), array![5.0].view());
        assert_eq!(a.to_dense(2), array![[1.0], [0.0]]);
    }

    #[test]
    fn atom_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bounds_pool = [1.0, 2.0, 5.0, 10.0];
        let (c, i) = (4, 250);
        // Values on a coarse lattice so ties and zeros occur.
        let g = Array2::from_shape_fn((c, i), |_| rng.random_range(-3i32..=3) as f64 * 0.5);
        let bounds: Array1<f64> = (0..i).map(|_| bounds_pool[rng.random_range(0..4)]).collect();
        let atom = atom_solution(g.view(), bounds.view()).to_dense(c);
        for k in 0..i {
            let oracle = exhaustive_atom_oracle(&g.column(k).to_vec(), bounds[k]);
            assert_eq!(atom.column(k).to_vec(), oracle);
        }
    }

    #[test]
    fn gap_examples() {
        let g = array![[1.0, 2.0], [3.0, -1.0]];
        let y = array![[0.5, 0.5], [0.5, 0.5]];
        let atom = atom_solution(g.view(), array![1.0, 1.0].view());
        // <Y, g> = 0.5 * 5; atom picks (0, 0) value 1 and (1, 1) value 1.
        assert_abs_diff_eq!(fw_gap(y.view(), &atom, g.view()).unwrap(), 2.5 - (1.0 - 1.0));
        let dense = atom.to_dense(2);
        assert_eq!(fw_gap(dense.view(), &atom, g.view()).unwrap(), 0.0);
        let zero = Array2::zeros((2, 2));
        assert_eq!(fw_gap(y.view(), &atom, zero.view()).unwrap(), 0.0);
    }

    #[test]
    fn ridge_closed_forms() {
        let eye = Array2::<f64>::eye(3);
        let (y0, total) = ridge_estimate(eye.view(), eye.view()).unwrap();
        for ((r, k), v) in y0.indexed_iter() {
            assert_abs_diff_eq!(*v, if r == k { 0.5 } else { 0.0 }, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(total, 1.5, epsilon = 1e-14);

        let (y0, total) = ridge_estimate(eye.view(), Array2::zeros((4, 3)).view()).unwrap();
        assert!(y0.iter().all(|v| *v == 0.0));
        assert_eq!(total, 0.0);
    }

    #[test]
    fn ridge_matches_linear_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xr = Array2::from_shape_fn((5, 8), |_| rng.random_range(0.0..2.0));
        let xs = Array2::from_shape_fn((12, 8), |_| rng.random_range(0.0..2.0));
        let (y0, _) = ridge_estimate(xr.view(), xs.view()).unwrap();
        let mut a = xr.dot(&xr.t());
        for d in 0..5 {
            a[[d, d]] += 1.0;
        }
        let b = xr.dot(&xs.t());
        for i in 0..12 {
            let x = solve_linear_system(&a, &b.column(i).to_vec());
            for c in 0..5 {
                assert_abs_diff_eq!(y0[[c, i]], x[c].max(0.0), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn initial_parts() {
        let xr = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]];
        let xs = array![[0.0, 2.0, 0.0], [3.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let p = problem(xr, xs, AbundancePrior::disabled(), 1.0);
        assert_eq!(
            nearest_centroid_part(&p),
            array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
        );
        assert!(prior_part(&p).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn initial_solution_is_the_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(&mut rng, 4, 10, 6, 3.0)
            .with_prior(AbundancePrior::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        // Independent construction of the three parts.
        let xr = p.reference().centroids();
        let xs = p.spots();
        let mut a = Array2::<f64>::zeros((4, 10));
        for i in 0..10 {
            let d: Vec<f64> = (0..4)
                .map(|c| (1.0 - cosine(&xs.row(i).to_vec(), &xr.row(c).to_vec())).sqrt())
                .collect();
            let best = (0..4).fold(0, |b, c| if d[c] < d[b] { c } else { b });
            a[[best, i]] = 3.0;
        }
        let mut gram = xr.dot(&xr.t());
        for d in 0..4 {
            gram[[d, d]] += 1.0;
        }
        let rhs = xr.dot(&xs.t());
        let mut b = Array2::<f64>::zeros((4, 10));
        for i in 0..10 {
            let x = solve_linear_system(&gram, &rhs.column(i).to_vec());
            let col: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
            let s: f64 = col.iter().sum();
            let f = if s == 0.0 { 0.0 } else if s < 1.0 { 1.0 / s } else if s > 3.0 { 3.0 / s } else { 1.0 };
            for c in 0..4 {
                b[[c, i]] = if s == 0.0 { 0.25 } else { col[c] * f };
            }
        }
        let c = Array2::from_shape_fn((4, 10), |(k, _)| 3.0 * (k + 1) as f64 / 10.0);
        let expected = &a * 0.4 + &b * 0.4 + &c * 0.2;
        let got = initial_solution(&p).unwrap();
        for (x, e) in got.values().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(*x, *e, epsilon = 1e-10);
        }
        got.check_feasible(p.spot_bounds().view()).unwrap();
    }

    #[test]
    fn auto_parameter_formulas() {
        let pairs = SpatialPairSet {
            pairs: (0..80).map(|k| crate::types::SpatialPair { i: k, j: k + 1, w: 1.0 }).collect(),
            ..Default::default()
        };
        let size = ProblemSize { spots: 100, categories: 10, genes: 50 };
        let high = auto_parameters(size, &pairs, &AbundancePrior::disabled(), Resolution::High, 0.0, &Default::default()).unwrap();
        assert_eq!(high.weights.lambda_c, 10.0);
        assert_eq!(high.weights.lambda_g, 2.0);
        assert_eq!(high.weights.lambda_a, 0.0);
        assert_eq!(high.weights.theta, 1.0);
        assert_eq!(high.cells_per_spot, 1.0);

        let prior = AbundancePrior::new(vec![1.0; 10]).unwrap();
        let low = auto_parameters(size, &pairs, &prior, Resolution::Low, 500.0, &Default::default()).unwrap();
        assert_eq!(low.cells_per_spot, 5.0);
        assert_eq!(low.weights.lambda_a, 0.2);
        assert_eq!(low.weights.lambda_s, 0.25);
        assert_eq!(low.weights.theta, 0.0);
        assert_abs_diff_eq!(low.prior.r.iter().sum::<f64>(), 500.0, epsilon = 1e-9);

        let o = ParameterOverrides { theta: Some(0.5), lambda_c: Some(1.0), ..Default::default() };
        let over = auto_parameters(size, &SpatialPairSet::empty(), &prior, Resolution::Low, 10.0, &o).unwrap();
        assert_eq!(over.weights.theta, 0.5);
        assert_eq!(over.weights.lambda_c, 1.0);
        assert_eq!(over.weights.lambda_s, 0.0);
        assert_eq!(over.cells_per_spot, 1.0);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        // A single category: every feasible map with column sums fixed at
        // the atom value is the atom itself.
        let p = problem(array![[1.0, 2.0]], array![[1.0, 2.0], [2.0, 1.0]], AbundancePrior::disabled(), 1.0);
        let w = ObjectiveWeights { theta: 1.0, ..Default::default() };
        let y0 = TransferMap::new(array![[1.0, 1.0]]).unwrap();
        let (y, report) = frank_wolfe(&p, &w, y0, &SolverConfig::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.objective_trajectory.len(), 1);
        assert_eq!(report.gap_trajectory, vec![0.0]);
        assert_eq!(y.values(), &array![[1.0, 1.0]]);
    }

    #[test]
    fn linear_objective_reaches_nearest_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 3, 15, 5, 1.0);
        let w = ObjectiveWeights { theta: 1.0, ..Default::default() };
        let y0 = initial_solution(&p).unwrap();
        let cfg = SolverConfig { max_iterations: 2000, ..Default::default() };
        let (y, report) = frank_wolfe(&p, &w, y0, &cfg).unwrap();
        let target = nearest_centroid_part(&p);
        assert!(report.converged);
        for (a, b) in y.values().iter().zip(target.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-3);
        }
        for win in report.objective_trajectory.windows(2) {
            assert!(win[1] <= win[0] + 1e-12);
        }
    }

    #[test]
    fn solver_keeps_feasibility_and_is_thread_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xr = Array2::from_shape_fn((4, 10), |_| rng.random_range(0.05..3.0));
        let xs = Array2::from_shape_fn((30, 10), |_| rng.random_range(0.0..3.0));
        let coords = Array2::from_shape_fn((30, 2), |_| rng.random_range(0.0..10.0));
        let pairs = build_spatial_pairs(&SpatialDataset::all_shared(xs.clone(), coords).unwrap());
        let labels = (0..4).map(|k| format!("t{k}")).collect();
        let p = Problem::new(
            ReferenceProfiles::from_populations(xr, labels).unwrap(),
            xs,
            pairs,
            AbundancePrior::new(vec![1.0, 1.0, 2.0, 0.5]).unwrap(),
            Array1::from_elem(30, 4.0),
        )
        .unwrap();
        let w = ObjectiveWeights { lambda_c: 7.5, lambda_g: 3.0, lambda_s: 1.0, lambda_a: 0.25, theta: 0.3, sparsity_scale: None };
        let run = |threads| {
            let cfg = SolverConfig { max_iterations: 40, threads: Some(threads), ..Default::default() };
            frank_wolfe(&p, &w, initial_solution(&p).unwrap(), &cfg).unwrap()
        };
        let (y1, r1) = run(1);
        let (y4, r4) = run(4);
        assert_eq!(y1.values(), y4.values());
        assert_eq!(r1.objective_trajectory, r4.objective_trajectory);
        assert_eq!(r1.objective_trajectory.len(), r1.iterations + 1);
        for s in y1.col_sums() {
            assert!(s >= 1.0 - 1e-9 && s <= 4.0 + 1e-9);
        }
        assert!(r1.gap_trajectory.iter().all(|g| *g >= -1e-9));
        assert!(r1.final_objective <= r1.objective_trajectory[0]);
    }

    proptest! {
        #[test]
        fn atom_dominates_every_vertex(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = rng.random_range(1..6);
            let g: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = rng.random_range(1.0..8.0);
            let col = Array2::from_shape_vec((c, 1), g.clone()).unwrap();
            let atom = atom_solution(col.view(), array![n].view());
            let best = atom.value[0] * g[atom.category[0]];
            for (k, &gk) in g.iter().enumerate() {
                prop_assert!(best <= gk + 1e-15, "vertex e_{k}");
                prop_assert!(best <= n * gk + 1e-15, "vertex n e_{k}");
            }
        }
    }
}
