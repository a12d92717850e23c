//! Domain types shared by every stage of the pipeline.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{DotError, Result};

/// Tolerance used for feasibility and cached-sum checks.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Shared genes (used by the expression terms) and the genes only measured
/// in the spatial data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneAxis {
    shared: Vec<String>,
    spatial_only: Vec<String>,
}

impl GeneAxis {
    pub fn new(shared: Vec<String>, spatial_only: Vec<String>) -> Result<Self> {
        if shared.is_empty() {
            return Err(DotError::NoSharedGenes);
        }
        let mut seen = HashSet::new();
        for g in shared.iter().chain(&spatial_only) {
            if !seen.insert(g.as_str()) {
                return Err(DotError::invalid(format!("gene `{g}` listed twice")));
            }
        }
        Ok(Self { shared, spatial_only })
    }

    pub fn shared(&self) -> &[String] {
        &self.shared
    }

    pub fn spatial_only(&self) -> &[String] {
        &self.spatial_only
    }
}

/// Reference centroids `X^R` (rows are sub-clusters or populations) and the
/// mapping from each row to its population.
#[derive(Debug, Clone)]
pub struct ReferenceProfiles {
    centroids: Array2<f64>,
    row_labels: Vec<String>,
    population_of: Vec<usize>,
    populations: Vec<String>,
    row_norms: Array1<f64>,
}

impl ReferenceProfiles {
    /// Builds profiles where every row is its own population.
    pub fn from_populations(centroids: Array2<f64>, labels: Vec<String>) -> Result<Self> {
        let n = centroids.nrows();
        Self::new(centroids, labels.clone(), (0..n).collect(), labels)
    }

    pub fn new(
        centroids: Array2<f64>,
        row_labels: Vec<String>,
        population_of: Vec<usize>,
        populations: Vec<String>,
    ) -> Result<Self> {
        let rows = centroids.nrows();
        if rows == 0 || centroids.ncols() == 0 {
            return Err(DotError::invalid("reference profiles are empty"));
        }
        if row_labels.len() != rows || population_of.len() != rows {
            return Err(DotError::dim(format!(
                "{rows} centroid rows but {} labels and {} population indices",
                row_labels.len(),
                population_of.len()
            )));
        }
        if let Some(&p) = population_of.iter().find(|&&p| p >= populations.len()) {
            return Err(DotError::invalid(format!("population index {p} out of range")));
        }
        if centroids.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DotError::invalid("reference centroids must be finite and non-negative"));
        }
        let row_norms: Array1<f64> = centroids
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .collect();
        if let Some(c) = row_norms.iter().position(|&n| n == 0.0) {
            return Err(DotError::Degenerate(format!(
                "reference row `{}` is entirely zero",
                row_labels[c]
            )));
        }
        Ok(Self {
            centroids,
            row_labels,
            population_of,
            populations,
            row_norms,
        })
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn population_of(&self) -> &[usize] {
        &self.population_of
    }

    pub fn populations(&self) -> &[String] {
        &self.populations
    }

    pub fn row_norms(&self) -> &Array1<f64> {
        &self.row_norms
    }

    pub fn n_rows(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.centroids.ncols()
    }

    /// Keeps only the listed gene columns.
    pub fn select_genes(&self, columns: &[usize]) -> Result<Self> {
        Self::new(
            self.centroids.select(Axis(1), columns),
            self.row_labels.clone(),
            self.population_of.clone(),
            self.populations.clone(),
        )
    }
}

/// Spot expressions `X^S` over the full spatial gene set, coordinates, and
/// the positions of the shared genes among the spatial columns.
#[derive(Debug, Clone)]
pub struct SpatialDataset {
    expressions: Array2<f64>,
    coordinates: Array2<f64>,
    shared_columns: Vec<usize>,
}

impl SpatialDataset {
    pub fn new(
        expressions: Array2<f64>,
        coordinates: Array2<f64>,
        shared_columns: Vec<usize>,
    ) -> Result<Self> {
        if expressions.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DotError::invalid("spatial expressions must be finite and non-negative"));
        }
        if coordinates.nrows() != expressions.nrows() {
            return Err(DotError::dim(format!(
                "{} spots but {} coordinate rows",
                expressions.nrows(),
                coordinates.nrows()
            )));
        }
        if !(1..=3).contains(&coordinates.ncols()) && expressions.nrows() > 0 {
            return Err(DotError::invalid("coordinates must have 1 to 3 dimensions"));
        }
        if coordinates.iter().any(|v| !v.is_finite()) {
            return Err(DotError::invalid("coordinates must be finite"));
        }
        if shared_columns.is_empty() {
            return Err(DotError::NoSharedGenes);
        }
        if let Some(&c) = shared_columns.iter().find(|&&c| c >= expressions.ncols()) {
            return Err(DotError::dim(format!("shared column {c} out of range")));
        }
        Ok(Self {
            expressions,
            coordinates,
            shared_columns,
        })
    }

    /// All columns are shared.
    pub fn all_shared(expressions: Array2<f64>, coordinates: Array2<f64>) -> Result<Self> {
        let cols = (0..expressions.ncols()).collect();
        Self::new(expressions, coordinates, cols)
    }

    pub fn expressions(&self) -> &Array2<f64> {
        &self.expressions
    }

    pub fn coordinates(&self) -> &Array2<f64> {
        &self.coordinates
    }

    pub fn shared_columns(&self) -> &[usize] {
        &self.shared_columns
    }

    pub fn n_spots(&self) -> usize {
        self.expressions.nrows()
    }

    /// `X^S` restricted to the shared genes, in shared-gene order.
    pub fn shared_expressions(&self) -> Array2<f64> {
        self.expressions.select(Axis(1), &self.shared_columns)
    }

    /// Multiplies every expression value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            expressions: &self.expressions * factor,
            coordinates: self.coordinates.clone(),
            shared_columns: self.shared_columns.clone(),
        }
    }
}

/// The decision matrix `Y` (categories x spots).
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMap {
    values: Array2<f64>,
}

impl TransferMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DotError::invalid("transfer map entries must be finite and non-negative"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn n_categories(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_spots(&self) -> usize {
        self.values.ncols()
    }

    /// Abundance `rho_c` of each category across all spots.
    pub fn row_sums(&self) -> Array1<f64> {
        self.values.sum_axis(Axis(1))
    }

    /// Size of each spot.
    pub fn col_sums(&self) -> Array1<f64> {
        self.values.sum_axis(Axis(0))
    }

    /// Checks `1 <= sum_c Y[c, i] <= n_i` for every spot.
    pub fn check_feasible(&self, bounds: ArrayView1<f64>) -> Result<()> {
        if bounds.len() != self.n_spots() {
            return Err(DotError::dim(format!(
                "{} spot bounds for {} spots",
                bounds.len(),
                self.n_spots()
            )));
        }
        for (i, (s, &n)) in self.col_sums().iter().zip(bounds).enumerate() {
            if *s < 1.0 - FEASIBILITY_TOL || *s > n + FEASIBILITY_TOL {
                return Err(DotError::Internal(format!(
                    "spot {i} has size {s}, outside [1, {n}]"
                )));
            }
        }
        Ok(())
    }

    /// Column-normalized copy; zero columns stay zero.
    pub fn normalized_columns(&self) -> Array2<f64> {
        normalize_columns(&self.values)
    }
}

pub(crate) fn normalize_columns(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut col in out.columns_mut() {
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        }
    }
    out
}

/// Objective weights and the sparsity blend of the spot term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda_c: f64,
    pub lambda_g: f64,
    pub lambda_s: f64,
    pub lambda_a: f64,
    pub theta: f64,
    /// Per-spot size `n̄_i` dividing the linear part of the spot term.
    /// `None` uses the spot upper bounds of the problem.
    pub sparsity_scale: Option<Vec<f64>>,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda_c: 0.0,
            lambda_g: 0.0,
            lambda_s: 0.0,
            lambda_a: 0.0,
            theta: 0.0,
            sparsity_scale: None,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(DotError::invalid(format!("theta = {} is outside [0, 1]", self.theta)));
        }
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_g", self.lambda_g),
            ("lambda_s", self.lambda_s),
            ("lambda_a", self.lambda_a),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DotError::invalid(format!("{name} = {v} must be non-negative")));
            }
        }
        if let Some(s) = &self.sparsity_scale {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(DotError::invalid("sparsity scale must be positive"));
            }
        }
        Ok(())
    }
}

/// Expected abundance of each population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbundancePrior {
    pub r: Vec<f64>,
    pub enabled: bool,
}

impl AbundancePrior {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DotError::invalid("prior abundances must be non-negative"));
        }
        if !(r.iter().sum::<f64>() > 0.0) {
            return Err(DotError::Degenerate("prior abundances sum to zero".into()));
        }
        Ok(Self { r, enabled: true })
    }

    pub fn disabled() -> Self {
        Self {
            r: Vec::new(),
            enabled: false,
        }
    }
}

/// One adjacent, similar pair of spots with its cosine-similarity weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialPair {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Pairs of spots whose compositions are encouraged to agree, with the
/// distance threshold and similarity cutoff that selected them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatialPairSet {
    pub pairs: Vec<SpatialPair>,
    pub distance_threshold: f64,
    pub similarity_cutoff: f64,
}

impl SpatialPairSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub(crate) fn validate(&self, n_spots: usize) -> Result<()> {
        for p in &self.pairs {
            if p.i >= p.j || p.j >= n_spots {
                return Err(DotError::invalid(format!(
                    "spatial pair ({}, {}) is not an ordered pair of valid spots",
                    p.i, p.j
                )));
            }
            if !(p.w.is_finite() && p.w >= 0.0) {
                return Err(DotError::invalid("spatial pair weights must be non-negative"));
            }
        }
        Ok(())
    }
}
