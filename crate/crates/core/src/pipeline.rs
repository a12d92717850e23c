//! End-to-end fit: gene alignment, sub-clustering, spatial pairs, automatic
//! parameters, initialization, Frank-Wolfe and aggregation.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DotError, Result};
use crate::objective::Problem;
use crate::preprocess::{
    align_genes, aggregate_to_populations, build_spatial_pairs_with, cluster_unlabelled, subcluster_with_members,
    CellTable, PairOptions, Subclusters, DEFAULT_KAPPA, DEFAULT_MIN_FRACTION,
};
use crate::solver::{
    auto_parameters, frank_wolfe, initial_solution, ridge_estimate, with_threads, ParameterOverrides, ProblemSize,
    Resolution, SolveReport, SolverConfig,
};
use crate::types::{AbundancePrior, ObjectiveWeights, ReferenceProfiles, SpatialDataset, TransferMap};

/// What the reference categories are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Labelled populations, refined into sub-clusters.
    Categorical,
    /// Unlabelled reference; clusters carry the full expression profile to
    /// each spot.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub resolution: Resolution,
    pub features: FeatureMode,
    pub kappa: usize,
    pub min_fraction: f64,
    pub overrides: ParameterOverrides,
    pub distance_threshold: Option<f64>,
    pub similarity_cutoff: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            resolution: Resolution::High,
            features: FeatureMode::Categorical,
            kappa: DEFAULT_KAPPA,
            min_fraction: DEFAULT_MIN_FRACTION,
            overrides: ParameterOverrides::default(),
            distance_threshold: None,
            similarity_cutoff: None,
            solver: SolverConfig::default(),
        }
    }
}

/// Spatial measurements over their own gene set.
#[derive(Debug, Clone)]
pub struct SpatialInput {
    pub expressions: Array2<f64>,
    pub coordinates: Array2<f64>,
    pub spot_ids: Vec<String>,
    pub gene_ids: Vec<String>,
}

/// Every resolved quantity needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub config: FitConfig,
    pub weights: ObjectiveWeights,
    pub cells_per_spot: f64,
    pub estimated_cells: f64,
    pub distance_threshold: f64,
    pub similarity_cutoff: f64,
    pub pair_count: usize,
    pub shared_genes: usize,
    pub spots: usize,
    pub categories: usize,
    pub populations: usize,
    pub prior: Option<Vec<f64>>,
    pub seed: u64,
    pub solve: SolveReport,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Categories (sub-clusters) × spots.
    pub transfer: TransferMap,
    pub category_labels: Vec<String>,
    /// Populations × spots.
    pub populations: Array2<f64>,
    pub population_labels: Vec<String>,
    /// Spots × reference genes, only for continuous features.
    pub features: Option<Array2<f64>>,
    pub report: FitReport,
}

/// Drops rows that vanish on the shared genes.
fn restrict_to_shared(sub: Subclusters, columns: &[usize]) -> Result<(ReferenceProfiles, Vec<Vec<usize>>)> {
    let p = &sub.profiles;
    let reduced = p.centroids().select(Axis(1), columns);
    let keep: Vec<usize> = (0..p.n_rows())
        .filter(|&r| {
            let nonzero = reduced.row(r).iter().any(|&v| v > 0.0);
            if !nonzero {
                log::warn!("dropping `{}`: no expression on the shared genes", p.row_labels()[r]);
            }
            nonzero
        })
        .collect();
    if keep.is_empty() {
        return Err(DotError::Degenerate("no reference category expresses any shared gene".into()));
    }
    let profiles = ReferenceProfiles::new(
        reduced.select(Axis(0), &keep),
        keep.iter().map(|&r| p.row_labels()[r].clone()).collect(),
        keep.iter().map(|&r| p.population_of()[r]).collect(),
        p.populations().to_vec(),
    )?;
    let members = keep.iter().map(|&r| sub.members[r].clone()).collect();
    Ok((profiles, members))
}

/// Runs the full model. `prior` is indexed like the reference populations
/// in order of first appearance.
pub fn fit(cells: &CellTable, spatial: &SpatialInput, prior: Option<Vec<f64>>, config: &FitConfig) -> Result<FitResult> {
    config.solver.validate()?;
    with_threads(config.solver.threads, || fit_inner(cells, spatial, prior, config))?
}

fn fit_inner(cells: &CellTable, input: &SpatialInput, prior: Option<Vec<f64>>, config: &FitConfig) -> Result<FitResult> {
    let alignment = align_genes(cells.gene_ids(), &input.gene_ids)?;
    let seed = config.solver.seed;
    let clustered = match config.features {
        FeatureMode::Categorical => subcluster_with_members(cells, config.kappa, config.min_fraction, seed)?,
        FeatureMode::Continuous => {
            if prior.is_some() {
                return Err(DotError::invalid("an abundance prior needs labelled populations"));
            }
            cluster_unlabelled(cells, config.kappa, config.min_fraction, seed)?
        }
    };
    let (reference, members) = restrict_to_shared(clustered, &alignment.reference_columns)?;

    let spatial = SpatialDataset::new(
        input.expressions.clone(),
        input.coordinates.clone(),
        alignment.spatial_columns.clone(),
    )?;
    let pairs = build_spatial_pairs_with(
        &spatial,
        PairOptions {
            distance_threshold: config.distance_threshold,
            similarity_cutoff: config.similarity_cutoff,
        },
    );
    let spots = spatial.shared_expressions();
    let (_, estimated_cells) = ridge_estimate(reference.centroids().view(), spots.view())?;

    let prior = match prior {
        Some(r) => AbundancePrior::new(r)?,
        None => AbundancePrior::disabled(),
    };
    let size = ProblemSize {
        spots: spatial.n_spots(),
        categories: reference.n_rows(),
        genes: alignment.axis.shared().len(),
    };
    let params = auto_parameters(size, &pairs, &prior, config.resolution, estimated_cells, &config.overrides)?;
    log::info!(
        "{} spots, {} categories, {} shared genes, {} spatial pairs",
        size.spots,
        size.categories,
        size.genes,
        pairs.len()
    );

    let problem = Problem::new(
        reference,
        spots,
        pairs,
        params.prior.clone(),
        Array1::from_elem(size.spots, params.cells_per_spot),
    )?;
    let initial = initial_solution(&problem)?;
    let (transfer, mut solve) = frank_wolfe(&problem, &params.weights, initial, &config.solver)?;
    solve.estimated_cells = Some(estimated_cells);

    let reference = problem.reference();
    let populations = aggregate_to_populations(&transfer, reference.population_of(), reference.populations().len())?;
    let features = match config.features {
        FeatureMode::Categorical => None,
        FeatureMode::Continuous => {
            // Full-gene cluster profiles weighted by each spot's composition.
            let x = cells.expressions().view();
            let mut profiles = Array2::zeros((members.len(), x.ncols()));
            for (r, m) in members.iter().enumerate() {
                profiles.row_mut(r).assign(&crate::preprocess::kmeans::mean_of_rows(x, m));
            }
            Some(transfer.normalized_columns().t().dot(&profiles))
        }
    };

    let report = FitReport {
        config: config.clone(),
        weights: params.weights,
        cells_per_spot: params.cells_per_spot,
        estimated_cells,
        distance_threshold: problem.pairs().distance_threshold,
        similarity_cutoff: problem.pairs().similarity_cutoff,
        pair_count: problem.pairs().len(),
        shared_genes: size.genes,
        spots: size.spots,
        categories: size.categories,
        populations: reference.populations().len(),
        prior: params.prior.enabled.then(|| params.prior.r.clone()),
        seed,
        solve,
    };
    Ok(FitResult {
        category_labels: reference.row_labels().to_vec(),
        population_labels: reference.populations().to_vec(),
        transfer,
        populations,
        features,
        report,
    })
}
