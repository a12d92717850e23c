//! Reference centroids, sub-clustering, gene alignment and spatial pairs.

pub mod kmeans;
pub mod spatial;

use std::collections::{HashMap, HashSet};

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{DotError, Result};
use crate::types::{GeneAxis, ReferenceProfiles, TransferMap};

pub use spatial::{
    build_spatial_pairs, build_spatial_pairs_with, candidate_pairs, neighbor_distance_threshold,
    similarity_cutoff, PairOptions,
};

pub const DEFAULT_KAPPA: usize = 10;
pub const DEFAULT_MIN_FRACTION: f64 = 0.01;

/// Single-cell reference: expressions (cells × genes), optional per-cell
/// population labels, and identifiers.
#[derive(Debug, Clone)]
pub struct CellTable {
    expressions: Array2<f64>,
    labels: Option<Vec<String>>,
    cell_ids: Vec<String>,
    gene_ids: Vec<String>,
}

impl CellTable {
    pub fn new(
        expressions: Array2<f64>,
        labels: Option<Vec<String>>,
        cell_ids: Vec<String>,
        gene_ids: Vec<String>,
    ) -> Result<Self> {
        let (cells, genes) = expressions.dim();
        if cells == 0 || genes == 0 {
            return Err(DotError::invalid("cell table is empty"));
        }
        if cell_ids.len() != cells || gene_ids.len() != genes {
            return Err(DotError::dim(format!(
                "{cells}x{genes} expressions but {} cell ids and {} gene ids",
                cell_ids.len(),
                gene_ids.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != cells {
                return Err(DotError::dim(format!("{cells} cells but {} labels", l.len())));
            }
        }
        if expressions.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DotError::invalid("cell expressions must be finite and non-negative"));
        }
        if let Some(d) = first_duplicate(&cell_ids) {
            return Err(DotError::invalid(format!("duplicate cell id `{d}`")));
        }
        if let Some(d) = first_duplicate(&gene_ids) {
            return Err(DotError::invalid(format!("duplicate gene id `{d}`")));
        }
        Ok(Self {
            expressions,
            labels,
            cell_ids,
            gene_ids,
        })
    }

    /// Cells with generated ids `cell{k}` and genes `gene{g}`.
    pub fn unnamed(expressions: Array2<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let (cells, genes) = expressions.dim();
        Self::new(
            expressions,
            labels,
            (0..cells).map(|k| format!("cell{k}")).collect(),
            (0..genes).map(|g| format!("gene{g}")).collect(),
        )
    }

    pub fn expressions(&self) -> &Array2<f64> {
        &self.expressions
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn cell_ids(&self) -> &[String] {
        &self.cell_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn n_cells(&self) -> usize {
        self.expressions.nrows()
    }

    /// Population names in order of first appearance and each cell's index
    /// into that list.
    pub fn populations(&self) -> Result<(Vec<String>, Vec<usize>)> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| DotError::invalid("cell labels are required in categorical mode"))?;
        let mut names: Vec<String> = Vec::new();
        let mut lookup: HashMap<&str, usize> = HashMap::new();
        let mut index = Vec::with_capacity(labels.len());
        for l in labels {
            let next = names.len();
            let p = *lookup.entry(l.as_str()).or_insert(next);
            if p == next {
                names.push(l.clone());
            }
            index.push(p);
        }
        Ok((names, index))
    }
}

fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = HashSet::new();
    ids.iter().find(|id| !seen.insert(id.as_str())).map(String::as_str)
}

fn members_by_population(n_pop: usize, index: &[usize]) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); n_pop];
    for (cell, &p) in index.iter().enumerate() {
        members[p].push(cell);
    }
    members
}

/// One centroid per population: the mean of its cells.
pub fn compute_centroids(cells: &CellTable) -> Result<ReferenceProfiles> {
    let (names, index) = cells.populations()?;
    let members = members_by_population(names.len(), &index);
    let x = cells.expressions().view();
    let mut centroids = Array2::zeros((names.len(), x.ncols()));
    for (p, rows) in members.iter().enumerate() {
        centroids.row_mut(p).assign(&kmeans::mean_of_rows(x, rows));
    }
    ReferenceProfiles::from_populations(centroids, names)
}

/// Sub-clustered reference plus the cell indices behind every row.
#[derive(Debug, Clone)]
pub struct Subclusters {
    pub profiles: ReferenceProfiles,
    pub members: Vec<Vec<usize>>,
}

/// Splits every population into at most `kappa` k-means clusters and keeps
/// the clusters holding at least `min_fraction` of the population's cells.
pub fn subcluster(cells: &CellTable, kappa: usize, min_fraction: f64, seed: u64) -> Result<ReferenceProfiles> {
    subcluster_with_members(cells, kappa, min_fraction, seed).map(|s| s.profiles)
}

pub fn subcluster_with_members(
    cells: &CellTable,
    kappa: usize,
    min_fraction: f64,
    seed: u64,
) -> Result<Subclusters> {
    let (names, index) = cells.populations()?;
    let groups = members_by_population(names.len(), &index);
    cluster_groups(cells.expressions().view(), &names, &groups, kappa, min_fraction, seed)
}

/// Clusters the whole table as one group, for feature-valued references
/// without discrete labels. Rows are labelled `cluster{j}`.
pub fn cluster_unlabelled(cells: &CellTable, kappa: usize, min_fraction: f64, seed: u64) -> Result<Subclusters> {
    let all: Vec<usize> = (0..cells.n_cells()).collect();
    let clustered = cluster_groups(
        cells.expressions().view(),
        &["cluster".to_string()],
        &[all],
        kappa,
        min_fraction,
        seed,
    )?;
    // Every cluster is its own category here.
    let labels: Vec<String> = (0..clustered.members.len()).map(|j| format!("cluster{j}")).collect();
    let profiles = ReferenceProfiles::from_populations(clustered.profiles.centroids().clone(), labels)?;
    Ok(Subclusters {
        profiles,
        members: clustered.members,
    })
}

fn cluster_groups(
    x: ArrayView2<f64>,
    names: &[String],
    groups: &[Vec<usize>],
    kappa: usize,
    min_fraction: f64,
    seed: u64,
) -> Result<Subclusters> {
    if kappa == 0 {
        return Err(DotError::invalid("kappa must be at least 1"));
    }
    if !(0.0..1.0).contains(&min_fraction) {
        return Err(DotError::invalid(format!("min fraction {min_fraction} outside [0, 1)")));
    }
    let mut rows: Vec<ndarray::Array1<f64>> = Vec::new();
    let mut row_labels = Vec::new();
    let mut population_of = Vec::new();
    let mut members_out = Vec::new();

    for (p, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(DotError::invalid(format!("population `{}` has no cells", names[p])));
        }
        let k = kappa.min(members.len());
        let clusters: Vec<Vec<usize>> = if k == 1 {
            vec![members.clone()]
        } else {
            let points = x.select(Axis(0), members);
            let fit = kmeans::kmeans(points.view(), k, population_seed(seed, p));
            let mut c = vec![Vec::new(); k];
            for (local, &a) in fit.assignments.iter().enumerate() {
                c[a].push(members[local]);
            }
            c
        };
        let min_size = min_fraction * members.len() as f64;
        let kept: Vec<(Vec<usize>, ndarray::Array1<f64>)> = clusters
            .into_iter()
            .filter(|c| !c.is_empty() && c.len() as f64 >= min_size)
            .map(|c| {
                let mean = kmeans::mean_of_rows(x, &c);
                (c, mean)
            })
            .filter(|(c, mean)| {
                let zero = mean.iter().all(|&v| v == 0.0);
                if zero {
                    log::warn!(
                        "dropping all-zero sub-cluster of {} cells in population `{}`",
                        c.len(),
                        names[p]
                    );
                }
                !zero
            })
            .collect();
        if kept.is_empty() {
            return Err(DotError::Degenerate(format!(
                "population `{}` has no usable sub-cluster",
                names[p]
            )));
        }
        let single = kept.len() == 1;
        for (j, (c, mean)) in kept.into_iter().enumerate() {
            row_labels.push(if single { names[p].clone() } else { format!("{}.{j}", names[p]) });
            population_of.push(p);
            rows.push(mean);
            members_out.push(c);
        }
    }

    let mut centroids = Array2::zeros((rows.len(), x.ncols()));
    for (r, v) in rows.iter().enumerate() {
        centroids.row_mut(r).assign(v);
    }
    Ok(Subclusters {
        profiles: ReferenceProfiles::new(centroids, row_labels, population_of, names.to_vec())?,
        members: members_out,
    })
}

fn population_seed(seed: u64, population: usize) -> u64 {
    seed ^ (population as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Sums rows of `y` that belong to the same population.
pub fn aggregate_to_populations(y: &TransferMap, population_of: &[usize], n_populations: usize) -> Result<Array2<f64>> {
    aggregate_rows(y.values().view(), population_of, n_populations)
}

pub(crate) fn aggregate_rows(y: ArrayView2<f64>, population_of: &[usize], n_populations: usize) -> Result<Array2<f64>> {
    if population_of.len() != y.nrows() {
        return Err(DotError::dim(format!(
            "{} rows but {} population indices",
            y.nrows(),
            population_of.len()
        )));
    }
    if let Some(&p) = population_of.iter().find(|&&p| p >= n_populations) {
        return Err(DotError::invalid(format!("population index {p} out of range")));
    }
    let mut out = Array2::zeros((n_populations, y.ncols()));
    for (row, &p) in y.rows().into_iter().zip(population_of) {
        out.row_mut(p).scaled_add(1.0, &row);
    }
    Ok(out)
}

/// Shared genes in reference order and their column positions in both inputs.
#[derive(Debug, Clone)]
pub struct GeneAlignment {
    pub axis: GeneAxis,
    pub reference_columns: Vec<usize>,
    pub spatial_columns: Vec<usize>,
}

pub fn align_genes(reference_genes: &[String], spatial_genes: &[String]) -> Result<GeneAlignment> {
    let spatial_pos: HashMap<&str, usize> = spatial_genes
        .iter()
        .enumerate()
        .map(|(k, g)| (g.as_str(), k))
        .collect();
    let mut shared = Vec::new();
    let mut reference_columns = Vec::new();
    let mut spatial_columns = Vec::new();
    for (k, g) in reference_genes.iter().enumerate() {
        if let Some(&s) = spatial_pos.get(g.as_str()) {
            shared.push(g.clone());
            reference_columns.push(k);
            spatial_columns.push(s);
        }
    }
    if shared.is_empty() {
        return Err(DotError::NoSharedGenes);
    }
    let shared_set: HashSet<&str> = shared.iter().map(String::as_str).collect();
    let spatial_only = spatial_genes
        .iter()
        .filter(|g| !shared_set.contains(g.as_str()))
        .cloned()
        .collect();
    Ok(GeneAlignment {
        axis: GeneAxis::new(shared, spatial_only)?,
        reference_columns,
        spatial_columns,
    })
}
