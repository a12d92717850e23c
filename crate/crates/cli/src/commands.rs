use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dot_core::benchgen::{self, NoiseSpec, SynthSpec};
use dot_core::io::{self, format_number, LabeledMatrix};
use dot_core::metrics;
use dot_core::preprocess::{self, PairOptions};
use dot_core::solver::{with_threads, ParameterOverrides, SolverConfig};
use dot_core::{CellTable, FeatureMode, FitConfig, Resolution, SpatialDataset, SpatialInput};
use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::{EvalArgs, FeaturesArg, FitArgs, PairsArgs, PoolArgs, SynthArgs};

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_cells(expr: &Path, labels: Option<&Path>) -> Result<CellTable> {
    let m = io::read_expression_matrix(expr)?;
    let labels = labels.map(|p| io::read_labels(p, &m.row_ids)).transpose()?;
    Ok(CellTable::new(m.values, labels, m.row_ids, m.col_ids)?)
}

pub fn fit(a: FitArgs, threads: Option<usize>) -> Result<()> {
    let features = match a.features {
        FeaturesArg::Categorical => FeatureMode::Categorical,
        FeaturesArg::Continuous => FeatureMode::Continuous,
    };
    if features == FeatureMode::Categorical && a.labels.is_none() {
        bail!("--labels is required for categorical features");
    }
    let cells = read_cells(&a.reference, a.labels.as_deref())?;
    let spatial = io::read_expression_matrix(&a.spatial)?;
    let coordinates = io::read_coordinates(&a.coords, &spatial.row_ids)?;
    let prior = match &a.prior {
        Some(p) => Some(io::read_prior(p, &cells.populations()?.0)?),
        None => None,
    };
    let input = SpatialInput {
        expressions: spatial.values,
        coordinates,
        spot_ids: spatial.row_ids,
        gene_ids: spatial.col_ids,
    };
    let config = FitConfig {
        resolution: a.resolution.into(),
        features,
        kappa: a.kappa,
        min_fraction: a.min_fraction,
        overrides: ParameterOverrides {
            lambda_c: a.lambda_c,
            lambda_g: a.lambda_g,
            lambda_s: a.lambda_s,
            lambda_a: a.lambda_a,
            theta: a.theta,
            cells_per_spot: a.cells_per_spot,
        },
        distance_threshold: a.distance_threshold,
        similarity_cutoff: a.similarity_cutoff,
        solver: SolverConfig {
            max_iterations: a.max_iterations,
            gap_tolerance: a.gap_tolerance,
            seed: a.seed,
            threads,
        },
    };
    let out = dot_core::fit(&cells, &input, prior, &config)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    io::write_matrix_csv(
        &a.out.join("Y_subclusters.csv"),
        &input.spot_ids,
        &out.category_labels,
        out.transfer.values().t(),
    )?;
    io::write_matrix_csv(
        &a.out.join("Y_populations.csv"),
        &input.spot_ids,
        &out.population_labels,
        out.populations.t(),
    )?;
    if let Some(f) = &out.features {
        io::write_matrix_csv(&a.out.join("features.csv"), &input.spot_ids, cells.gene_ids(), f.view())?;
    }
    write_json(&a.out.join("report.json"), &out.report)?;

    let solve = &out.report.solve;
    println!(
        "iterations {}  objective {:.6} -> {:.6}  gap {:.3e}  {:.2}s",
        solve.iterations,
        solve.objective_trajectory[0],
        solve.final_objective,
        solve.gap_trajectory.last().copied().unwrap_or(0.0),
        solve.wall_time_seconds
    );
    Ok(())
}

/// Rows of `m` reordered to `row_ids`, columns to `col_ids`.
fn align(m: &LabeledMatrix, row_ids: &[String], col_ids: &[String], what: &str) -> Result<Array2<f64>> {
    if m.col_ids.len() != col_ids.len() {
        bail!(
            "{what} has {} categories, predictions have {}",
            m.col_ids.len(),
            col_ids.len()
        );
    }
    let rows: HashMap<&str, usize> = m.row_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let cols: HashMap<&str, usize> = m.col_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let r: Vec<usize> = row_ids
        .iter()
        .map(|id| rows.get(id.as_str()).copied().with_context(|| format!("{what} has no row `{id}`")))
        .collect::<Result<_>>()?;
    let c: Vec<usize> = col_ids
        .iter()
        .map(|id| cols.get(id.as_str()).copied().with_context(|| format!("{what} has no category `{id}`")))
        .collect::<Result<_>>()?;
    Ok(m.values.select(Axis(0), &r).select(Axis(1), &c))
}

#[derive(Serialize)]
struct Metrics {
    spots: usize,
    categories: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    brier: f64,
    spatial_js: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_js: Option<f64>,
    smoothing_sigma: Option<f64>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let pred = io::read_expression_matrix(&a.predictions)?;
    let truth = io::read_expression_matrix(&a.truth)?;
    let truth = align(&truth, &pred.row_ids, &pred.col_ids, "truth")?;
    let coords = io::read_coordinates(&a.coords, &pred.row_ids)?;
    let y = pred.values.t();
    let p = truth.t();

    let threshold = preprocess::neighbor_distance_threshold(coords.view());
    let smoothed = if threshold > 0.0 {
        Some(metrics::smooth_labels(p, coords.view(), threshold)?)
    } else {
        log::warn!("all spots coincide; skipping the spatial score");
        None
    };
    let resolution: Resolution = a.resolution.into();
    let m = Metrics {
        spots: y.ncols(),
        categories: y.nrows(),
        accuracy: match resolution {
            Resolution::High => Some(metrics::accuracy(y, p)?),
            Resolution::Low => None,
        },
        brier: metrics::brier_score(y, p)?,
        spatial_js: smoothed.as_ref().map(|s| metrics::spatial_js(y, s)).transpose()?,
        mean_js: match resolution {
            Resolution::High => None,
            Resolution::Low => Some(metrics::mean_js(y, p)?),
        },
        smoothing_sigma: smoothed.as_ref().map(|s| s.sigma),
    };

    let show = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            println!("{name:<12}{v:.6}");
        }
    };
    show("accuracy", m.accuracy);
    show("brier", Some(m.brier));
    show("spatial_js", m.spatial_js);
    show("mean_js", m.mean_js);
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("metrics.json"), &m)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        populations: a.populations,
        genes: a.genes,
        spots: a.spots,
        min_cells_per_spot: a.min_cells,
        max_cells_per_spot: a.max_cells,
        separation: a.separation,
        noise: NoiseSpec { phi: a.phi, seed: a.seed },
        reference_cells: a.reference_cells,
        spacing: a.spacing,
        seed: a.seed,
    };
    let inst = benchgen::synth_planted(&spec)?;
    let dir = &a.out;
    fs::create_dir_all(dir)?;
    let cells = &inst.cells;
    io::write_matrix_csv(&dir.join("reference.csv"), cells.cell_ids(), cells.gene_ids(), cells.expressions().view())?;
    let labels = cells.labels().expect("planted cells are labelled");
    let rows: Vec<(String, String)> = cells.cell_ids().iter().cloned().zip(labels.iter().cloned()).collect();
    io::write_pairs(&dir.join("labels.csv"), ["cell", "label"], &rows)?;
    io::write_matrix_csv(&dir.join("spatial.csv"), &inst.spot_ids, &inst.gene_ids, inst.spatial.expressions().view())?;
    io::write_coordinates(&dir.join("coords.csv"), &inst.spot_ids, inst.spatial.coordinates().view())?;
    let populations = inst.reference.populations();
    io::write_matrix_csv(&dir.join("truth.csv"), &inst.spot_ids, populations, inst.truth.t())?;
    let totals = benchgen::population_totals(inst.truth.view(), &inst.cell_counts);
    let prior: Vec<(String, String)> = populations
        .iter()
        .cloned()
        .zip(totals.iter().map(|&v| format_number(v)))
        .collect();
    io::write_pairs(&dir.join("prior.csv"), ["population", "abundance"], &prior)?;
    println!("wrote {} spots, {} reference cells to {}", inst.spot_ids.len(), cells.n_cells(), dir.display());
    Ok(())
}

pub fn pool(a: PoolArgs) -> Result<()> {
    let table = read_cells(&a.cells, Some(&a.labels))?;
    let coords = io::read_coordinates(&a.coords, table.cell_ids())?;
    let (names, index) = table.populations()?;
    let pooled = benchgen::pool_to_grid(table.expressions().view(), coords.view(), &index, names.len(), a.tile)?;
    let dir = &a.out;
    fs::create_dir_all(dir)?;
    io::write_matrix_csv(&dir.join("spatial.csv"), &pooled.tile_ids, table.gene_ids(), pooled.expressions.view())?;
    io::write_coordinates(&dir.join("coords.csv"), &pooled.tile_ids, pooled.coordinates.view())?;
    io::write_matrix_csv(&dir.join("truth.csv"), &pooled.tile_ids, &names, pooled.truth.t())?;
    let counts: Vec<(String, String)> = pooled
        .tile_ids
        .iter()
        .cloned()
        .zip(pooled.cell_counts.iter().map(|c| c.to_string()))
        .collect();
    io::write_pairs(&dir.join("counts.csv"), ["tile", "cells"], &counts)?;
    println!("pooled {} cells into {} tiles", table.n_cells(), pooled.tile_ids.len());
    Ok(())
}

pub fn pairs(a: PairsArgs, threads: Option<usize>) -> Result<()> {
    let m = io::read_expression_matrix(&a.spatial)?;
    let coords = io::read_coordinates(&a.coords, &m.row_ids)?;
    let spatial = SpatialDataset::all_shared(m.values, coords)?;
    let options = PairOptions {
        distance_threshold: a.distance_threshold,
        similarity_cutoff: a.similarity_cutoff,
    };
    let set = with_threads(threads, || preprocess::build_spatial_pairs_with(&spatial, options))?;
    eprintln!(
        "{} pairs, distance threshold {}, similarity cutoff {}",
        set.len(),
        set.distance_threshold,
        set.similarity_cutoff
    );
    let mut text = String::from("spot_a,spot_b,weight\n");
    for p in &set.pairs {
        text.push_str(&format!("{},{},{}\n", m.row_ids[p.i], m.row_ids[p.j], format_number(p.w)));
    }
    match &a.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
