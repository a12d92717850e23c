//! The five objective terms, their weighted sum and the analytic gradient.
//!
//! With `Y` the categories-by-spots transfer map, `X^R` the reference
//! centroids and `X^S` the spot expressions (both over the shared genes):
//!
//! * spot term: `sum_i (1-θ) d_cos(X^S_i, (Yᵀ X^R)_i) + θ/n̄_i sum_c Y_ci d_cos(X^S_i, X^R_c)`
//! * centroid term: `sum_c d_cos(X^R_c, (Y X^S)_c)`
//! * gene term: `sum_g d_cos(X^S_{:,g}, (Yᵀ X^R)_{:,g})`
//! * spatial term: `sum_(i,j) w_ij JS(Y_{:,i}, Y_{:,j})`
//! * abundance term: `JS(population totals of Y, r)`
//!
//! The gradient is assembled from the auxiliary products `Yᵀ X^R` and `Y X^S`,
//! each computed once per evaluation. Per-row work runs on the current rayon
//! pool; every reduction is a sequential sum over a fixed order, so results do
//! not depend on the thread count.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::distance::{cosine_from_parts, distance_from_cosine, js_grad_first, js_normalized, EPS};
use crate::error::{DotError, Result};
use crate::types::{AbundancePrior, ObjectiveWeights, ReferenceProfiles, SpatialPairSet};

/// A fully specified instance of the transfer model.
#[derive(Debug, Clone)]
pub struct Problem {
    reference: ReferenceProfiles,
    spots: Array2<f64>,
    pairs: SpatialPairSet,
    prior: AbundancePrior,
    spot_bounds: Array1<f64>,
    spot_norms: Array1<f64>,
    gene_norms: Array1<f64>,
    linear_cost: Array2<f64>,
}

impl Problem {
    /// `spots` holds `X^S` restricted to the genes of `reference`, in the
    /// same column order.
    pub fn new(
        reference: ReferenceProfiles,
        spots: Array2<f64>,
        pairs: SpatialPairSet,
        prior: AbundancePrior,
        spot_bounds: Array1<f64>,
    ) -> Result<Self> {
        if spots.ncols() != reference.n_genes() {
            return Err(DotError::dim(format!(
                "reference has {} genes, spots have {}",
                reference.n_genes(),
                spots.ncols()
            )));
        }
        if spots.nrows() == 0 {
            return Err(DotError::invalid("no spots"));
        }
        if spots.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DotError::invalid("spot expressions must be finite and non-negative"));
        }
        if spot_bounds.len() != spots.nrows() {
            return Err(DotError::dim(format!(
                "{} spot bounds for {} spots",
                spot_bounds.len(),
                spots.nrows()
            )));
        }
        if spot_bounds.iter().any(|&n| !(n >= 1.0 && n.is_finite())) {
            return Err(DotError::invalid("spot size bounds must be at least 1"));
        }
        pairs.validate(spots.nrows())?;
        if prior.enabled && prior.r.len() != reference.populations().len() {
            return Err(DotError::dim(format!(
                "prior has {} entries for {} populations",
                prior.r.len(),
                reference.populations().len()
            )));
        }
        let spot_norms = spots.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let gene_norms = spots.map_axis(Axis(0), |c| c.dot(&c).sqrt());
        let linear_cost = linear_cost(&reference, &spots, &spot_norms);
        Ok(Self {
            reference,
            spots,
            pairs,
            prior,
            spot_bounds,
            spot_norms,
            gene_norms,
            linear_cost,
        })
    }

    pub fn reference(&self) -> &ReferenceProfiles {
        &self.reference
    }

    pub fn spots(&self) -> &Array2<f64> {
        &self.spots
    }

    pub fn pairs(&self) -> &SpatialPairSet {
        &self.pairs
    }

    pub fn prior(&self) -> &AbundancePrior {
        &self.prior
    }

    pub fn spot_bounds(&self) -> &Array1<f64> {
        &self.spot_bounds
    }

    pub fn n_categories(&self) -> usize {
        self.reference.n_rows()
    }

    pub fn n_spots(&self) -> usize {
        self.spots.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.spots.ncols()
    }

    /// `d_cos(X^S_i, X^R_c)` for every category and spot.
    pub fn linear_cost(&self) -> &Array2<f64> {
        &self.linear_cost
    }

    pub fn with_prior(mut self, prior: AbundancePrior) -> Result<Self> {
        if prior.enabled && prior.r.len() != self.reference.populations().len() {
            return Err(DotError::dim("prior length does not match populations"));
        }
        self.prior = prior;
        Ok(self)
    }

    pub fn with_spot_bounds(mut self, bounds: Array1<f64>) -> Result<Self> {
        if bounds.len() != self.n_spots() || bounds.iter().any(|&n| !(n >= 1.0)) {
            return Err(DotError::invalid("spot size bounds must be at least 1, one per spot"));
        }
        self.spot_bounds = bounds;
        Ok(self)
    }

    fn check_map(&self, y: ArrayView2<f64>) -> Result<()> {
        if y.dim() != (self.n_categories(), self.n_spots()) {
            return Err(DotError::dim(format!(
                "transfer map is {:?}, expected {:?}",
                y.dim(),
                (self.n_categories(), self.n_spots())
            )));
        }
        Ok(())
    }

    fn sparsity_scale(&self, weights: &ObjectiveWeights) -> Result<Array1<f64>> {
        match &weights.sparsity_scale {
            None => Ok(self.spot_bounds.clone()),
            Some(s) if s.len() == self.n_spots() => Ok(Array1::from(s.clone())),
            Some(s) => Err(DotError::dim(format!(
                "sparsity scale has {} entries for {} spots",
                s.len(),
                self.n_spots()
            ))),
        }
    }
}

fn linear_cost(reference: &ReferenceProfiles, spots: &Array2<f64>, spot_norms: &Array1<f64>) -> Array2<f64> {
    let mut cost = reference.centroids().dot(&spots.t());
    Zip::from(cost.rows_mut())
        .and(reference.row_norms())
        .for_each(|mut row, &nr| {
            Zip::from(&mut row).and(spot_norms).for_each(|v, &ns| {
                *v = distance_from_cosine(cosine_from_parts(*v, nr, ns));
            });
        });
    cost
}

/// Identifies one of the five objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Spot,
    Centroid,
    Gene,
    Spatial,
    Abundance,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Spot, Term::Centroid, Term::Gene, Term::Spatial, Term::Abundance];

    pub fn name(self) -> &'static str {
        match self {
            Term::Spot => "spot",
            Term::Centroid => "centroid",
            Term::Gene => "gene",
            Term::Spatial => "spatial",
            Term::Abundance => "abundance",
        }
    }
}

/// Unweighted term values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub spot: f64,
    pub centroid: f64,
    pub gene: f64,
    pub spatial: f64,
    pub abundance: f64,
}

impl TermValues {
    pub fn weighted_total(&self, w: &ObjectiveWeights) -> f64 {
        self.spot
            + w.lambda_c * self.centroid
            + w.lambda_g * self.gene
            + w.lambda_s * self.spatial
            + w.lambda_a * self.abundance
    }

    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Spot => self.spot,
            Term::Centroid => self.centroid,
            Term::Gene => self.gene,
            Term::Spatial => self.spatial,
            Term::Abundance => self.abundance,
        }
    }
}

/// Numerical events observed while evaluating the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalFlags {
    /// Categories whose transferred profile `(Y X^S)_c` is zero.
    pub degenerate_rows: usize,
    /// Shared genes with an all-zero spatial column or transferred map.
    pub degenerate_genes: usize,
    /// Some log or division argument was floored at `EPS`.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub terms: TermValues,
    pub objective: f64,
    pub gradient: Option<Array2<f64>>,
    pub flags: EvalFlags,
}

/// Multipliers applied to each term, for both value and gradient.
#[derive(Debug, Clone, Copy)]
struct Coefs {
    spot: f64,
    centroid: f64,
    gene: f64,
    spatial: f64,
    abundance: f64,
}

impl Coefs {
    fn from_weights(w: &ObjectiveWeights, prior_enabled: bool) -> Self {
        Self {
            spot: 1.0,
            centroid: w.lambda_c,
            gene: w.lambda_g,
            spatial: w.lambda_s,
            abundance: if prior_enabled { w.lambda_a } else { 0.0 },
        }
    }

    fn only(term: Term) -> Self {
        let mut c = Self {
            spot: 0.0,
            centroid: 0.0,
            gene: 0.0,
            spatial: 0.0,
            abundance: 0.0,
        };
        match term {
            Term::Spot => c.spot = 1.0,
            Term::Centroid => c.centroid = 1.0,
            Term::Gene => c.gene = 1.0,
            Term::Spatial => c.spatial = 1.0,
            Term::Abundance => c.abundance = 1.0,
        }
        c
    }
}

/// Evaluates every term and, if requested, the gradient of the weighted sum.
pub fn evaluate(
    y: ArrayView2<f64>,
    problem: &Problem,
    weights: &ObjectiveWeights,
    with_gradient: bool,
) -> Result<Evaluation> {
    weights.validate()?;
    let coefs = Coefs::from_weights(weights, problem.prior.enabled);
    evaluate_with(y, problem, weights, coefs, with_gradient)
}

pub fn total_objective(y: ArrayView2<f64>, problem: &Problem, weights: &ObjectiveWeights) -> Result<f64> {
    Ok(evaluate(y, problem, weights, false)?.objective)
}

pub fn total_gradient(y: ArrayView2<f64>, problem: &Problem, weights: &ObjectiveWeights) -> Result<Array2<f64>> {
    Ok(evaluate(y, problem, weights, true)?
        .gradient
        .expect("gradient requested"))
}

/// Value of a single unweighted term. `weights` only supplies `theta` and
/// the sparsity scale for the spot term.
pub fn term_value(term: Term, y: ArrayView2<f64>, problem: &Problem, weights: &ObjectiveWeights) -> Result<f64> {
    Ok(evaluate_with(y, problem, weights, Coefs::only(term), false)?
        .terms
        .get(term))
}

/// Gradient of a single unweighted term.
pub fn term_gradient(
    term: Term,
    y: ArrayView2<f64>,
    problem: &Problem,
    weights: &ObjectiveWeights,
) -> Result<Array2<f64>> {
    Ok(evaluate_with(y, problem, weights, Coefs::only(term), true)?
        .gradient
        .expect("gradient requested"))
}

pub fn spot_term(y: ArrayView2<f64>, problem: &Problem, weights: &ObjectiveWeights) -> Result<f64> {
    term_value(Term::Spot, y, problem, weights)
}

pub fn centroid_term(y: ArrayView2<f64>, problem: &Problem) -> Result<f64> {
    term_value(Term::Centroid, y, problem, &ObjectiveWeights::default())
}

pub fn gene_term(y: ArrayView2<f64>, problem: &Problem) -> Result<f64> {
    term_value(Term::Gene, y, problem, &ObjectiveWeights::default())
}

/// `sum_(i,j) w_ij JS(Y_{:,i}, Y_{:,j})` on L1-normalized columns.
pub fn spatial_term(y: ArrayView2<f64>, pairs: &SpatialPairSet) -> f64 {
    let sums = y.sum_axis(Axis(0));
    spatial_part(y, &sums, pairs, None).0
}

/// `JS(population totals of Y, r)`, or 0 when the prior is disabled.
pub fn abundance_term(y: ArrayView2<f64>, prior: &AbundancePrior, population_of: &[usize]) -> Result<f64> {
    if !prior.enabled {
        return Ok(0.0);
    }
    if population_of.len() != y.nrows() || population_of.iter().any(|&p| p >= prior.r.len()) {
        return Err(DotError::dim("population mapping does not match the transfer map"));
    }
    Ok(abundance_part(y, prior, population_of, None).0)
}

fn evaluate_with(
    y: ArrayView2<f64>,
    problem: &Problem,
    weights: &ObjectiveWeights,
    coefs: Coefs,
    with_gradient: bool,
) -> Result<Evaluation> {
    problem.check_map(y)?;
    let scale = problem.sparsity_scale(weights)?;
    let theta = weights.theta;
    let xr = problem.reference.centroids();
    let xs = &problem.spots;
    let (n_cat, n_spot) = y.dim();
    let mut flags = EvalFlags::default();
    let mut terms = TermValues::default();

    let mut grad = with_gradient.then(|| Array2::<f64>::zeros((n_cat, n_spot)));

    // Spot and gene terms share the transferred spot profiles Yᵀ X^R.
    let need_spot_gene = coefs.spot != 0.0 || coefs.gene != 0.0;
    if need_spot_gene {
        let transferred = y.t().dot(xr);
        let mut w = with_gradient.then(|| Array2::<f64>::zeros(transferred.dim()));

        let spot_coef = coefs.spot * (1.0 - theta);
        let (spot_dist, _, clamped) = rowwise_cosine(
            xs.view(),
            problem.spot_norms.view(),
            transferred.view(),
            w.as_mut().filter(|_| spot_coef != 0.0).map(|m| (m.view_mut(), spot_coef)),
        );
        flags.clamped |= clamped;

        let (gene_dist, degenerate, clamped) = rowwise_cosine(
            xs.t(),
            problem.gene_norms.view(),
            transferred.t(),
            w.as_mut()
                .filter(|_| coefs.gene != 0.0)
                .map(|m| (m.view_mut().reversed_axes(), coefs.gene)),
        );
        flags.clamped |= clamped;
        flags.degenerate_genes = degenerate;
        terms.gene = gene_dist.iter().sum();

        let linear: Array1<f64> = Zip::from(problem.linear_cost.columns())
            .and(y.columns())
            .and(&scale)
            .map_collect(|cost, col, &nbar| cost.dot(&col) / nbar);
        terms.spot = spot_dist
            .iter()
            .zip(&linear)
            .map(|(d, l)| (1.0 - theta) * d + theta * l)
            .sum();

        if let (Some(g), Some(w)) = (grad.as_mut(), w.as_ref()) {
            g.assign(&xr.dot(&w.t()));
            if coefs.spot * theta != 0.0 {
                let lin = coefs.spot * theta;
                Zip::from(g.columns_mut())
                    .and(problem.linear_cost.columns())
                    .and(&scale)
                    .for_each(|mut gc, cost, &nbar| gc.scaled_add(lin / nbar, &cost));
            }
        }
    }

    if coefs.centroid != 0.0 {
        let transferred = y.dot(xs);
        let mut t = with_gradient.then(|| Array2::<f64>::zeros(transferred.dim()));
        let (dist, degenerate, clamped) = rowwise_cosine(
            xr.view(),
            problem.reference.row_norms().view(),
            transferred.view(),
            t.as_mut().map(|m| (m.view_mut(), coefs.centroid)),
        );
        flags.clamped |= clamped;
        flags.degenerate_rows = degenerate;
        terms.centroid = dist.iter().sum();
        if let (Some(g), Some(t)) = (grad.as_mut(), t.as_ref()) {
            *g += &t.dot(&xs.t());
        }
    }

    if coefs.spatial != 0.0 {
        let sums = y.sum_axis(Axis(0));
        let (value, clamped) = spatial_part(y, &sums, &problem.pairs, grad.as_mut().map(|g| (g, coefs.spatial)));
        terms.spatial = value;
        flags.clamped |= clamped;
    }

    if coefs.abundance != 0.0 && problem.prior.enabled {
        let (value, clamped) = abundance_part(
            y,
            &problem.prior,
            problem.reference.population_of(),
            grad.as_mut().map(|g| (g, coefs.abundance)),
        );
        terms.abundance = value;
        flags.clamped |= clamped;
    }

    for term in Term::ALL {
        if !terms.get(term).is_finite() {
            return Err(DotError::NonFinite { term: term.name() });
        }
    }
    if let Some(g) = &grad {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(DotError::NonFinite {
                term: first_nonfinite_term(y, problem, weights, coefs),
            });
        }
    }

    let objective = coefs.spot * terms.spot
        + coefs.centroid * terms.centroid
        + coefs.gene * terms.gene
        + coefs.spatial * terms.spatial
        + coefs.abundance * terms.abundance;
    Ok(Evaluation {
        terms,
        objective,
        gradient: grad,
        flags,
    })
}

fn first_nonfinite_term(y: ArrayView2<f64>, problem: &Problem, weights: &ObjectiveWeights, coefs: Coefs) -> &'static str {
    let active = [
        (Term::Spot, coefs.spot),
        (Term::Centroid, coefs.centroid),
        (Term::Gene, coefs.gene),
        (Term::Spatial, coefs.spatial),
        (Term::Abundance, coefs.abundance),
    ];
    for (term, c) in active {
        if c == 0.0 {
            continue;
        }
        match evaluate_with(y, problem, weights, Coefs::only(term), true) {
            Ok(e) if e.gradient.as_ref().is_some_and(|g| g.iter().all(|v| v.is_finite())) => {}
            _ => return term.name(),
        }
    }
    "combined"
}

/// Cosine distance between each row of `targets` and the same row of
/// `transferred`. When `grad` is given, `scale * ∂d_r/∂transferred_r` is added
/// into its row `r`. Returns the distances, the number of degenerate rows
/// (either side zero) and whether `d` was floored.
fn rowwise_cosine(
    targets: ArrayView2<f64>,
    target_norms: ArrayView1<f64>,
    transferred: ArrayView2<f64>,
    grad: Option<(ArrayViewMut2<f64>, f64)>,
) -> (Array1<f64>, usize, bool) {
    let per_row: Vec<(f64, bool, bool)> = match grad {
        Some((mut g, scale)) => Zip::from(g.rows_mut())
            .and(targets.rows())
            .and(transferred.rows())
            .and(target_norms)
            .par_map_collect(|mut g_row, a, b, &na| {
                let nb = b.dot(&b).sqrt();
                let ab = a.dot(&b);
                let d = distance_from_cosine(cosine_from_parts(ab, na, nb));
                let degenerate = na == 0.0 || nb == 0.0;
                if degenerate {
                    return (d, true, false);
                }
                // ∂d/∂b = -1/(2d) (a/(|a||b|) - (a·b) b/(|a||b|^3))
                let clamped = d < EPS;
                let k = -0.5 / d.max(EPS);
                let ca = scale * k / (na * nb);
                let cb = -scale * k * ab / (na * nb * nb * nb);
                Zip::from(&mut g_row).and(a).and(b).for_each(|gv, &av, &bv| {
                    *gv += ca * av + cb * bv;
                });
                (d, false, clamped)
            })
            .to_vec(),
        None => Zip::from(targets.rows())
            .and(transferred.rows())
            .and(target_norms)
            .par_map_collect(|a, b, &na| {
                let nb = b.dot(&b).sqrt();
                let d = distance_from_cosine(cosine_from_parts(a.dot(&b), na, nb));
                (d, na == 0.0 || nb == 0.0, false)
            })
            .to_vec(),
    };
    let dist = per_row.iter().map(|r| r.0).collect();
    let degenerate = per_row.iter().filter(|r| r.1).count();
    let clamped = per_row.iter().any(|r| r.2);
    (dist, degenerate, clamped)
}

fn spatial_part(
    y: ArrayView2<f64>,
    col_sums: &Array1<f64>,
    pairs: &SpatialPairSet,
    grad: Option<(&mut Array2<f64>, f64)>,
) -> (f64, bool) {
    let n_cat = y.nrows();
    let mut value = 0.0;
    let mut clamped = false;
    let mut p = vec![0.0; n_cat];
    let mut q = vec![0.0; n_cat];
    let mut gp = vec![0.0; n_cat];
    let mut grad = grad;
    for pair in &pairs.pairs {
        let (si, sj) = (col_sums[pair.i], col_sums[pair.j]);
        if !(si > 0.0 && sj > 0.0) {
            continue;
        }
        for c in 0..n_cat {
            p[c] = y[[c, pair.i]];
            q[c] = y[[c, pair.j]];
        }
        value += pair.w * js_normalized(&p, si, &q, sj);
        if let Some((g, scale)) = grad.as_mut() {
            let k = *scale * pair.w;
            clamped |= js_grad_first(&p, si, &q, sj, &mut gp);
            for c in 0..n_cat {
                g[[c, pair.i]] += k * gp[c];
            }
            clamped |= js_grad_first(&q, sj, &p, si, &mut gp);
            for c in 0..n_cat {
                g[[c, pair.j]] += k * gp[c];
            }
        }
    }
    (value, clamped)
}

fn abundance_part(
    y: ArrayView2<f64>,
    prior: &AbundancePrior,
    population_of: &[usize],
    grad: Option<(&mut Array2<f64>, f64)>,
) -> (f64, bool) {
    let n_pop = prior.r.len();
    let mut totals = vec![0.0; n_pop];
    for (row, &p) in y.rows().into_iter().zip(population_of) {
        totals[p] += row.sum();
    }
    let st: f64 = totals.iter().sum();
    let sr: f64 = prior.r.iter().sum();
    if !(st > 0.0 && sr > 0.0) {
        return (0.0, false);
    }
    let value = js_normalized(&totals, st, &prior.r, sr);
    let mut clamped = false;
    if let Some((g, scale)) = grad {
        // Each sub-cluster row receives its population's partial derivative.
        let mut gp = vec![0.0; n_pop];
        clamped = js_grad_first(&totals, st, &prior.r, sr, &mut gp);
        for (mut row, &p) in g.rows_mut().into_iter().zip(population_of) {
            row += scale * gp[p];
        }
    }
    (value, clamped)
}
