//! Brute-force oracles for validating `dot-core`.
//!
//! Nothing here calls into the production crate. Each oracle is a direct,
//! unoptimized evaluation of the quantity it checks.

use ndarray::Array2;

/// Central differences of `f` at `y`, one entry at a time.
///
/// Entries closer than `h` to zero use a forward difference so the objective
/// is never evaluated at a negative entry.
pub fn finite_difference_gradient<F>(f: F, y: &Array2<f64>, h: f64) -> Array2<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut out = Array2::zeros(y.dim());
    let mut probe = y.clone();
    for ((r, c), &v) in y.indexed_iter() {
        let g = if v - h >= 0.0 {
            probe[[r, c]] = v + h;
            let up = f(&probe);
            probe[[r, c]] = v - h;
            let down = f(&probe);
            (up - down) / (2.0 * h)
        } else {
            probe[[r, c]] = v + h;
            let up = f(&probe);
            probe[[r, c]] = v;
            let here = f(&probe);
            (up - here) / h
        };
        probe[[r, c]] = v;
        out[[r, c]] = g;
    }
    out
}

/// Largest entrywise relative error between `a` and `b`. Entries whose
/// absolute difference is within `abs_floor` count as exact.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>, abs_floor: f64) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let diff = (x - y).abs();
            if diff.is_nan() {
                f64::INFINITY
            } else if diff <= abs_floor {
                0.0
            } else {
                diff / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Minimizer of `<v, gradient>` over the vertices `{e_c, n e_c}` of one
/// spot's feasible region. Ties go to the smaller index, then to the smaller
/// magnitude.
pub fn exhaustive_atom_oracle(gradient: &[f64], n: f64) -> Vec<f64> {
    let mut best: Option<(f64, usize, f64)> = None;
    for (c, &g) in gradient.iter().enumerate() {
        for magnitude in [1.0, n] {
            let value = magnitude * g;
            let better = match best {
                None => true,
                Some((bv, _, _)) => value < bv,
            };
            if better {
                best = Some((value, c, magnitude));
            }
        }
    }
    let mut out = vec![0.0; gradient.len()];
    if let Some((_, c, m)) = best {
        out[c] = m;
    }
    out
}

/// Both sides of the discrete-metric Gromov-Wasserstein identity.
///
/// `lhs` is the quadruple sum `Σ Z_ci Z_kj (M^R_ck - M^S_ij)^2` with
/// `M^R` the discrete metric on categories; `rhs` is
/// `β + Σ_ij (2 M^S_ij - 1) <Z_i, Z_j>` with `β = Σ_ij (1 - M^S_ij)^2 p_i p_j`
/// and `p_i` the column sums of `Z`.
pub fn gw_reduction_oracle(z: &Array2<f64>, spot_metric: &Array2<f64>) -> Result<(f64, f64), String> {
    let (n_cat, n_spot) = z.dim();
    if spot_metric.dim() != (n_spot, n_spot) {
        return Err(format!("spot metric must be {n_spot}x{n_spot}"));
    }
    for i in 0..n_spot {
        if spot_metric[[i, i]] != 0.0 {
            return Err("spot metric must have a zero diagonal".into());
        }
        for j in 0..n_spot {
            if spot_metric[[i, j]] != spot_metric[[j, i]] {
                return Err("spot metric must be symmetric".into());
            }
        }
    }
    let mut lhs = 0.0;
    for c in 0..n_cat {
        for k in 0..n_cat {
            let mr = if c == k { 0.0 } else { 1.0 };
            for i in 0..n_spot {
                for j in 0..n_spot {
                    let d = mr - spot_metric[[i, j]];
                    lhs += z[[c, i]] * z[[k, j]] * d * d;
                }
            }
        }
    }
    let p: Vec<f64> = (0..n_spot).map(|i| (0..n_cat).map(|c| z[[c, i]]).sum()).collect();
    let mut rhs = 0.0;
    for i in 0..n_spot {
        for j in 0..n_spot {
            let m = spot_metric[[i, j]];
            rhs += (1.0 - m) * (1.0 - m) * p[i] * p[j];
            let inner: f64 = (0..n_cat).map(|c| z[[c, i]] * z[[c, j]]).sum();
            rhs += (2.0 * m - 1.0) * inner;
        }
    }
    Ok((lhs, rhs))
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear_system(a: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    assert_eq!(a.dim(), (n, n));
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut row: Vec<f64> = a.row(r).to_vec();
            row.push(b[r]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            for k in col..=n {
                m[r][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distances from every point to its `k` nearest other points, brute force.
pub fn brute_force_knn_distances(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let mut d: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| euclidean(p, q))
            .collect();
        d.sort_by(f64::total_cmp);
        out.extend(d.into_iter().take(k));
    }
    out
}

/// Percentile `q` in `[0, 100]` with linear interpolation between order
/// statistics (`(n - 1) q / 100` positioning).
pub fn percentile_linear(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        ab / (na * nb)
    }
}

/// Base-2 Jensen-Shannon divergence written out from the KL definition.
pub fn js_base2(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let kl = |a: &[f64], sa: f64, b: &[f64], sb: f64| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| {
                let pa = x / sa;
                let m = 0.5 * (pa + y / sb);
                pa * (pa / m).log2()
            })
            .sum()
    };
    0.5 * kl(p, sp, q, sq) + 0.5 * kl(q, sq, p, sp)
}
