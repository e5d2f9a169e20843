//! Wasserstein distances between equal-size empirical measures and between
//! one-dimensional grid densities.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::GridDensity;

/// Largest cloud accepted by [`wq_exact`].
pub const EXACT_LIMIT: usize = 2048;
const QUANTILE_POINTS: usize = 10_000;

/// Optimal assignment: point `i` of the first cloud goes to
/// `assignment[i]` of the second.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub assignment: Vec<usize>,
    pub cost: f64,
}

fn check_order(q: f64) -> Result<()> {
    if q.is_finite() && q >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("transport order must be >= 1, got {q}")))
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { context: "sample count", expected: a, found: b });
    }
    if a == 0 {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    Ok(())
}

fn power_mean(sum: f64, n: usize, q: f64) -> f64 {
    (sum / n as f64).powf(1.0 / q)
}

/// `W_q` between two equal-size samples on the line. The samples are
/// sorted internally, so unsorted input is accepted.
pub fn wq_1d(samples_a: &[f64], samples_b: &[f64], q: f64) -> Result<f64> {
    check_order(q)?;
    check_lengths(samples_a.len(), samples_b.len())?;
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(q)).sum();
    Ok(power_mean(sum, a.len(), q))
}

fn row_distance(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum::<f64>().sqrt()
}

fn check_clouds(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    check_lengths(a.nrows(), b.nrows())?;
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { context: "point dimension", expected: a.ncols(), found: b.ncols() });
    }
    Ok(())
}

/// Cost of pairing row `i` of `a` with row `assignment[i]` of `b`.
pub fn coupling_cost(a: &DMatrix<f64>, b: &DMatrix<f64>, assignment: &[usize], q: f64) -> Result<f64> {
    check_clouds(a, b)?;
    check_order(q)?;
    let sum: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| row_distance(a, i, b, j).powf(q))
        .sum();
    Ok(power_mean(sum, a.nrows(), q))
}

/// Minimum-cost perfect matching (Hungarian method with potentials),
/// O(n³). Among equal-cost choices the lowest column index wins.
fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row matched to column j (1-based, 0 = free); way[j]: previous column on the path.
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Exact `W_q` between two clouds of `N ≤ 2048` equal-weight points (rows).
pub fn wq_exact(cloud_a: &DMatrix<f64>, cloud_b: &DMatrix<f64>, q: f64) -> Result<TransportPlan> {
    check_clouds(cloud_a, cloud_b)?;
    check_order(q)?;
    let n = cloud_a.nrows();
    if n > EXACT_LIMIT {
        return Err(Error::SizeLimit { size: n, limit: EXACT_LIMIT });
    }
    let cost = DMatrix::from_fn(n, n, |i, j| row_distance(cloud_a, i, cloud_b, j).powf(q));
    let assignment = hungarian(&cost);
    let sum: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok(TransportPlan { assignment, cost: power_mean(sum, n, q) })
}

fn random_direction(p: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let d = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let norm: f64 = d.norm();
        if norm > 1e-12 {
            return d / norm;
        }
    }
}

/// Mean of the 1-D `W_q` over `n_projections` random unit directions.
pub fn sliced_wq(
    cloud_a: &DMatrix<f64>,
    cloud_b: &DMatrix<f64>,
    q: f64,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    check_clouds(cloud_a, cloud_b)?;
    check_order(q)?;
    if n_projections == 0 {
        return Err(Error::InvalidParameter("need at least one projection".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_projections {
        let dir = random_direction(cloud_a.ncols(), &mut rng);
        let pa: Vec<f64> = (cloud_a * &dir).iter().cloned().collect();
        let pb: Vec<f64> = (cloud_b * &dir).iter().cloned().collect();
        total += wq_1d(&pa, &pb, q)?;
    }
    Ok(total / n_projections as f64)
}

/// Recursive sort-and-split pairing: sort by the first coordinate, cut both
/// clouds into the same number of equal slabs, pair slabs in order and
/// recurse on the next coordinate inside each slab.
fn block_sort_pairs(a: &DMatrix<f64>, b: &DMatrix<f64>, ia: &mut [usize], ib: &mut [usize], coord: usize, out: &mut [usize]) {
    let n = ia.len();
    let p = a.ncols();
    ia.sort_by(|&x, &y| a[(x, coord)].total_cmp(&a[(y, coord)]));
    ib.sort_by(|&x, &y| b[(x, coord)].total_cmp(&b[(y, coord)]));
    if coord + 1 == p || n <= 1 {
        for (x, y) in ia.iter().zip(ib.iter()) {
            out[*x] = *y;
        }
        return;
    }
    let remaining = (p - coord) as f64;
    let slabs = ((n as f64).powf(1.0 / remaining).round() as usize).clamp(1, n);
    let mut start = 0;
    for s in 0..slabs {
        let end = (n * (s + 1)) / slabs;
        block_sort_pairs(a, b, &mut ia[start..end], &mut ib[start..end], coord + 1, out);
        start = end;
    }
}

/// Upper bound on `W_q` between two large clouds from an explicit
/// (sort-and-split) coupling. Exact in one dimension.
pub fn wq_block_sort(cloud_a: &DMatrix<f64>, cloud_b: &DMatrix<f64>, q: f64) -> Result<TransportPlan> {
    check_clouds(cloud_a, cloud_b)?;
    check_order(q)?;
    let n = cloud_a.nrows();
    let mut ia: Vec<usize> = (0..n).collect();
    let mut ib: Vec<usize> = (0..n).collect();
    let mut assignment = vec![0usize; n];
    block_sort_pairs(cloud_a, cloud_b, &mut ia, &mut ib, 0, &mut assignment);
    let cost = coupling_cost(cloud_a, cloud_b, &assignment, q)?;
    Ok(TransportPlan { assignment, cost })
}

/// Piecewise-linear CDF at the nodes (trapezoid masses), scaled to end at 1.
/// Cumulative distribution of a grid density. Cell masses use the
/// end-corrected trapezoid rule; inside a cell the density is linear, so
/// the CDF there is quadratic.
struct GridCdf<'a> {
    nodes: &'a [f64],
    vals: Vec<f64>,
    cdf: Vec<f64>,
}

/// Derivative at each node of the quadratic through it and its neighbours.
fn node_slopes(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    let three = |i: usize, at: f64| {
        let (x0, x1, x2) = (x[i], x[i + 1], x[i + 2]);
        let d01 = (f[i + 1] - f[i]) / (x1 - x0);
        let d12 = (f[i + 2] - f[i + 1]) / (x2 - x1);
        let c = (d12 - d01) / (x2 - x0);
        d01 + c * (2.0 * at - x0 - x1)
    };
    (0..n).map(|i| three(i.saturating_sub(1).min(n - 3), x[i])).collect()
}

impl<'a> GridCdf<'a> {
    fn new(f: &'a GridDensity) -> Self {
        let max = f.log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let vals: Vec<f64> = f.log_values.iter().map(|v| (v - max).exp()).collect();
        let slopes = node_slopes(&f.nodes, &vals);
        let mut cdf = Vec::with_capacity(f.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..f.len() {
            let h = f.nodes[i] - f.nodes[i - 1];
            let cell = 0.5 * h * (vals[i - 1] + vals[i]) - h * h / 12.0 * (slopes[i] - slopes[i - 1]);
            acc += cell.max(0.0);
            cdf.push(acc);
        }
        let cdf = cdf.iter().map(|c| c / acc).collect();
        Self { nodes: &f.nodes, vals, cdf }
    }

    fn quantile(&self, u: f64) -> f64 {
        let (nodes, cdf) = (self.nodes, &self.cdf);
        let n = nodes.len();
        let i = cdf.partition_point(|&c| c < u).clamp(1, n - 1);
        let (c0, c1) = (cdf[i - 1], cdf[i]);
        if c1 <= c0 {
            return nodes[i];
        }
        let r = ((u - c0) / (c1 - c0)).clamp(0.0, 1.0);
        let (f0, f1) = (self.vals[i - 1], self.vals[i]);
        // Solve f0 s + (f1 - f0) s² / 2 = r (f0 + f1) / 2 for s in [0, 1].
        let c = 0.5 * r * (f0 + f1);
        let disc = (f0 * f0 * (1.0 - r) + f1 * f1 * r).max(0.0);
        let s = if f0 + f1 > 0.0 { (2.0 * c / (f0 + disc.sqrt())).clamp(0.0, 1.0) } else { r };
        nodes[i - 1] + s * (nodes[i] - nodes[i - 1])
    }
}

fn require_normalized(f: &GridDensity) -> Result<()> {
    if f.normalized {
        Ok(())
    } else {
        Err(Error::Unnormalized)
    }
}

/// `W_q` between two normalized grid densities by integrating the
/// difference of their quantile functions (midpoint rule on `10⁴` points).
pub fn wq_grid_1d(f: &GridDensity, g: &GridDensity, q: f64) -> Result<f64> {
    check_order(q)?;
    require_normalized(f)?;
    require_normalized(g)?;
    if f == g {
        return Ok(0.0);
    }
    let cf = GridCdf::new(f);
    let cg = GridCdf::new(g);
    let m = QUANTILE_POINTS;
    let sum: f64 = (0..m)
        .map(|i| {
            let u = (i as f64 + 0.5) / m as f64;
            (cf.quantile(u) - cg.quantile(u)).abs().powf(q)
        })
        .sum();
    Ok(power_mean(sum, m, q))
}

/// `W_q` between an equal-weight sample and a normalized grid density.
pub fn wq_samples_grid_1d(samples: &[f64], g: &GridDensity, q: f64) -> Result<f64> {
    check_order(q)?;
    require_normalized(g)?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let per = QUANTILE_POINTS.div_ceil(n);
    let m = per * n;
    let cg = GridCdf::new(g);
    let sum: f64 = (0..m)
        .map(|i| {
            let u = (i as f64 + 0.5) / m as f64;
            (xs[i / per] - cg.quantile(u)).abs().powf(q)
        })
        .sum();
    Ok(power_mean(sum, m, q))
}
