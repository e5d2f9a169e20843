//! One-dimensional grid densities and the Gaussian-kernel convolutions used by
//! the grid filter and the backward smoothing weights.
//!
//! All values are kept in log space. Integrals use the trapezoid rule on the
//! grid nodes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::DiscreteTransition;

/// Kernel half-width in standard deviations; `e^{-14²/2}` is below `1e-42`.
const WINDOW_SDS: f64 = 14.0;
/// Log-ratio below the largest term at which summands are dropped.
const NEGLIGIBLE: f64 = 50.0;
/// Default leakage tolerance for forward convolutions.
pub const LEAKAGE_LIMIT: f64 = 1e-6;
const NORMALIZED_TOL: f64 = 1e-8;

/// Log-density (or log-function) values on strictly increasing nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub nodes: Vec<f64>,
    pub log_values: Vec<f64>,
    pub normalized: bool,
}

pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn uniform_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + h * i as f64 }).collect()
}

/// Log trapezoid weights of the nodes.
pub fn log_trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < n { nodes[i + 1] - nodes[i] } else { 0.0 };
            (0.5 * (left + right)).ln()
        })
        .collect()
}

fn check_nodes(nodes: &[f64]) -> Result<()> {
    if nodes.len() < 3 {
        return Err(Error::InvalidParameter("a grid needs at least 3 nodes".into()));
    }
    if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("grid nodes must be finite and strictly increasing".into()));
    }
    Ok(())
}

impl GridDensity {
    pub fn new(nodes: Vec<f64>, log_values: Vec<f64>, normalized: bool) -> Result<Self> {
        check_nodes(&nodes)?;
        if log_values.len() != nodes.len() {
            return Err(Error::DimensionMismatch {
                context: "grid log values",
                expected: nodes.len(),
                found: log_values.len(),
            });
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric("grid log values must be < +inf and not NaN".into()));
        }
        let density = Self { nodes, log_values, normalized: false };
        if normalized {
            let lm = density.log_mass();
            if !(lm.abs() <= NORMALIZED_TOL) {
                return Err(Error::Unnormalized);
            }
        }
        Ok(Self { normalized, ..density })
    }

    pub fn from_log_fn(nodes: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let log_values = nodes.iter().map(|&x| f(x)).collect();
        Self::new(nodes, log_values, false)
    }

    /// Gaussian density on the given nodes, renormalized on the grid.
    pub fn gaussian(nodes: Vec<f64>, mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::InvalidParameter("Gaussian grid density needs positive variance".into()));
        }
        Self::from_log_fn(nodes, |x| -0.5 * (x - mean) * (x - mean) / var)?.normalize()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Log of the trapezoid integral of `exp(log_values)`.
    pub fn log_mass(&self) -> f64 {
        let w = log_trapezoid_weights(&self.nodes);
        logsumexp(w.iter().zip(&self.log_values).map(|(a, b)| a + b))
    }

    pub fn normalize(&self) -> Result<Self> {
        let lm = self.log_mass();
        if !lm.is_finite() {
            return Err(Error::Numeric("grid function has zero or infinite mass".into()));
        }
        Ok(Self {
            nodes: self.nodes.clone(),
            log_values: self.log_values.iter().map(|v| v - lm).collect(),
            normalized: true,
        })
    }

    /// `exp(log_values)` scaled so the largest entry is one.
    pub fn relative_values(&self) -> Vec<f64> {
        let max = self.log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.log_values.iter().map(|v| (v - max).exp()).collect()
    }

    /// Trapezoid expectation of `f` under the normalized density.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let w = log_trapezoid_weights(&self.nodes);
        let max = self.log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.len() {
            let m = (w[i] + self.log_values[i] - max).exp();
            num += m * f(self.nodes[i]);
            den += m;
        }
        num / den
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|x| (x - m) * (x - m))
    }

    /// Piecewise-linear log value; outside the grid a quadratic through the
    /// three outermost nodes continues it, with curvature clamped at zero so
    /// the extension never grows faster than linearly in log space.
    pub fn interpolate_log(&self, x: f64) -> f64 {
        let n = self.len();
        let (xs, ys) = (&self.nodes, &self.log_values);
        if x >= xs[0] && x <= xs[n - 1] {
            let i = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
            let (x0, x1) = (xs[i - 1], xs[i]);
            let (y0, y1) = (ys[i - 1], ys[i]);
            if y0 == f64::NEG_INFINITY || y1 == f64::NEG_INFINITY {
                return if x == x0 { y0 } else if x == x1 { y1 } else { f64::NEG_INFINITY };
            }
            let s = (x - x0) / (x1 - x0);
            return y0 + s * (y1 - y0);
        }
        let idx = if x < xs[0] { [0, 1, 2] } else { [n - 1, n - 2, n - 3] };
        let (x0, x1, x2) = (xs[idx[0]], xs[idx[1]], xs[idx[2]]);
        let (y0, y1, y2) = (ys[idx[0]], ys[idx[1]], ys[idx[2]]);
        let d01 = (y1 - y0) / (x1 - x0);
        let d12 = (y2 - y1) / (x2 - x1);
        let curv = ((d12 - d01) / (x2 - x0)).min(0.0);
        let slope = d01 - curv * (x1 - x0);
        y0 + slope * (x - x0) + curv * (x - x0) * (x - x0)
    }

    fn spacing(&self) -> f64 {
        (self.hi() - self.lo()) / (self.len() - 1) as f64
    }

    fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Scalar Gaussian transition `v = a + B u + N(0, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarKernel {
    pub a: f64,
    pub b: f64,
    pub var: f64,
}

impl ScalarKernel {
    pub fn from_transition(t: &DiscreteTransition) -> Result<Self> {
        if t.dim() != 1 {
            return Err(Error::DimensionMismatch { context: "grid transition", expected: 1, found: t.dim() });
        }
        Ok(Self { a: t.a[0], b: t.b[(0, 0)], var: t.noise_cov[(0, 0)] })
    }

    fn log_norm(&self) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.var).ln()
    }
}

/// Continue a uniform grid density past either end with
/// [`GridDensity::interpolate_log`], towards `lo` and `hi` but by at most
/// twice its own length, on sides where it decays outwards. Other grids
/// are returned as they are.
fn extend_tails(density: &GridDensity, lo: f64, hi: f64) -> GridDensity {
    let n = density.len();
    let h = density.spacing();
    let uniform = density.nodes.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1.0));
    let finite = |i: usize| density.log_values[i].is_finite();
    if !uniform || !(finite(0) && finite(1) && finite(2) && finite(n - 1) && finite(n - 2) && finite(n - 3)) {
        return density.clone();
    }
    let decays = |x: f64, edge: f64| density.interpolate_log(x) < edge;
    let left = if lo < density.lo() && decays(density.lo() - h, density.log_values[0]) {
        (((density.lo() - lo) / h).ceil() as usize).min(2 * n)
    } else {
        0
    };
    let right = if hi > density.hi() && decays(density.hi() + h, density.log_values[n - 1]) {
        (((hi - density.hi()) / h).ceil() as usize).min(2 * n)
    } else {
        0
    };
    if left == 0 && right == 0 {
        return density.clone();
    }
    let x0 = density.lo() - h * left as f64;
    let nodes: Vec<f64> = (0..left + n + right)
        .map(|i| if (left..left + n).contains(&i) { density.nodes[i - left] } else { x0 + h * i as f64 })
        .collect();
    let log_values = nodes
        .iter()
        .enumerate()
        .map(|(i, &x)| if (left..left + n).contains(&i) { density.log_values[i - left] } else { density.interpolate_log(x) })
        .collect();
    GridDensity { nodes, log_values, normalized: false }
}

/// Unnormalized density of `a + B u + ξ` on `out_nodes` when `u` has the
/// (possibly unnormalized) grid density `density`.
///
/// A uniform input grid is continued past ends where the density decays, so
/// output nodes whose pre-image lies off the grid still get their tail
/// mass. Mass falling outside `out_nodes` beyond `leakage_limit` (relative
/// to the input mass) is an error.
pub fn push_density(
    density: &GridDensity,
    kernel: ScalarKernel,
    out_nodes: Vec<f64>,
    leakage_limit: f64,
) -> Result<GridDensity> {
    check_nodes(&out_nodes)?;
    let mut in_log_mass = density.log_mass();
    let log_values: Vec<f64> = if kernel.var == 0.0 {
        let log_jac = -kernel.b.abs().ln();
        out_nodes
            .iter()
            .map(|&v| {
                let u = (v - kernel.a) / kernel.b;
                if u < density.lo() || u > density.hi() {
                    f64::NEG_INFINITY
                } else {
                    density.interpolate_log(u) + log_jac
                }
            })
            .collect()
    } else {
        let sd = kernel.var.sqrt();
        if sd / kernel.b.abs() < density.max_spacing() {
            return Err(Error::Numeric(
                "transition noise is narrower than the input grid spacing".into(),
            ));
        }
        let half = WINDOW_SDS * sd / kernel.b.abs();
        let pre: Vec<f64> = [out_nodes[0], out_nodes[out_nodes.len() - 1]]
            .iter()
            .map(|&v| (v - kernel.a) / kernel.b)
            .collect();
        let (pre_lo, pre_hi) = (pre[0].min(pre[1]) - half, pre[0].max(pre[1]) + half);
        let source = extend_tails(density, pre_lo, pre_hi);
        in_log_mass = source.log_mass();
        let weights = log_trapezoid_weights(&source.nodes);
        let terms: Vec<f64> = weights.iter().zip(&source.log_values).map(|(w, l)| w + l).collect();
        let log_norm = kernel.log_norm();
        out_nodes
            .par_iter()
            .map(|&v| {
                // The integrand peaks between the pre-image of `v` and the
                // bulk of the input, so scan every source node.
                let logs: Vec<f64> = source
                    .nodes
                    .iter()
                    .zip(&terms)
                    .map(|(&u, t)| {
                        let r = v - kernel.a - kernel.b * u;
                        t - 0.5 * r * r / kernel.var
                    })
                    .collect();
                let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return max;
                }
                let sum: f64 = logs.iter().filter(|&&l| l > max - NEGLIGIBLE).map(|l| (l - max).exp()).sum();
                max + sum.ln() + log_norm
            })
            .collect()
    };
    let out = GridDensity::new(out_nodes, log_values, false)?;
    let leakage = (-(out.log_mass() - in_log_mass).exp_m1()).max(0.0);
    if leakage > leakage_limit {
        return Err(Error::DomainTooSmall { leakage, limit: leakage_limit });
    }
    Ok(out)
}

/// `(P f)(u) = ∫ N(v; a + B u, var) f(v) dv` at each `u` in `at`, with `f`
/// given by `log_f` on a uniform grid and extended past its ends by
/// [`GridDensity::interpolate_log`].
pub fn pull_function(log_f: &GridDensity, kernel: ScalarKernel, at: &[f64]) -> Result<Vec<f64>> {
    if kernel.var == 0.0 {
        return Ok(at.iter().map(|&u| log_f.interpolate_log(kernel.a + kernel.b * u)).collect());
    }
    let h = log_f.spacing();
    let uniform = log_f.nodes.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1.0));
    if !uniform {
        return Err(Error::InvalidParameter("backward convolution needs a uniform grid".into()));
    }
    let sd = kernel.var.sqrt();
    if sd < h {
        return Err(Error::Numeric("transition noise is narrower than the grid spacing".into()));
    }
    let x0 = log_f.lo();
    let n = log_f.len() as i64;
    let log_norm = kernel.log_norm() + h.ln();
    let out = at
        .par_iter()
        .map(|&u| {
            let m = kernel.a + kernel.b * u;
            let i_lo = ((m - WINDOW_SDS * sd - x0) / h).floor() as i64;
            let i_hi = ((m + WINDOW_SDS * sd - x0) / h).ceil() as i64;
            let it = (i_lo..=i_hi).map(|i| {
                let v = x0 + h * i as f64;
                let lf = if (0..n).contains(&i) {
                    log_f.log_values[i as usize]
                } else {
                    log_f.interpolate_log(v)
                };
                let r = v - m;
                lf - 0.5 * r * r / kernel.var
            });
            logsumexp(it) + log_norm
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_grid_moments() {
        let g = GridDensity::gaussian(uniform_nodes(-19.0, 21.0, 2001), 1.0, 4.0).unwrap();
        assert!(g.normalized);
        assert_relative_eq!(g.mean(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(g.variance(), 4.0, epsilon = 1e-8);
    }

    #[test]
    fn rejects_bad_nodes() {
        assert!(GridDensity::new(vec![0.0, 1.0, 1.0], vec![0.0; 3], false).is_err());
        assert!(GridDensity::new(vec![0.0, 1.0], vec![0.0; 2], false).is_err());
        assert!(matches!(
            GridDensity::new(vec![0.0, 1.0, 2.0], vec![0.0; 3], true),
            Err(Error::Unnormalized)
        ));
    }

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let g = GridDensity::from_log_fn(uniform_nodes(-1.0, 1.0, 21), |x| -0.5 * x * x + 0.3 * x).unwrap();
        for x in [-3.0, 2.5] {
            assert_relative_eq!(g.interpolate_log(x), -0.5 * x * x + 0.3 * x, epsilon = 1e-10);
        }
    }

    #[test]
    fn push_gaussian_through_kernel() {
        let g = GridDensity::gaussian(uniform_nodes(-10.0, 10.0, 1001), 0.5, 1.0).unwrap();
        let k = ScalarKernel { a: 0.2, b: 0.8, var: 0.36 };
        let out = push_density(&g, k, uniform_nodes(-10.0, 10.0, 1001), 1e-6).unwrap();
        assert_relative_eq!(out.log_mass(), 0.0, epsilon = 1e-8);
        let out = out.normalize().unwrap();
        assert_relative_eq!(out.mean(), 0.6, epsilon = 1e-8);
        assert_relative_eq!(out.variance(), 0.64 + 0.36, epsilon = 1e-8);
    }

    #[test]
    fn push_detects_leakage() {
        let g = GridDensity::gaussian(uniform_nodes(-5.0, 5.0, 501), 0.0, 1.0).unwrap();
        let k = ScalarKernel { a: 3.0, b: 1.0, var: 1.0 };
        let r = push_density(&g, k, uniform_nodes(-5.0, 5.0, 501), 1e-6);
        assert!(matches!(r, Err(Error::DomainTooSmall { .. })));
    }

    #[test]
    fn pull_of_constant_is_constant() {
        let one = GridDensity::from_log_fn(uniform_nodes(-2.0, 2.0, 101), |_| 0.0).unwrap();
        let k = ScalarKernel { a: 0.0, b: 0.5, var: 1.0 };
        for v in pull_function(&one, k, &[-2.0, 0.0, 1.7]).unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }
}
