//! Dense linear-algebra helpers shared by the filtering modules.
//!
//! Everything here works on `nalgebra` dynamic matrices. The matrix
//! exponential is the degree-3..13 Padé scaling-and-squaring scheme of
//! Higham (2005); covariance factors use a diagonally pivoted Cholesky that
//! tolerates positive-semidefinite input.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norms for which each Padé degree reaches unit roundoff.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539398330063230e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068e0;
const THETA13: f64 = 5.371920351148152e0;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut u_inner = &ident * b[1];
    let mut v = &ident * b[0];
    let mut power = ident.clone();
    let m = b.len() - 1;
    for k in 1..=(m / 2) {
        power = &power * &a2;
        v += &power * b[2 * k];
        u_inner += &power * b[2 * k + 1];
    }
    (a * u_inner, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &PADE13;
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    (u, v)
}

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidParameter(
            "matrix exponential needs a square matrix".into(),
        ));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "matrix exponential of non-finite matrix".into(),
        ));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let nrm = norm1(a);
    let (u, v, squarings) = if nrm <= THETA3 {
        let (u, v) = pade_low(a, &PADE3);
        (u, v, 0)
    } else if nrm <= THETA5 {
        let (u, v) = pade_low(a, &PADE5);
        (u, v, 0)
    } else if nrm <= THETA7 {
        let (u, v) = pade_low(a, &PADE7);
        (u, v, 0)
    } else if nrm <= THETA9 {
        let (u, v) = pade_low(a, &PADE9);
        (u, v, 0)
    } else {
        let s = (nrm / THETA13).log2().ceil().max(0.0) as i32;
        let (u, v) = pade13(&(a / 2f64.powi(s)));
        (u, v, s)
    };
    let denom = &v - &u;
    let numer = &v + &u;
    let lu = denom.lu();
    let mut result = lu
        .solve(&numer)
        .ok_or_else(|| Error::Numeric("singular Padé denominator in expm".into()))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry relative to the largest entry (or 1).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() / scale
}

/// Factor `L` with `L Lᵀ = m` for a symmetric positive-semidefinite `m`,
/// using diagonal pivoting so singular and zero matrices are accepted.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::InvalidParameter("factorization needs a square matrix".into()));
    }
    let scale = m.diagonal().iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 {
        if m.amax() > 0.0 {
            return Err(Error::Numeric("matrix is indefinite".into()));
        }
        return Ok(DMatrix::zeros(n, n));
    }
    let tol = 1e-12 * scale;
    let mut a = symmetrize(m);
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rank = n;
    for k in 0..n {
        let (q, _) = (k..n)
            .map(|i| (i, a[(i, i)]))
            .fold((k, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if q != k {
            a.swap_rows(k, q);
            a.swap_columns(k, q);
            l.swap_rows(k, q);
            perm.swap(k, q);
        }
        let d = a[(k, k)];
        if d <= tol {
            rank = k;
            break;
        }
        let root = d.sqrt();
        l[(k, k)] = root;
        for i in (k + 1)..n {
            l[(i, k)] = a[(i, k)] / root;
        }
        for j in (k + 1)..n {
            for i in j..n {
                let v = a[(i, j)] - l[(i, k)] * l[(j, k)];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
    }
    // The trailing Schur complement must vanish for a semidefinite input.
    for i in rank..n {
        for j in rank..n {
            let v = a[(i, j)];
            if (i == j && v < -1e-10 * scale) || (i != j && v.abs() > 1e-9 * scale) {
                return Err(Error::Numeric("matrix is indefinite".into()));
            }
        }
    }
    let mut factor = DMatrix::<f64>::zeros(n, n);
    for (row, &orig) in perm.iter().enumerate() {
        factor.set_row(orig, &l.row(row));
    }
    Ok(factor)
}

/// Symmetric square root with eigenvalues clamped at zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

pub fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

pub(crate) fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|x| x.is_finite())
}
