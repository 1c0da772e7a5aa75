//! Small dense complex linear algebra used by the coil-domain algorithms.
//! Backed by `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

pub type CMatrix = DMatrix<C64>;

/// Lower Cholesky factor `L` with `a = L Lᴴ`. Fails unless every pivot is
/// real and positive (nalgebra's complex square root would accept negative
/// pivots).
pub fn cholesky_lower(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NotPositiveDefinite);
    }
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

/// Solve `L x = b` for lower-triangular `L`, column by column.
pub fn solve_lower(l: &CMatrix, b: &CMatrix) -> CMatrix {
    l.solve_lower_triangular(b).expect("triangular factor with nonzero diagonal")
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Thin SVD `a = U diag(s) Vᴴ` with singular values sorted descending.
/// Columns of `u` (rows of `v_t` for wide inputs) paired with a zero
/// singular value are zero.
pub struct Svd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v_t: CMatrix,
}

const JACOBI_SWEEPS: usize = 60;

/// One-sided (Hestenes) Jacobi SVD. nalgebra 0.35's bidiagonal SVD returns
/// wrong factors for rank-deficient inputs, which the MPPCA path hits on
/// low-noise patches; Jacobi is exact there and accurate for small values.
pub fn svd(a: &CMatrix) -> Svd {
    if a.nrows() < a.ncols() {
        let t = svd(&a.adjoint());
        return Svd {
            u: t.v_t.adjoint(),
            s: t.s,
            v_t: t.u.adjoint(),
        };
    }
    let (m, n) = (a.nrows(), a.ncols());
    let mut w = a.clone();
    let mut v = CMatrix::identity(n, n);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = w.column(p).iter().map(|x| x.norm_sqr()).sum();
                let beta: f64 = w.column(q).iter().map(|x| x.norm_sqr()).sum();
                let gamma: C64 = (0..m).map(|i| w[(i, p)].conj() * w[(i, q)]).sum();
                let g = gamma.norm();
                if g <= f64::EPSILON * (alpha * beta).sqrt() || g == 0.0 {
                    continue;
                }
                rotated = true;
                let phase = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let xp = mat[(i, p)];
                        let xq = mat[(i, q)] * phase;
                        mat[(i, p)] = xp * c - xq * s;
                        mat[(i, q)] = xp * s + xq * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    Svd {
        u: CMatrix::from_fn(m, n, |r, c| {
            let k = order[c];
            if norms[k] > 0.0 {
                w[(r, k)] / norms[k]
            } else {
                C64::default()
            }
        }),
        s: order.iter().map(|&i| norms[i]).collect(),
        v_t: CMatrix::from_fn(n, n, |r, c| v[(c, order[r])].conj()),
    }
}

/// Hermitian-PD solve via Cholesky: returns `X` with `a X = b`.
pub fn solve_hpd(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let l = cholesky_lower(a)?;
    let y = solve_lower(&l, b);
    Ok(l.adjoint()
        .solve_upper_triangular(&y)
        .expect("triangular factor with nonzero diagonal"))
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).map(|v| v * 0.5)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn column(v: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(v)
}
