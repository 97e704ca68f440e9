//! Small dense complex least-squares helpers.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Singular values below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Minimum-norm least-squares solution of `[cols] x = rhs` via a truncated
/// pseudo-inverse, together with the numerical rank of the column set.
pub fn lstsq(cols: &[&[Complex64]], rhs: &[Complex64]) -> (Vec<Complex64>, usize) {
    let k = cols.len();
    if k == 0 {
        return (Vec::new(), 0);
    }
    let rows = rhs.len();
    let a = DMatrix::from_fn(rows, k, |r, c| cols[c][r]);
    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_TOL * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff && s > 0.0).count();
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let b = nalgebra::DVector::from_column_slice(rhs);
    let mut x = nalgebra::DVector::<Complex64>::zeros(k);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let coeff = u.column(i).dotc(&b) / s;
        // x += coeff * v_i where v_i is the i-th row of V^H, conjugated
        for j in 0..k {
            x[j] += coeff * v_t[(i, j)].conj();
        }
    }
    (x.iter().cloned().collect(), rank)
}

/// `rhs - [cols] x` for the least-squares `x`.
pub fn ls_residual(cols: &[&[Complex64]], rhs: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>, usize) {
    let (x, rank) = lstsq(cols, rhs);
    let mut r = rhs.to_vec();
    for (col, xi) in cols.iter().zip(&x) {
        for (rm, cm) in r.iter_mut().zip(col.iter()) {
            *rm -= cm * xi;
        }
    }
    (r, x, rank)
}

pub fn energy(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `a^H b`.
pub fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
