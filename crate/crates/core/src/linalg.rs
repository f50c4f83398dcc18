//! Small dense linear-algebra helpers: matrix exponential, conditioning,
//! and the eigen-solves used on cycle matrices.

use nalgebra::{Complex, DMatrix, DVector};

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
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068,
    5.371920351148152,
];

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == 0.0))
}

fn is_upper_triangular(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (0..i).all(|j| a[(i, j)] == 0.0))
}

fn is_lower_triangular(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| a[(i, j)] == 0.0))
}

/// Matrix exponential `exp(a)`.
///
/// Diagonal inputs are exponentiated entrywise and triangular inputs with
/// well separated diagonals use the Parlett recurrence. Everything else goes
/// through Higham's scaling-and-squaring with Padé approximants up to degree 13.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if is_diagonal(a) {
        return DMatrix::from_diagonal(&a.diagonal().map(f64::exp));
    }
    if is_upper_triangular(a) {
        if let Some(e) = parlett_upper(a) {
            return e;
        }
    } else if is_lower_triangular(a) {
        if let Some(e) = parlett_upper(&a.transpose()) {
            return e.transpose();
        }
    }
    expm_pade(a)
}

/// Parlett recurrence for upper-triangular `t`. Returns `None` when two
/// diagonal entries are too close for the divided differences to be accurate.
fn parlett_upper(t: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = t.nrows();
    let scale = t.diagonal().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in i + 1..n {
            if (t[(i, i)] - t[(j, j)]).abs() < 1e-3 * scale {
                return None;
            }
        }
    }
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n {
        f[(i, i)] = t[(i, i)].exp();
    }
    for d in 1..n {
        for i in 0..n - d {
            let j = i + d;
            let mut s = t[(i, j)] * (f[(j, j)] - f[(i, i)]);
            for k in i + 1..j {
                s += t[(i, k)] * f[(k, j)] - f[(i, k)] * t[(k, j)];
            }
            f[(i, j)] = s / (t[(j, j)] - t[(i, i)]);
        }
    }
    Some(f)
}

/// Scaling-and-squaring Padé exponential without structural shortcuts.
pub fn expm_pade(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let nrm = norm1(a);
    let a2 = a * a;

    let low = |b: &[f64]| -> DMatrix<f64> {
        // b has even length 2m+2; u = a * sum b_{2k+1} a^{2k}, v = sum b_{2k} a^{2k}
        let m = b.len() / 2;
        let mut pow = ident.clone();
        let mut u = DMatrix::zeros(n, n);
        let mut v = DMatrix::zeros(n, n);
        for k in 0..m {
            if k > 0 {
                pow = &pow * &a2;
            }
            u += &pow * b[2 * k + 1];
            v += &pow * b[2 * k];
        }
        let u = a * u;
        solve_pade(&u, &v)
    };

    if nrm <= THETA[0] {
        return low(&PADE3);
    }
    if nrm <= THETA[1] {
        return low(&PADE5);
    }
    if nrm <= THETA[2] {
        return low(&PADE7);
    }
    if nrm <= THETA[3] {
        return low(&PADE9);
    }

    let s = if nrm > THETA[4] {
        (nrm / THETA[4]).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scale = 2f64.powi(-s);
    let a1 = a * scale;
    let b = &PADE13;
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a1 * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    let mut r = solve_pade(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn solve_pade(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is singular; input norm is not finite")
}

/// Exact flow map of the affine field `x' = j x + c` over time `t`:
/// returns `(Φ, ψ)` with `x(t) = Φ x(0) + ψ`.
pub fn affine_flow(j: &DMatrix<f64>, c: &DVector<f64>, t: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = j.nrows();
    if c.iter().all(|v| *v == 0.0) {
        return (expm(&(j * t)), DVector::zeros(n));
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(j * t));
    aug.view_mut((0, n), (n, 1)).copy_from(&(c * t));
    let e = expm(&aug);
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, 1)).column(0).into_owned(),
    )
}

/// 2-norm condition number via singular values. Infinite for singular input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    a.clone().complex_eigenvalues().iter().cloned().collect()
}

/// Inverse iteration for the eigenvector of `a` belonging to the eigenvalue
/// closest to `shift`. Returns the unit eigenvector (sign fixed so its
/// largest-magnitude entry is positive) and the Rayleigh quotient.
pub fn inverse_iteration(a: &DMatrix<f64>, shift: f64, iters: usize) -> Option<(DVector<f64>, f64)> {
    let n = a.nrows();
    let scale = norm1(a).max(1.0);
    let mut sigma = shift;
    let mut lu = None;
    for k in 0..8 {
        let m = a - DMatrix::identity(n, n) * sigma;
        let f = m.lu();
        if f.is_invertible() && f.u().diagonal().iter().all(|d| d.is_finite()) {
            lu = Some(f);
            break;
        }
        sigma = shift + scale * 1e-13 * 10f64.powi(k);
    }
    let lu = lu?;
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..iters {
        let w = lu.solve(&v)?;
        let nw = w.norm();
        if !nw.is_finite() || nw == 0.0 {
            return None;
        }
        v = w / nw;
    }
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v = -v;
    }
    let lambda = v.dot(&(a * &v));
    Some((v, lambda))
}

/// Solve `a x = b`, returning `None` when `a` is singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

/// Periodic Schur form of a product `A_L ... A_2 A_1`: orthogonal `Q_0..Q_{L-1}`
/// and upper-triangular `R_1..R_L` with `A_k Q_{k-1} = Q_k R_k` (indices
/// mod `L`). Eigenvalues come out as products of diagonals, so each keeps
/// its own relative accuracy however far the moduli are spread.
#[derive(Clone, Debug)]
pub struct ProductSchur {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
}

/// Periodic orthogonal iteration. Converges when the eigenvalues of the
/// product are real with distinct moduli; returns `None` otherwise.
pub fn product_schur(factors: &[DMatrix<f64>], max_sweeps: usize) -> Option<ProductSchur> {
    let l = factors.len();
    let n = factors.first()?.nrows();
    let mut q0 = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_sweeps {
        let mut q = Vec::with_capacity(l + 1);
        let mut r = Vec::with_capacity(l);
        q.push(q0.clone());
        for a in factors {
            let (qk, rk) = signed_qr(&(a * q.last().unwrap()));
            q.push(qk);
            r.push(rk);
        }
        let d = q[l].transpose() * &q0;
        let off = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|ij| d[ij].abs())
            .fold(0.0, f64::max);
        if !off.is_finite() {
            return None;
        }
        if off < 1e-14 {
            // Close the chain exactly: fold the column signs of Q_L = Q_0 S
            // into R_L.
            let last = r.last_mut().unwrap();
            for i in 0..n {
                if d[(i, i)] < 0.0 {
                    last.row_mut(i).neg_mut();
                }
            }
            q.pop();
            return Some(ProductSchur { q, r });
        }
        q0 = q.pop().unwrap();
    }
    None
}

/// QR with a nonnegative diagonal in `R`.
fn signed_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    let (mut q, mut r) = (qr.q(), qr.r());
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (q, r)
}

impl ProductSchur {
    /// Eigenvalues of the product, by decreasing modulus.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.q[0].nrows();
        (0..n).map(|j| self.r.iter().map(|r| r[(j, j)]).product()).collect()
    }

    /// Eigenvector for eigenvalue `j` of the cyclically shifted product
    /// `A_m ... A_1 A_L ... A_{m+1}`, in original coordinates, unit length.
    pub fn eigenvector(&self, m: usize, j: usize) -> DVector<f64> {
        let l = self.r.len();
        let n = self.q[0].nrows();
        let mut u = DMatrix::<f64>::identity(n, n);
        for k in 0..l {
            u = &self.r[(m + k) % l] * u;
        }
        let lambda = u[(j, j)];
        let mut y = DVector::zeros(n);
        y[j] = 1.0;
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|c| u[(i, c)] * y[c]).sum();
            y[i] = s / (lambda - u[(i, i)]);
        }
        (&self.q[m % l] * y).normalize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        // Brute-force reference: scale down, long Taylor series, square back.
        let s = 10;
        let a1 = a / 2f64.powi(s);
        let n = a.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &a1 / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn diagonal_is_entrywise() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0, 0.5]));
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], 1f64.exp(), epsilon = 1e-15);
        assert_relative_eq!(e[(1, 1)], (-2f64).exp(), epsilon = 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn pade_matches_taylor_across_norms() {
        for &scale in &[1e-3, 0.2, 0.9, 2.0, 5.0, 30.0] {
            let a = DMatrix::from_row_slice(
                3,
                3,
                &[0.3, -1.2, 0.5, 0.7, -0.4, 0.1, -0.6, 0.2, 0.9],
            ) * scale;
            let e = expm_pade(&a);
            let r = taylor_expm(&a);
            let rel = (&e - &r).norm() / r.norm();
            assert!(rel < 1e-12, "scale {scale}: rel err {rel}");
        }
    }

    #[test]
    fn parlett_matches_pade_on_triangular() {
        let rho = 3.0;
        let t = 1.7;
        // Lower-triangular adjoint block with a rho*sinh(t) closed-form entry.
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, rho, -1.0, 0.0, 0.0, 0.0, rho - 1.0]);
        let e = expm(&(&a * t));
        let p = expm_pade(&(&a * t));
        assert!((&e - &p).norm() < 1e-12 * p.norm());
        assert_relative_eq!(e[(1, 0)], rho * t.sinh(), epsilon = 1e-12);
    }

    #[test]
    fn parlett_handles_dense_upper_triangle() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[-1.0, -3.0, 0.5, 0.97, 0.0, 1.0, 2.0, 0.01, 0.0, 0.0, -2.0, 0.02, 0.0, 0.0, 0.0, 0.0],
        );
        for t in [0.125, 1.0, 2.9] {
            let e = expm(&(&a * t));
            let p = taylor_expm(&(&a * t));
            assert!((&e - &p).norm() < 1e-11 * p.norm(), "t = {t}");
        }
    }

    #[test]
    fn affine_flow_matches_closed_form() {
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let c = DVector::from_vec(vec![-5.0, 11.0]);
        let (phi, psi) = affine_flow(&j, &c, 0.8);
        let x0 = DVector::from_vec(vec![2.0, 0.0]);
        let x = phi * &x0 + psi;
        let e = (-0.8f64).exp();
        assert_relative_eq!(x[0], -5.0 + (2.0 + 5.0) * e, epsilon = 1e-14);
        assert_relative_eq!(x[1], 11.0 * (1.0 - e), epsilon = 1e-14);
    }

    #[test]
    fn inverse_iteration_finds_unit_eigenvector() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 36.213203435596427, 16.0]);
        let (v, lambda) = inverse_iteration(&b, 1.0, 50).unwrap();
        assert_relative_eq!(lambda, 1.0, epsilon = 1e-10);
        assert!((&b * &v - &v).norm() < 1e-10);
    }

    #[test]
    fn product_schur_resolves_spread_spectrum() {
        // f_k = G_k D G_{k-1}^{-1} with G_4 = G_0, so the product is
        // G_0 D^4 G_0^{-1} with eigenvalues 1e16, 1 and 1e-12.
        let g: Vec<DMatrix<f64>> = (0..4)
            .map(|k| {
                let s = k as f64;
                DMatrix::from_row_slice(3, 3, &[1.0, 0.3 + s, -0.2, 0.1 * s, 1.0, 0.5, -0.4, 0.2, 1.0 + s])
            })
            .collect();
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1e4, 1.0, 1e-3]));
        let factors: Vec<DMatrix<f64>> = (0..4)
            .map(|k| &g[(k + 1) % 4] * &d * g[k].clone().try_inverse().unwrap())
            .collect();
        let ps = product_schur(&factors, 100).unwrap();
        let eig = ps.eigenvalues();
        assert_relative_eq!(eig[0], 1e16, max_relative = 1e-12);
        assert_relative_eq!(eig[1], 1.0, epsilon = 1e-10);
        assert_relative_eq!(eig[2], 1e-12, max_relative = 1e-10);
        for m in 0..4 {
            let v = ps.eigenvector(m, 1);
            let want = g[m].column(1).normalize();
            assert!((&v - &want).norm().min((&v + &want).norm()) < 1e-10);
        }
    }

    #[test]
    fn product_schur_gives_up_on_rotations() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(product_schur(&[r], 50).is_none());
    }
}
