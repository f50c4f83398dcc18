//! Infinitesimal phase response curves of hybrid limit cycles.
//!
//! Inside segment `k` the iPRC solves `z' = A_k z` with `A_k = -DF_k^T`. At a
//! crossing it jumps by `M = 𝒜^{-1} ℬ`, where the rows of `𝒜` are `F+` and a
//! tangent basis of the surface and the rows of `ℬ` are `F-` and the same
//! tangents. `M` is the inverse transpose of the saltation matrix.

use nalgebra::{DMatrix, DVector};

use crate::cycle::{rk4_steps, LimitCycle};
use crate::dense::{DenseCurve, DensePiece};
use crate::error::{Error, Result};
use nalgebra::Complex;

use crate::linalg::{condition_number, eigenvalues, expm, inverse_iteration, product_schur};
use crate::system::{tangent_basis, PiecewiseSystem};

pub const SINGULAR_COND: f64 = 1e12;
pub const GRAZING_TOL: f64 = 1e-10;

fn stack_rows(first: &DVector<f64>, rest: &[DVector<f64>]) -> DMatrix<f64> {
    let n = first.len();
    let mut m = DMatrix::zeros(n, n);
    m.set_row(0, &first.transpose());
    for (i, w) in rest.iter().enumerate() {
        m.set_row(i + 1, &w.transpose());
    }
    m
}

/// `(𝒜, ℬ)` for a crossing with the given tangent basis.
pub fn jump_system(
    f_before: &DVector<f64>,
    f_after: &DVector<f64>,
    basis: &[DVector<f64>],
) -> (DMatrix<f64>, DMatrix<f64>) {
    (stack_rows(f_after, basis), stack_rows(f_before, basis))
}

/// Jump matrix with an explicit tangent basis.
pub fn jump_matrix_with_basis(
    f_before: &DVector<f64>,
    f_after: &DVector<f64>,
    basis: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let (a, b) = jump_system(f_before, f_after, basis);
    let cond = condition_number(&a);
    if cond > SINGULAR_COND {
        return Err(Error::SingularCrossing { cond });
    }
    a.lu().solve(&b).ok_or(Error::SingularCrossing { cond })
}

/// Jump matrix `M` mapping `z-` to `z+` across a surface with unit normal
/// `normal`.
pub fn jump_matrix(
    f_before: &DVector<f64>,
    f_after: &DVector<f64>,
    normal: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    jump_matrix_with_basis(f_before, f_after, &tangent_basis(normal))
}

/// Saltation matrix `S = I + (F+ - F-) n^T / (n . F-)`.
pub fn saltation_matrix(
    f_before: &DVector<f64>,
    f_after: &DVector<f64>,
    normal: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let denom = normal.dot(f_before);
    if denom.abs() < GRAZING_TOL {
        return Err(Error::GrazingCrossing { value: denom });
    }
    let n = f_before.len();
    Ok(DMatrix::identity(n, n) + (f_after - f_before) * normal.transpose() / denom)
}

/// `exp(A t)` with `A = -J^T`.
pub fn adjoint_segment_affine(jacobian: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    expm(&(-jacobian.transpose() * t))
}

/// One-sided fields and unit normal at the crossing into segment `k`.
pub fn crossing_fields(
    sys: &PiecewiseSystem,
    cycle: &LimitCycle,
    k: usize,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let (sid, p, from, to) = cycle.crossing_into(k);
    let s = sys.surface(sid);
    let n = s.unit_normal(&p);
    (
        sys.one_sided_field(from, &p),
        sys.one_sided_field(to, &s.post_point(&p)),
        n,
    )
}

/// Jump matrices `M_k` (into segment `k`) for every crossing of the cycle.
pub fn cycle_jumps(sys: &PiecewiseSystem, cycle: &LimitCycle) -> Result<Vec<DMatrix<f64>>> {
    (0..cycle.segments.len())
        .map(|k| {
            let (fm, fp, n) = crossing_fields(sys, cycle, k);
            jump_matrix(&fm, &fp, &n)
        })
        .collect()
}

/// Jumps, segment propagators `exp(A_k t_k)` and the cycle matrix
/// `B = M_1 exp(A_K t_K) M_K ... M_2 exp(A_1 t_1)`.
#[derive(Clone, Debug)]
pub struct CycleMatrices {
    pub jumps: Vec<DMatrix<f64>>,
    pub propagators: Vec<DMatrix<f64>>,
    pub b: DMatrix<f64>,
}

pub fn cycle_matrix_b(sys: &PiecewiseSystem, cycle: &LimitCycle) -> Result<CycleMatrices> {
    let jumps = cycle_jumps(sys, cycle)?;
    let mut propagators = Vec::with_capacity(jumps.len());
    for seg in &cycle.segments {
        let (j, _) = sys.region(seg.region).field.as_affine().ok_or_else(|| {
            Error::InvalidInput(format!(
                "region {} is not affine; use iprc_general",
                seg.region
            ))
        })?;
        propagators.push(adjoint_segment_affine(j, seg.time_of_flight));
    }
    let kk = jumps.len();
    let n = sys.dim;
    let mut b = DMatrix::identity(n, n);
    for k in 0..kk {
        b = &jumps[(k + 1) % kk] * (&propagators[k] * b);
    }
    Ok(CycleMatrices {
        jumps,
        propagators,
        b,
    })
}

/// Sweeps allowed for the periodic Schur iteration on the factors of `B`.
const PRODUCT_SWEEPS: usize = 500;

impl CycleMatrices {
    /// Factors of `B` in the order they act:
    /// `exp(A_1 t_1), M_2, exp(A_2 t_2), ..., exp(A_K t_K), M_1`.
    pub fn factors(&self) -> Vec<DMatrix<f64>> {
        let kk = self.jumps.len();
        (0..kk)
            .flat_map(|k| [self.propagators[k].clone(), self.jumps[(k + 1) % kk].clone()])
            .collect()
    }

    /// Eigenvalues of `B`. Taken from the periodic Schur form of the
    /// factors when it exists, which resolves the unit eigenvalue to full
    /// precision even when `B` has entries of order `1e12`.
    pub fn spectrum(&self) -> Vec<Complex<f64>> {
        match product_schur(&self.factors(), PRODUCT_SWEEPS) {
            Some(ps) => ps.eigenvalues().into_iter().map(|l| Complex::new(l, 0.0)).collect(),
            None => eigenvalues(&self.b),
        }
    }
}

fn normalize_iprc(z: DVector<f64>, f: &DVector<f64>, period: f64) -> Result<DVector<f64>> {
    let d = f.dot(&z);
    if d.abs() < 1e-12 * f.norm() {
        return Err(Error::DegenerateNormalization { value: d });
    }
    Ok(z / (period * d))
}

/// Unit-eigenvalue eigenvector of `B`, scaled so `F_{1,0} . z = 1/T`.
/// Returns the vector and the eigenvalue found.
pub fn iprc_initial_condition(
    b: &DMatrix<f64>,
    f10: &DVector<f64>,
    period: f64,
    unit_tol: f64,
) -> Result<(DVector<f64>, f64)> {
    let eig = eigenvalues(b);
    let closest = eig
        .iter()
        .min_by(|x, y| (*x - 1.0).norm().total_cmp(&(*y - 1.0).norm()))
        .copied()
        .ok_or(Error::NoUnitEigenvalue {
            closest: f64::NAN,
            tol: unit_tol,
        })?;
    if (closest - 1.0).norm() >= unit_tol || closest.im.abs() > unit_tol {
        return Err(Error::NoUnitEigenvalue {
            closest: closest.re,
            tol: unit_tol,
        });
    }
    let (zhat, lambda) = inverse_iteration(b, 1.0, 50).ok_or(Error::NoUnitEigenvalue {
        closest: closest.re,
        tol: unit_tol,
    })?;
    let d = f10.dot(&zhat);
    if d.abs() < 1e-12 {
        return Err(Error::DegenerateNormalization { value: d });
    }
    Ok((zhat / (period * d), lambda))
}

/// iPRC on one segment.
#[derive(Clone, Debug)]
pub struct IprcSegment {
    /// `A_k` when the segment is affine.
    pub adjoint: Option<DMatrix<f64>>,
    /// Value just after entering the segment.
    pub z0: DVector<f64>,
    pub t0: f64,
    pub duration: f64,
}

/// Piecewise iPRC around a cycle, right-continuous at the breakpoints.
#[derive(Clone, Debug)]
pub struct PiecewiseIprc {
    pub period: f64,
    pub segments: Vec<IprcSegment>,
    pub jumps: Vec<DMatrix<f64>>,
    pub b: Option<DMatrix<f64>>,
    pub eigenvalue: Option<f64>,
    /// Dense Hermite representation used for bulk evaluation.
    pub curve: DenseCurve,
}

impl PiecewiseIprc {
    /// `z` at phase `theta` (cycles, wrapped into `[0, 1)`).
    pub fn evaluate(&self, theta: f64) -> DVector<f64> {
        self.evaluate_time(theta * self.period)
    }

    /// `z` at cycle time `t`, exact for affine segments.
    pub fn evaluate_time(&self, t: f64) -> DVector<f64> {
        let (k, tau) = self.curve.locate(t);
        let seg = &self.segments[k];
        match &seg.adjoint {
            Some(a) => expm(&(a * tau)) * &seg.z0,
            None => self.curve.pieces[k].eval(tau),
        }
    }

    /// Left limit of `z` at the end of segment `k`.
    pub fn segment_end(&self, k: usize) -> DVector<f64> {
        let seg = &self.segments[k];
        match &seg.adjoint {
            Some(a) => expm(&(a * seg.duration)) * &seg.z0,
            None => self.curve.pieces[k].eval(seg.duration),
        }
    }

    /// Same initial value propagated with every jump replaced by the
    /// identity (only for affine segments).
    pub fn with_identity_jumps(&self, dense_intervals: usize) -> Self {
        let n = self.segments[0].z0.len();
        let ident = DMatrix::identity(n, n);
        let mut out = self.clone();
        let mut z = self.segments[0].z0.clone();
        for seg in out.segments.iter_mut() {
            seg.z0 = z.clone();
            let a = seg.adjoint.as_ref().expect("identity-jump control needs affine segments");
            z = expm(&(a * seg.duration)) * z;
        }
        out.jumps = vec![ident; self.jumps.len()];
        out.curve = affine_curve(&out.segments, self.period, dense_intervals);
        out
    }
}

#[derive(Clone, Debug)]
pub struct IprcOptions {
    /// Accept an eigenvalue of `B` as the unit one when `|lambda - 1| < unit_tol`.
    pub unit_tol: f64,
    pub dense_intervals: usize,
    /// Relative change per period that ends the backward adjoint iteration.
    pub general_tol: f64,
    pub max_periods: usize,
}

impl Default for IprcOptions {
    fn default() -> Self {
        IprcOptions {
            unit_tol: 1e-4,
            dense_intervals: 1024,
            general_tol: 1e-10,
            max_periods: 200,
        }
    }
}

fn affine_curve(segments: &[IprcSegment], period: f64, m: usize) -> DenseCurve {
    let pieces = segments
        .iter()
        .map(|seg| {
            let a = seg.adjoint.as_ref().unwrap();
            let step = expm(&(a * (seg.duration / m as f64)));
            let mut values = Vec::with_capacity(m + 1);
            let mut z = seg.z0.clone();
            for _ in 0..m {
                values.push(z.clone());
                z = &step * z;
            }
            values.push(expm(&(a * seg.duration)) * &seg.z0);
            let derivs = values.iter().map(|v| a * v).collect();
            DensePiece {
                t0: seg.t0,
                duration: seg.duration,
                values,
                derivs,
            }
        })
        .collect();
    DenseCurve { period, pieces }
}

/// Closed-form iPRC of a cycle whose segments all lie in affine regions.
pub fn iprc_affine(sys: &PiecewiseSystem, cycle: &LimitCycle, opts: &IprcOptions) -> Result<PiecewiseIprc> {
    let mats = cycle_matrix_b(sys, cycle)?;
    let kk = cycle.segments.len();
    let entry_field = |k: usize| {
        let seg = &cycle.segments[k];
        sys.one_sided_field(seg.region, &seg.entry())
    };
    // Each segment's initial value is the unit eigenvector of its own
    // cyclic shift of B. Propagating z_{1,0} once around instead would
    // amplify rounding by the largest eigenvalue of B.
    let (starts, lambda) = match product_schur(&mats.factors(), PRODUCT_SWEEPS) {
        Some(ps) => {
            let eig = ps.eigenvalues();
            let j = (0..eig.len())
                .min_by(|&a, &b| (eig[a] - 1.0).abs().total_cmp(&(eig[b] - 1.0).abs()))
                .unwrap();
            if (eig[j] - 1.0).abs() >= opts.unit_tol {
                return Err(Error::NoUnitEigenvalue {
                    closest: eig[j],
                    tol: opts.unit_tol,
                });
            }
            let starts = (0..kk)
                .map(|k| normalize_iprc(ps.eigenvector(2 * k, j), &entry_field(k), cycle.period))
                .collect::<Result<Vec<_>>>()?;
            (starts, eig[j])
        }
        None => {
            let (mut z, lambda) = iprc_initial_condition(&mats.b, &entry_field(0), cycle.period, opts.unit_tol)?;
            let mut starts = Vec::with_capacity(kk);
            for k in 0..kk {
                starts.push(z.clone());
                z = &mats.jumps[(k + 1) % kk] * (&mats.propagators[k] * z);
            }
            (starts, lambda)
        }
    };
    let breaks = cycle.breakpoints();
    let segments: Vec<IprcSegment> = cycle
        .segments
        .iter()
        .zip(starts)
        .enumerate()
        .map(|(k, (seg, z0))| {
            let (j, _) = sys.region(seg.region).field.as_affine().unwrap();
            IprcSegment {
                adjoint: Some(-j.transpose()),
                z0,
                t0: breaks[k],
                duration: seg.time_of_flight,
            }
        })
        .collect();
    let curve = affine_curve(&segments, cycle.period, opts.dense_intervals);
    Ok(PiecewiseIprc {
        period: cycle.period,
        segments,
        jumps: mats.jumps,
        b: Some(mats.b),
        eigenvalue: Some(lambda),
        curve,
    })
}

/// iPRC by repeated backward integration of the adjoint equation around
/// the cycle, for any mix of affine and general regions.
pub fn iprc_general(sys: &PiecewiseSystem, cycle: &LimitCycle, opts: &IprcOptions) -> Result<PiecewiseIprc> {
    let kk = cycle.segments.len();
    let period = cycle.period;
    let first = &cycle.segments[0];
    let f10 = sys.one_sided_field(first.region, &first.entry());

    // Backward jump z- = ℬ^{-1} 𝒜 z+, solved rather than inverting M.
    let mut back = Vec::with_capacity(kk);
    let mut jumps = Vec::with_capacity(kk);
    for k in 0..kk {
        let (fm, fp, n) = crossing_fields(sys, cycle, k);
        let basis = tangent_basis(&n);
        let (a, b) = jump_system(&fm, &fp, &basis);
        jumps.push(jump_matrix_with_basis(&fm, &fp, &basis)?);
        back.push((a, b.lu()));
    }

    let adjoint_at = |k: usize, tau: f64| -> DMatrix<f64> {
        let seg = &cycle.segments[k];
        let field = &sys.region(seg.region).field;
        let x = cycle.curve.pieces[k].eval(tau);
        -field.jacobian(&x).transpose()
    };
    let steps: Vec<usize> = (0..kk)
        .map(|k| {
            let seg = &cycle.segments[k];
            rk4_steps(seg.time_of_flight, &adjoint_at(k, 0.0))
        })
        .collect();

    let mut z10 = &f10 / (period * f10.norm_squared());
    let mut samples: Vec<Vec<DVector<f64>>> = vec![Vec::new(); kk];
    let mut converged = false;
    for _ in 0..opts.max_periods {
        let mut z_next = z10.clone();
        for k in (0..kk).rev() {
            let (a, lu_b) = &back[(k + 1) % kk];
            let z_end = lu_b
                .solve(&(a * &z_next))
                .ok_or(Error::SingularCrossing { cond: f64::INFINITY })?;
            let seg = &cycle.segments[k];
            samples[k] = rk4_vector_samples(|tau| adjoint_at(k, tau), z_end, seg.time_of_flight, steps[k]);
            z_next = samples[k][0].clone();
        }
        let d = f10.dot(&z_next);
        if d.abs() < 1e-300 {
            return Err(Error::DegenerateNormalization { value: d });
        }
        let scale = 1.0 / (period * d);
        for s in samples.iter_mut().flat_map(|v| v.iter_mut()) {
            *s *= scale;
        }
        let new = z_next * scale;
        let change = (&new - &z10).norm() / new.norm();
        z10 = new;
        if change < opts.general_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            residual: f64::NAN,
            iterations: opts.max_periods,
        });
    }

    let starts = cycle.breakpoints();
    let mut segments = Vec::with_capacity(kk);
    let mut pieces = Vec::with_capacity(kk);
    for k in 0..kk {
        let seg = &cycle.segments[k];
        let vals = std::mem::take(&mut samples[k]);
        let m = vals.len() - 1;
        let dt = seg.time_of_flight / m as f64;
        let derivs = vals
            .iter()
            .enumerate()
            .map(|(i, v)| adjoint_at(k, i as f64 * dt) * v)
            .collect();
        segments.push(IprcSegment {
            adjoint: None,
            z0: vals[0].clone(),
            t0: starts[k],
            duration: seg.time_of_flight,
        });
        pieces.push(DensePiece {
            t0: starts[k],
            duration: seg.time_of_flight,
            values: vals,
            derivs,
        });
    }
    Ok(PiecewiseIprc {
        period,
        segments,
        jumps,
        b: None,
        eigenvalue: None,
        curve: DenseCurve { period, pieces },
    })
}

/// RK4 for `z' = A(tau) z` integrated backward from `tau = t` to 0; returns
/// the values at the uniform nodes in forward order.
fn rk4_vector_samples(
    a: impl Fn(f64) -> DMatrix<f64>,
    z_end: DVector<f64>,
    t: f64,
    steps: usize,
) -> Vec<DVector<f64>> {
    let h = -t / steps as f64;
    let mut out = vec![DVector::zeros(z_end.len()); steps + 1];
    let mut z = z_end;
    let mut tau = t;
    out[steps] = z.clone();
    let mut a1 = a(tau);
    for i in (0..steps).rev() {
        let a0 = a1;
        let am = a(tau + 0.5 * h);
        a1 = a(tau + h);
        let k1 = &a0 * &z;
        let k2 = &am * (&z + &k1 * (0.5 * h));
        let k3 = &am * (&z + &k2 * (0.5 * h));
        let k4 = &a1 * (&z + &k3 * h);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        tau += h;
        out[i] = z.clone();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn jump_is_inverse_transpose_of_saltation() {
        let fm = v(&[1.0, 0.3, -0.2]);
        let fp = v(&[2.0, -0.5, 0.7]);
        let n = v(&[0.6, 0.8, 0.0]);
        let m = jump_matrix(&fm, &fp, &n).unwrap();
        let s = saltation_matrix(&fm, &fp, &n).unwrap();
        let prod = m.transpose() * s;
        assert!((prod - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn grazing_is_rejected() {
        let fm = v(&[1.0, 0.0]);
        let fp = v(&[1.0, 1.0]);
        let n = v(&[0.0, 1.0]);
        assert!(matches!(
            saltation_matrix(&fm, &fp, &n),
            Err(Error::GrazingCrossing { .. })
        ));
    }

    #[test]
    fn one_dimensional_jump_is_field_ratio() {
        let m = jump_matrix(&v(&[0.05]), &v(&[1.0]), &v(&[1.0])).unwrap();
        assert!((m[(0, 0)] - 0.05).abs() < 1e-15);
    }
}
