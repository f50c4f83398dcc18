//! Limit cycles: Poincaré sections, Newton on the section map, analytic Glass
//! cycles and Floquet multipliers.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense::{DenseCurve, DensePiece};
use crate::error::{Error, Result};
use crate::integrate::{Control, Crossing, FlowState, Integrator, IntegratorOptions, Observer};
use crate::iprc::saltation_matrix;
use crate::linalg::{affine_flow, eigenvalues, product_schur};
use crate::system::{tangent_basis, PiecewiseSystem};

/// A section on one declared surface, parameterized as
/// `base + sum_i u_i axes_i` (projected onto the surface when it is curved).
#[derive(Clone, Debug)]
pub struct PoincareSection {
    pub surface: usize,
    pub base: DVector<f64>,
    pub axes: Vec<DVector<f64>>,
}

impl PoincareSection {
    /// Section on `surface` through `base` with the orthonormal tangent basis
    /// as coordinate axes.
    pub fn new(sys: &PiecewiseSystem, surface: usize, base: DVector<f64>) -> Self {
        let n = sys.surface(surface).unit_normal(&base);
        PoincareSection {
            surface,
            base,
            axes: tangent_basis(&n),
        }
    }

    pub fn with_axes(surface: usize, base: DVector<f64>, axes: Vec<DVector<f64>>) -> Self {
        PoincareSection {
            surface,
            base,
            axes,
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Point on the surface (in `from` coordinates) with section coordinates `u`.
    pub fn embed(&self, sys: &PiecewiseSystem, u: &DVector<f64>) -> DVector<f64> {
        let mut p = self.base.clone();
        for (ui, a) in u.iter().zip(&self.axes) {
            p += a * *ui;
        }
        let s = sys.surface(self.surface);
        if s.is_hyperplane() {
            p
        } else {
            s.project(&p)
        }
    }

    /// Section coordinates of a point on the surface (least squares).
    pub fn coords(&self, p: &DVector<f64>) -> DVector<f64> {
        let d = self.dim();
        if d == 0 {
            return DVector::zeros(0);
        }
        let n = p.len();
        let mut a = DMatrix::zeros(n, d);
        for (j, ax) in self.axes.iter().enumerate() {
            a.set_column(j, ax);
        }
        let rhs = a.transpose() * (p - &self.base);
        (a.transpose() * &a)
            .lu()
            .solve(&rhs)
            .expect("section axes are linearly dependent")
    }
}

/// Result of one application of the section map.
#[derive(Clone, Debug)]
pub struct SectionReturn {
    pub coords: DVector<f64>,
    pub point: DVector<f64>,
    pub time: f64,
    pub crossings: Vec<Crossing>,
}

struct UntilSurface {
    surface: usize,
    crossings: Vec<Crossing>,
}

impl Observer for UntilSurface {
    fn crossing(&mut self, c: &Crossing) -> Control {
        self.crossings.push(c.clone());
        if c.surface == self.surface {
            Control::Halt
        } else {
            Control::Continue
        }
    }
}

/// Flows from the section point `u` until the section surface is crossed
/// again in the same direction.
pub fn poincare_map(
    integ: &Integrator,
    section: &PoincareSection,
    u: &DVector<f64>,
    horizon: f64,
) -> Result<SectionReturn> {
    let sys = integ.system();
    let s = sys.surface(section.surface);
    let p = section.embed(sys, u);
    let start = FlowState {
        t: 0.0,
        x: s.post_point(&p),
        region: s.to,
    };
    let mut obs = UntilSurface {
        surface: section.surface,
        crossings: Vec::new(),
    };
    let (end, halted) = integ.advance(start, horizon, &[], &mut obs)?;
    if !halted {
        return Err(Error::NoReturn { horizon });
    }
    let last = obs.crossings.last().unwrap();
    Ok(SectionReturn {
        coords: section.coords(&last.point),
        point: last.point.clone(),
        time: end.t,
        crossings: obs.crossings,
    })
}

/// One smooth piece of a limit cycle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Segment {
    pub region: usize,
    /// State at the start of the segment, in this region's coordinates.
    pub entry_point: Vec<f64>,
    pub time_of_flight: f64,
    /// Surface crossed to enter this segment.
    pub entry_surface: usize,
    /// State at the end of the segment, on the exit surface.
    pub exit_point: Vec<f64>,
}

impl Segment {
    pub fn entry(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.entry_point)
    }

    pub fn exit(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.exit_point)
    }
}

/// A hybrid limit cycle with phase zero at the entry of segment 1.
#[derive(Clone, Debug)]
pub struct LimitCycle {
    pub segments: Vec<Segment>,
    pub period: f64,
    pub section: PoincareSection,
    /// Cubic Hermite representation of the orbit.
    pub curve: DenseCurve,
}

impl LimitCycle {
    /// Segment start times `T_0 = 0, T_1, .., T_{K-1}`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.segments.len());
        let mut t = 0.0;
        for s in &self.segments {
            out.push(t);
            t += s.time_of_flight;
        }
        out
    }

    /// Segment index and local time at cycle time `t` (right-continuous).
    pub fn segment_at(&self, t: f64) -> (usize, f64) {
        self.curve.locate(t)
    }

    /// Exact state at cycle time `t` for affine segments; dense interpolant
    /// otherwise.
    pub fn state_at(&self, sys: &PiecewiseSystem, t: f64) -> DVector<f64> {
        let (k, tau) = self.segment_at(t);
        let seg = &self.segments[k];
        match sys.region(seg.region).field.as_affine() {
            Some((j, c)) => {
                let (phi, psi) = affine_flow(j, c, tau);
                phi * seg.entry() + psi
            }
            None => self.curve.pieces[k].eval(tau),
        }
    }

    /// Crossing into segment `k` as `(surface, point in from coordinates,
    /// region before, region after)`.
    pub fn crossing_into(&self, k: usize) -> (usize, DVector<f64>, usize, usize) {
        let kk = self.segments.len();
        let prev = &self.segments[(k + kk - 1) % kk];
        let seg = &self.segments[k];
        (seg.entry_surface, prev.exit(), prev.region, seg.region)
    }

    /// Minimum distance from `x` to the dense orbit samples.
    pub fn distance_to(&self, x: &DVector<f64>) -> f64 {
        self.curve
            .pieces
            .iter()
            .flat_map(|p| p.values.iter())
            .map(|v| (v - x).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct CycleOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    /// Plain iterates of the section map before Newton starts. They move
    /// the guess toward the attracting fixed point and away from repelling
    /// ones, which Newton would converge to just as readily.
    pub warmup: usize,
    /// Give up on a return to the section after this much time.
    pub horizon: f64,
    /// Hermite intervals per segment in the dense orbit.
    pub dense_intervals: usize,
    pub integrator: IntegratorOptions,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            tol: 1e-10,
            max_iter: 50,
            fd_step: 1e-6,
            warmup: 3,
            horizon: 1000.0,
            dense_intervals: 1024,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// Central-difference Jacobian of the section map.
fn section_jacobian(
    integ: &Integrator,
    section: &PoincareSection,
    u: &DVector<f64>,
    opts: &CycleOptions,
) -> Result<DMatrix<f64>> {
    let d = section.dim();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut up = u.clone();
        let mut dn = u.clone();
        up[j] += opts.fd_step;
        dn[j] -= opts.fd_step;
        let pu = poincare_map(integ, section, &up, opts.horizon)?.coords;
        let pd = poincare_map(integ, section, &dn, opts.horizon)?.coords;
        jac.set_column(j, &((pu - pd) / (2.0 * opts.fd_step)));
    }
    Ok(jac)
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Newton iteration on `P(u) - u` from `guess`, then one recorded traversal.
pub fn find_limit_cycle(
    sys: &PiecewiseSystem,
    section: &PoincareSection,
    guess: &DVector<f64>,
    opts: &CycleOptions,
) -> Result<LimitCycle> {
    let integ = Integrator::new(sys, opts.integrator.clone());
    let d = section.dim();
    let mut u = guess.clone();
    let mut converged = d == 0;
    if d > 0 {
        for _ in 0..opts.warmup {
            u = poincare_map(&integ, section, &u, opts.horizon)?.coords;
        }
    }
    for _ in 0..opts.max_iter {
        if converged {
            break;
        }
        let r = poincare_map(&integ, section, &u, opts.horizon)?.coords - &u;
        let residual = r.norm();
        if residual < opts.tol {
            converged = true;
            break;
        }
        let jac = section_jacobian(&integ, section, &u, opts)? - DMatrix::identity(d, d);
        let step = jac.lu().solve(&(-&r)).ok_or(Error::NoConvergence {
            residual,
            iterations: 0,
        })?;
        // Backtrack if the full step makes the residual worse; if no
        // fraction helps, take one plain iterate of the map instead.
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..10 {
            let next = &u + &step * lambda;
            if let Ok(ret) = poincare_map(&integ, section, &next, opts.horizon) {
                if (ret.coords - &next).norm() < residual {
                    accepted = Some(next);
                    break;
                }
            }
            lambda *= 0.5;
        }
        u = match accepted {
            Some(next) => next,
            None => &u + r,
        };
    }
    if !converged {
        let residual = (poincare_map(&integ, section, &u, opts.horizon)?.coords - &u).norm();
        if residual >= opts.tol {
            return Err(Error::NoConvergence {
                residual,
                iterations: opts.max_iter,
            });
        }
    }
    // A few extra Newton steps, kept only while they reduce the residual.
    if d > 0 {
        let mut residual = (poincare_map(&integ, section, &u, opts.horizon)?.coords - &u).norm();
        for _ in 0..3 {
            if residual < 1e-14 {
                break;
            }
            let r = poincare_map(&integ, section, &u, opts.horizon)?.coords - &u;
            let jac = section_jacobian(&integ, section, &u, opts)? - DMatrix::identity(d, d);
            let Some(step) = jac.lu().solve(&(-&r)) else { break };
            let next = &u + step;
            let Ok(ret) = poincare_map(&integ, section, &next, opts.horizon) else { break };
            let next_residual = (ret.coords - &next).norm();
            if next_residual >= residual {
                break;
            }
            u = next;
            residual = next_residual;
        }
    }
    if d > 0 {
        let radius = spectral_radius(&section_jacobian(&integ, section, &u, opts)?);
        if radius >= 1.0 {
            return Err(Error::UnstableFixedPoint { radius });
        }
    }
    traverse(sys, &integ, section, &u, opts)
}

impl LimitCycle {
    /// Reassembles a cycle from stored segments, recomputing the dense orbit.
    pub fn from_segments(
        sys: &PiecewiseSystem,
        segments: Vec<Segment>,
        section: PoincareSection,
        opts: &CycleOptions,
    ) -> Result<LimitCycle> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("a cycle needs at least one segment".into()));
        }
        let integ = Integrator::new(sys, opts.integrator.clone());
        let period = segments.iter().map(|s| s.time_of_flight).sum();
        let curve = dense_orbit(sys, &integ, &segments, period, opts.dense_intervals)?;
        Ok(LimitCycle {
            segments,
            period,
            section,
            curve,
        })
    }
}

/// Records one revolution from the section point `u` as a [`LimitCycle`].
pub fn traverse(
    sys: &PiecewiseSystem,
    integ: &Integrator,
    section: &PoincareSection,
    u: &DVector<f64>,
    opts: &CycleOptions,
) -> Result<LimitCycle> {
    let ret = poincare_map(integ, section, u, opts.horizon)?;
    let s = sys.surface(section.surface);
    let p = section.embed(sys, u);
    let mut segments = Vec::with_capacity(ret.crossings.len());
    let mut entry = s.post_point(&p);
    let mut region = s.to;
    let mut entry_surface = section.surface;
    let mut t_prev = 0.0;
    for c in &ret.crossings {
        segments.push(Segment {
            region,
            entry_point: entry.as_slice().to_vec(),
            time_of_flight: c.t - t_prev,
            entry_surface,
            exit_point: c.point.as_slice().to_vec(),
        });
        entry = c.post_point.clone();
        region = c.to;
        entry_surface = c.surface;
        t_prev = c.t;
    }
    let period = t_prev;
    let curve = dense_orbit(sys, integ, &segments, period, opts.dense_intervals)?;
    Ok(LimitCycle {
        segments,
        period,
        section: section.clone(),
        curve,
    })
}

fn dense_orbit(
    sys: &PiecewiseSystem,
    integ: &Integrator,
    segments: &[Segment],
    period: f64,
    m: usize,
) -> Result<DenseCurve> {
    let mut pieces = Vec::with_capacity(segments.len());
    let mut t0 = 0.0;
    for seg in segments {
        let field = &sys.region(seg.region).field;
        let dt = seg.time_of_flight / m as f64;
        let mut values = Vec::with_capacity(m + 1);
        match field.as_affine() {
            Some((j, c)) => {
                let (phi, psi) = affine_flow(j, c, dt);
                let mut x = seg.entry();
                for _ in 0..m {
                    values.push(x.clone());
                    x = &phi * &x + &psi;
                }
            }
            None => {
                let times: Vec<f64> = (0..m).map(|i| i as f64 * dt).collect();
                let mut rec = crate::integrate::OutputRecorder::default();
                let start = FlowState {
                    t: 0.0,
                    x: seg.entry(),
                    region: seg.region,
                };
                integ.advance(start, times[m - 1], &times, &mut rec)?;
                if rec.samples.len() != m {
                    return Err(Error::InvalidInput(
                        "dense sampling of a segment crossed a surface early".into(),
                    ));
                }
                values.extend(rec.samples.into_iter().map(|s| s.x));
            }
        }
        values.push(seg.exit());
        let derivs = values.iter().map(|x| field.eval(x)).collect();
        pieces.push(DensePiece {
            t0,
            duration: seg.time_of_flight,
            values,
            derivs,
        });
        t0 += seg.time_of_flight;
    }
    Ok(DenseCurve { period, pieces })
}

/// Floquet data of a cycle.
#[derive(Clone, Debug)]
pub struct Stability {
    pub monodromy: DMatrix<f64>,
    /// Sorted by decreasing modulus.
    pub multipliers: Vec<Complex<f64>>,
}

/// Monodromy `S_1 Phi_K S_K ... S_2 Phi_1` with saltation matrices `S_k`.
pub fn cycle_stability(sys: &PiecewiseSystem, cycle: &LimitCycle) -> Result<Stability> {
    let n = sys.dim;
    let kk = cycle.segments.len();
    let mut factors = Vec::with_capacity(2 * kk);
    for k in 0..kk {
        factors.push(segment_variational(sys, cycle, k));
        let next = (k + 1) % kk;
        let (sid, p, from, to) = cycle.crossing_into(next);
        let surf = sys.surface(sid);
        let nh = surf.unit_normal(&p);
        let fm = sys.one_sided_field(from, &p);
        let fp = sys.one_sided_field(to, &surf.post_point(&p));
        factors.push(saltation_matrix(&fm, &fp, &nh)?);
    }
    let m = factors.iter().fold(DMatrix::identity(n, n), |m, f| f * m);
    let mut multipliers = match product_schur(&factors, 500) {
        Some(ps) => ps.eigenvalues().into_iter().map(|l| Complex::new(l, 0.0)).collect(),
        None => eigenvalues(&m),
    };
    multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    Ok(Stability {
        monodromy: m,
        multipliers,
    })
}

/// Fundamental matrix of the variational equation over segment `k`.
pub fn segment_variational(sys: &PiecewiseSystem, cycle: &LimitCycle, k: usize) -> DMatrix<f64> {
    let seg = &cycle.segments[k];
    let field = &sys.region(seg.region).field;
    match field.as_affine() {
        Some((j, _)) => crate::linalg::expm(&(j * seg.time_of_flight)),
        None => {
            let piece = &cycle.curve.pieces[k];
            let steps = rk4_steps(seg.time_of_flight, &field.jacobian(&seg.entry()));
            rk4_linear(
                |tau| field.jacobian(&piece.eval(tau)),
                DMatrix::identity(sys.dim, sys.dim),
                0.0,
                seg.time_of_flight,
                steps,
            )
        }
    }
}

/// Step count for RK4 on a linear system with rate matrix `a` over `t`.
pub(crate) fn rk4_steps(t: f64, a: &DMatrix<f64>) -> usize {
    let rate = a.abs().row_sum().max() + 1.0;
    ((t.abs() * rate / 2e-3).ceil() as usize).max(500)
}

/// Classical RK4 for `Y' = A(t) Y` from `t0` to `t1` (either direction).
pub(crate) fn rk4_linear(
    a: impl Fn(f64) -> DMatrix<f64>,
    y0: DMatrix<f64>,
    t0: f64,
    t1: f64,
    steps: usize,
) -> DMatrix<f64> {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    let mut t = t0;
    for _ in 0..steps {
        let a0 = a(t);
        let am = a(t + 0.5 * h);
        let a1 = a(t + h);
        let k1 = &a0 * &y;
        let k2 = &am * (&y + &k1 * (0.5 * h));
        let k3 = &am * (&y + &k2 * (0.5 * h));
        let k4 = &a1 * (&y + &k3 * h);
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t += h;
    }
    y
}

/// Closed-form limit cycle of the four-quadrant Glass network.
#[derive(Clone, Debug)]
pub struct GlassCycle {
    /// Entry points `p_1..p_4` on the +x, +y, -x and -y half-axes.
    pub points: [DVector<f64>; 4],
    pub times: [f64; 4],
    pub period: f64,
}

/// Analytic Glass cycle for targets `(a_k, b_k)` of quadrants 1..4.
pub fn glass_cycle_analytic(targets: &[(f64, f64); 4]) -> Result<GlassCycle> {
    let [(a1, b1), (a2, b2), (a3, b3), (a4, b4)] = *targets;
    let ok = a1 < 0.0 && b1 > 0.0 && a2 < 0.0 && b2 < 0.0 && a3 > 0.0 && b3 < 0.0 && a4 > 0.0 && b4 > 0.0;
    if !ok {
        return Err(Error::InvalidTargets(
            "each quadrant's target must lie in the next quadrant counterclockwise".into(),
        ));
    }
    let den = a2 * b1 * b3 - a2 * b1 * b4 + a3 * b1 * b4 - a3 * b2 * b4;
    let num = a2 * a4 * b1 * b3 - a1 * a3 * b2 * b4;
    if den == 0.0 || !(num / den).is_finite() {
        return Err(Error::InvalidTargets("degenerate target configuration".into()));
    }
    let p1x = num / den;
    if p1x <= 0.0 {
        return Err(Error::InvalidTargets(format!(
            "no cycle: fixed point {p1x} is not on the positive x half-axis"
        )));
    }
    let t1 = ((a1 - p1x) / a1).ln();
    let p2y = b1 * (1.0 - (-t1).exp());
    let t2 = ((b2 - p2y) / b2).ln();
    let p3x = a2 * (1.0 - (-t2).exp());
    let t3 = ((a3 - p3x) / a3).ln();
    let p4y = b3 * (1.0 - (-t3).exp());
    let t4 = ((b4 - p4y) / b4).ln();
    let times = [t1, t2, t3, t4];
    if times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(Error::InvalidTargets("non-positive time of flight".into()));
    }
    let v = |x: f64, y: f64| DVector::from_vec(vec![x, y]);
    Ok(GlassCycle {
        points: [v(p1x, 0.0), v(0.0, p2y), v(p3x, 0.0), v(0.0, p4y)],
        times,
        period: times.iter().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glass_closed_form_closes() {
        let targets = [(-5.0, 11.0), (-10.0, -4.0), (6.0, -10.0), (10.0, 5.0)];
        let g = glass_cycle_analytic(&targets).unwrap();
        // Flow the last quarter back to the +x half-axis.
        let p1x_again = targets[3].0 * (1.0 - (-g.times[3]).exp());
        assert!((p1x_again - g.points[0][0]).abs() < 1e-12);
        assert!((g.points[0][0] - 10400.0 / 2100.0).abs() < 1e-12);
    }

    #[test]
    fn glass_rejects_wrong_quadrants() {
        let targets = [(5.0, 11.0), (-10.0, -4.0), (6.0, -10.0), (10.0, 5.0)];
        assert!(matches!(glass_cycle_analytic(&targets), Err(Error::InvalidTargets(_))));
    }

    #[test]
    fn rk4_linear_matches_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let y = rk4_linear(|_| a.clone(), DMatrix::identity(2, 2), 0.0, 1.0, 500);
        let e = crate::linalg::expm(&a);
        assert!((y - e).norm() < 1e-12);
    }
}
