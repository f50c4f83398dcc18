//! Two weakly coupled copies of an oscillator: the averaged interaction
//! function `H`, the reduced phase-difference equation and the full
//! simulation it approximates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cycle::LimitCycle;
use crate::error::{Error, Result};
use crate::integrate::{FlowState, Integrator, IntegratorOptions, OutputRecorder};
use crate::iprc::PiecewiseIprc;
use crate::oracle::{geometric_phase, phase_of_point, refined_phase, wrap_phase, PhaseLookupTable};
use crate::par::map_indexed;
use crate::system::{
    Constraint, PiecewiseSystem, Region, RegionField, SurfaceGeometry, SwitchingSurface,
};

/// Input `G(x, y)` received by an oscillator in state `x` from a partner in
/// state `y`.
pub trait Coupling: Send + Sync {
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    /// `(G_x, G_y)` when `G(x, y) = G_x x + G_y y`.
    fn linear_parts(&self, _dim: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }
}

impl<F> Coupling for F
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self(x, y)
    }
}

/// `G = 0`.
pub struct NoCoupling;

impl Coupling for NoCoupling {
    fn eval(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn linear_parts(&self, dim: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim)))
    }
}

/// `G = y - x`.
pub struct Diffusive;

impl Coupling for Diffusive {
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        y - x
    }

    fn linear_parts(&self, dim: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((-DMatrix::identity(dim, dim), DMatrix::identity(dim, dim)))
    }
}

/// First-order input between two threshold-linear networks coupled by
/// uniform inhibition: `G_i = gain * H(W_i x + theta) * sum(y)`, with `H`
/// the Heaviside step.
pub struct GatedInhibition {
    pub w: DMatrix<f64>,
    pub theta: f64,
    pub gain: f64,
}

impl Coupling for GatedInhibition {
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let drive = &self.w * x;
        let total = y.sum();
        DVector::from_fn(x.len(), |i, _| {
            if drive[i] + self.theta > 0.0 {
                self.gain * total
            } else {
                0.0
            }
        })
    }
}

/// Reduced coupling of the Morrison–Curto pair, gain `-1 - delta`.
pub fn morrison_curto_coupling(w: &DMatrix<f64>, delta: f64, theta: f64) -> GatedInhibition {
    GatedInhibition {
        w: w.clone(),
        theta,
        gain: -1.0 - delta,
    }
}

/// `H` sampled on `phi_j = j / N`, period one.
#[derive(Clone, Debug)]
pub struct InteractionFunction {
    pub values: Vec<f64>,
}

impl InteractionFunction {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.len()).map(|j| j as f64 / n).collect()
    }

    /// Periodic Catmull-Rom interpolation.
    pub fn eval(&self, phi: f64) -> f64 {
        let n = self.len();
        let s = phi.rem_euclid(1.0) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        let u = s - i as f64;
        let at = |k: isize| self.values[(i as isize + k).rem_euclid(n as isize) as usize];
        let (p0, p1, p2, p3) = (at(-1), at(0), at(1), at(2));
        let u2 = u * u;
        let u3 = u2 * u;
        0.5 * (2.0 * p1
            + (p2 - p0) * u
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2
            + (3.0 * p1 - p0 - 3.0 * p2 + p3) * u3)
    }

    /// `R(psi) = H(-psi) - H(psi)`.
    pub fn odd_part(&self, psi: f64) -> f64 {
        self.eval(-psi) - self.eval(psi)
    }

    /// `R` on the grid, `R_j = H_{-j} - H_j`; exactly odd.
    pub fn odd_part_grid(&self) -> Vec<f64> {
        let n = self.len();
        (0..n).map(|j| self.values[(n - j) % n] - self.values[j]).collect()
    }
}

pub const DEFAULT_H_POINTS: usize = 512;
pub const DEFAULT_QUADRATURE_NODES: usize = 4096;

/// `H(phi) = (1/T) int_0^T z(t) . G(U(t), U(t + phi T)) dt` on `n_h` grid
/// points, by the trapezoid rule on about `n_t` panels whose edges include
/// every breakpoint of both factors.
pub fn interaction_function(
    cycle: &LimitCycle,
    iprc: &PiecewiseIprc,
    g: &dyn Coupling,
    n_h: usize,
    n_t: usize,
) -> InteractionFunction {
    let values = map_indexed(n_h, |j| interaction_value(cycle, iprc, g, j as f64 / n_h as f64, n_t));
    InteractionFunction { values }
}

/// `H(phi)` at a single lag, as used by [`interaction_function`].
pub fn interaction_value(cycle: &LimitCycle, iprc: &PiecewiseIprc, g: &dyn Coupling, phi: f64, n_t: usize) -> f64 {
    let period = cycle.period;
    let lag = phi * period;
    let bps = cycle.breakpoints();
    let mut edges: Vec<f64> = bps
        .iter()
        .copied()
        .chain(bps.iter().map(|b| (b - lag).rem_euclid(period)))
        .chain([0.0, period])
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * period);

    let u = &cycle.curve;
    let z = &iprc.curve;
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 1e-13 * period {
            continue;
        }
        let mid = 0.5 * (a + b);
        let (k, _) = u.locate(mid);
        let t0 = u.pieces[k].t0;
        let shifted_mid = (mid + lag).rem_euclid(period);
        let (k2, _) = u.locate(shifted_mid);
        // Local time of the partner, continuous across the interval.
        let offset = shifted_mid - mid - u.pieces[k2].t0;
        let clamp = |tau: f64, d: f64| tau.clamp(0.0, d);
        let integrand = |t: f64| {
            let tau = clamp(t - t0, u.pieces[k].duration);
            let tau2 = clamp(t + offset, u.pieces[k2].duration);
            let x = u.pieces[k].eval(tau);
            let y = u.pieces[k2].eval(tau2);
            z.pieces[k].eval(tau).dot(&g.eval(&x, &y))
        };
        let m = ((n_t as f64 * (b - a) / period).ceil() as usize).max(1);
        let h = (b - a) / m as f64;
        let mut s = 0.5 * (integrand(a) + integrand(b));
        for i in 1..m {
            s += integrand(a + i as f64 * h);
        }
        total += s * h;
    }
    total / period
}

/// A zero of `R` with the sign of its slope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LockedState {
    pub psi: f64,
    pub slope: f64,
    /// Stable for positive coupling strength (`slope < 0`).
    pub stable: bool,
}

/// Zeros of `R(psi)` in `(-1/2, 1/2]`: exact grid zeros plus sign changes
/// refined by bisection on the interpolant.
pub fn fixed_points(h: &InteractionFunction) -> Vec<LockedState> {
    let n = h.len();
    let r = h.odd_part_grid();
    let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let dpsi = 1.0 / n as f64;
    // Grid index j stands for psi = j / n wrapped into (-1/2, 1/2].
    let psi_of = |j: usize| wrap_phase(j as f64 * dpsi);
    let mut roots = Vec::new();
    for j in 0..n {
        let (a, b) = (r[j], r[(j + 1) % n]);
        if a.abs() <= 1e-12 * scale {
            roots.push(psi_of(j));
        } else if b.abs() > 1e-12 * scale && a.signum() != b.signum() {
            let (mut lo, mut hi) = (j as f64 * dpsi, (j + 1) as f64 * dpsi);
            let flo = h.odd_part(lo);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if h.odd_part(mid).signum() == flo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(wrap_phase(0.5 * (lo + hi)));
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let step = 1e-6;
    roots
        .into_iter()
        .map(|psi| {
            let slope = (h.odd_part(psi + step) - h.odd_part(psi - step)) / (2.0 * step);
            LockedState {
                psi,
                slope,
                stable: slope < 0.0,
            }
        })
        .collect()
}

/// Largest internal step of the reduced equation, in time units.
const PHASE_FLOW_STEP: f64 = 0.25;

/// Integrates `psi' = strength * R(psi)` by RK4, reporting `psi` at
/// `times` (ascending, starting at the initial time).
pub fn phase_difference_flow(h: &InteractionFunction, strength: f64, psi0: f64, times: &[f64]) -> Vec<f64> {
    let rhs = |psi: f64| strength * h.odd_part(psi);
    let mut out = Vec::with_capacity(times.len());
    let mut psi = psi0;
    let mut t = times.first().copied().unwrap_or(0.0);
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let m = (span / PHASE_FLOW_STEP).ceil() as usize;
            let dt = span / m as f64;
            for _ in 0..m {
                let k1 = rhs(psi);
                let k2 = rhs(psi + 0.5 * dt * k1);
                let k3 = rhs(psi + 0.5 * dt * k2);
                let k4 = rhs(psi + dt * k3);
                psi += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            t = target;
        }
        out.push(psi);
    }
    out
}

/// Two copies of a base system, `x' = f(x) + eps G(x, y)` and
/// `y' = f(y) + eps G(y, x)`, integrated as one `2n`-dimensional system.
#[derive(Clone)]
pub struct CoupledPair {
    pub base: PiecewiseSystem,
    pub coupling: Arc<dyn Coupling>,
    pub strength: f64,
    /// Composite regions are numbered `id_x + stride * id_y`.
    pub composite: PiecewiseSystem,
    pub stride: usize,
}

impl CoupledPair {
    /// Builds the product system from `base` and `coupling`.
    pub fn new(base: PiecewiseSystem, coupling: Arc<dyn Coupling>, strength: f64) -> Result<Self> {
        let stride = base.regions.iter().map(|r| r.id).max().unwrap_or(0) + 1;
        let composite = product_system(&base, coupling.clone(), strength, stride)?;
        Ok(Self {
            base,
            coupling,
            strength,
            composite,
            stride,
        })
    }

    /// Uses a separately constructed full system, for couplings that are
    /// only the first-order reduction of the true interaction.
    pub fn with_composite(
        base: PiecewiseSystem,
        coupling: Arc<dyn Coupling>,
        strength: f64,
        composite: PiecewiseSystem,
        stride: usize,
    ) -> Result<Self> {
        if composite.dim != 2 * base.dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * base.dim,
                got: composite.dim,
            });
        }
        Ok(Self {
            base,
            coupling,
            strength,
            composite,
            stride,
        })
    }

    pub fn join(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let n = self.base.dim;
        DVector::from_fn(2 * n, |i, _| if i < n { x[i] } else { y[i - n] })
    }

    pub fn split(&self, s: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.base.dim;
        (s.rows(0, n).into_owned(), s.rows(n, n).into_owned())
    }

    pub fn region_id(&self, rx: usize, ry: usize) -> usize {
        rx + self.stride * ry
    }
}

fn lift(v: &DVector<f64>, n: usize, second: bool) -> DVector<f64> {
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(if second { n } else { 0 }, n).copy_from(v);
    out
}

fn half(s: &DVector<f64>, n: usize, second: bool) -> DVector<f64> {
    s.rows(if second { n } else { 0 }, n).into_owned()
}

fn lift_constraint(c: &Constraint, n: usize, second: bool) -> Constraint {
    match c {
        Constraint::Halfspace { normal, offset } => Constraint::Halfspace {
            normal: lift(normal, n, second),
            offset: *offset,
        },
        Constraint::Implicit { value, gradient } => {
            let (value, gradient) = (value.clone(), gradient.clone());
            Constraint::implicit(
                move |s| value(&half(s, n, second)),
                move |s| lift(&gradient(&half(s, n, second)), n, second),
            )
        }
    }
}

fn lift_surface(s: &SwitchingSurface, id: usize, from: usize, to: usize, n: usize, second: bool) -> SwitchingSurface {
    let geometry = match &s.geometry {
        SurfaceGeometry::Hyperplane { normal, offset } => SurfaceGeometry::Hyperplane {
            normal: lift(normal, n, second),
            offset: *offset,
        },
        SurfaceGeometry::Implicit { value, gradient } => {
            let (value, gradient) = (value.clone(), gradient.clone());
            SurfaceGeometry::Implicit {
                value: Arc::new(move |x| value(&half(x, n, second))),
                gradient: Arc::new(move |x| lift(&gradient(&half(x, n, second)), n, second)),
            }
        }
    };
    SwitchingSurface {
        id,
        from,
        to,
        geometry,
        shift: s.shift.as_ref().map(|v| lift(v, n, second)),
    }
}

fn product_system(
    base: &PiecewiseSystem,
    coupling: Arc<dyn Coupling>,
    eps: f64,
    stride: usize,
) -> Result<PiecewiseSystem> {
    let n = base.dim;
    let mut sys = PiecewiseSystem::new(2 * n);
    let linear = coupling.linear_parts(n);
    for ry in &base.regions {
        for rx in &base.regions {
            let mut cons: Vec<Constraint> = rx.constraints.iter().map(|c| lift_constraint(c, n, false)).collect();
            cons.extend(ry.constraints.iter().map(|c| lift_constraint(c, n, true)));
            let field = match (rx.field.as_affine(), ry.field.as_affine(), &linear) {
                (Some((jx, cx)), Some((jy, cy)), Some((gx, gy))) => {
                    let mut j = DMatrix::zeros(2 * n, 2 * n);
                    j.view_mut((0, 0), (n, n)).copy_from(&(jx + gx * eps));
                    j.view_mut((0, n), (n, n)).copy_from(&(gy * eps));
                    j.view_mut((n, 0), (n, n)).copy_from(&(gy * eps));
                    j.view_mut((n, n), (n, n)).copy_from(&(jy + gx * eps));
                    let mut c = DVector::zeros(2 * n);
                    c.rows_mut(0, n).copy_from(cx);
                    c.rows_mut(n, n).copy_from(cy);
                    RegionField::affine(j, c)
                }
                _ => general_product_field(rx.field.clone(), ry.field.clone(), coupling.clone(), eps, n),
            };
            sys.add_region(Region::new(rx.id + stride * ry.id, field, cons));
        }
    }
    for s in &base.surfaces {
        for other in &base.regions {
            let id = sys.surfaces.len();
            let lifted_x = lift_surface(s, id, s.from + stride * other.id, s.to + stride * other.id, n, false);
            sys.surfaces.push(lifted_x);
            let id = sys.surfaces.len();
            let lifted_y = lift_surface(s, id, other.id + stride * s.from, other.id + stride * s.to, n, true);
            sys.surfaces.push(lifted_y);
        }
    }
    Ok(sys)
}

fn general_product_field(
    fx: RegionField,
    fy: RegionField,
    g: Arc<dyn Coupling>,
    eps: f64,
    n: usize,
) -> RegionField {
    let field = move |s: &DVector<f64>| {
        let x = half(s, n, false);
        let y = half(s, n, true);
        let dx = fx.eval(&x) + g.eval(&x, &y) * eps;
        let dy = fy.eval(&y) + g.eval(&y, &x) * eps;
        DVector::from_fn(2 * n, |i, _| if i < n { dx[i] } else { dy[i - n] })
    };
    let field = Arc::new(field);
    let f2 = field.clone();
    let jac = move |s: &DVector<f64>| {
        let h = 1e-7;
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..2 * n {
            let mut up = s.clone();
            let mut dn = s.clone();
            up[k] += h;
            dn[k] -= h;
            j.set_column(k, &((f2(&up) - f2(&dn)) / (2.0 * h)));
        }
        j
    };
    RegionField::general(move |s| field(s), jac)
}

/// How each half's phase is read off during a coupled simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseMethod {
    /// Nearest row of the lookup table.
    Lookup,
    /// Lookup followed by projection onto the dense orbit.
    Refined,
    /// Polar angle about the origin (planar cycles only).
    Geometric,
}

/// Output of [`simulate_coupled`].
#[derive(Clone, Debug)]
pub struct CoupledRun {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub theta_x: Vec<f64>,
    pub theta_y: Vec<f64>,
    /// `theta_y - theta_x`, unwrapped by continuity from `(-1/2, 1/2]`.
    pub psi: Vec<f64>,
}

/// Integrates the full coupled system from `(x0, y0)` and estimates the
/// phase difference at each of `times`.
pub fn simulate_coupled(
    pair: &CoupledPair,
    cycle: &LimitCycle,
    table: &PhaseLookupTable,
    method: PhaseMethod,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<CoupledRun> {
    let rx = pair.base.locate_forward(x0)?;
    let ry = pair.base.locate_forward(y0)?;
    let start = FlowState {
        t: times.first().copied().unwrap_or(0.0),
        x: pair.join(x0, y0),
        region: pair.region_id(rx, ry),
    };
    let integ = Integrator::new(&pair.composite, opts.clone());
    let mut rec = OutputRecorder::default();
    let t_end = times.last().copied().unwrap_or(start.t);
    integ.advance(start, t_end, times, &mut rec)?;

    let phase = |x: &DVector<f64>| -> Result<f64> {
        match method {
            PhaseMethod::Lookup => Ok(phase_of_point(table, x)),
            PhaseMethod::Refined => Ok(refined_phase(table, cycle, x)),
            PhaseMethod::Geometric => geometric_phase(x, cycle),
        }
    };
    let mut run = CoupledRun {
        times: Vec::with_capacity(rec.samples.len()),
        x: Vec::with_capacity(rec.samples.len()),
        y: Vec::with_capacity(rec.samples.len()),
        theta_x: Vec::with_capacity(rec.samples.len()),
        theta_y: Vec::with_capacity(rec.samples.len()),
        psi: Vec::with_capacity(rec.samples.len()),
    };
    for s in rec.samples {
        let (x, y) = pair.split(&s.x);
        let (tx, ty) = (phase(&x)?, phase(&y)?);
        let raw = ty - tx;
        let psi = match run.psi.last() {
            Some(&prev) => prev + wrap_phase(raw - prev),
            None => wrap_phase(raw),
        };
        run.times.push(s.t);
        run.x.push(x);
        run.y.push(y);
        run.theta_x.push(tx);
        run.theta_y.push(ty);
        run.psi.push(psi);
    }
    Ok(run)
}
