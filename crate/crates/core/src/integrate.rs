//! Event-driven integration of piecewise-smooth systems.
//!
//! Each step stays inside one region and uses that region's field formula.
//! Affine regions are advanced with their exact flow map; general regions use
//! adaptive Dormand-Prince 5(4). A step whose end point violates one of the
//! region's constraints is refined by bisection, the crossing point is
//! projected onto the matching declared surface, and integration restarts
//! in the region on the other side.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::affine_flow;
use crate::system::{PiecewiseSystem, Region, SurfaceGeometry};

/// Distance from a boundary within which a starting point counts as on it.
const ON_BOUNDARY: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Width of the bracketing interval (in time) that ends bisection.
    pub event_tol: f64,
    pub max_bisections: usize,
    pub max_step: f64,
    pub initial_step: f64,
    pub min_step: f64,
    /// Use the exact exponential flow map in affine regions.
    pub exact_affine: bool,
    pub max_crossings: usize,
    pub escape_radius: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-10,
            atol: 1e-10,
            event_tol: 1e-12,
            max_bisections: 80,
            max_step: 0.05,
            initial_step: 1e-3,
            min_step: 1e-14,
            exact_affine: true,
            max_crossings: 10_000_000,
            escape_radius: 1e12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub x: DVector<f64>,
    pub region: usize,
}

/// A located surface crossing.
#[derive(Clone, Debug)]
pub struct Crossing {
    pub t: f64,
    pub surface: usize,
    pub from: usize,
    pub to: usize,
    /// Crossing point on the surface, in `from` coordinates.
    pub point: DVector<f64>,
    /// Same point after the surface's shift, in `to` coordinates.
    pub post_point: DVector<f64>,
}

/// What to do after a crossing has been reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Halt,
}

/// Receives the states produced while integrating.
pub trait Observer {
    fn step(&mut self, _state: &FlowState) {}
    fn output(&mut self, _state: &FlowState) {}
    fn crossing(&mut self, _crossing: &Crossing) -> Control {
        Control::Continue
    }
}

/// Observer that ignores everything.
pub struct Silent;
impl Observer for Silent {}

#[derive(Clone, Debug)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub region: usize,
}

/// Samples and crossings of one integration run.
#[derive(Clone, Debug, Default)]
pub struct EventTrajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Crossing>,
}

impl EventTrajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

/// Records every step, plus the pre and post points of each crossing.
#[derive(Default)]
pub struct Recorder {
    pub traj: EventTrajectory,
    pub halt_after: Option<usize>,
}

impl Observer for Recorder {
    fn step(&mut self, s: &FlowState) {
        self.traj.samples.push(Sample {
            t: s.t,
            x: s.x.clone(),
            region: s.region,
        });
    }

    fn crossing(&mut self, c: &Crossing) -> Control {
        self.traj.samples.push(Sample {
            t: c.t,
            x: c.point.clone(),
            region: c.from,
        });
        self.traj.samples.push(Sample {
            t: c.t,
            x: c.post_point.clone(),
            region: c.to,
        });
        self.traj.events.push(c.clone());
        match self.halt_after {
            Some(n) if self.traj.events.len() >= n => Control::Halt,
            _ => Control::Continue,
        }
    }
}

/// Records only states at the requested output times.
#[derive(Default)]
pub struct OutputRecorder {
    pub samples: Vec<Sample>,
}

impl Observer for OutputRecorder {
    fn output(&mut self, s: &FlowState) {
        self.samples.push(Sample {
            t: s.t,
            x: s.x.clone(),
            region: s.region,
        });
    }
}

struct AffineStep {
    h: f64,
    phi: DMatrix<f64>,
    psi: DVector<f64>,
}

/// Integrator bound to one system. Cheap to share across threads.
pub struct Integrator<'a> {
    sys: &'a PiecewiseSystem,
    opts: IntegratorOptions,
    nominal: Vec<Option<AffineStep>>,
}

enum StepKind {
    Exact,
    RungeKutta,
}

impl<'a> Integrator<'a> {
    pub fn new(sys: &'a PiecewiseSystem, opts: IntegratorOptions) -> Self {
        let nominal = sys
            .regions
            .iter()
            .map(|r| {
                if !opts.exact_affine {
                    return None;
                }
                let (j, c) = r.field.as_affine()?;
                let h = nominal_affine_step(j, opts.max_step);
                let (phi, psi) = affine_flow(j, c, h);
                Some(AffineStep { h, phi, psi })
            })
            .collect();
        Integrator { sys, opts, nominal }
    }

    pub fn system(&self) -> &PiecewiseSystem {
        self.sys
    }

    pub fn options(&self) -> &IntegratorOptions {
        &self.opts
    }

    fn region_index(&self, id: usize) -> Result<usize> {
        self.sys
            .regions
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("no region with id {id}")))
    }

    /// Starts at `x0`. A point on a boundary starts in the region its
    /// field enters.
    pub fn start(&self, x0: &DVector<f64>, t0: f64) -> Result<FlowState> {
        let region = self.sys.locate_forward(x0)?;
        Ok(FlowState {
            t: t0,
            x: x0.clone(),
            region,
        })
    }

    /// Integrates until `t_end` or until the observer halts at a crossing.
    /// Returns the final state and whether it was halted.
    pub fn advance(
        &self,
        state: FlowState,
        t_end: f64,
        outputs: &[f64],
        obs: &mut dyn Observer,
    ) -> Result<(FlowState, bool)> {
        let mut st = state;
        let mut out_i = outputs.partition_point(|&t| t < st.t);
        let mut h_rk = self.opts.initial_step;
        let mut crossings = 0usize;
        let mut last_entry: Option<(usize, f64)> = None;

        loop {
            while out_i < outputs.len() && outputs[out_i] <= st.t {
                if outputs[out_i] == st.t {
                    obs.output(&st);
                }
                out_i += 1;
            }
            if st.t >= t_end {
                return Ok((st, false));
            }

            let idx = self.region_index(st.region)?;
            let region = &self.sys.regions[idx];
            let kind = if self.nominal[idx].is_some() {
                StepKind::Exact
            } else {
                StepKind::RungeKutta
            };

            // Constraints that are active at the start: entering ones are
            // treated as satisfied, anything else means we leave immediately.
            let f0 = region.field.eval(&st.x);
            let mut immediate = false;
            for c in &region.constraints {
                let g = c.value(&st.x);
                if g > ON_BOUNDARY || (g > -ON_BOUNDARY && c.gradient(&st.x).dot(&f0) >= 0.0) {
                    immediate = true;
                }
            }

            let crossing_at = if immediate {
                Some((st.t, st.x.clone()))
            } else {
                self.stint(&mut st, idx, &kind, t_end, outputs, &mut out_i, &mut h_rk, obs)?
            };

            let Some((tc, xc)) = crossing_at else {
                continue;
            };

            let c = self.resolve_crossing(region, tc, &xc)?;
            crossings += 1;
            if crossings > self.opts.max_crossings {
                return Err(Error::StepCollapse {
                    t: tc,
                    reason: format!("more than {} crossings", self.opts.max_crossings),
                });
            }
            if let Some((prev, t_in)) = last_entry {
                if prev == c.to && tc - t_in <= self.opts.event_tol {
                    return Err(Error::StepCollapse {
                        t: tc,
                        reason: format!(
                            "chattering between regions {} and {} (sliding motion)",
                            c.from, c.to
                        ),
                    });
                }
            }
            last_entry = Some((c.from, tc));
            let ctl = obs.crossing(&c);
            st = FlowState {
                t: c.t,
                x: c.post_point,
                region: c.to,
            };
            if ctl == Control::Halt {
                return Ok((st, true));
            }
        }
    }

    /// Steps inside one region. Returns the crossing time and point when the
    /// region is left, or `None` when an output time or `t_end` is reached.
    #[allow(clippy::too_many_arguments)]
    fn stint(
        &self,
        st: &mut FlowState,
        idx: usize,
        kind: &StepKind,
        t_end: f64,
        outputs: &[f64],
        out_i: &mut usize,
        h_rk: &mut f64,
        obs: &mut dyn Observer,
    ) -> Result<Option<(f64, DVector<f64>)>> {
        let region = &self.sys.regions[idx];
        loop {
            let t_stop = if *out_i < outputs.len() {
                outputs[*out_i].min(t_end)
            } else {
                t_end
            };
            let room = t_stop - st.t;
            if room <= 0.0 {
                st.t = t_stop;
                return Ok(None);
            }

            let (h, x_new) = match kind {
                StepKind::Exact => {
                    let nom = self.nominal[idx].as_ref().unwrap();
                    if room >= nom.h {
                        (nom.h, &nom.phi * &st.x + &nom.psi)
                    } else {
                        (room, self.exact_flow(region, &st.x, room))
                    }
                }
                StepKind::RungeKutta => self.rk_adaptive(region, st, room, h_rk)?,
            };

            if x_new.iter().any(|v| !v.is_finite()) || x_new.amax() > self.opts.escape_radius {
                return Err(Error::EscapedDomain {
                    t: st.t + h,
                    reason: "state diverged".into(),
                });
            }

            let exits = region.constraints.iter().any(|c| c.value(&x_new) > 0.0);
            if !exits {
                let landed = h >= room;
                st.t = if landed { t_stop } else { st.t + h };
                st.x = x_new;
                obs.step(st);
                if landed {
                    return Ok(None);
                }
                continue;
            }

            let x0 = st.x.clone();
            let x_at = |tau: f64| -> DVector<f64> {
                match kind {
                    StepKind::Exact => self.exact_flow(region, &x0, tau),
                    StepKind::RungeKutta => dp_step(&region.field, &x0, tau).0,
                }
            };
            let phi = |x: &DVector<f64>| region.slack(x);
            let (mut lo, mut hi) = (0.0, h);
            let mut x_hi = x_new;
            for _ in 0..self.opts.max_bisections {
                if hi - lo <= self.opts.event_tol {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let xm = x_at(mid);
                if phi(&xm) > 0.0 {
                    hi = mid;
                    x_hi = xm;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some((st.t + hi, x_hi)));
        }
    }

    fn exact_flow(&self, region: &Region, x: &DVector<f64>, tau: f64) -> DVector<f64> {
        let (j, c) = region.field.as_affine().expect("exact flow needs an affine region");
        let (phi, psi) = affine_flow(j, c, tau);
        phi * x + psi
    }

    fn rk_adaptive(
        &self,
        region: &Region,
        st: &FlowState,
        room: f64,
        h_rk: &mut f64,
    ) -> Result<(f64, DVector<f64>)> {
        let o = &self.opts;
        loop {
            let h = h_rk.min(o.max_step).min(room);
            let (x_new, err) = dp_step(&region.field, &st.x, h);
            let mut acc = 0.0;
            for i in 0..x_new.len() {
                let sc = o.atol + o.rtol * st.x[i].abs().max(x_new[i].abs());
                acc += (err[i] / sc).powi(2);
            }
            let en = (acc / x_new.len().max(1) as f64).sqrt();
            let factor = if en == 0.0 {
                5.0
            } else {
                (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
            };
            if en <= 1.0 {
                if h < room {
                    *h_rk = h * factor;
                }
                return Ok((h, x_new));
            }
            *h_rk = h * factor;
            if *h_rk < o.min_step {
                return Err(Error::StepCollapse {
                    t: st.t,
                    reason: format!("step size {} below minimum", *h_rk),
                });
            }
        }
    }

    fn resolve_crossing(&self, region: &Region, t: f64, x: &DVector<f64>) -> Result<Crossing> {
        let mut cands: Vec<(f64, usize)> = self
            .sys
            .surfaces
            .iter()
            .filter(|s| s.from == region.id)
            .map(|s| (s.value(x).abs(), s.id))
            .filter(|(r, _)| *r < 1e-6)
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Exact destinations first; corner entries only if none matches.
        for (corner, &(_, sid)) in [false, true].into_iter().flat_map(|c| cands.iter().map(move |s| (c, s))) {
            let s = self.sys.surface(sid);
            // Pull the bracketing time back to the surface with one Newton step.
            let rate = match &s.geometry {
                SurfaceGeometry::Hyperplane { normal, .. } => normal.dot(&region.field.eval(x)),
                SurfaceGeometry::Implicit { gradient, .. } => gradient(x).dot(&region.field.eval(x)),
            };
            // The flow cannot leave through a surface it is moving away from.
            if rate <= 0.0 {
                continue;
            }
            let t = t - (s.value(x) / rate).clamp(0.0, 2.0 * self.opts.event_tol.max(1e-15));
            let p = s.project(x);
            let post = s.post_point(&p);
            let n = s.unit_normal(&p);
            let delta = 1e-8 * post.amax().max(1.0);
            let probe = &post + &n * delta;
            let dest = match self.sys.locate(&probe) {
                Ok(dest) if dest == s.to => Some(dest),
                // Several surfaces crossed at once: enter `to` when the probe
                // sits on its boundary and let the next stint leave at once.
                _ if corner => self
                    .sys
                    .try_region(s.to)
                    .ok()
                    .filter(|r| r.slack(&probe) <= CORNER_TOL * post.amax().max(1.0))
                    .map(|r| r.id),
                _ => None,
            };
            if let Some(dest) = dest {
                let after = n.dot(&self.sys.one_sided_field(dest, &post));
                if after <= 0.0 {
                    return Err(Error::StepCollapse {
                        t,
                        reason: format!(
                            "flow in region {dest} points back across surface {sid} (n.F+ = {after:e})"
                        ),
                    });
                }
                return Ok(Crossing {
                    t,
                    surface: sid,
                    from: region.id,
                    to: dest,
                    point: p,
                    post_point: post,
                });
            }
        }
        Err(Error::EscapedDomain {
            t,
            reason: format!(
                "left region {} through a boundary with no declared surface at {:?}",
                region.id,
                x.as_slice()
            ),
        })
    }
}

/// Slack accepted when entering a region at a corner of several surfaces.
const CORNER_TOL: f64 = 1e-7;

fn nominal_affine_step(j: &DMatrix<f64>, max_step: f64) -> f64 {
    let nrm = j
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if nrm > 0.0 {
        max_step.min(0.5 / nrm)
    } else {
        max_step
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 - -92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

/// One Dormand-Prince 5(4) step; returns the fifth-order solution and the
/// embedded error estimate.
pub fn dp_step(
    field: &crate::system::RegionField,
    x: &DVector<f64>,
    h: f64,
) -> (DVector<f64>, DVector<f64>) {
    let f = |y: &DVector<f64>| field.eval(y);
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h * A21)));
    let k3 = f(&(x + (&k1 * A31 + &k2 * A32) * h));
    let k4 = f(&(x + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
    let k5 = f(&(x + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
    let k6 = f(&(x + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
    let x5 = x + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
    let k7 = f(&x5);
    let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    (x5, err)
}

/// Integrates from `x0` over `t_span`, recording every step and crossing.
pub fn integrate_with_events(
    sys: &PiecewiseSystem,
    x0: &DVector<f64>,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<EventTrajectory> {
    let integ = Integrator::new(sys, opts.clone());
    let st = integ.start(x0, t_span.0)?;
    let mut rec = Recorder::default();
    rec.step(&st);
    integ.advance(st, t_span.1, &[], &mut rec)?;
    Ok(rec.traj)
}

/// Flow map of an affine region applied for a fixed time; convenience for
/// callers that already know the region.
pub fn affine_propagate(j: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, t: f64) -> DVector<f64> {
    let (phi, psi) = affine_flow(j, c, t);
    phi * x + psi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Constraint, RegionField};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    /// x' = 1 on x < 0, x' = 2 on x > 0.
    fn two_speed() -> PiecewiseSystem {
        let mut sys = PiecewiseSystem::new(1);
        let z = DMatrix::zeros(1, 1);
        sys.add_region(Region::new(
            1,
            RegionField::affine(z.clone(), v(&[1.0])),
            vec![Constraint::halfspace(v(&[1.0]), 0.0)],
        ));
        sys.add_region(Region::new(
            2,
            RegionField::affine(z, v(&[2.0])),
            vec![Constraint::halfspace(v(&[-1.0]), 0.0)],
        ));
        sys.derive_surfaces();
        sys
    }

    #[test]
    fn locates_crossing_time() {
        let sys = two_speed();
        let tr = integrate_with_events(&sys, &v(&[-0.3]), (0.0, 1.0), &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.events.len(), 1);
        assert_relative_eq!(tr.events[0].t, 0.3, epsilon = 1e-12);
        assert_eq!(tr.events[0].point[0], 0.0);
        let last = tr.last().unwrap();
        assert_relative_eq!(last.x[0], 2.0 * 0.7, epsilon = 1e-12);
        assert_eq!(last.region, 2);
    }

    #[test]
    fn rk_and_exact_agree_on_linear_region() {
        let mut sys = PiecewiseSystem::new(2);
        let j = DMatrix::from_row_slice(2, 2, &[-0.1, -1.0, 1.0, -0.1]);
        sys.add_region(Region::new(1, RegionField::affine(j, v(&[0.2, 0.0])), vec![]));
        let x0 = v(&[1.0, 0.0]);
        let exact = integrate_with_events(&sys, &x0, (0.0, 5.0), &IntegratorOptions::default()).unwrap();
        let rk_opts = IntegratorOptions {
            exact_affine: false,
            ..Default::default()
        };
        let rk = integrate_with_events(&sys, &x0, (0.0, 5.0), &rk_opts).unwrap();
        let a = &exact.last().unwrap().x;
        let b = &rk.last().unwrap().x;
        assert!((a - b).norm() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn curved_surface_crossing() {
        // Constant field (1, 0) leaving the unit disk.
        let mut sys = PiecewiseSystem::new(2);
        let inside = Constraint::implicit(|x| x.norm_squared() - 1.0, |x| x * 2.0);
        let outside = Constraint::implicit(|x| 1.0 - x.norm_squared(), |x| -x * 2.0);
        let f = RegionField::general(|_| v(&[1.0, 0.0]), |_| DMatrix::zeros(2, 2));
        sys.add_region(Region::new(1, f.clone(), vec![inside]));
        sys.add_region(Region::new(2, f, vec![outside]));
        sys.add_implicit_surface(1, 2, |x| x.norm_squared() - 1.0, |x| x * 2.0);
        let tr = integrate_with_events(&sys, &v(&[0.0, 0.6]), (0.0, 2.0), &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.events.len(), 1);
        assert_relative_eq!(tr.events[0].t, 0.8, epsilon = 1e-11);
    }

    #[test]
    fn sliding_is_reported() {
        // Both fields push toward x = 0.
        let mut sys = PiecewiseSystem::new(1);
        let z = DMatrix::zeros(1, 1);
        sys.add_region(Region::new(
            1,
            RegionField::affine(z.clone(), v(&[1.0])),
            vec![Constraint::halfspace(v(&[1.0]), 0.0)],
        ));
        sys.add_region(Region::new(
            2,
            RegionField::affine(z, v(&[-1.0])),
            vec![Constraint::halfspace(v(&[-1.0]), 0.0)],
        ));
        sys.derive_surfaces();
        let r = integrate_with_events(&sys, &v(&[-0.5]), (0.0, 2.0), &IntegratorOptions::default());
        assert!(matches!(r, Err(Error::StepCollapse { .. })));
    }
}
