//! Ground truth by brute force: asymptotic phase from a lookup table over
//! the cycle, and iPRC values from explicit perturbation experiments.

use nalgebra::DVector;

use crate::cycle::LimitCycle;
use crate::error::{Error, Result};
use crate::integrate::{FlowState, Integrator, IntegratorOptions, Silent};
use crate::system::PiecewiseSystem;

/// Cycle states sampled at `t_j = j T / N`, `j = 0..=N`.
#[derive(Clone, Debug)]
pub struct PhaseLookupTable {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub period: f64,
}

impl PhaseLookupTable {
    pub const DEFAULT_ROWS: usize = 10_000;

    pub fn new(sys: &PiecewiseSystem, cycle: &LimitCycle, rows: usize) -> Self {
        let period = cycle.period;
        let times: Vec<f64> = (0..=rows)
            .map(|j| if j == rows { period } else { j as f64 * period / rows as f64 })
            .collect();
        let states = times[..rows]
            .iter()
            .map(|&t| cycle.state_at(sys, t))
            .chain(std::iter::once(cycle.state_at(sys, 0.0)))
            .collect();
        Self {
            times,
            states,
            period,
        }
    }

    /// Number of phase bins `N`.
    pub fn rows(&self) -> usize {
        self.times.len() - 1
    }

    /// Index of the row nearest to `x` in the L1 norm; the first wins ties.
    pub fn nearest_row(&self, x: &DVector<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, s) in self.states.iter().enumerate() {
            let d: f64 = s.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).sum();
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }
}

/// Phase `j / N` of the nearest table row.
pub fn phase_of_point(table: &PhaseLookupTable, x: &DVector<f64>) -> f64 {
    let j = table.nearest_row(x);
    (j % table.rows()) as f64 / table.rows() as f64
}

/// Table lookup followed by Gauss-Newton on `|x - gamma(t)|^2` along the
/// dense orbit. Not limited to the table's resolution.
pub fn refined_phase(table: &PhaseLookupTable, cycle: &LimitCycle, x: &DVector<f64>) -> f64 {
    let period = table.period;
    let mut t = table.times[table.nearest_row(x)];
    let max_step = period / table.rows() as f64;
    for _ in 0..30 {
        let g = cycle.curve.eval(t);
        let dg = cycle.curve.eval_deriv(t);
        let speed2 = dg.norm_squared();
        if speed2 == 0.0 {
            break;
        }
        let dt = ((x - &g).dot(&dg) / speed2).clamp(-max_step, max_step);
        t += dt;
        if dt.abs() < 1e-15 * period.max(1.0) {
            break;
        }
    }
    (t / period).rem_euclid(1.0)
}

/// Wraps a phase difference into `(-1/2, 1/2]`.
pub fn wrap_phase(d: f64) -> f64 {
    let w = d - d.round();
    if w <= -0.5 {
        w + 1.0
    } else {
        w
    }
}

#[derive(Clone, Debug)]
pub struct OracleOptions {
    /// Integration horizon in periods.
    pub horizon: f64,
    /// Largest allowed distance from the cycle at the end of the horizon.
    pub basin_tol: f64,
    pub integrator: IntegratorOptions,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            basin_tol: 1e-3,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// Iprc component along `direction` at phase `theta`, measured as the
/// asymptotic phase shift per unit kick of size `eps`.
pub fn direct_iprc(
    sys: &PiecewiseSystem,
    cycle: &LimitCycle,
    table: &PhaseLookupTable,
    theta: f64,
    direction: &DVector<f64>,
    eps: f64,
    opts: &OracleOptions,
) -> Result<f64> {
    let integ = Integrator::new(sys, opts.integrator.clone());
    let t0 = theta.rem_euclid(1.0) * cycle.period;
    let (k, _) = cycle.segment_at(t0);
    let home = cycle.segments[k].region;
    let x0 = cycle.state_at(sys, t0);
    let xp = &x0 + direction * eps;
    let kicked_region = match sys.locate(&xp) {
        Ok(r) => r,
        Err(Error::AmbiguousPoint { .. }) => home,
        Err(e) => return Err(e),
    };
    let t_end = t0 + opts.horizon * cycle.period;
    let run = |x: DVector<f64>, region: usize| -> Result<DVector<f64>> {
        let start = FlowState { t: t0, x, region };
        let (end, _) = integ.advance(start, t_end, &[], &mut Silent)?;
        Ok(end.x)
    };
    let base_end = run(x0, home)?;
    let kick_end = run(xp, kicked_region)?;
    let kick_phase = refined_phase(table, cycle, &kick_end);
    let distance = (&kick_end - cycle.curve.eval(kick_phase * cycle.period)).norm();
    if distance > opts.basin_tol {
        return Err(Error::LeftBasin { distance });
    }
    let shift = wrap_phase(kick_phase - refined_phase(table, cycle, &base_end));
    Ok(shift / eps)
}

/// Removes the first-order error in `eps` from one-sided estimates taken
/// at `eps` and `eps / 2`.
pub fn richardson(at_eps: f64, at_half: f64) -> f64 {
    2.0 * at_half - at_eps
}

/// Planar polar phase about the origin, measured in the cycle's direction
/// of rotation and zero at the cycle's phase-zero point.
pub fn geometric_phase(x: &DVector<f64>, cycle: &LimitCycle) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: x.len(),
        });
    }
    if x.norm() < 1e-14 {
        return Err(Error::DegeneratePoint);
    }
    let p0 = cycle.curve.eval(0.0);
    let v0 = cycle.curve.eval_deriv(0.0);
    let ccw = p0[0] * v0[1] - p0[1] * v0[0] > 0.0;
    let a0 = p0[1].atan2(p0[0]);
    let a = x[1].atan2(x[0]);
    let turn = if ccw { a - a0 } else { a0 - a };
    Ok((turn / std::f64::consts::TAU).rem_euclid(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::find_limit_cycle;
    use crate::zoo::build_model;

    fn octagon() -> (PiecewiseSystem, LimitCycle) {
        let m = build_model("octagon", &[]).unwrap();
        let c = find_limit_cycle(&m.system, &m.section, &m.guess, &m.cycle_options()).unwrap();
        (m.system, c)
    }

    #[test]
    fn table_rows_map_to_their_phase() {
        let (sys, c) = octagon();
        let table = PhaseLookupTable::new(&sys, &c, 1000);
        assert_eq!(phase_of_point(&table, &table.states[0]), 0.0);
        assert_eq!(phase_of_point(&table, &table.states[500]), 0.5);
        assert_eq!(phase_of_point(&table, &table.states[1000]), 0.0);
        assert_eq!(*table.times.last().unwrap(), c.period);
    }

    #[test]
    fn refined_phase_recovers_off_grid_times() {
        let (sys, c) = octagon();
        let table = PhaseLookupTable::new(&sys, &c, 100);
        for &t in &[0.0123, 0.377, 0.9001] {
            let x = c.state_at(&sys, t * c.period);
            assert!((refined_phase(&table, &c, &x) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_phase_interval() {
        assert_eq!(wrap_phase(0.5), 0.5);
        assert_eq!(wrap_phase(-0.5), 0.5);
        assert!((wrap_phase(0.75) + 0.25).abs() < 1e-15);
        assert!((wrap_phase(-1.2) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn kick_along_the_flow_is_a_time_shift() {
        let (sys, c) = octagon();
        let table = PhaseLookupTable::new(&sys, &c, 1000);
        let t = 0.3 * c.period;
        let f = c.curve.eval_deriv(t);
        let dir = &f / f.norm();
        let z = direct_iprc(&sys, &c, &table, 0.3, &dir, 1e-6, &OracleOptions::default()).unwrap();
        let expect = 1.0 / (c.period * f.norm());
        assert!((z - expect).abs() < 1e-4 * expect, "{z} vs {expect}");
    }

    #[test]
    fn geometric_phase_of_the_octagon() {
        let (sys, c) = octagon();
        assert!(geometric_phase(&c.state_at(&sys, 0.0), &c).unwrap() < 1e-12);
        let q = geometric_phase(&c.state_at(&sys, 0.25 * c.period), &c).unwrap();
        assert!((q - 0.25).abs() < 1e-9, "{q}");
        assert!(matches!(
            geometric_phase(&DVector::zeros(2), &c),
            Err(Error::DegeneratePoint)
        ));
    }
}
