//! Piecewise dense curves on a periodic time axis, interpolated with cubic
//! Hermite polynomials on uniform per-segment grids.

use nalgebra::DVector;

/// Uniform samples of one smooth piece.
#[derive(Clone, Debug)]
pub struct DensePiece {
    pub t0: f64,
    pub duration: f64,
    pub values: Vec<DVector<f64>>,
    pub derivs: Vec<DVector<f64>>,
}

impl DensePiece {
    fn dt(&self) -> f64 {
        self.duration / (self.values.len() - 1) as f64
    }

    /// Value at local time `tau` in `[0, duration]`.
    pub fn eval(&self, tau: f64) -> DVector<f64> {
        let m = self.values.len() - 1;
        let dt = self.dt();
        let s = (tau / dt).clamp(0.0, m as f64);
        let i = (s.floor() as usize).min(m - 1);
        let u = s - i as f64;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        &self.values[i] * h00
            + &self.derivs[i] * (h10 * dt)
            + &self.values[i + 1] * h01
            + &self.derivs[i + 1] * (h11 * dt)
    }

    /// Derivative at local time `tau`.
    pub fn eval_deriv(&self, tau: f64) -> DVector<f64> {
        let m = self.values.len() - 1;
        let dt = self.dt();
        let s = (tau / dt).clamp(0.0, m as f64);
        let i = (s.floor() as usize).min(m - 1);
        let u = s - i as f64;
        let d00 = 6.0 * u * u - 6.0 * u;
        let d10 = 3.0 * u * u - 4.0 * u + 1.0;
        let d01 = -6.0 * u * u + 6.0 * u;
        let d11 = 3.0 * u * u - 2.0 * u;
        (&self.values[i] * d00 + &self.values[i + 1] * d01) / dt
            + &self.derivs[i] * d10
            + &self.derivs[i + 1] * d11
    }
}

/// A periodic curve made of consecutive pieces, right-continuous at the
/// piece boundaries.
#[derive(Clone, Debug)]
pub struct DenseCurve {
    pub period: f64,
    pub pieces: Vec<DensePiece>,
}

impl DenseCurve {
    /// Piece index and local time for `t`, wrapped into `[0, period)`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let t = t.rem_euclid(self.period);
        let k = self
            .pieces
            .partition_point(|p| p.t0 <= t)
            .saturating_sub(1);
        let p = &self.pieces[k];
        (k, (t - p.t0).min(p.duration))
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let (k, tau) = self.locate(t);
        self.pieces[k].eval(tau)
    }

    pub fn eval_deriv(&self, t: f64) -> DVector<f64> {
        let (k, tau) = self.locate(t);
        self.pieces[k].eval_deriv(tau)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.t0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_is_exact_for_cubics() {
        let f = |t: f64| t * t * t - 2.0 * t;
        let df = |t: f64| 3.0 * t * t - 2.0;
        let n = 7;
        let dur = 1.3;
        let ts: Vec<f64> = (0..=n).map(|i| dur * i as f64 / n as f64).collect();
        let piece = DensePiece {
            t0: 0.0,
            duration: dur,
            values: ts.iter().map(|&t| DVector::from_element(1, f(t))).collect(),
            derivs: ts.iter().map(|&t| DVector::from_element(1, df(t))).collect(),
        };
        for &t in &[0.0, 0.123, 0.77, 1.3] {
            assert!((piece.eval(t)[0] - f(t)).abs() < 1e-13);
            assert!((piece.eval_deriv(t)[0] - df(t)).abs() < 1e-12);
        }
    }
}
