//! Example systems: constructors, default parameters and the closed forms
//! known for each of them.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};

use crate::cycle::{CycleOptions, PoincareSection};
use crate::error::{Error, Result};
use crate::system::{Constraint, PiecewiseSystem, Region, RegionField};

/// A constructed model together with the section and guess used to find
/// its limit cycle.
#[derive(Clone, Debug)]
pub struct Model {
    pub name: &'static str,
    pub params: Vec<(&'static str, f64)>,
    pub system: PiecewiseSystem,
    pub section: PoincareSection,
    pub guess: DVector<f64>,
    /// Rough period; the no-return horizon is 100 times this.
    pub timescale: f64,
}

impl Model {
    pub fn param(&self, key: &str) -> f64 {
        self.params
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("model {} has no parameter {key}", self.name))
    }

    pub fn cycle_options(&self) -> CycleOptions {
        CycleOptions {
            horizon: 100.0 * self.timescale,
            ..CycleOptions::default()
        }
    }
}

pub const MODEL_NAMES: [&str; 6] = ["1d", "glass", "iris", "aplysia", "morrison-curto", "octagon"];

/// Default parameters of a named model.
pub fn default_params(name: &str) -> Result<Vec<(&'static str, f64)>> {
    Ok(match name {
        "1d" => vec![("alpha", 0.95)],
        "glass" => {
            let t = GLASS_TARGETS;
            vec![
                ("a1", t[0].0),
                ("b1", t[0].1),
                ("a2", t[1].0),
                ("b2", t[1].1),
                ("a3", t[2].0),
                ("b3", t[2].1),
                ("a4", t[3].0),
                ("b4", t[3].1),
            ]
        }
        "iris" => vec![
            ("l1", IRIS_LAMBDAS[0]),
            ("l2", IRIS_LAMBDAS[1]),
            ("l3", IRIS_LAMBDAS[2]),
            ("l4", IRIS_LAMBDAS[3]),
            ("a", 0.01),
        ],
        "aplysia" => vec![("rho", 3.0), ("a", 0.01)],
        "morrison-curto" => vec![("delta", 0.5), ("eps", 0.25), ("theta", 1.0)],
        "octagon" => vec![],
        other => return Err(Error::UnknownModel(other.to_string())),
    })
}

/// Builds a named model, overriding defaults with `overrides`. Unknown
/// parameter names are rejected.
pub fn build_model(name: &str, overrides: &[(String, f64)]) -> Result<Model> {
    let mut params = default_params(name)?;
    for (k, v) in overrides {
        match params.iter_mut().find(|(p, _)| p == k) {
            Some(slot) => slot.1 = *v,
            None => {
                return Err(Error::InvalidInput(format!(
                    "model {name} has no parameter {k:?}"
                )))
            }
        }
    }
    let get = |k: &str| params.iter().find(|(p, _)| *p == k).unwrap().1;
    let mut model = match name {
        "1d" => one_dim(get("alpha"))?,
        "glass" => glass(&[
            (get("a1"), get("b1")),
            (get("a2"), get("b2")),
            (get("a3"), get("b3")),
            (get("a4"), get("b4")),
        ])?,
        "iris" => iris(&[get("l1"), get("l2"), get("l3"), get("l4")], get("a"))?,
        "aplysia" => aplysia(get("rho"), get("a"))?,
        "morrison-curto" => morrison_curto(get("delta"), get("eps"), get("theta"))?,
        "octagon" => octagon(),
        _ => unreachable!(),
    };
    model.params = params;
    Ok(model)
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(xs)
}

fn m(rows: usize, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, xs.len() / rows, xs)
}

fn halfspace(normal: &[f64], offset: f64) -> Constraint {
    Constraint::halfspace(v(normal), offset)
}

fn affine(j: DMatrix<f64>, c: DVector<f64>) -> RegionField {
    RegionField::affine(j, c)
}

// ---------------------------------------------------------------- 1D circle

/// Two-piece oscillator on the circle `[0, 1)`: `f = 1 - 2 alpha x` on
/// `[0, 1/2)` and `f = 1 - 2 alpha (x - 1/2)` on `[1/2, 1)`.
pub fn one_dim(alpha: f64) -> Result<Model> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut sys = PiecewiseSystem::new(1);
    sys.add_region(Region::new(
        1,
        affine(m(1, &[-2.0 * alpha]), v(&[1.0])),
        vec![halfspace(&[-1.0], 0.0), halfspace(&[1.0], 0.5)],
    ));
    sys.add_region(Region::new(
        2,
        affine(m(1, &[-2.0 * alpha]), v(&[1.0 + alpha])),
        vec![halfspace(&[-1.0], -0.5), halfspace(&[1.0], 1.0)],
    ));
    sys.derive_surfaces();
    let wrap = sys.add_hyperplane(2, 1, v(&[1.0]), 1.0, Some(v(&[-1.0])));
    let section = PoincareSection::with_axes(wrap, v(&[1.0]), Vec::new());
    Ok(Model {
        name: "1d",
        params: vec![("alpha", alpha)],
        system: sys,
        section,
        guess: DVector::zeros(0),
        timescale: one_dim_period(alpha),
    })
}

/// `T = ln(1 / (1 - alpha)) / alpha`.
pub fn one_dim_period(alpha: f64) -> f64 {
    (1.0 / (1.0 - alpha)).ln() / alpha
}

/// Jump `z(1/2+) - z(1/2-)` of the iPRC, equal at both switch points.
pub fn one_dim_jump(alpha: f64) -> f64 {
    -alpha * alpha / (1.0 - alpha) / (1.0 / (1.0 - alpha)).ln()
}

/// `z(x) = 1 / (T f(x))` at position `x` in `[0, 1)`.
pub fn one_dim_iprc_at(alpha: f64, x: f64) -> f64 {
    let f = if x < 0.5 {
        1.0 - 2.0 * alpha * x
    } else {
        1.0 - 2.0 * alpha * (x - 0.5)
    };
    1.0 / (one_dim_period(alpha) * f)
}

/// Position on the 1D cycle at time `t` (phase zero at `x = 0`).
pub fn one_dim_position(alpha: f64, t: f64) -> f64 {
    let half = one_dim_period(alpha) / 2.0;
    let t = t.rem_euclid(2.0 * half);
    let (base, tau) = if t < half { (0.0, t) } else { (0.5, t - half) };
    base + (1.0 - (-2.0 * alpha * tau).exp()) / (2.0 * alpha)
}

// ------------------------------------------------------------------- Glass

/// Targets `(a_k, b_k)` of quadrants 1..4 used as defaults.
pub const GLASS_TARGETS: [(f64, f64); 4] = [(-5.0, 11.0), (-10.0, -4.0), (6.0, -10.0), (10.0, 5.0)];

/// Four-quadrant Glass network `x' = -x + target_k`, regions numbered
/// counterclockwise from the first quadrant.
pub fn glass(targets: &[(f64, f64); 4]) -> Result<Model> {
    crate::cycle::glass_cycle_analytic(targets)?;
    let mut sys = PiecewiseSystem::new(2);
    let quadrant = [
        [halfspace(&[-1.0, 0.0], 0.0), halfspace(&[0.0, -1.0], 0.0)],
        [halfspace(&[1.0, 0.0], 0.0), halfspace(&[0.0, -1.0], 0.0)],
        [halfspace(&[1.0, 0.0], 0.0), halfspace(&[0.0, 1.0], 0.0)],
        [halfspace(&[-1.0, 0.0], 0.0), halfspace(&[0.0, 1.0], 0.0)],
    ];
    for (k, cons) in quadrant.into_iter().enumerate() {
        let (a, b) = targets[k];
        sys.add_region(Region::new(
            k + 1,
            affine(-DMatrix::identity(2, 2), v(&[a, b])),
            cons.to_vec(),
        ));
    }
    sys.derive_surfaces();
    let s41 = sys.surface_between(4, 1).unwrap().id;
    let section = PoincareSection::with_axes(s41, v(&[0.0, 0.0]), vec![v(&[1.0, 0.0])]);
    Ok(Model {
        name: "glass",
        params: Vec::new(),
        system: sys,
        section,
        guess: v(&[1.0]),
        timescale: 2.0,
    })
}

/// Jump matrices `M_1..M_4` of the Glass cycle in closed form (`M_k` maps
/// the iPRC from segment `k-1` into segment `k`).
pub fn glass_jumps(targets: &[(f64, f64); 4]) -> [DMatrix<f64>; 4] {
    let [(a1, b1), (a2, b2), (a3, b3), (a4, b4)] = *targets;
    [
        m(2, &[1.0, 0.0, (a4 - a1) / b1, b4 / b1]),
        m(2, &[a1 / a2, (b1 - b2) / a2, 0.0, 1.0]),
        m(2, &[1.0, 0.0, (a2 - a3) / b3, b2 / b3]),
        m(2, &[a3 / a4, (b3 - b4) / a4, 0.0, 1.0]),
    ]
}

/// Nontrivial eigenvalue of the Glass cycle matrix `B`.
pub fn glass_b_eigenvalue(targets: &[(f64, f64); 4]) -> f64 {
    let [(a1, b1), (a2, b2), (a3, b3), (a4, b4)] = *targets;
    (a2 * a4 * b1 * b3) / (a1 * a3 * b2 * b4)
}

/// Closed-form iPRC initial value `z_{1,0}`.
pub fn glass_z10(targets: &[(f64, f64); 4]) -> Result<DVector<f64>> {
    let g = crate::cycle::glass_cycle_analytic(targets)?;
    let (a1, b1) = targets[0];
    let p1x = g.points[0][0];
    // F_{1,0} = (a1 - p1x, b1), so F_{1,0} . z_hat = b1 p1x / a1.
    let zhat = v(&[-b1 / a1, 1.0]);
    Ok(zhat / (g.period * b1 * p1x / a1))
}

/// Closed-form Glass iPRC at cycle time `t`: `z(t) = e^t M_k .. M_2 z_{1,0}`
/// on segment `k` (every adjoint matrix is the identity).
pub fn glass_iprc_at(targets: &[(f64, f64); 4], t: f64) -> Result<DVector<f64>> {
    let g = crate::cycle::glass_cycle_analytic(targets)?;
    let jumps = glass_jumps(targets);
    let t = t.rem_euclid(g.period);
    let mut z = glass_z10(targets)?;
    let mut start = 0.0;
    for k in 0..4 {
        if k > 0 {
            z = &jumps[k] * z;
        }
        if t < start + g.times[k] || k == 3 {
            return Ok(z * t.exp());
        }
        start += g.times[k];
    }
    unreachable!()
}

// -------------------------------------------------------------------- iris

/// Saddle values of the four squares used as defaults.
pub const IRIS_LAMBDAS: [f64; 4] = [2.5, 1.5, 3.0, 4.0];

/// Iris system with unequal saddle values. Squares SW, NW, NE, SE are
/// regions 1..4 and the flow is clockwise; each square is a saddle with
/// stable rate `lambda_k` and unstable rate 1, the squares offset by `a`.
/// The small square `[-a, 0] x [0, a]` left between them is region 0 and
/// carries region 1's field; the cycle never enters it.
pub fn iris(lambdas: &[f64; 4], a: f64) -> Result<Model> {
    if lambdas.iter().any(|l| !(*l > 1.0)) {
        return Err(Error::InvalidInput("iris saddle values must exceed 1".into()));
    }
    if !(0.0..0.5).contains(&a) {
        return Err(Error::InvalidInput(format!("iris offset a must lie in [0, 0.5), got {a}")));
    }
    let [l1, l2, l3, l4] = *lambdas;
    let f1 = affine(m(2, &[-l1, 0.0, 0.0, 1.0]), v(&[-l1, 1.0]));
    let mut sys = PiecewiseSystem::new(2);
    sys.add_region(Region::new(
        1,
        f1.clone(),
        vec![halfspace(&[1.0, 0.0], 0.0), halfspace(&[0.0, 1.0], 0.0)],
    ));
    sys.add_region(Region::new(
        2,
        affine(m(2, &[1.0, 0.0, 0.0, -l2]), v(&[1.0 + a, l2])),
        vec![halfspace(&[1.0, 0.0], -a), halfspace(&[0.0, -1.0], 0.0)],
    ));
    sys.add_region(Region::new(
        3,
        affine(m(2, &[-l3, 0.0, 0.0, 1.0]), v(&[l3 * (1.0 - a), -1.0 - a])),
        vec![halfspace(&[-1.0, 0.0], a), halfspace(&[0.0, -1.0], -a)],
    ));
    sys.add_region(Region::new(
        4,
        affine(m(2, &[1.0, 0.0, 0.0, -l4]), v(&[-1.0, -l4 * (1.0 - a)])),
        vec![halfspace(&[-1.0, 0.0], 0.0), halfspace(&[0.0, 1.0], a)],
    ));
    sys.add_region(Region::new(
        0,
        f1,
        vec![
            halfspace(&[-1.0, 0.0], a),
            halfspace(&[1.0, 0.0], 0.0),
            halfspace(&[0.0, -1.0], 0.0),
            halfspace(&[0.0, 1.0], a),
        ],
    ));
    sys.derive_surfaces();
    let s41 = sys.surface_between(4, 1).unwrap().id;
    let section = PoincareSection::with_axes(s41, v(&[0.0, -1.0]), vec![v(&[0.0, 1.0])]);
    let guess = iris_fixed_point(lambdas, a).unwrap_or(0.5);
    let t: f64 = iris_closed_form(lambdas, a, guess)
        .map(|c| c.period)
        .unwrap_or(10.0);
    Ok(Model {
        name: "iris",
        params: Vec::new(),
        system: sys,
        section,
        guess: v(&[guess]),
        timescale: t,
    })
}

/// Closed-form return map `p(u) = (((u^l1 + a)^l2 + a)^l3 + a)^l4 + a` on
/// the entry coordinate of square 1.
pub fn iris_return_map(lambdas: &[f64; 4], a: f64, u: f64) -> f64 {
    lambdas.iter().fold(u, |x, l| x.powf(*l) + a)
}

/// Stable fixed point of [`iris_return_map`], or `None` when the orbit of
/// `u = a` does not settle (no stable cycle).
pub fn iris_fixed_point(lambdas: &[f64; 4], a: f64) -> Option<f64> {
    let mut u = a.max(1e-3);
    for _ in 0..100_000 {
        let next = iris_return_map(lambdas, a, u);
        if !(next < 1.0) {
            return None;
        }
        if (next - u).abs() < 1e-15 {
            return Some(next);
        }
        u = next;
    }
    None
}

/// Entry/exit coordinates, times of flight and the closed-form `B`, `z_hat`
/// and `z_{1,0}` of the iris cycle through entry coordinate `u1`.
#[derive(Clone, Debug)]
pub struct IrisClosedForm {
    pub u: [f64; 4],
    pub s: [f64; 4],
    pub t: [f64; 4],
    pub period: f64,
    pub b: DMatrix<f64>,
    pub zhat: DVector<f64>,
    pub z10: DVector<f64>,
}

pub fn iris_closed_form(lambdas: &[f64; 4], a: f64, u1: f64) -> Option<IrisClosedForm> {
    let mut u = [0.0; 4];
    let mut s = [0.0; 4];
    let mut x = u1;
    for k in 0..4 {
        u[k] = x;
        s[k] = x.powf(lambdas[k]);
        x = s[k] + a;
    }
    if u.iter().any(|uk| !(*uk > 0.0 && *uk < 1.0)) {
        return None;
    }
    let t = u.map(|uk| -uk.ln());
    let period: f64 = t.iter().sum();
    let [l1, l2, l3, l4] = *lambdas;
    let upsilon = u[1] * u[2] * u[3];
    let xi = s.iter().product::<f64>() * l1 * l2 * l3 * l4;
    let zeta = s[0] * l1 * (u[2] * u[3] + s[1] * l2 * (u[3] + s[2] * l3));
    let u1 = u[0];
    let b = m(
        2,
        &[
            u1 * (upsilon + zeta) + xi,
            -u1 * (u1 * zeta + xi) / l1,
            l1 * (upsilon + zeta),
            -u1 * zeta,
        ],
    ) / xi;
    let zhat = v(&[(u1 * zeta + xi) / (l1 * (upsilon + zeta)), 1.0]);
    let z10 = &zhat / (period * (u1 - (u1 * zeta + xi) / (upsilon + zeta)));
    Some(IrisClosedForm {
        u,
        s,
        t,
        period,
        b,
        zhat,
        z10,
    })
}

// ----------------------------------------------------------------- Aplysia

/// Three-saddle model on the thirds of the unit cube with saddle value `rho`
/// and offset `a`. Regions 1, 2, 3 are bounded by `x - y = a`,
/// `y - z = a` and `x - z = -a`; the prism around the diagonal that these
/// planes leave uncovered is region 0 and carries region 1's field.
pub fn aplysia(rho: f64, a: f64) -> Result<Model> {
    if !(rho > 1.0) {
        return Err(Error::InvalidInput(format!("rho must exceed 1, got {rho}")));
    }
    if !(a >= 0.0) {
        return Err(Error::InvalidInput(format!("a must be non-negative, got {a}")));
    }
    let j1 = m(3, &[-1.0, -rho, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0 - rho]);
    let c1 = v(&[1.0 - a * rho, a, -a * (1.0 - rho)]);
    let j2 = m(3, &[1.0 - rho, 0.0, 0.0, 0.0, -1.0, -rho, 0.0, 0.0, 1.0]);
    let c2 = v(&[-a * (1.0 - rho), 1.0 - a * rho, a]);
    let j3 = m(3, &[1.0, 0.0, 0.0, 0.0, 1.0 - rho, 0.0, -rho, 0.0, -1.0]);
    let c3 = v(&[a, -a * (1.0 - rho), 1.0 - a * rho]);
    let mut sys = PiecewiseSystem::new(3);
    sys.add_region(Region::new(
        1,
        affine(j1.clone(), c1.clone()),
        vec![halfspace(&[-1.0, 1.0, 0.0], -a), halfspace(&[-1.0, 0.0, 1.0], a)],
    ));
    sys.add_region(Region::new(
        2,
        affine(j2, c2),
        vec![halfspace(&[1.0, -1.0, 0.0], a), halfspace(&[0.0, -1.0, 1.0], -a)],
    ));
    sys.add_region(Region::new(
        3,
        affine(j3, c3),
        vec![halfspace(&[0.0, 1.0, -1.0], a), halfspace(&[1.0, 0.0, -1.0], -a)],
    ));
    sys.add_region(Region::new(
        0,
        affine(j1, c1),
        vec![
            halfspace(&[1.0, -1.0, 0.0], a),
            halfspace(&[0.0, 1.0, -1.0], a),
            halfspace(&[-1.0, 0.0, 1.0], a),
        ],
    ));
    sys.derive_surfaces();
    let s31 = sys.surface_between(3, 1).unwrap().id;
    let section = PoincareSection::new(&sys, s31, v(&[0.0, 0.0, a]));
    // Near the cycle found at rho = 3, a = 0.01.
    let guess = section.coords(&v(&[0.3771, 0.0111, 0.3771 + a]));
    Ok(Model {
        name: "aplysia",
        params: Vec::new(),
        system: sys,
        section,
        guess,
        timescale: 9.0,
    })
}

/// Unstable eigenvector `(-rho/2, 1, 0)` of the saddle in region 1.
pub fn aplysia_unstable_direction(rho: f64) -> DVector<f64> {
    v(&[-rho / 2.0, 1.0, 0.0])
}

/// Direction of `z_hat_{1,0}` at `rho = 3`, `a = 0.01`, normalized to a
/// middle component of -1.
pub const APLYSIA_ZHAT: [f64; 3] = [1.15e-3, -1.0, -2.98e-3];

// ------------------------------------------------------- threshold-linear

/// Threshold-linear network `x' = -x + [W x + b]_+`, split into the `2^n`
/// sign-pattern regions of `W x + b`. Region `mask` has unit `i` active when
/// bit `i` is set. Surfaces join regions that differ in one unit.
pub fn threshold_linear_network(w: &DMatrix<f64>, b: &DVector<f64>) -> PiecewiseSystem {
    let n = w.nrows();
    let mut sys = PiecewiseSystem::new(n);
    for mask in 0..(1usize << n) {
        let mut j = -DMatrix::identity(n, n);
        let mut c = DVector::zeros(n);
        let mut cons = Vec::with_capacity(n);
        for i in 0..n {
            let row = w.row(i).transpose();
            if mask >> i & 1 == 1 {
                j.set_row(i, &(j.row(i) + w.row(i)));
                c[i] = b[i];
                cons.push(Constraint::halfspace(-row, b[i]));
            } else {
                cons.push(Constraint::halfspace(row, -b[i]));
            }
        }
        sys.add_region(Region::new(mask, affine(j, c), cons));
    }
    for mask in 0..(1usize << n) {
        for i in 0..n {
            let to = mask ^ (1 << i);
            let row = w.row(i).transpose();
            let (normal, offset) = if mask >> i & 1 == 1 {
                (-row, b[i])
            } else {
                (row, -b[i])
            };
            sys.add_hyperplane(mask, to, normal, offset, None);
        }
    }
    sys
}

/// Weight matrix of the three-unit competitive network.
pub fn morrison_curto_weights(delta: f64, eps: f64) -> DMatrix<f64> {
    let (p, q) = (-1.0 - delta, -1.0 + eps);
    m(3, &[0.0, p, q, q, 0.0, p, p, q, 0.0])
}

/// Three-unit competitive threshold-linear oscillator.
pub fn morrison_curto(delta: f64, eps: f64, theta: f64) -> Result<Model> {
    let w = morrison_curto_weights(delta, eps);
    let sys = threshold_linear_network(&w, &DVector::from_element(3, theta));
    // Phase zero where unit 3 switches off, entering the region that
    // contains (1, 0, 0).
    let s = sys.surface_between(0b111, 0b011).unwrap().id;
    let row = w.row(2).transpose();
    let base = &row * (-theta / row.norm_squared());
    let section = PoincareSection::new(&sys, s, base);
    let guess = section.coords(&v(&[0.6355, 0.0623, 0.2261]));
    Ok(Model {
        name: "morrison-curto",
        params: Vec::new(),
        system: sys,
        section,
        guess,
        timescale: 12.0,
    })
}

/// Two copies of the network with inhibitory cross-coupling of strength
/// `alpha`: `x' = -x + [W x + alpha (-1 - delta) sum(y) + theta]_+` and the
/// same with `x` and `y` exchanged.
pub fn morrison_curto_pair(delta: f64, eps: f64, theta: f64, alpha: f64) -> PiecewiseSystem {
    let w = morrison_curto_weights(delta, eps);
    let c = alpha * (-1.0 - delta);
    let mut w6 = DMatrix::from_element(6, 6, c);
    w6.view_mut((0, 0), (3, 3)).copy_from(&w);
    w6.view_mut((3, 3), (3, 3)).copy_from(&w);
    threshold_linear_network(&w6, &DVector::from_element(6, theta))
}

// ----------------------------------------------------------------- octagon

/// Eight constant-velocity wedges (speed 16, headings 45 degrees apart,
/// clockwise) around a central octagon where `x' = x`. Region `k` lies
/// beyond side `k` of the central octagon, counted clockwise from the
/// top-right diagonal side.
pub fn octagon() -> Model {
    let h = 1.0 / SQRT_2;
    let r = SQRT_2;
    let speed = 16.0;
    let wedges: [([f64; 2], [(f64, f64, f64); 2]); 8] = [
        ([1.0, 0.0], [(-1.0, -1.0, -r), (1.0, 0.0, 1.0)]),
        ([h, -h], [(-1.0, 0.0, -1.0), (1.0, -1.0, r)]),
        ([0.0, -1.0], [(0.0, -1.0, 1.0), (-1.0, 1.0, -r)]),
        ([-h, -h], [(-1.0, -1.0, r), (0.0, 1.0, -1.0)]),
        ([-1.0, 0.0], [(-1.0, 0.0, 1.0), (1.0, 1.0, -r)]),
        ([-h, h], [(-1.0, 1.0, r), (1.0, 0.0, -1.0)]),
        ([0.0, 1.0], [(1.0, -1.0, -r), (0.0, 1.0, 1.0)]),
        ([h, h], [(0.0, -1.0, -1.0), (1.0, 1.0, r)]),
    ];
    let mut sys = PiecewiseSystem::new(2);
    for (k, (dir, cons)) in wedges.iter().enumerate() {
        sys.add_region(Region::new(
            k + 1,
            affine(DMatrix::zeros(2, 2), v(dir) * speed),
            cons.iter().map(|&(a, b, d)| halfspace(&[a, b], d)).collect(),
        ));
    }
    sys.add_region(Region::new(
        0,
        affine(DMatrix::identity(2, 2), DVector::zeros(2)),
        vec![
            halfspace(&[1.0, 0.0], 1.0),
            halfspace(&[1.0, 1.0], r),
            halfspace(&[0.0, 1.0], 1.0),
            halfspace(&[-1.0, 1.0], r),
            halfspace(&[-1.0, 0.0], 1.0),
            halfspace(&[-1.0, -1.0], r),
            halfspace(&[0.0, -1.0], 1.0),
            halfspace(&[1.0, -1.0], r),
        ],
    ));
    sys.derive_surfaces();
    let s81 = sys.surface_between(8, 1).unwrap().id;
    // Coordinate u = x - 1 along the 8|1 boundary.
    let section = PoincareSection::with_axes(s81, v(&[1.0, r - 1.0]), vec![v(&[1.0, -1.0])]);
    Model {
        name: "octagon",
        params: Vec::new(),
        system: sys,
        section,
        guess: v(&[-1.0]),
        timescale: 1.0,
    }
}

/// Map from one boundary to the next, pulled back by the eighth-turn
/// symmetry, in the coordinate `u = x - 1` on the 8|1 boundary:
/// `u -> (u + 2 - 2 sqrt 2) / sqrt 2`. Its eighth iterate is the return map.
pub fn octagon_section_map(u: f64) -> f64 {
    (u + 2.0 - 2.0 * SQRT_2) / SQRT_2
}

/// Fixed point `(2 - 2 sqrt 2) / (sqrt 2 - 1) = -2` of the octagon section map.
pub fn octagon_fixed_point() -> f64 {
    (2.0 - 2.0 * SQRT_2) / (SQRT_2 - 1.0)
}

/// Octagon cycle matrix `[[1, 0], [15 (1 + sqrt 2), 16]]`.
pub fn octagon_b() -> DMatrix<f64> {
    m(2, &[1.0, 0.0, 15.0 * (1.0 + SQRT_2), 16.0])
}

/// The two magnitudes taken by the octagon iPRC components.
pub fn octagon_iprc_levels() -> [f64; 2] {
    [1.0 / 16.0, 1.0 / (16.0 * (SQRT_2 - 1.0))]
}
