//! Acceptance suite. Prints one PASS/FAIL line per criterion, followed by
//! the individual measurements, and exits nonzero if any criterion fails.

use std::f64::consts::SQRT_2;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pwsm::coupling::*;
use pwsm::cycle::*;
use pwsm::integrate::{Integrator, IntegratorOptions};
use pwsm::iprc::*;
use pwsm::oracle::*;
use pwsm::system::tangent_basis;
use pwsm::zoo::*;
use pwsm::Result;

struct Item {
    label: String,
    pass: bool,
}

#[derive(Default)]
struct Report {
    items: Vec<Item>,
}

impl Report {
    fn check(&mut self, label: impl Into<String>, pass: bool) {
        self.items.push(Item {
            label: label.into(),
            pass,
        });
    }

    fn within(&mut self, what: &str, err: f64, tol: f64) {
        self.check(format!("{what}: {err:.3e} (tol {tol:.0e})"), err <= tol);
    }

    fn runtime(&mut self, elapsed: Duration, budget: Duration) {
        self.check(
            format!("runtime {:.2} s (budget {} s)", elapsed.as_secs_f64(), budget.as_secs()),
            elapsed <= budget,
        );
    }
}

struct Solved {
    model: Model,
    cycle: LimitCycle,
    iprc: PiecewiseIprc,
}

fn solve(name: &str, overrides: &[(String, f64)]) -> Result<Solved> {
    let model = build_model(name, overrides)?;
    let cycle = find_limit_cycle(&model.system, &model.section, &model.guess, &model.cycle_options())?;
    let iprc = iprc_affine(&model.system, &cycle, &IprcOptions::default())?;
    Ok(Solved { model, cycle, iprc })
}

fn unit(n: usize, k: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 })
}

fn iprc_scale(iprc: &PiecewiseIprc) -> f64 {
    (0..2000)
        .map(|i| iprc.evaluate((i as f64 + 0.5) / 2000.0).amax())
        .fold(0.0, f64::max)
}

/// Distance in phase from `theta` to the nearest breakpoint of the cycle.
fn breakpoint_distance(cycle: &LimitCycle, theta: f64) -> f64 {
    cycle
        .breakpoints()
        .iter()
        .map(|b| wrap_phase(theta - b / cycle.period).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Worst oracle-engine discrepancy over `phases`, every coordinate
/// direction, relative to the largest iPRC component on the cycle.
fn oracle_discrepancy(s: &Solved, phases: &[f64], eps: f64) -> Result<f64> {
    let sys = &s.model.system;
    let table = PhaseLookupTable::new(sys, &s.cycle, PhaseLookupTable::DEFAULT_ROWS);
    let n = sys.dim;
    let opts = OracleOptions::default();
    let jobs: Vec<(f64, usize)> = phases.iter().flat_map(|&th| (0..n).map(move |d| (th, d))).collect();
    let errs = pwsm::par::map_indexed(jobs.len(), |i| -> Result<f64> {
        let (th, d) = jobs[i];
        let o = direct_iprc(sys, &s.cycle, &table, th, &unit(n, d), eps, &opts)?;
        Ok((o - s.iprc.evaluate(th)[d]).abs())
    });
    let scale = iprc_scale(&s.iprc);
    let mut worst: f64 = 0.0;
    for e in errs {
        worst = worst.max(e? / scale);
    }
    Ok(worst)
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

/// `a` and `b` as unit vectors with a common sign.
fn direction_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (a, b) = (a.normalize(), b.normalize());
    (&a - &b).amax().min((&a + &b).amax())
}

// ---------------------------------------------------------------- criteria

fn one_dim_example(r: &mut Report) -> Result<()> {
    let start = Instant::now();
    let alpha = 0.95;
    let s = solve("1d", &[("alpha".into(), alpha)])?;
    r.within(
        "period vs (1/alpha) ln(1/(1-alpha))",
        (s.cycle.period - one_dim_period(alpha)).abs(),
        1e-10,
    );
    let jump = s.iprc.segments[1].z0[0] - s.iprc.segment_end(0)[0];
    let exact = one_dim_jump(alpha);
    r.within("engine jump at x = 1/2", (jump - exact).abs(), 1e-10);
    let table = PhaseLookupTable::new(&s.model.system, &s.cycle, PhaseLookupTable::DEFAULT_ROWS);
    let opts = OracleOptions::default();
    let half = s.cycle.breakpoints()[1] / s.cycle.period;
    for eps in [1e-3, 1e-4] {
        let side = |sign: f64, e: f64| -> Result<f64> {
            let d = DVector::from_element(1, sign);
            Ok(direct_iprc(&s.model.system, &s.cycle, &table, half, &d, e, &opts)? * sign)
        };
        let after = richardson(side(1.0, eps)?, side(1.0, eps / 2.0)?);
        let before = richardson(side(-1.0, eps)?, side(-1.0, eps / 2.0)?);
        let err = ((after - before) - exact).abs() / exact.abs();
        r.within(&format!("oracle jump, relative, eps = {eps:.0e}"), err, 0.01);
    }
    r.runtime(start.elapsed(), Duration::from_secs(1));
    Ok(())
}

fn glass_network(r: &mut Report) -> Result<()> {
    let start = Instant::now();
    let s = solve("glass", &[])?;
    let g = glass_cycle_analytic(&GLASS_TARGETS)?;
    r.within("p1 vs closed form", (s.cycle.segments[0].entry() - &g.points[0]).amax(), 1e-8);
    let dt = (0..4)
        .map(|k| (s.cycle.segments[k].time_of_flight - g.times[k]).abs())
        .fold(0.0, f64::max);
    r.within("t1..t4 vs closed form", dt, 1e-8);

    let mut eig: Vec<f64> = cycle_matrix_b(&s.model.system, &s.cycle)?.spectrum().iter().map(|z| z.re).collect();
    let mut want = vec![1.0, glass_b_eigenvalue(&GLASS_TARGETS)];
    eig.sort_by(f64::total_cmp);
    want.sort_by(f64::total_cmp);
    let e = eig.iter().zip(&want).map(|(a, b)| (a - b).abs() / b.abs()).fold(0.0, f64::max);
    r.within("B eigenvalues {1, a2 a4 b1 b3 / a1 a3 b2 b4}, relative", e, 1e-10);

    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let t = (i as f64 + 0.5) / 1000.0 * s.cycle.period;
        worst = worst.max((s.iprc.evaluate_time(t) - glass_iprc_at(&GLASS_TARGETS, t)?).amax());
    }
    r.within("closed-form iPRC vs engine, 1000 points", worst, 1e-8);

    let phases: Vec<f64> = (0..32)
        .map(|i| (i as f64 + 0.5) / 32.0)
        .filter(|th| breakpoint_distance(&s.cycle, *th) > 0.02)
        .collect();
    let e = oracle_discrepancy(&s, &phases, 0.01)?;
    r.within(&format!("oracle (eps = 0.01) vs engine at {} phases", phases.len()), e, 0.02);
    r.runtime(start.elapsed(), Duration::from_secs(10));
    Ok(())
}

fn iris_model(r: &mut Report) -> Result<()> {
    let start = Instant::now();
    let phases: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) / 64.0).collect();
    for a in [0.01, 0.1, 0.2, 0.24] {
        let s = solve("iris", &[("a".into(), a)])?;
        let e = oracle_discrepancy(&s, &phases, 1e-4)?;
        r.within(&format!("a = {a}: oracle (eps = 1e-4) vs engine, 64 phases"), e, 0.02);
        let u1 = s.cycle.section.coords(&s.cycle.segments[0].entry())[0];
        let cf = iris_closed_form(&IRIS_LAMBDAS, a, u1).expect("cycle inside the unit squares");
        r.within(&format!("a = {a}: B vs closed form, relative"), rel(s.iprc.b.as_ref().unwrap(), &cf.b), 1e-8);
        r.within(
            &format!("a = {a}: unit eigenvector direction"),
            direction_error(&s.iprc.segments[0].z0, &cf.zhat),
            1e-8,
        );
    }
    r.runtime(start.elapsed(), Duration::from_secs(60));
    Ok(())
}

fn aplysia_model(r: &mut Report) -> Result<()> {
    let start = Instant::now();
    let s = solve("aplysia", &[])?;
    let lambda = s.iprc.eigenvalue.unwrap();
    r.check(format!("near-unit eigenvalue of B: {lambda:.9} in [0.99, 1.01]"), (0.99..=1.01).contains(&lambda));
    let z = &s.iprc.segments[0].z0;
    let zhat = z / -z[1];
    let e = (0..3)
        .map(|i| ((zhat[i] - APLYSIA_ZHAT[i]) / APLYSIA_ZHAT[i]).abs())
        .fold(0.0, f64::max);
    r.within(
        &format!("eigenvector ({:.4e}, -1, {:.4e}) componentwise", zhat[0], zhat[2]),
        e,
        0.02,
    );
    let phases: Vec<f64> = (0..32)
        .map(|i| (i as f64 + 0.5) / 32.0)
        .filter(|th| breakpoint_distance(&s.cycle, *th) > 0.02)
        .collect();
    let e = oracle_discrepancy(&s, &phases, 1e-4)?;
    r.within(&format!("oracle (eps = 1e-4) vs engine at {} phases", phases.len()), e, 0.03);
    r.runtime(start.elapsed(), Duration::from_secs(60));
    Ok(())
}

fn octagon_model(r: &mut Report) -> Result<()> {
    let s = solve("octagon", &[])?;
    r.within("B vs [[1, 0], [15 (1 + sqrt 2), 16]]", (s.iprc.b.as_ref().unwrap() - octagon_b()).amax(), 1e-10);

    let levels = octagon_iprc_levels();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        for c in s.iprc.evaluate((i as f64 + 0.5) / 1000.0).iter() {
            worst = worst.max(levels.iter().map(|l| (c.abs() - l).abs()).fold(f64::INFINITY, f64::min));
        }
    }
    r.within("iPRC components vs +-1/16, +-1/(16 (sqrt 2 - 1))", worst, 1e-10);

    let u_star = s.cycle.section.coords(&s.cycle.segments[0].entry())[0];
    r.within("section fixed point vs (2 - 2 sqrt 2)/(sqrt 2 - 1)", (u_star - octagon_fixed_point()).abs(), 1e-10);
    r.within(
        "per-crossing map fixes it",
        (octagon_section_map(octagon_fixed_point()) - octagon_fixed_point()).abs(),
        1e-10,
    );

    let st = cycle_stability(&s.model.system, &s.cycle)?;
    let mu = st.multipliers[1].norm();
    r.within(
        "Floquet contraction per crossing, mu^(1/8) vs 1/sqrt 2",
        (mu.powf(1.0 / 8.0) - 1.0 / SQRT_2).abs(),
        1e-10,
    );
    let integ = Integrator::new(&s.model.system, IntegratorOptions::default());
    let mut worst: f64 = 0.0;
    for u in [-2.5, -1.9, -1.5] {
        let back = poincare_map(&integ, &s.model.section, &DVector::from_element(1, u), 100.0)?;
        let composed = (0..8).fold(u, |x, _| octagon_section_map(x));
        worst = worst.max((back.coords[0] - composed).abs());
    }
    r.within("numeric return map vs eighth iterate of the per-crossing map", worst, 1e-10);
    Ok(())
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn synchronization(r: &mut Report) -> Result<()> {
    let start = Instant::now();

    let (delta, eps_w, theta, alpha) = (0.5, 0.25, 1.0, 0.01);
    let s = solve("morrison-curto", &[])?;
    let w = morrison_curto_weights(delta, eps_w);
    let g = morrison_curto_coupling(&w, delta, theta);
    let h = interaction_function(&s.cycle, &s.iprc, &g, DEFAULT_H_POINTS, DEFAULT_QUADRATURE_NODES);
    let table = PhaseLookupTable::new(&s.model.system, &s.cycle, PhaseLookupTable::DEFAULT_ROWS);
    let full = morrison_curto_pair(delta, eps_w, theta, alpha);
    let pair = CoupledPair::with_composite(s.model.system.clone(), Arc::new(g), alpha, full, 8)?;
    let times: Vec<f64> = (0..=4000).map(|i| 2.0 * i as f64).collect();
    for (psi0, target) in [(-0.05, -1.0 / 6.0), (0.45, 0.5)] {
        let reduced = phase_difference_flow(&h, alpha, psi0, &times);
        let x0 = s.cycle.state_at(&s.model.system, 0.0);
        let y0 = s.cycle.state_at(&s.model.system, psi0.rem_euclid(1.0) * s.cycle.period);
        let run = simulate_coupled(&pair, &s.cycle, &table, PhaseMethod::Lookup, &x0, &y0, &times, &IntegratorOptions::default())?;
        let end = *run.psi.last().unwrap();
        r.within(
            &format!("Morrison-Curto psi0 = {psi0}: reduced vs full over t <= 8000"),
            max_gap(&reduced, &run.psi),
            0.02,
        );
        r.within(
            &format!("Morrison-Curto psi0 = {psi0}: full run locks at {target:.4} (ends at {end:.4})"),
            (end - target).abs(),
            0.02,
        );
    }

    let s = solve("octagon", &[])?;
    let strength = 0.05;
    let h = interaction_function(&s.cycle, &s.iprc, &Diffusive, DEFAULT_H_POINTS, DEFAULT_QUADRATURE_NODES);
    let table = PhaseLookupTable::new(&s.model.system, &s.cycle, PhaseLookupTable::DEFAULT_ROWS);
    let pair = CoupledPair::new(s.model.system.clone(), Arc::new(Diffusive), strength)?;
    let times: Vec<f64> = (0..=1500).map(|i| 0.2 * i as f64).collect();
    let psi0 = 0.45;
    let reduced = phase_difference_flow(&h, strength, psi0, &times);
    let x0 = s.cycle.state_at(&s.model.system, 0.0);
    let y0 = s.cycle.state_at(&s.model.system, psi0 * s.cycle.period);
    let opts = IntegratorOptions::default();
    let run = simulate_coupled(&pair, &s.cycle, &table, PhaseMethod::Lookup, &x0, &y0, &times, &opts)?;
    r.within("octagon psi0 = 0.45: reduced vs full (lookup phase)", max_gap(&reduced, &run.psi), 0.02);
    let end = *run.psi.last().unwrap();
    r.within(&format!("octagon: full run locks at 0 (ends at {end:.2e})"), end.abs(), 0.02);
    let geo = simulate_coupled(&pair, &s.cycle, &table, PhaseMethod::Geometric, &x0, &y0, &times, &opts)?;
    r.check(
        format!("octagon: geometric-phase discrepancy {:.3e} (reported only)", max_gap(&reduced, &geo.psi)),
        true,
    );

    let finer = interaction_function(&s.cycle, &s.iprc, &Diffusive, DEFAULT_H_POINTS, 2 * DEFAULT_QUADRATURE_NODES);
    let quad_tol = max_gap(&h.values, &finer.values).max(1e-12);
    let control = s.iprc.with_identity_jumps(1024);
    let hc = interaction_function(&s.cycle, &control, &Diffusive, DEFAULT_H_POINTS, DEFAULT_QUADRATURE_NODES);
    let drift = strength * hc.odd_part_grid().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    r.within("identity-jump control: max |dpsi/dt| vs quadrature tolerance", drift, quad_tol);
    let drive = strength * h.odd_part_grid().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    r.check(format!("with jumps restored, max |dpsi/dt| = {drive:.3e}"), drive > 1e3 * quad_tol);

    r.runtime(start.elapsed(), Duration::from_secs(300));
    Ok(())
}

fn random_crossing(rng: &mut ChaCha8Rng, n: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let normal = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
    let mut field = || loop {
        let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        if normal.dot(&f) > 0.1 {
            return f;
        }
    };
    let (fm, fp) = (field(), field());
    (fm, fp, normal)
}

fn properties(r: &mut Report) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut duality, mut pairing): (f64, f64) = (0.0, 0.0);
    for i in 0..1000 {
        let n = 2 + i % 5;
        let (fm, fp, normal) = random_crossing(&mut rng, n);
        let m = jump_matrix(&fm, &fp, &normal)?;
        let s = saltation_matrix(&fm, &fp, &normal)?;
        duality = duality.max((m.transpose() * &s - DMatrix::identity(n, n)).amax());
        let u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        pairing = pairing.max(((&s * &u).dot(&(&m * &z)) - u.dot(&z)).abs());
    }
    r.within("M^T S = I over 1000 random crossings, n = 2..6", duality, 1e-10);
    r.within("(S u).(M z) = u.z over 1000 random pairs", pairing, 1e-10);

    for name in MODEL_NAMES {
        let s = solve(name, &[])?;
        let sys = &s.model.system;
        let mut norm_err: f64 = 0.0;
        for i in 0..1000 {
            let t = (i as f64 + 0.5) / 1000.0 * s.cycle.period;
            let (k, _) = s.cycle.segment_at(t);
            let f = sys.one_sided_field(s.cycle.segments[k].region, &s.cycle.state_at(sys, t));
            norm_err = norm_err.max((f.dot(&s.iprc.evaluate_time(t)) - 1.0 / s.cycle.period).abs() * s.cycle.period);
        }
        r.within(&format!("{name}: T F.z - 1 at 1000 phases"), norm_err, 1e-8);

        let kk = s.cycle.segments.len();
        let mut tangential: f64 = 0.0;
        for k in 0..kk {
            let (fm, fp, normal) = crossing_fields(sys, &s.cycle, k);
            let before = s.iprc.segment_end((k + kk - 1) % kk);
            let after = &s.iprc.segments[k].z0;
            let scale = before.amax().max(after.amax());
            tangential = tangential.max((fp.dot(after) - fm.dot(&before)).abs() / fp.dot(after).abs().max(1e-300));
            for w in tangent_basis(&normal) {
                tangential = tangential.max((w.dot(after) - w.dot(&before)).abs() / scale);
            }
        }
        r.within(&format!("{name}: tangential and F.z matching at all {kk} crossings"), tangential, 1e-8);

        let st = cycle_stability(sys, &s.cycle)?;
        let adjoint = cycle_matrix_b(sys, &s.cycle)?.spectrum();
        let worst = st
            .multipliers
            .iter()
            .map(|mu| {
                adjoint
                    .iter()
                    .map(|lam| (lam * mu - 1.0).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        r.within(&format!("{name}: adjoint/variational eigenvalue pairing |lambda mu - 1|"), worst, 1e-6);

        if name == "morrison-curto" {
            let identity = s
                .iprc
                .jumps
                .iter()
                .map(|m| (m - DMatrix::identity(3, 3)).amax())
                .fold(0.0, f64::max);
            r.within("morrison-curto: max ||M - I|| over crossings", identity, 1e-10);
        }
    }
    Ok(())
}

fn main() {
    type Criterion = fn(&mut Report) -> Result<()>;
    let criteria: [(&str, Criterion); 7] = [
        ("1D two-piece oscillator", one_dim_example),
        ("Glass network", glass_network),
        ("iris", iris_model),
        ("Aplysia", aplysia_model),
        ("octagon", octagon_model),
        ("synchronization", synchronization),
        ("property suites", properties),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let mut report = Report::default();
        let outcome = run(&mut report);
        let pass = outcome.is_ok() && report.items.iter().all(|it| it.pass);
        println!("{} criterion {}: {name}", if pass { "PASS" } else { "FAIL" }, i + 1);
        for it in &report.items {
            println!("    [{}] {}", if it.pass { "ok" } else { "FAIL" }, it.label);
        }
        if let Err(e) = outcome {
            println!("    [FAIL] aborted: {e}");
        }
        failed += usize::from(!pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
