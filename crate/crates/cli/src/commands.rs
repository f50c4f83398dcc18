//! Subcommand arguments and implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use nalgebra::DVector;

use pwsm::coupling::{
    fixed_points, interaction_function, morrison_curto_coupling, phase_difference_flow, simulate_coupled, CoupledPair,
    Coupling, Diffusive, PhaseMethod, DEFAULT_H_POINTS, DEFAULT_QUADRATURE_NODES,
};
use pwsm::cycle::{cycle_stability, LimitCycle};
use pwsm::integrate::{integrate_with_events, EventTrajectory};
use pwsm::io::{
    jump_records, write_cycle_csv, write_events_csv, write_interaction_csv, write_iprc_csv, write_oracle_csv,
    write_phase_difference_csv, write_trajectory_csv, CycleSpec, OracleSample, SystemSpec,
};
use pwsm::iprc::PiecewiseIprc;
use pwsm::oracle::{direct_iprc, OracleOptions, PhaseLookupTable};
use pwsm::system::PiecewiseSystem;
use pwsm::zoo::{morrison_curto_pair, morrison_curto_weights};
use pwsm::Error;

use crate::config::{count, output_path, positive, SourceArgs, StartArgs, Tolerances};
use crate::svg::{render, Panel, Series, PALETTE};
use crate::verify::{self, SuiteName};

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = output_path(dir, name)?;
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}

fn wrote(dir: &Path, names: &[&str]) {
    for n in names {
        println!("wrote {}", dir.join(n).display());
    }
}

// ------------------------------------------------------------------ simulate

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    src: SourceArgs,
    #[command(flatten)]
    tol: Tolerances,
    /// Final time.
    #[arg(long, default_value_t = 20.0, value_parser = positive, allow_hyphen_values = true)]
    t: f64,
    /// Initial state, comma separated (default: the model's initial guess).
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Keep every n-th integrator step in the trajectory CSV.
    #[arg(long, default_value_t = 1, value_parser = count)]
    decimate: usize,
    /// Also write a phase-plane plot of the first two coordinates.
    #[arg(long)]
    svg: bool,
}

fn decimated(traj: &EventTrajectory, every: usize) -> EventTrajectory {
    let last = traj.samples.len().saturating_sub(1);
    EventTrajectory {
        samples: traj
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| i % every == 0 || *i == last)
            .map(|(_, s)| s.clone())
            .collect(),
        events: traj.events.clone(),
    }
}

pub fn simulate(a: &SimulateArgs, out: &Path) -> anyhow::Result<ExitCode> {
    let loaded = a.src.load()?;
    let sys = &loaded.system;
    let start = StartArgs {
        x0: a.x0.clone(),
        transient: 1.0,
    };
    let x0 = loaded.start_point(&start)?;
    let traj = decimated(&integrate_with_events(sys, &x0, (0.0, a.t), &a.tol.integrator())?, a.decimate);
    write_trajectory_csv(create(out, "trajectory.csv")?, &traj, sys.dim)?;
    write_events_csv(create(out, "events.csv")?, &traj, sys.dim)?;
    let mut names = vec!["trajectory.csv", "events.csv"];
    if a.svg {
        let panel = if sys.dim >= 2 {
            Panel {
                title: format!("{}: trajectory from ({})", loaded.label, join(&x0)),
                xlabel: "x1".into(),
                ylabel: "x2".into(),
                series: vec![Series::line("trajectory", PALETTE[0], vec![traj.samples.iter().map(|s| (s.x[0], s.x[1])).collect()])],
                equal_aspect: true,
            }
        } else {
            Panel {
                title: format!("{}: trajectory", loaded.label),
                xlabel: "t".into(),
                ylabel: "x1".into(),
                series: vec![Series::line("x1", PALETTE[0], vec![traj.samples.iter().map(|s| (s.t, s.x[0])).collect()])],
                equal_aspect: false,
            }
        };
        write_text(out, "trajectory.svg", &render(&[panel]))?;
        names.push("trajectory.svg");
    }
    println!("{} steps, {} crossings", traj.samples.len(), traj.events.len());
    wrote(out, &names);
    Ok(ExitCode::SUCCESS)
}

fn join(x: &DVector<f64>) -> String {
    x.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(", ")
}

// ---------------------------------------------------------------- find-cycle

#[derive(Args, Debug)]
pub struct FindCycleArgs {
    #[command(flatten)]
    src: SourceArgs,
    #[command(flatten)]
    start: StartArgs,
    #[command(flatten)]
    tol: Tolerances,
    /// Samples per segment in the cycle CSV.
    #[arg(long, default_value_t = 200, value_parser = count)]
    per_segment: usize,
}

pub fn find_cycle(a: &FindCycleArgs, out: &Path) -> anyhow::Result<ExitCode> {
    let loaded = a.src.load()?;
    let sys = &loaded.system;
    let solved = loaded.find_cycle(&a.start, &a.tol)?;
    let cycle = &solved.cycle;
    write_json(out, "cycle.json", &CycleSpec::from_cycle(cycle))?;
    write_cycle_csv(create(out, "cycle.csv")?, sys, cycle, a.per_segment)?;
    println!("period {}", cycle.period);
    for (k, s) in cycle.segments.iter().enumerate() {
        println!("segment {}: region {}, time of flight {}", k + 1, s.region, s.time_of_flight);
    }
    let st = cycle_stability(sys, cycle)?;
    let mut mus = st.multipliers.clone();
    mus.sort_by(|p, q| q.norm().total_cmp(&p.norm()));
    for mu in mus {
        if mu.im == 0.0 {
            println!("multiplier {}", mu.re);
        } else {
            println!("multiplier {} {:+}i", mu.re, mu.im);
        }
    }
    wrote(out, &["cycle.json", "cycle.csv"]);
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------- iprc

#[derive(Args, Debug)]
pub struct IprcArgs {
    #[command(flatten)]
    src: SourceArgs,
    #[command(flatten)]
    start: StartArgs,
    #[command(flatten)]
    tol: Tolerances,
    /// Uniform phase samples in the iPRC CSV.
    #[arg(long, default_value_t = 2000, value_parser = count)]
    points: usize,
    /// Also measure the iPRC by direct perturbation with this kick size.
    #[arg(long, value_parser = positive, allow_hyphen_values = true)]
    oracle_eps: Option<f64>,
    /// Phases sampled by the oracle.
    #[arg(long, default_value_t = 64, value_parser = count)]
    oracle_points: usize,
    /// Rows of the phase lookup table used by the oracle.
    #[arg(long, default_value_t = PhaseLookupTable::DEFAULT_ROWS, value_parser = count)]
    table_rows: usize,
}

/// Direct-perturbation samples at `points` phases, every direction in
/// `dirs` (from 0). Kicks that leave the basin are skipped with a warning.
fn oracle_samples(
    sys: &PiecewiseSystem,
    cycle: &LimitCycle,
    rows: usize,
    points: usize,
    dirs: &[usize],
    eps: f64,
    opts: &OracleOptions,
) -> anyhow::Result<Vec<OracleSample>> {
    let table = PhaseLookupTable::new(sys, cycle, rows);
    let n = sys.dim;
    let jobs: Vec<(f64, usize)> = (0..points)
        .flat_map(|i| dirs.iter().map(move |&d| ((i as f64 + 0.5) / points as f64, d)))
        .collect();
    let results = pwsm::par::map_indexed(jobs.len(), |i| {
        let (theta, d) = jobs[i];
        let dir = DVector::from_fn(n, |j, _| if j == d { 1.0 } else { 0.0 });
        direct_iprc(sys, cycle, &table, theta, &dir, eps, opts)
    });
    let mut rows_out = Vec::with_capacity(jobs.len());
    for ((theta, d), r) in jobs.into_iter().zip(results) {
        match r {
            Ok(value) => rows_out.push(OracleSample {
                theta,
                direction: d + 1,
                value,
                eps,
            }),
            Err(e @ Error::LeftBasin { .. }) => eprintln!("warning: theta = {theta}, direction {}: {e}", d + 1),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows_out)
}

fn iprc_panels(label: &str, iprc: &PiecewiseIprc, oracle: &[OracleSample], per_segment: usize) -> Vec<Panel> {
    let n = iprc.segments[0].z0.len();
    let breaks: Vec<f64> = iprc.curve.breakpoints();
    (0..n)
        .map(|d| {
            let pieces: Vec<Vec<(f64, f64)>> = iprc
                .curve
                .pieces
                .iter()
                .zip(&breaks)
                .map(|(piece, &t0)| {
                    (0..=per_segment)
                        .map(|i| {
                            let tau = piece.duration * i as f64 / per_segment as f64;
                            ((t0 + tau) / iprc.period, piece.eval(tau)[d])
                        })
                        .collect()
                })
                .collect();
            let mut series = vec![Series::line(format!("z{}", d + 1), PALETTE[d % PALETTE.len()], pieces)];
            let dots: Vec<(f64, f64)> = oracle.iter().filter(|o| o.direction == d + 1).map(|o| (o.theta, o.value)).collect();
            if !dots.is_empty() {
                series.push(Series::dots("direct perturbation", "#000000", dots));
            }
            Panel {
                title: format!("{label}: iPRC component {}", d + 1),
                xlabel: "phase".into(),
                ylabel: format!("z{}", d + 1),
                series,
                equal_aspect: false,
            }
        })
        .collect()
}

pub fn iprc(a: &IprcArgs, out: &Path) -> anyhow::Result<ExitCode> {
    let loaded = a.src.load()?;
    let sys = &loaded.system;
    let solved = loaded.find_cycle(&a.start, &a.tol)?;
    let cycle = &solved.cycle;
    let iprc = loaded.iprc(cycle, &a.tol)?;
    write_iprc_csv(create(out, "iprc.csv")?, &iprc, a.points)?;
    write_json(out, "jumps.json", &jump_records(sys, cycle, &iprc)?)?;
    let mut names = vec!["iprc.csv", "jumps.json"];
    let mut samples = Vec::new();
    if let Some(eps) = a.oracle_eps {
        let opts = OracleOptions {
            integrator: a.tol.integrator(),
            ..OracleOptions::default()
        };
        let dirs: Vec<usize> = (0..sys.dim).collect();
        samples = oracle_samples(sys, cycle, a.table_rows, a.oracle_points, &dirs, eps, &opts)?;
        write_oracle_csv(create(out, "oracle.csv")?, &samples)?;
        names.push("oracle.csv");
    }
    write_text(out, "iprc.svg", &render(&iprc_panels(&loaded.label, &iprc, &samples, 200)))?;
    names.push("iprc.svg");
    println!("period {}", cycle.period);
    if let Some(lambda) = iprc.eigenvalue {
        println!("unit eigenvalue of B {lambda}");
    }
    println!("z at phase 0 ({})", join(&iprc.segments[0].z0));
    wrote(out, &names);
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------------- oracle

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    src: SourceArgs,
    #[command(flatten)]
    start: StartArgs,
    #[command(flatten)]
    tol: Tolerances,
    /// Kick size.
    #[arg(long, default_value_t = 1e-4, value_parser = positive, allow_hyphen_values = true)]
    oracle_eps: f64,
    /// Phases sampled, at (i + 1/2) / points.
    #[arg(long, default_value_t = 64, value_parser = count)]
    points: usize,
    /// Single coordinate direction to kick along (from 1; default: all).
    #[arg(long, value_parser = count)]
    direction: Option<usize>,
    /// Rows of the phase lookup table.
    #[arg(long, default_value_t = PhaseLookupTable::DEFAULT_ROWS, value_parser = count)]
    table_rows: usize,
    /// Integration horizon after the kick, in periods.
    #[arg(long, default_value_t = 10.0, value_parser = positive, allow_hyphen_values = true)]
    horizon: f64,
    /// Largest accepted distance from the cycle at the end of the horizon.
    #[arg(long, default_value_t = 1e-3, value_parser = positive, allow_hyphen_values = true)]
    basin_tol: f64,
}

pub fn oracle(a: &OracleArgs, out: &Path) -> anyhow::Result<ExitCode> {
    let loaded = a.src.load()?;
    let sys = &loaded.system;
    let solved = loaded.find_cycle(&a.start, &a.tol)?;
    let dirs: Vec<usize> = match a.direction {
        Some(d) if d > sys.dim => bail!("direction {d} exceeds the dimension {}", sys.dim),
        Some(d) => vec![d - 1],
        None => (0..sys.dim).collect(),
    };
    let opts = OracleOptions {
        horizon: a.horizon,
        basin_tol: a.basin_tol,
        integrator: a.tol.integrator(),
    };
    let samples = oracle_samples(sys, &solved.cycle, a.table_rows, a.points, &dirs, a.oracle_eps, &opts)?;
    write_oracle_csv(create(out, "oracle.csv")?, &samples)?;
    println!("{} samples", samples.len());
    wrote(out, &["oracle.csv"]);
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------------- couple

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CouplingKind {
    /// G(x, y) = y - x.
    Diffusive,
    /// Threshold-linear inhibition between two Morrison-Curto networks.
    Gated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Lookup,
    Refined,
    Geometric,
}

#[derive(Args, Debug)]
pub struct CoupleArgs {
    #[command(flatten)]
    src: SourceArgs,
    #[command(flatten)]
    start: StartArgs,
    #[command(flatten)]
    tol: Tolerances,
    /// Initial phase difference of the second copy.
    #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
    psi0: f64,
    /// Coupling strength (default: 0.01 for morrison-curto, else 0.05).
    #[arg(long, value_parser = positive, allow_hyphen_values = true)]
    strength: Option<f64>,
    /// Coupling function (default: gated for morrison-curto, else diffusive).
    #[arg(long, value_enum)]
    coupling: Option<CouplingKind>,
    /// Final time (default: 8000 for morrison-curto, 300 for octagon, else 100 periods).
    #[arg(long, value_parser = positive, allow_hyphen_values = true)]
    t_end: Option<f64>,
    /// Output samples of psi(t).
    #[arg(long, default_value_t = 4000, value_parser = count)]
    samples: usize,
    /// How the phase of each copy is read off in the full simulation.
    #[arg(long, value_enum, default_value_t = PhaseArg::Lookup)]
    phase: PhaseArg,
    /// Grid points of H on [0, 1).
    #[arg(long, default_value_t = DEFAULT_H_POINTS, value_parser = count)]
    h_points: usize,
    /// Quadrature panels for H.
    #[arg(long, default_value_t = DEFAULT_QUADRATURE_NODES, value_parser = count)]
    nodes: usize,
    /// Rows of the phase lookup table.
    #[arg(long, default_value_t = PhaseLookupTable::DEFAULT_ROWS, value_parser = count)]
    table_rows: usize,
}

pub fn couple(a: &CoupleArgs, out: &Path) -> anyhow::Result<ExitCode> {
    let loaded = a.src.load()?;
    let sys = &loaded.system;
    let solved = loaded.find_cycle(&a.start, &a.tol)?;
    let cycle = &solved.cycle;
    let iprc = loaded.iprc(cycle, &a.tol)?;
    let name = loaded.model.as_ref().map(|m| m.name).unwrap_or("");
    let is_mc = name == "morrison-curto";
    let strength = a.strength.unwrap_or(if is_mc { 0.01 } else { 0.05 });
    let kind = a.coupling.unwrap_or(if is_mc { CouplingKind::Gated } else { CouplingKind::Diffusive });

    let (g, pair): (Arc<dyn Coupling>, CoupledPair) = match kind {
        CouplingKind::Diffusive => {
            let g: Arc<dyn Coupling> = Arc::new(Diffusive);
            let pair = CoupledPair::new(sys.clone(), g.clone(), strength)?;
            (g, pair)
        }
        CouplingKind::Gated => {
            let Some(m) = loaded.model.as_ref().filter(|_| is_mc) else {
                bail!("gated coupling is only defined for --model morrison-curto");
            };
            let (delta, eps, theta) = (m.param("delta"), m.param("eps"), m.param("theta"));
            let g: Arc<dyn Coupling> = Arc::new(morrison_curto_coupling(&morrison_curto_weights(delta, eps), delta, theta));
            let full = morrison_curto_pair(delta, eps, theta, strength);
            let stride = sys.regions.iter().map(|r| r.id).max().unwrap_or(0) + 1;
            let pair = CoupledPair::with_composite(sys.clone(), g.clone(), strength, full, stride)?;
            (g, pair)
        }
    };

    let h = interaction_function(cycle, &iprc, g.as_ref(), a.h_points, a.nodes);
    let t_end = a.t_end.unwrap_or(match name {
        "morrison-curto" => 8000.0,
        "octagon" => 300.0,
        _ => 100.0 * cycle.period,
    });
    let times: Vec<f64> = (0..=a.samples).map(|i| t_end * i as f64 / a.samples as f64).collect();
    let reduced = phase_difference_flow(&h, strength, a.psi0, &times);
    let table = PhaseLookupTable::new(sys, cycle, a.table_rows);
    let method = match a.phase {
        PhaseArg::Lookup => PhaseMethod::Lookup,
        PhaseArg::Refined => PhaseMethod::Refined,
        PhaseArg::Geometric => PhaseMethod::Geometric,
    };
    let x0 = cycle.state_at(sys, 0.0);
    let y0 = cycle.state_at(sys, a.psi0.rem_euclid(1.0) * cycle.period);
    let run = simulate_coupled(&pair, cycle, &table, method, &x0, &y0, &times, &a.tol.integrator())?;
    // The full run starts from the wrapped difference; shift it onto the
    // reduced branch so both curves start at psi0.
    let offset = a.psi0 - run.psi[0];
    let offset = offset.round();
    let full: Vec<f64> = run.psi.iter().map(|p| p + offset).collect();

    write_interaction_csv(create(out, "h.csv")?, &h)?;
    write_phase_difference_csv(create(out, "psi.csv")?, &run.times, &reduced, &full)?;

    let grid = h.grid();
    let r = h.odd_part_grid();
    let panels = [
        Panel {
            title: format!("{}: interaction function", loaded.label),
            xlabel: "phi".into(),
            ylabel: "H, R".into(),
            series: vec![
                Series::line("H(phi)", PALETTE[0], vec![grid.iter().copied().zip(h.values.iter().copied()).collect()]),
                Series::line("R(phi) = H(-phi) - H(phi)", PALETTE[1], vec![grid.iter().copied().zip(r.iter().copied()).collect()]),
            ],
            equal_aspect: false,
        },
        Panel {
            title: format!("{}: phase difference, psi0 = {}", loaded.label, a.psi0),
            xlabel: "t".into(),
            ylabel: "psi".into(),
            series: vec![
                Series::line("reduced", PALETTE[0], vec![times.iter().copied().zip(reduced.iter().copied()).collect()]),
                Series::line("full", PALETTE[1], vec![run.times.iter().copied().zip(full.iter().copied()).collect()]),
            ],
            equal_aspect: false,
        },
    ];
    write_text(out, "couple.svg", &render(&panels))?;

    for s in fixed_points(&h) {
        println!(
            "locked state psi = {:.6} ({}, R' = {:.4e})",
            s.psi,
            if s.stable { "stable" } else { "unstable" },
            s.slope
        );
    }
    println!("final psi: reduced {:.6}, full {:.6}", reduced.last().unwrap(), full.last().unwrap());
    wrote(out, &["h.csv", "psi.csv", "couple.svg"]);
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------------- verify

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    src: SourceArgs,
    #[command(flatten)]
    start: StartArgs,
    #[command(flatten)]
    tol: Tolerances,
    /// Run only these suites (repeatable; default: all).
    #[arg(long = "check", value_enum)]
    checks: Vec<SuiteName>,
    /// Length of the fallback trajectory whose crossings are checked when
    /// no cycle is found.
    #[arg(long, default_value_t = 20.0, value_parser = positive, allow_hyphen_values = true)]
    t: f64,
}

pub fn verify(a: &VerifyArgs, out: &Path) -> anyhow::Result<ExitCode> {
    let loaded = a.src.load()?;
    let report = verify::run(&loaded, &a.start, &a.tol, a.t, &a.checks);
    write_json(out, "verify.json", &report)?;
    for s in &report.suites {
        let name = s.name.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
        println!("{} {name}", if s.passed { "PASS" } else { "FAIL" });
        for c in s.checks.iter().filter(|c| !c.passed) {
            let why = c.error.as_deref().unwrap_or("out of tolerance");
            println!("    {}: {why}", c.name);
        }
    }
    wrote(out, &["verify.json"]);
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

// ------------------------------------------------------------- export-system

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    src: SourceArgs,
}

pub fn export_system(a: &ExportArgs, out: &Path) -> anyhow::Result<ExitCode> {
    let loaded = a.src.load()?;
    write_json(out, "system.json", &SystemSpec::from_system(&loaded.system)?)?;
    wrote(out, &["system.json"]);
    Ok(ExitCode::SUCCESS)
}
