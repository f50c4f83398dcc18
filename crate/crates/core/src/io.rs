//! JSON documents for systems, cycles and jump matrices, and the CSV
//! tables written by the command-line tool.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coupling::InteractionFunction;
use crate::cycle::{CycleOptions, LimitCycle, PoincareSection, Segment};
use crate::error::{Error, Result};
use crate::integrate::EventTrajectory;
use crate::iprc::{crossing_fields, saltation_matrix, PiecewiseIprc};
use crate::system::{Constraint, PiecewiseSystem, Region, RegionField, SurfaceGeometry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalitySpec {
    /// Membership requires `normal . x <= offset`.
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub id: usize,
    /// Row-major.
    pub jacobian: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub inequalities: Vec<InequalitySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub from: usize,
    pub to: usize,
    pub normal: Vec<f64>,
    pub offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
}

/// Piecewise-affine system as a JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub dimension: usize,
    pub regions: Vec<RegionSpec>,
    pub surfaces: Vec<SurfaceSpec>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidSystem(format!("{what} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn vector_of_len(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::InvalidSystem(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl SystemSpec {
    /// Fails for general fields and curved boundaries, which exist only in
    /// code.
    pub fn from_system(sys: &PiecewiseSystem) -> Result<Self> {
        let regions = sys
            .regions
            .iter()
            .map(|r| {
                let (j, c) = r.field.as_affine().ok_or_else(|| {
                    Error::InvalidInput(format!("region {} has a general field and cannot be exported", r.id))
                })?;
                let inequalities = r
                    .constraints
                    .iter()
                    .map(|c| match c {
                        Constraint::Halfspace { normal, offset } => Ok(InequalitySpec {
                            normal: normal.as_slice().to_vec(),
                            offset: *offset,
                        }),
                        Constraint::Implicit { .. } => Err(Error::InvalidInput(format!(
                            "region {} has a curved boundary and cannot be exported",
                            r.id
                        ))),
                    })
                    .collect::<Result<_>>()?;
                Ok(RegionSpec {
                    id: r.id,
                    jacobian: rows_of(j),
                    offset: c.as_slice().to_vec(),
                    inequalities,
                })
            })
            .collect::<Result<_>>()?;
        let surfaces = sys
            .surfaces
            .iter()
            .map(|s| match &s.geometry {
                SurfaceGeometry::Hyperplane { normal, offset } => Ok(SurfaceSpec {
                    from: s.from,
                    to: s.to,
                    normal: normal.as_slice().to_vec(),
                    offset: *offset,
                    shift: s.shift.as_ref().map(|v| v.as_slice().to_vec()),
                }),
                SurfaceGeometry::Implicit { .. } => Err(Error::InvalidInput(format!(
                    "surface {} is curved and cannot be exported",
                    s.id
                ))),
            })
            .collect::<Result<_>>()?;
        Ok(SystemSpec {
            dimension: sys.dim,
            regions,
            surfaces,
        })
    }

    /// Builds and validates the system.
    pub fn build(&self) -> Result<PiecewiseSystem> {
        let n = self.dimension;
        if n == 0 {
            return Err(Error::InvalidSystem("dimension must be positive".into()));
        }
        let mut sys = PiecewiseSystem::new(n);
        for r in &self.regions {
            let j = matrix_from_rows(&r.jacobian, n, "jacobian")?;
            let c = vector_of_len(&r.offset, n, "offset")?;
            let cons = r
                .inequalities
                .iter()
                .map(|q| {
                    let normal = vector_of_len(&q.normal, n, "inequality normal")?;
                    if normal.norm() == 0.0 {
                        return Err(Error::InvalidSystem("inequality normal is zero".into()));
                    }
                    Ok(Constraint::halfspace(normal, q.offset))
                })
                .collect::<Result<_>>()?;
            sys.add_region(Region::new(r.id, RegionField::affine(j, c), cons));
        }
        for s in &self.surfaces {
            let normal = vector_of_len(&s.normal, n, "surface normal")?;
            if normal.norm() == 0.0 {
                return Err(Error::InvalidSystem("surface normal is zero".into()));
            }
            let shift = s
                .shift
                .as_ref()
                .map(|v| vector_of_len(v, n, "surface shift"))
                .transpose()?;
            sys.add_hyperplane(s.from, s.to, normal, s.offset, shift);
        }
        sys.validate()?;
        Ok(sys)
    }
}

pub fn read_system(path: &std::path::Path) -> Result<PiecewiseSystem> {
    let text = std::fs::read_to_string(path)?;
    let spec: SystemSpec = serde_json::from_str(&text)?;
    spec.build()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionSpec {
    pub surface: usize,
    pub base: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
}

/// Limit cycle as a JSON document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSpec {
    pub period: f64,
    pub segments: Vec<Segment>,
    pub section: SectionSpec,
}

impl CycleSpec {
    pub fn from_cycle(c: &LimitCycle) -> Self {
        CycleSpec {
            period: c.period,
            segments: c.segments.clone(),
            section: SectionSpec {
                surface: c.section.surface,
                base: c.section.base.as_slice().to_vec(),
                axes: c.section.axes.iter().map(|a| a.as_slice().to_vec()).collect(),
            },
        }
    }

    pub fn build(&self, sys: &PiecewiseSystem, opts: &CycleOptions) -> Result<LimitCycle> {
        let section = PoincareSection::with_axes(
            self.section.surface,
            DVector::from_column_slice(&self.section.base),
            self.section.axes.iter().map(|a| DVector::from_column_slice(a)).collect(),
        );
        LimitCycle::from_segments(sys, self.segments.clone(), section, opts)
    }
}

/// Jump and saltation matrices at one crossing of the cycle.
#[derive(Clone, Debug, Serialize)]
pub struct JumpRecord {
    /// Index of the segment entered.
    pub segment: usize,
    pub time: f64,
    pub surface: usize,
    pub from: usize,
    pub to: usize,
    pub point: Vec<f64>,
    pub jump: Vec<Vec<f64>>,
    pub saltation: Vec<Vec<f64>>,
}

/// One record per crossing, the crossing into segment 1 first.
pub fn jump_records(sys: &PiecewiseSystem, cycle: &LimitCycle, iprc: &PiecewiseIprc) -> Result<Vec<JumpRecord>> {
    let starts = cycle.breakpoints();
    (0..cycle.segments.len())
        .map(|k| {
            let (surface, point, from, to) = cycle.crossing_into(k);
            let (fm, fp, n) = crossing_fields(sys, cycle, k);
            Ok(JumpRecord {
                segment: k,
                time: starts[k],
                surface,
                from,
                to,
                point: point.as_slice().to_vec(),
                jump: rows_of(&iprc.jumps[k]),
                saltation: rows_of(&saltation_matrix(&fm, &fp, &n)?),
            })
        })
        .collect()
}

/// Seventeen significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a CSV table; each row mixes integer and float columns.
pub struct Table<W: Write> {
    inner: csv::Writer<W>,
}

/// One CSV cell.
pub enum Cell {
    F(f64),
    I(usize),
}

impl<W: Write> Table<W> {
    pub fn new(w: W, header: &[String]) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(header).map_err(csv_err)?;
        Ok(Table { inner })
    }

    pub fn row(&mut self, cells: &[Cell]) -> Result<()> {
        let rec: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::F(x) => fmt17(*x),
                Cell::I(i) => i.to_string(),
            })
            .collect();
        self.inner.write_record(&rec).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn header(first: &[&str], prefix: &str, n: usize, last: &[&str]) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain(indexed(prefix, n))
        .chain(last.iter().map(|s| s.to_string()))
        .collect()
}

/// `t, x1..xn, region`.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &EventTrajectory, dim: usize) -> Result<()> {
    let mut t = Table::new(w, &header(&["t"], "x", dim, &["region"]))?;
    for s in &traj.samples {
        let mut row = vec![Cell::F(s.t)];
        row.extend(s.x.iter().map(|&v| Cell::F(v)));
        row.push(Cell::I(s.region));
        t.row(&row)?;
    }
    t.finish()
}

/// `t, surface_id, from, to, p1..pn`.
pub fn write_events_csv<W: Write>(w: W, traj: &EventTrajectory, dim: usize) -> Result<()> {
    let mut t = Table::new(w, &header(&["t", "surface_id", "from", "to"], "p", dim, &[]))?;
    for e in &traj.events {
        let mut row = vec![Cell::F(e.t), Cell::I(e.surface), Cell::I(e.from), Cell::I(e.to)];
        row.extend(e.point.iter().map(|&v| Cell::F(v)));
        t.row(&row)?;
    }
    t.finish()
}

/// Dense samples `t, x1..xn, segment` with `per_segment + 1` rows per
/// segment (segment numbers from 1).
pub fn write_cycle_csv<W: Write>(w: W, sys: &PiecewiseSystem, cycle: &LimitCycle, per_segment: usize) -> Result<()> {
    let mut t = Table::new(w, &header(&["t"], "x", sys.dim, &["segment"]))?;
    for (k, t0) in cycle.breakpoints().into_iter().enumerate() {
        let piece = &cycle.curve.pieces[k];
        for i in 0..=per_segment {
            let tau = piece.duration * i as f64 / per_segment as f64;
            let x = piece.eval(tau);
            let mut row = vec![Cell::F(t0 + tau)];
            row.extend(x.iter().map(|&v| Cell::F(v)));
            row.push(Cell::I(k + 1));
            t.row(&row)?;
        }
    }
    t.finish()
}

/// `theta, t, z1..zn, segment` at `points` uniform phases.
pub fn write_iprc_csv<W: Write>(w: W, iprc: &PiecewiseIprc, points: usize) -> Result<()> {
    let n = iprc.segments[0].z0.len();
    let mut t = Table::new(w, &header(&["theta", "t"], "z", n, &["segment"]))?;
    for i in 0..points {
        let theta = i as f64 / points as f64;
        let time = theta * iprc.period;
        let (k, _) = iprc.curve.locate(time);
        let z = iprc.evaluate_time(time);
        let mut row = vec![Cell::F(theta), Cell::F(time)];
        row.extend(z.iter().map(|&v| Cell::F(v)));
        row.push(Cell::I(k + 1));
        t.row(&row)?;
    }
    t.finish()
}

/// One direct-perturbation measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSample {
    pub theta: f64,
    /// Basis direction, from 1.
    pub direction: usize,
    pub value: f64,
    pub eps: f64,
}

/// `theta, direction, value, eps`.
pub fn write_oracle_csv<W: Write>(w: W, rows: &[OracleSample]) -> Result<()> {
    let cols: Vec<String> = ["theta", "direction", "value", "eps"].iter().map(|s| s.to_string()).collect();
    let mut t = Table::new(w, &cols)?;
    for r in rows {
        t.row(&[Cell::F(r.theta), Cell::I(r.direction), Cell::F(r.value), Cell::F(r.eps)])?;
    }
    t.finish()
}

/// `phi, H, R` with `R(phi) = H(-phi) - H(phi)`.
pub fn write_interaction_csv<W: Write>(w: W, h: &InteractionFunction) -> Result<()> {
    let cols: Vec<String> = ["phi", "H", "R"].iter().map(|s| s.to_string()).collect();
    let mut t = Table::new(w, &cols)?;
    let r = h.odd_part_grid();
    for (j, phi) in h.grid().into_iter().enumerate() {
        t.row(&[Cell::F(phi), Cell::F(h.values[j]), Cell::F(r[j])])?;
    }
    t.finish()
}

/// `t, psi_reduced, psi_full`.
pub fn write_phase_difference_csv<W: Write>(w: W, times: &[f64], reduced: &[f64], full: &[f64]) -> Result<()> {
    let cols: Vec<String> = ["t", "psi_reduced", "psi_full"].iter().map(|s| s.to_string()).collect();
    let mut t = Table::new(w, &cols)?;
    for ((&ti, &r), &f) in times.iter().zip(reduced).zip(full) {
        t.row(&[Cell::F(ti), Cell::F(r), Cell::F(f)])?;
    }
    t.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_model;

    #[test]
    fn system_json_round_trip() {
        for name in ["1d", "glass", "iris", "aplysia", "octagon"] {
            let m = build_model(name, &[]).unwrap();
            let spec = SystemSpec::from_system(&m.system).unwrap();
            let text = serde_json::to_string(&spec).unwrap();
            let back: SystemSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, spec);
            let sys = back.build().unwrap();
            assert_eq!(sys.regions.len(), m.system.regions.len());
            assert_eq!(sys.surfaces.len(), m.system.surfaces.len());
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"dimension": 1, "regions": [], "surfaces": [], "extra": 1}"#;
        assert!(serde_json::from_str::<SystemSpec>(text).is_err());
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt17(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
