//! Piecewise-smooth vector fields: regions, switching surfaces and the
//! geometric helpers used at crossings.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Points closer than this to a region boundary are not assigned to a side.
pub const AMBIGUITY_TOL: f64 = 1e-12;

/// Default margin for `|n.F|` when validating crossings.
pub const TRANSVERSALITY_MARGIN: f64 = 1e-8;

/// The smooth vector field used inside one region.
#[derive(Clone)]
pub enum RegionField {
    /// `F(x) = jacobian * x + offset`.
    Affine {
        jacobian: DMatrix<f64>,
        offset: DVector<f64>,
    },
    /// Arbitrary smooth field with its Jacobian.
    General { field: VectorFn, jacobian: MatrixFn },
}

impl RegionField {
    pub fn affine(jacobian: DMatrix<f64>, offset: DVector<f64>) -> Self {
        RegionField::Affine { jacobian, offset }
    }

    pub fn general(
        field: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        RegionField::General {
            field: Arc::new(field),
            jacobian: Arc::new(jacobian),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            RegionField::Affine { jacobian, offset } => jacobian * x + offset,
            RegionField::General { field, .. } => field(x),
        }
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            RegionField::Affine { jacobian, .. } => jacobian.clone(),
            RegionField::General { jacobian, .. } => jacobian(x),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, RegionField::Affine { .. })
    }

    /// `(J, c)` for affine fields.
    pub fn as_affine(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match self {
            RegionField::Affine { jacobian, offset } => Some((jacobian, offset)),
            RegionField::General { .. } => None,
        }
    }
}

impl fmt::Debug for RegionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionField::Affine { jacobian, offset } => f
                .debug_struct("Affine")
                .field("jacobian", jacobian)
                .field("offset", offset)
                .finish(),
            RegionField::General { .. } => f.write_str("General"),
        }
    }
}

/// One inequality `value(x) <= 0` of a region's membership test.
#[derive(Clone)]
pub enum Constraint {
    /// `normal . x <= offset`, stored with a unit normal so the value is a
    /// signed distance.
    Halfspace { normal: DVector<f64>, offset: f64 },
    /// `value(x) <= 0` for a curved boundary.
    Implicit { value: ScalarFn, gradient: VectorFn },
}

impl Constraint {
    /// `normal . x <= offset`; the normal need not be unit length.
    pub fn halfspace(normal: DVector<f64>, offset: f64) -> Self {
        let n = normal.norm();
        assert!(n > 0.0, "halfspace normal must be nonzero");
        Constraint::Halfspace {
            normal: normal / n,
            offset: offset / n,
        }
    }

    pub fn implicit(
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Constraint::Implicit {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Constraint::Halfspace { normal, offset } => normal.dot(x) - offset,
            Constraint::Implicit { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Constraint::Halfspace { normal, .. } => normal.clone(),
            Constraint::Implicit { gradient, .. } => gradient(x),
        }
    }
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Halfspace { normal, offset } => f
                .debug_struct("Halfspace")
                .field("normal", normal)
                .field("offset", offset)
                .finish(),
            Constraint::Implicit { .. } => f.write_str("Implicit"),
        }
    }
}

/// A region: its label, its field and the inequalities that carve it out.
#[derive(Clone, Debug)]
pub struct Region {
    pub id: usize,
    pub field: RegionField,
    pub constraints: Vec<Constraint>,
}

impl Region {
    pub fn new(id: usize, field: RegionField, constraints: Vec<Constraint>) -> Self {
        Region {
            id,
            field,
            constraints,
        }
    }

    /// Largest constraint value; negative inside, positive outside.
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Geometry of a switching surface, oriented so the value increases from
/// the `from` side to the `to` side.
#[derive(Clone)]
pub enum SurfaceGeometry {
    /// `{x : normal . x = offset}` with a unit normal.
    Hyperplane { normal: DVector<f64>, offset: f64 },
    /// `{x : g(x) = 0}`.
    Implicit { value: ScalarFn, gradient: VectorFn },
}

/// A directed boundary between two regions.
#[derive(Clone)]
pub struct SwitchingSurface {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub geometry: SurfaceGeometry,
    /// Translation applied on crossing, used to close periodic coordinates
    /// (the state space is then a quotient of the ambient space).
    pub shift: Option<DVector<f64>>,
}

impl SwitchingSurface {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.geometry {
            SurfaceGeometry::Hyperplane { normal, offset } => normal.dot(x) - offset,
            SurfaceGeometry::Implicit { value, .. } => value(x),
        }
    }

    /// Unit normal pointing from `from` into `to`.
    pub fn unit_normal(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.geometry {
            SurfaceGeometry::Hyperplane { normal, .. } => normal.clone(),
            SurfaceGeometry::Implicit { gradient, .. } => {
                let g = gradient(x);
                let n = g.norm();
                g / n
            }
        }
    }

    /// Closest point on the surface (a few Newton steps for curved surfaces).
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.geometry {
            SurfaceGeometry::Hyperplane { normal, offset } => x - normal * (normal.dot(x) - offset),
            SurfaceGeometry::Implicit { value, gradient } => {
                let mut p = x.clone();
                for _ in 0..8 {
                    let g = gradient(&p);
                    let gg = g.norm_squared();
                    if gg == 0.0 {
                        break;
                    }
                    let step = value(&p) / gg;
                    p -= g * step;
                    if step.abs() < 1e-16 {
                        break;
                    }
                }
                p
            }
        }
    }

    /// Image of a point on the surface as seen from the `to` region.
    pub fn post_point(&self, p: &DVector<f64>) -> DVector<f64> {
        match &self.shift {
            Some(s) => p + s,
            None => p.clone(),
        }
    }

    pub fn is_hyperplane(&self) -> bool {
        matches!(self.geometry, SurfaceGeometry::Hyperplane { .. })
    }
}

impl fmt::Debug for SwitchingSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("SwitchingSurface");
        d.field("id", &self.id).field("from", &self.from).field("to", &self.to);
        if let SurfaceGeometry::Hyperplane { normal, offset } = &self.geometry {
            d.field("normal", normal).field("offset", offset);
        }
        d.field("shift", &self.shift).finish()
    }
}

/// A piecewise-smooth system: disjoint regions covering the domain plus the
/// directed surfaces between them.
#[derive(Clone, Debug)]
pub struct PiecewiseSystem {
    pub dim: usize,
    pub regions: Vec<Region>,
    pub surfaces: Vec<SwitchingSurface>,
}

impl PiecewiseSystem {
    pub fn new(dim: usize) -> Self {
        PiecewiseSystem {
            dim,
            regions: Vec::new(),
            surfaces: Vec::new(),
        }
    }

    pub fn add_region(&mut self, region: Region) -> &mut Self {
        self.regions.push(region);
        self
    }

    /// Adds a hyperplane surface `normal . x = offset`; the normal is
    /// normalized and must point from `from` into `to`.
    pub fn add_hyperplane(
        &mut self,
        from: usize,
        to: usize,
        normal: DVector<f64>,
        offset: f64,
        shift: Option<DVector<f64>>,
    ) -> usize {
        let n = normal.norm();
        let id = self.surfaces.len();
        self.surfaces.push(SwitchingSurface {
            id,
            from,
            to,
            geometry: SurfaceGeometry::Hyperplane {
                normal: normal / n,
                offset: offset / n,
            },
            shift,
        });
        id
    }

    pub fn add_implicit_surface(
        &mut self,
        from: usize,
        to: usize,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> usize {
        let id = self.surfaces.len();
        self.surfaces.push(SwitchingSurface {
            id,
            from,
            to,
            geometry: SurfaceGeometry::Implicit {
                value: Arc::new(value),
                gradient: Arc::new(gradient),
            },
            shift: None,
        });
        id
    }

    /// Declares a surface for every pair of regions whose halfspace
    /// constraints share a hyperplane with opposite orientation.
    pub fn derive_surfaces(&mut self) -> &mut Self {
        let mut found = Vec::new();
        for a in &self.regions {
            for b in &self.regions {
                if a.id == b.id {
                    continue;
                }
                for ca in &a.constraints {
                    let Constraint::Halfspace { normal: na, offset: da } = ca else {
                        continue;
                    };
                    for cb in &b.constraints {
                        let Constraint::Halfspace { normal: nb, offset: db } = cb else {
                            continue;
                        };
                        if (na + nb).norm() < 1e-12 && (da + db).abs() < 1e-12 {
                            found.push((a.id, b.id, na.clone(), *da));
                        }
                    }
                }
            }
        }
        for (from, to, n, d) in found {
            let exists = self.surfaces.iter().any(|s| {
                s.from == from
                    && s.to == to
                    && matches!(&s.geometry, SurfaceGeometry::Hyperplane { normal, offset }
                        if (normal - &n).norm() < 1e-12 && (offset - d).abs() < 1e-12)
            });
            if !exists {
                self.add_hyperplane(from, to, n, d, None);
            }
        }
        self
    }

    pub fn region(&self, id: usize) -> &Region {
        self.regions
            .iter()
            .find(|r| r.id == id)
            .unwrap_or_else(|| panic!("no region with id {id}"))
    }

    pub fn try_region(&self, id: usize) -> Result<&Region> {
        self.regions
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("no region with id {id}")))
    }

    pub fn surface(&self, id: usize) -> &SwitchingSurface {
        &self.surfaces[id]
    }

    /// First surface declared from `from` to `to`.
    pub fn surface_between(&self, from: usize, to: usize) -> Option<&SwitchingSurface> {
        self.surfaces.iter().find(|s| s.from == from && s.to == to)
    }

    pub fn is_affine(&self) -> bool {
        self.regions.iter().all(|r| r.field.is_affine())
    }

    /// Region containing `x` with margin [`AMBIGUITY_TOL`].
    pub fn locate(&self, x: &DVector<f64>) -> Result<usize> {
        self.locate_with_tol(x, AMBIGUITY_TOL)
    }

    pub fn locate_with_tol(&self, x: &DVector<f64>, tol: f64) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut inside = None;
        let mut near = None;
        for r in &self.regions {
            let s = r.slack(x);
            if s < -tol {
                if let Some(other) = inside {
                    return Err(Error::InvalidSystem(format!("regions {other} and {} overlap", r.id)));
                }
                inside = Some(r.id);
            } else if s <= tol && near.is_none() {
                near = Some(r.id);
            }
        }
        match (inside, near) {
            (Some(id), _) => Ok(id),
            (None, Some(id)) => Err(Error::AmbiguousPoint { region: id, tol }),
            (None, None) => Err(Error::OutsideDomain),
        }
    }

    /// Like [`locate`](Self::locate), but a point on a boundary is assigned
    /// to the region whose own field carries it inside.
    pub fn locate_forward(&self, x: &DVector<f64>) -> Result<usize> {
        match self.locate(x) {
            Err(Error::AmbiguousPoint { region, tol }) => {
                let h = 1e-7;
                self.regions
                    .iter()
                    .filter(|r| r.slack(x) <= tol)
                    .find(|r| {
                        let f = r.field.eval(x);
                        r.slack(&(x + &f * (h / f.norm().max(1e-300)))) < 0.0
                    })
                    .map(|r| r.id)
                    .ok_or(Error::AmbiguousPoint { region, tol })
            }
            other => other,
        }
    }

    /// `(region, F(x))` for a point strictly inside a region.
    pub fn evaluate_field(&self, x: &DVector<f64>) -> Result<(usize, DVector<f64>)> {
        let id = self.locate(x)?;
        Ok((id, self.region(id).field.eval(x)))
    }

    /// Field of `region` evaluated at `x` regardless of membership; used for
    /// the one-sided limits at a crossing.
    pub fn one_sided_field(&self, region: usize, x: &DVector<f64>) -> DVector<f64> {
        self.region(region).field.eval(x)
    }

    /// Checks `n.F > margin` on both sides of `surface` at `p` (a point on
    /// the surface in `from` coordinates).
    pub fn check_transversality(&self, surface: usize, p: &DVector<f64>, margin: f64) -> Result<()> {
        let s = self.surface(surface);
        let n = s.unit_normal(p);
        let before = n.dot(&self.one_sided_field(s.from, p));
        let after = n.dot(&self.one_sided_field(s.to, &s.post_point(p)));
        for value in [before, after] {
            if value <= margin {
                return Err(Error::NotTransversal {
                    surface,
                    value,
                    margin,
                });
            }
        }
        Ok(())
    }

    /// Structural checks: dimensions, unique ids, surfaces reference
    /// declared regions.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        for (i, r) in self.regions.iter().enumerate() {
            if self.regions[..i].iter().any(|o| o.id == r.id) {
                return Err(Error::InvalidSystem(format!("duplicate region id {}", r.id)));
            }
            if let RegionField::Affine { jacobian, offset } = &r.field {
                if jacobian.nrows() != n || jacobian.ncols() != n || offset.len() != n {
                    return Err(Error::InvalidSystem(format!(
                        "region {} field has wrong dimensions",
                        r.id
                    )));
                }
            }
            for c in &r.constraints {
                if let Constraint::Halfspace { normal, .. } = c {
                    if normal.len() != n {
                        return Err(Error::InvalidSystem(format!(
                            "region {} constraint has wrong dimension",
                            r.id
                        )));
                    }
                }
            }
        }
        for s in &self.surfaces {
            for id in [s.from, s.to] {
                if !self.regions.iter().any(|r| r.id == id) {
                    return Err(Error::InvalidSystem(format!(
                        "surface {} references undeclared region {id}",
                        s.id
                    )));
                }
            }
            if s.from == s.to && s.shift.is_none() {
                return Err(Error::InvalidSystem(format!("surface {} is a self-loop", s.id)));
            }
        }
        Ok(())
    }
}

/// Orthonormal basis of the tangent space orthogonal to `normal`.
///
/// Gram-Schmidt runs over the standard basis in descending index order,
/// skipping the axis most parallel to the normal (lowest index on ties); the
/// last vector is then flipped if needed so `det[w_1, .., w_{n-1}, n] = -1`.
/// In 2D this gives `w = (-n_y, n_x)`.
pub fn tangent_basis(normal: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = normal.len();
    let nh = normal / normal.norm();
    if n <= 1 {
        return Vec::new();
    }
    let skip = (0..n).fold(0, |best, i| if nh[i].abs() > nh[best].abs() { i } else { best });
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    for i in (0..n).rev() {
        if i == skip {
            continue;
        }
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            let c = v.dot(&nh);
            v -= &nh * c;
            for b in &basis {
                let c = v.dot(b);
                v -= b * c;
            }
        }
        let len = v.norm();
        basis.push(v / len);
    }
    let mut m = DMatrix::zeros(n, n);
    for (j, b) in basis.iter().enumerate() {
        m.set_row(j, &b.transpose());
    }
    m.set_row(n - 1, &nh.transpose());
    if m.determinant() > 0.0 {
        let last = basis.len() - 1;
        basis[last] = -&basis[last];
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn tangent_basis_2d_axis() {
        let b = tangent_basis(&v(&[0.0, 1.0]));
        assert_eq!(b.len(), 1);
        assert_relative_eq!(b[0][0], -1.0);
        assert_relative_eq!(b[0][1], 0.0);
    }

    #[test]
    fn tangent_basis_3d_diagonal_normal() {
        let s = 0.5f64.sqrt();
        let b = tangent_basis(&v(&[-s, s, 0.0]));
        assert!((&b[0] - v(&[0.0, 0.0, 1.0])).norm() < 1e-15);
        assert!((&b[1] - v(&[-s, -s, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn tangent_basis_3d_first_axis() {
        let b = tangent_basis(&v(&[1.0, 0.0, 0.0]));
        let has = |w: DVector<f64>| b.iter().any(|x| (x - &w).norm() < 1e-15);
        assert!(has(v(&[0.0, 1.0, 0.0])));
        assert!(has(v(&[0.0, 0.0, 1.0])));
    }

    #[test]
    fn locate_and_ambiguity() {
        let mut sys = PiecewiseSystem::new(1);
        let f = RegionField::affine(DMatrix::from_element(1, 1, -1.0), v(&[1.0]));
        sys.add_region(Region::new(1, f.clone(), vec![Constraint::halfspace(v(&[1.0]), 0.0)]));
        sys.add_region(Region::new(2, f, vec![Constraint::halfspace(v(&[-1.0]), 0.0)]));
        sys.derive_surfaces();
        assert_eq!(sys.surfaces.len(), 2);
        assert_eq!(sys.locate(&v(&[-0.5])).unwrap(), 1);
        assert_eq!(sys.locate(&v(&[0.5])).unwrap(), 2);
        assert!(matches!(
            sys.evaluate_field(&v(&[1e-13])),
            Err(Error::AmbiguousPoint { .. })
        ));
        let s12 = sys.surface_between(1, 2).unwrap();
        assert_relative_eq!(s12.unit_normal(&v(&[0.0]))[0], 1.0);
    }
}
