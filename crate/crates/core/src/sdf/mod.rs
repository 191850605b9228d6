//! Signed-distance fields: analytic primitives, unions, posed/scaled wrappers
//! and trilinear grids.
//!
//! Values are negative inside, positive outside and zero on the surface. All
//! fields are immutable after construction and can be evaluated concurrently.

mod grid;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{SimTransform, Similarity};
use crate::Vec3;

pub use grid::{make_grid_field, GridField, GridHeader};

/// Axis-aligned box in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Aabb { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn centered(half_extents: Vec3) -> Self {
        Aabb {
            min: (-half_extents).into(),
            max: half_extents.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.min[k].is_finite() && self.max[k].is_finite() && self.max[k] > self.min[k]) {
                return Err(Error::input(format!(
                    "degenerate bounds on axis {k}: [{}, {}]",
                    self.min[k], self.max[k]
                )));
            }
        }
        Ok(())
    }

    pub fn lo(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn hi(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn center(&self) -> Vec3 {
        (self.lo() + self.hi()) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.hi() - self.lo()).norm()
    }

    /// Radius of the sphere through the corners, centred on [`Aabb::center`].
    pub fn bounding_radius(&self) -> f64 {
        0.5 * self.diagonal()
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.lo().inf(&other.lo()).into(),
            max: self.hi().sup(&other.hi()).into(),
        }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (lo, hi) = (self.lo(), self.hi());
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        p.sup(&self.lo()).inf(&self.hi())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Clone, Debug)]
enum Node {
    Sphere {
        radius: f64,
    },
    Cuboid {
        half: Vec3,
    },
    /// Axis along z.
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    /// Box with half extents `inner + rounding`.
    RoundedBox {
        inner: Vec3,
        rounding: f64,
    },
    Union {
        children: Vec<SdfField>,
        /// Bounding spheres of exact children, used to skip far children.
        spheres: Vec<Option<(Vec3, f64)>>,
    },
    Posed {
        child: Box<SdfField>,
        pose: SimTransform,
        map: Similarity,
    },
    Grid(Arc<GridField>),
    /// `child` with a ball carved out: `max(child, radius − |x − center|)`.
    Masked {
        child: Box<SdfField>,
        center: Vec3,
        radius: f64,
    },
}

/// An evaluable signed-distance field.
#[derive(Clone, Debug)]
pub struct SdfField {
    node: Node,
    bounds: Option<Aabb>,
    /// True when the value is a metric distance (outside the surface), which
    /// lets unions skip children by bounding-sphere distance.
    exact: bool,
}

const CULL_MARGIN: f64 = 1e-9;

#[inline]
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::input(format!("{name} must be positive, got {v}")))
    }
}

fn box_value_grad(p: &Vec3, half: &Vec3) -> (f64, Vec3) {
    let q = p.abs() - half;
    let outside = q.map(|v| v.max(0.0));
    let len = outside.norm();
    if len > 0.0 {
        let g = Vec3::new(
            sign(p.x) * outside.x,
            sign(p.y) * outside.y,
            sign(p.z) * outside.z,
        ) / len;
        (len, g)
    } else {
        let mut axis = 0;
        for k in 1..3 {
            if q[k] > q[axis] {
                axis = k;
            }
        }
        let mut g = Vec3::zeros();
        g[axis] = sign(p[axis]);
        (q[axis], g)
    }
}

fn cylinder_value_grad(p: &Vec3, radius: f64, half_height: f64) -> (f64, Vec3) {
    let rxy = p.x.hypot(p.y);
    let (nx, ny) = if rxy > 0.0 { (p.x / rxy, p.y / rxy) } else { (1.0, 0.0) };
    let dr = rxy - radius;
    let dz = p.z.abs() - half_height;
    let sz = sign(p.z);
    if dr > 0.0 && dz > 0.0 {
        let len = dr.hypot(dz);
        (len, Vec3::new(nx * dr / len, ny * dr / len, sz * dz / len))
    } else if dr > 0.0 {
        (dr, Vec3::new(nx, ny, 0.0))
    } else if dz > 0.0 {
        (dz, Vec3::new(0.0, 0.0, sz))
    } else if dr >= dz {
        (dr, Vec3::new(nx, ny, 0.0))
    } else {
        (dz, Vec3::new(0.0, 0.0, sz))
    }
}

impl SdfField {
    fn leaf(node: Node, half: Vec3) -> Self {
        SdfField {
            node,
            bounds: Some(Aabb::centered(half)),
            exact: true,
        }
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        positive("sphere radius", radius)?;
        Ok(Self::leaf(Node::Sphere { radius }, Vec3::repeat(radius)))
    }

    /// Axis-aligned box centred at the origin.
    pub fn cuboid(half_extents: Vec3) -> Result<Self> {
        for k in 0..3 {
            positive("box half extent", half_extents[k])?;
        }
        Ok(Self::leaf(Node::Cuboid { half: half_extents }, half_extents))
    }

    /// Cylinder centred at the origin with its axis along z.
    pub fn cylinder(radius: f64, half_height: f64) -> Result<Self> {
        positive("cylinder radius", radius)?;
        positive("cylinder half height", half_height)?;
        Ok(Self::leaf(
            Node::Cylinder {
                radius,
                half_height,
            },
            Vec3::new(radius, radius, half_height),
        ))
    }

    pub fn rounded_box(half_extents: Vec3, rounding: f64) -> Result<Self> {
        if !(rounding.is_finite() && rounding >= 0.0) {
            return Err(Error::input("rounding must be non-negative"));
        }
        let inner = half_extents.map(|h| h - rounding);
        for k in 0..3 {
            positive("rounded box inner half extent", inner[k])?;
        }
        Ok(Self::leaf(Node::RoundedBox { inner, rounding }, half_extents))
    }

    /// Union of children. An empty union is the empty field (`+∞` everywhere).
    pub fn union(children: Vec<SdfField>) -> Self {
        let bounds = children
            .iter()
            .filter_map(|c| c.bounds)
            .reduce(|a, b| a.union(&b));
        let exact = children.iter().all(|c| c.exact);
        let spheres = children
            .iter()
            .map(|c| match (c.exact, c.bounds) {
                (true, Some(b)) => Some((b.center(), b.bounding_radius())),
                _ => None,
            })
            .collect();
        SdfField {
            node: Node::Union { children, spheres },
            bounds,
            exact,
        }
    }

    /// Wraps `child` so that a query at `x` evaluates `child(pose · x) / s`.
    ///
    /// `pose` maps this field's frame into the child's frame; dividing by the
    /// scale keeps values metric in the query frame.
    pub fn posed(child: SdfField, pose: SimTransform) -> Result<Self> {
        pose.validate()?;
        let map = pose.similarity();
        let bounds = child.bounds.map(|b| {
            let pts = b.corners().map(|c| map.apply_inverse(&c));
            let mut lo = pts[0];
            let mut hi = pts[0];
            for p in &pts[1..] {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            Aabb {
                min: lo.into(),
                max: hi.into(),
            }
        });
        let exact = child.exact;
        Ok(SdfField {
            node: Node::Posed {
                child: Box::new(child),
                pose,
                map,
            },
            bounds,
            exact,
        })
    }

    pub fn grid(grid: GridField) -> Self {
        Self::shared_grid(Arc::new(grid))
    }

    pub fn shared_grid(grid: Arc<GridField>) -> Self {
        let bounds = Some(*grid.bounds());
        SdfField {
            node: Node::Grid(grid),
            bounds,
            exact: false,
        }
    }

    /// Carves a ball out of `child`. A zero radius leaves `child` unchanged.
    pub fn masked(child: SdfField, center: Vec3, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::input("mask radius must be non-negative"));
        }
        if radius == 0.0 {
            return Ok(child);
        }
        let bounds = child.bounds;
        Ok(SdfField {
            node: Node::Masked {
                child: Box::new(child),
                center,
                radius,
            },
            bounds,
            exact: false,
        })
    }

    /// Same field with declared bounds replaced, e.g. to restrict tracing
    /// (and its relative tolerance) to a region of a large scene.
    pub fn with_bounds(self, bounds: Aabb) -> Result<Self> {
        bounds.validate()?;
        Ok(SdfField {
            bounds: Some(bounds),
            ..self
        })
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.bounds
    }

    /// Diagonal of the bounding box, or 0 for the empty field.
    pub fn diameter(&self) -> f64 {
        self.bounds.map_or(0.0, |b| b.diagonal())
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn pose(&self) -> Option<&SimTransform> {
        match &self.node {
            Node::Posed { pose, .. } => Some(pose),
            _ => None,
        }
    }

    /// Signed distance at `p`.
    pub fn eval(&self, p: &Vec3) -> Result<f64> {
        check_finite(p)?;
        Ok(self.value(p))
    }

    /// Spatial gradient at `p`.
    pub fn gradient(&self, p: &Vec3) -> Result<Vec3> {
        check_finite(p)?;
        Ok(self.value_and_gradient(p).1)
    }

    /// Unchecked evaluation; non-finite input gives non-finite output.
    pub fn value(&self, p: &Vec3) -> f64 {
        match &self.node {
            Node::Sphere { radius } => p.norm() - radius,
            Node::Cuboid { half } => {
                let q = p.abs() - half;
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
            Node::Cylinder {
                radius,
                half_height,
            } => cylinder_value_grad(p, *radius, *half_height).0,
            Node::RoundedBox { inner, rounding } => {
                let q = p.abs() - inner;
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0) - rounding
            }
            Node::Union { children, spheres } => union_argmin(children, spheres, p).1,
            Node::Posed { child, map, .. } => child.value(&map.apply(p)) / map.scale,
            Node::Grid(g) => g.value(p),
            Node::Masked {
                child,
                center,
                radius,
            } => child.value(p).max(radius - (p - center).norm()),
        }
    }

    /// Value and gradient in one pass. Unions return the gradient of the
    /// minimizing child (lowest index on ties); grids use central differences.
    pub fn value_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        match &self.node {
            Node::Sphere { radius } => {
                let n = p.norm();
                let g = if n > 0.0 { p / n } else { Vec3::z() };
                (n - radius, g)
            }
            Node::Cuboid { half } => box_value_grad(p, half),
            Node::Cylinder {
                radius,
                half_height,
            } => cylinder_value_grad(p, *radius, *half_height),
            Node::RoundedBox { inner, rounding } => {
                let (v, g) = box_value_grad(p, inner);
                (v - rounding, g)
            }
            Node::Union { children, spheres } => {
                let (idx, _) = union_argmin(children, spheres, p);
                match idx {
                    Some(i) => children[i].value_and_gradient(p),
                    None => (f64::INFINITY, Vec3::zeros()),
                }
            }
            Node::Posed { child, map, .. } => {
                let (v, g) = child.value_and_gradient(&map.apply(p));
                (v / map.scale, map.rotation.tr_mul(&g))
            }
            Node::Grid(grid) => (grid.value(p), grid.gradient(p)),
            Node::Masked {
                child,
                center,
                radius,
            } => {
                let (cv, cg) = child.value_and_gradient(p);
                let d = p - center;
                let dn = d.norm();
                let mv = radius - dn;
                if cv >= mv {
                    (cv, cg)
                } else {
                    let g = if dn > 0.0 { -d / dn } else { Vec3::z() };
                    (mv, g)
                }
            }
        }
    }
}

fn check_finite(p: &Vec3) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::input("query point must be finite"))
    }
}

fn union_argmin(
    children: &[SdfField],
    spheres: &[Option<(Vec3, f64)>],
    p: &Vec3,
) -> (Option<usize>, f64) {
    let mut best = f64::INFINITY;
    let mut idx = None;
    for (i, (child, sphere)) in children.iter().zip(spheres).enumerate() {
        if let Some((c, r)) = sphere {
            if (p - c).norm() - r - CULL_MARGIN > best {
                continue;
            }
        }
        let v = child.value(p);
        if v < best || idx.is_none() {
            best = v;
            idx = Some(i);
        }
    }
    (idx, best)
}

/// Central-difference gradient of `field` with step `h`; test and fallback helper.
pub fn finite_difference_gradient(field: &SdfField, p: &Vec3, h: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for k in 0..3 {
        let mut a = *p;
        let mut b = *p;
        a[k] += h;
        b[k] -= h;
        g[k] = (field.value(&a) - field.value(&b)) / (2.0 * h);
    }
    g
}
