//! Procedural rooms furnished with chair- and table-like composites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{FieldDesc, LibraryEntry, ObjectKind, ObjectLibrary, Placement, SceneSpec};
use crate::error::{Error, Result};
use crate::seed;
use crate::transform::SimTransform;
use crate::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub chairs: usize,
    pub tables: usize,
    /// Half side length of the square room.
    pub room_half: f64,
    pub wall_height: f64,
    /// Scale of every placement (object units per scene unit).
    pub scale: f64,
    /// Gap between the floor and each object, in object bounding radii.
    pub clearance: f64,
    /// Minimum gap between object bounding spheres, in scene units.
    pub spacing: f64,
    /// Library ids to place; all when absent.
    pub place: Option<Vec<String>>,
    pub max_attempts: usize,
    /// Seed for the object shapes; the scene seed when absent. Fixing it
    /// keeps the library constant while placements vary.
    pub library_seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            chairs: 5,
            tables: 3,
            room_half: 6.0,
            wall_height: 2.5,
            scale: 1.0,
            clearance: 0.15,
            spacing: 0.3,
            place: None,
            max_attempts: 1000,
            library_seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("room size", self.room_half),
            ("wall height", self.wall_height),
            ("scale", self.scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.clearance >= 0.0 && self.spacing >= 0.0) {
            return Err(Error::input("clearance and spacing must be non-negative"));
        }
        if self.chairs + self.tables == 0 {
            return Err(Error::input("library needs at least one object"));
        }
        Ok(())
    }
}

/// Primitive plus the position of its centre; `half` bounds it.
struct Part {
    desc: FieldDesc,
    at: Vec3,
    half: Vec3,
}

fn rbox(half: Vec3, rounding: f64, at: Vec3) -> Part {
    Part {
        desc: FieldDesc::RoundedBox {
            half_extents: half.into(),
            rounding,
        },
        at,
        half,
    }
}

fn cuboid(half: Vec3, at: Vec3) -> Part {
    Part {
        desc: FieldDesc::Box {
            half_extents: half.into(),
        },
        at,
        half,
    }
}

fn leg(radius: f64, height: f64, x: f64, y: f64) -> Part {
    Part {
        desc: FieldDesc::Cylinder {
            radius,
            half_height: height / 2.0,
        },
        at: Vec3::new(x, y, height / 2.0),
        half: Vec3::new(radius, radius, height / 2.0),
    }
}

/// Recentres the parts on their joint bounding box.
fn assemble(id: String, kind: ObjectKind, parts: Vec<Part>) -> LibraryEntry {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in &parts {
        lo = lo.inf(&(p.at - p.half));
        hi = hi.sup(&(p.at + p.half));
    }
    let center = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    let children = parts
        .into_iter()
        .map(|p| FieldDesc::at(p.desc, p.at - center))
        .collect();
    LibraryEntry {
        id,
        kind,
        field: FieldDesc::Union { children },
        bounding_radius: half.norm(),
        half_extents: half.into(),
    }
}

/// Seat, four legs and a backrest on the −y side; some variants get armrests.
fn chair(id: String, rng: &mut ChaCha8Rng) -> LibraryEntry {
    let k = rng.random_range(0.85..1.2);
    let w = k * rng.random_range(0.2..0.26);
    let d = k * rng.random_range(0.2..0.25);
    let t = k * 0.025;
    let seat_h = k * rng.random_range(0.4..0.48);
    let back_h = k * rng.random_range(0.35..0.5);
    let lr = k * rng.random_range(0.02..0.03);
    let arms = rng.random_bool(0.4);
    let bt = k * 0.02;

    let inset = lr + 0.01 * k;
    let leg_h = seat_h - t;
    let mut parts = vec![rbox(Vec3::new(w, d, t), 0.01 * k, Vec3::new(0.0, 0.0, seat_h))];
    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
        parts.push(leg(lr, leg_h, sx * (w - inset), sy * (d - inset)));
    }
    parts.push(cuboid(
        Vec3::new(w, bt, back_h / 2.0),
        Vec3::new(0.0, -(d - bt), seat_h + t + back_h / 2.0),
    ));
    if arms {
        let arm = Vec3::new(0.02 * k, d * 0.75, 0.02 * k);
        let z = seat_h + t + 0.22 * k;
        parts.push(cuboid(arm, Vec3::new(w - arm.x, -d * 0.25, z)));
        parts.push(cuboid(arm, Vec3::new(-(w - arm.x), -d * 0.25, z)));
    }
    assemble(id, ObjectKind::Chair, parts)
}

/// Top slab and four legs, a modesty panel along the −y side, an off-centre
/// drawer and a low shelf under the +x half, so the shape has no rotational
/// symmetry.
fn table(id: String, rng: &mut ChaCha8Rng) -> LibraryEntry {
    let k = rng.random_range(0.85..1.2);
    let w = k * rng.random_range(0.45..0.7);
    let d = k * rng.random_range(0.3..0.42);
    let t = k * 0.03;
    let h = k * rng.random_range(0.65..0.78);
    let lr = k * rng.random_range(0.025..0.04);
    let inset = lr + 0.03 * k;
    let leg_h = h - t;
    let mut parts = vec![rbox(Vec3::new(w, d, t), 0.01 * k, Vec3::new(0.0, 0.0, h))];
    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
        parts.push(leg(lr, leg_h, sx * (w - inset), sy * (d - inset)));
    }
    let panel = Vec3::new(w - inset - lr, 0.012 * k, 0.14 * k);
    parts.push(cuboid(panel, Vec3::new(0.0, -(d - inset), h - t - panel.z)));
    let drawer = Vec3::new(w * 0.3, d * 0.45, 0.06 * k);
    parts.push(rbox(
        drawer,
        0.01 * k,
        Vec3::new(w * 0.4, -d * 0.35, h - t - drawer.z),
    ));
    let shelf = Vec3::new((w - inset - lr) / 2.0, d - inset - lr, 0.015 * k);
    parts.push(rbox(shelf, 0.005 * k, Vec3::new(shelf.x, 0.0, 0.18 * h)));
    assemble(id, ObjectKind::Table, parts)
}

/// Floor slab and four walls; open at the top.
fn room(half: f64, height: f64) -> Vec<FieldDesc> {
    let t = 0.05;
    let floor = FieldDesc::at(
        FieldDesc::Box {
            half_extents: [half + 2.0 * t, half + 2.0 * t, t],
        },
        Vec3::new(0.0, 0.0, -t),
    );
    let mut parts = vec![floor];
    for (axis, sign) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
        let mut he = [half + 2.0 * t, half + 2.0 * t, height / 2.0];
        he[axis] = t;
        let mut at = Vec3::new(0.0, 0.0, height / 2.0);
        at[axis] = sign * (half + t);
        parts.push(FieldDesc::at(FieldDesc::Box { half_extents: he }, at));
    }
    parts
}

/// Library of chair/table composites and a room with the requested objects
/// placed at seeded poses.
pub fn generate_onr_like(seed: u64, params: &GenerationParams) -> Result<(SceneSpec, ObjectLibrary)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(params.library_seed.unwrap_or(seed), seed::tag("library")));
    let mut entries = Vec::new();
    for i in 0..params.chairs {
        entries.push(chair(format!("chair_{i}"), &mut rng));
    }
    for i in 0..params.tables {
        entries.push(table(format!("table_{i}"), &mut rng));
    }
    let library = ObjectLibrary::new(entries)?;

    let ids = params.place.clone().unwrap_or_else(|| library.ids());
    let s = params.scale;
    let mut placed: Vec<(Vec3, f64)> = Vec::new();
    let mut placements = Vec::new();
    let mut notes = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let entry = library.get(id)?;
        let r = entry.bounding_radius / s;
        // keep the default camera ring inside the walls
        let margin = 2.5 * r + 0.2;
        let reach = params.room_half - margin;
        if reach <= 0.0 {
            return Err(Error::input(format!("room too small for object '{id}'")));
        }
        let z = params.clearance * r + entry.half_extents[2] / s;
        let mut found = None;
        for attempt in 0..params.max_attempts {
            let mut prng = ChaCha8Rng::seed_from_u64(seed::derive(
                seed::derive(seed, seed::tag("place") ^ i as u64),
                attempt as u64,
            ));
            let pos = Vec3::new(
                prng.random_range(-reach..reach),
                prng.random_range(-reach..reach),
                z,
            );
            let yaw = prng.random_range(0.0..std::f64::consts::TAU);
            let clear = placed.iter().all(|(c, rc)| {
                let dxy = ((c.x - pos.x).powi(2) + (c.y - pos.y).powi(2)).sqrt();
                dxy >= rc + r + params.spacing
            });
            if clear {
                if attempt > 0 {
                    notes.push(format!("{id}: placed after {attempt} rejected overlapping poses"));
                }
                found = Some((pos, yaw));
                break;
            }
        }
        let (pos, yaw) = found.ok_or_else(|| {
            Error::input(format!("could not place '{id}' without overlap"))
        })?;
        placed.push((pos, r));
        let to_scene = SimTransform::new(pos.into(), [0.0, 0.0, yaw], 1.0 / s)?;
        placements.push(Placement {
            object_id: id.clone(),
            transform: to_scene.inverse()?,
        });
    }

    let mut children = room(params.room_half, params.wall_height);
    for p in &placements {
        children.push(FieldDesc::posed(library.get(&p.object_id)?.field.clone(), p.transform));
    }
    let corner = params.room_half + 0.15;
    let radius = (2.0 * corner * corner + params.wall_height * params.wall_height).sqrt();
    let spec = SceneSpec {
        schema_version: super::spec::SCHEMA_VERSION,
        euler_convention: crate::transform::EULER_CONVENTION.to_string(),
        field: FieldDesc::Union { children },
        objects: placements,
        radius,
        seed,
        notes,
    };
    spec.validate(&library)?;
    Ok((spec, library))
}
