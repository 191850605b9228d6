//! Scene and object-library file formats.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdf::{GridField, SdfField};
use crate::transform::{SimTransform, EULER_CONVENTION};
use crate::Vec3;

pub const SCHEMA_VERSION: u32 = 1;

/// Declarative field description, buildable into an [`SdfField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldDesc {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: [f64; 3],
    },
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    RoundedBox {
        half_extents: [f64; 3],
        rounding: f64,
    },
    Union {
        children: Vec<FieldDesc>,
    },
    /// `child` evaluated at `transform·x`, divided by the scale.
    Posed {
        child: std::boxed::Box<FieldDesc>,
        transform: SimTransform,
    },
    /// Grid header JSON; relative paths resolve against the owning file.
    Grid {
        path: String,
    },
    Masked {
        child: std::boxed::Box<FieldDesc>,
        center: [f64; 3],
        radius: f64,
    },
}

impl FieldDesc {
    /// `child` placed with its origin at `position`.
    pub fn at(child: FieldDesc, position: Vec3) -> FieldDesc {
        FieldDesc::Posed {
            child: std::boxed::Box::new(child),
            transform: SimTransform::from_translation((-position).into()),
        }
    }

    pub fn posed(child: FieldDesc, transform: SimTransform) -> FieldDesc {
        FieldDesc::Posed {
            child: std::boxed::Box::new(child),
            transform,
        }
    }

    pub fn build(&self, base_dir: &Path) -> Result<SdfField> {
        Ok(match self {
            FieldDesc::Sphere { radius } => SdfField::sphere(*radius)?,
            FieldDesc::Box { half_extents } => SdfField::cuboid(Vec3::from(*half_extents))?,
            FieldDesc::Cylinder {
                radius,
                half_height,
            } => SdfField::cylinder(*radius, *half_height)?,
            FieldDesc::RoundedBox {
                half_extents,
                rounding,
            } => SdfField::rounded_box(Vec3::from(*half_extents), *rounding)?,
            FieldDesc::Union { children } => SdfField::union(
                children
                    .iter()
                    .map(|c| c.build(base_dir))
                    .collect::<Result<_>>()?,
            ),
            FieldDesc::Posed { child, transform } => {
                SdfField::posed(child.build(base_dir)?, *transform)?
            }
            FieldDesc::Grid { path } => SdfField::grid(GridField::read(&base_dir.join(path))?),
            FieldDesc::Masked {
                child,
                center,
                radius,
            } => SdfField::masked(child.build(base_dir)?, Vec3::from(*center), *radius)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Chair,
    Table,
    Other,
}

/// One library object in its canonical frame, centred on its bounding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub id: String,
    pub kind: ObjectKind,
    pub field: FieldDesc,
    /// Radius of the bounding sphere about the canonical origin.
    pub bounding_radius: f64,
    /// Half extents of the canonical bounding box.
    pub half_extents: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectLibrary {
    pub schema_version: u32,
    pub euler_convention: String,
    pub objects: Vec<LibraryEntry>,
}

impl ObjectLibrary {
    pub fn new(objects: Vec<LibraryEntry>) -> Result<Self> {
        let lib = ObjectLibrary {
            schema_version: SCHEMA_VERSION,
            euler_convention: EULER_CONVENTION.to_string(),
            objects,
        };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<()> {
        check_header(self.schema_version, &self.euler_convention)?;
        let mut seen = HashSet::new();
        for e in &self.objects {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::input(format!("duplicate library id '{}'", e.id)));
            }
            if !(e.bounding_radius.is_finite() && e.bounding_radius > 0.0) {
                return Err(Error::input(format!("object '{}' needs a positive radius", e.id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&LibraryEntry> {
        self.objects
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::input(format!("unknown library object '{id}'")))
    }

    pub fn ids(&self) -> Vec<String> {
        self.objects.iter().map(|e| e.id.clone()).collect()
    }
}

/// A library object placed in the scene; `transform` maps scene coordinates
/// into the object's canonical frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub object_id: String,
    pub transform: SimTransform,
}

impl Placement {
    /// Scene position of the canonical origin.
    pub fn center(&self) -> Result<Vec3> {
        Ok(self.transform.inverse()?.apply(&Vec3::zeros()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub schema_version: u32,
    pub euler_convention: String,
    pub field: FieldDesc,
    pub objects: Vec<Placement>,
    /// Bounding radius of the scene about the origin.
    pub radius: f64,
    pub seed: u64,
    /// Placement retries taken during generation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SceneSpec {
    pub fn validate(&self, library: &ObjectLibrary) -> Result<()> {
        check_header(self.schema_version, &self.euler_convention)?;
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::input("scene radius must be positive"));
        }
        for p in &self.objects {
            let entry = library.get(&p.object_id)?;
            p.transform.validate()?;
            let reach = p.center()?.norm() + entry.bounding_radius / p.transform.scale;
            if reach > self.radius {
                return Err(Error::input(format!(
                    "object '{}' reaches {reach} beyond the scene radius {}",
                    p.object_id, self.radius
                )));
            }
        }
        Ok(())
    }

    pub fn placement(&self, object_id: &str) -> Result<&Placement> {
        self.objects
            .iter()
            .find(|p| p.object_id == object_id)
            .ok_or_else(|| Error::input(format!("object '{object_id}' is not placed in the scene")))
    }
}

fn check_header(version: u32, convention: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::input(format!("unsupported schema version {version}")));
    }
    if convention != EULER_CONVENTION {
        return Err(Error::input(format!("unsupported euler convention '{convention}'")));
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

/// Scene and library with every field built.
#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub spec: SceneSpec,
    pub library: ObjectLibrary,
    pub scene_field: SdfField,
    pub objects: BTreeMap<String, SdfField>,
}

impl LoadedScene {
    pub fn new(spec: SceneSpec, library: ObjectLibrary, base_dir: &Path) -> Result<Self> {
        library.validate()?;
        spec.validate(&library)?;
        let scene_field = spec.field.build(base_dir)?;
        let objects = library
            .objects
            .iter()
            .map(|e| Ok((e.id.clone(), e.field.build(base_dir)?)))
            .collect::<Result<_>>()?;
        Ok(LoadedScene {
            spec,
            library,
            scene_field,
            objects,
        })
    }

    pub fn load(scene_path: &Path, library_path: &Path) -> Result<Self> {
        let spec: SceneSpec = read_json(scene_path)?;
        let library: ObjectLibrary = read_json(library_path)?;
        let base = scene_path.parent().unwrap_or(Path::new("."));
        // library grids resolve against the library file
        let lib_base = library_path.parent().unwrap_or(Path::new("."));
        library.validate()?;
        spec.validate(&library)?;
        let scene_field = spec.field.build(base)?;
        let objects = library
            .objects
            .iter()
            .map(|e| Ok((e.id.clone(), e.field.build(lib_base)?)))
            .collect::<Result<_>>()?;
        Ok(LoadedScene {
            spec,
            library,
            scene_field,
            objects,
        })
    }

    /// Same scene with its field replaced, e.g. by a degraded grid.
    pub fn with_scene_field(&self, field: SdfField) -> Self {
        LoadedScene {
            scene_field: field,
            ..self.clone()
        }
    }

    pub fn object_field(&self, id: &str) -> Result<&SdfField> {
        self.objects
            .get(id)
            .ok_or_else(|| Error::input(format!("unknown library object '{id}'")))
    }
}
