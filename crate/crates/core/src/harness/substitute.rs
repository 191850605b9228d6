//! Swapping a registered scene object for a library object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{FieldDesc, LoadedScene};
use crate::error::{Error, Result};
use crate::sdf::SdfField;
use crate::transform::SimTransform;
use crate::Vec3;

/// Mask ball radius as a multiple of the object's scene-space bounding radius.
pub const MASK_FACTOR: f64 = 1.1;

/// Scene-space ball hiding the registered object: centre and radius.
pub fn mask_ball(scene: &LoadedScene, object_id: &str, registered: &SimTransform) -> Result<(Vec3, f64)> {
    let entry = scene.library.get(object_id)?;
    registered.validate()?;
    let center = registered.inverse()?.apply(&Vec3::zeros());
    Ok((center, MASK_FACTOR * entry.bounding_radius / registered.scale))
}

/// Scene field with a ball around the registered object cut out, united with
/// `replacement` (or the same object) posed by `registered`.
pub fn compose_substitution(
    scene: &LoadedScene,
    object_id: &str,
    registered: &SimTransform,
    replacement: Option<&str>,
) -> Result<SdfField> {
    let (center, radius) = mask_ball(scene, object_id, registered)?;
    compose_with_mask(scene, object_id, registered, replacement, radius, center)
}

/// [`compose_substitution`] with an explicit mask radius and centre.
pub fn compose_with_mask(
    scene: &LoadedScene,
    object_id: &str,
    registered: &SimTransform,
    replacement: Option<&str>,
    radius: f64,
    center: Vec3,
) -> Result<SdfField> {
    scene.library.get(object_id)?;
    let id = replacement.unwrap_or(object_id);
    let object = scene.object_field(id)?.clone();
    let masked = SdfField::masked(scene.scene_field.clone(), center, radius)?;
    Ok(SdfField::union(vec![masked, SdfField::posed(object, *registered)?]))
}

/// File form of [`compose_substitution`], built from the scene and library
/// descriptions.
pub fn substitution_desc(
    scene: &LoadedScene,
    object_id: &str,
    registered: &SimTransform,
    replacement: Option<&str>,
) -> Result<FieldDesc> {
    let (center, radius) = mask_ball(scene, object_id, registered)?;
    let object = scene.library.get(replacement.unwrap_or(object_id))?;
    Ok(FieldDesc::Union {
        children: vec![
            FieldDesc::Masked {
                child: Box::new(scene.spec.field.clone()),
                center: center.into(),
                radius,
            },
            FieldDesc::posed(object.field.clone(), *registered),
        ],
    })
}

/// Largest `|composite − original|` over `n` probes drawn uniformly from the
/// cube of half-size `extent` around the mask centre, skipping probes inside
/// the mask ball grown by `shell`.
#[allow(clippy::too_many_arguments)]
pub fn probe_deviation(
    original: &SdfField,
    composite: &SdfField,
    center: Vec3,
    radius: f64,
    shell: f64,
    extent: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if !(extent * 3f64.sqrt() > 1.05 * (radius + shell)) {
        return Err(Error::input("probe cube lies inside the mask"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut kept = 0;
    while kept < n {
        let p = center
            + Vec3::new(
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
            );
        if (p - center).norm() < radius + shell {
            continue;
        }
        worst = worst.max((composite.value(&p) - original.value(&p)).abs());
        kept += 1;
    }
    Ok(worst)
}
