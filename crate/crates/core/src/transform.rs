//! Similarity transforms parameterized by translation, extrinsic X-Y-Z Euler
//! angles and a uniform scale.
//!
//! The homogeneous matrix is `M = T · R · σ`, so a point maps as
//! `x' = s · R · x + t` with `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Name of the Euler convention, written next to every serialized transform.
pub const EULER_CONVENTION: &str = "extrinsic-xyz";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTransform {
    pub translation: [f64; 3],
    /// `[roll, pitch, yaw]` in radians, applied about the fixed X, then Y, then Z axes.
    #[serde(rename = "euler_xyz")]
    pub euler: [f64; 3],
    pub scale: f64,
}

/// Decomposed error between an estimated and a reference transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformError {
    /// Norm of the difference of the translation columns.
    pub delta_t: f64,
    /// Geodesic rotation angle in radians, in `[0, π]`.
    pub delta_r: f64,
    pub delta_s: f64,
}

/// Precomputed linear form of a [`SimTransform`], used on hot paths.
#[derive(Clone, Copy, Debug)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub scale: f64,
    scaled_rotation: Matrix3<f64>,
}

impl Similarity {
    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scaled_rotation * p + self.translation
    }

    /// Applies the inverse map `Rᵀ (p − t) / s`.
    #[inline]
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p - self.translation)) / self.scale
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix for extrinsic X-Y-Z angles.
pub fn euler_to_matrix(euler: [f64; 3]) -> Matrix3<f64> {
    rot_z(euler[2]) * rot_y(euler[1]) * rot_x(euler[0])
}

/// Partial derivatives of [`euler_to_matrix`] with respect to roll, pitch and yaw.
pub fn euler_partials(euler: [f64; 3]) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(euler[0]), rot_y(euler[1]), rot_z(euler[2]));
    [
        rz * ry * d_rot_x(euler[0]),
        rz * d_rot_y(euler[1]) * rx,
        d_rot_z(euler[2]) * ry * rx,
    ]
}

/// Recovers extrinsic X-Y-Z angles from a rotation matrix. Near gimbal lock
/// the yaw is set to zero and roll absorbs the remaining freedom.
pub fn matrix_to_euler(r: &Matrix3<f64>) -> [f64; 3] {
    let cos_pitch = r[(0, 0)].hypot(r[(1, 0)]);
    let pitch = (-r[(2, 0)]).atan2(cos_pitch);
    if cos_pitch > 1e-10 {
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        [roll, pitch, yaw]
    } else {
        let roll = (-r[(1, 2)]).atan2(r[(1, 1)]);
        [roll, pitch, 0.0]
    }
}

/// Geodesic angle of a rotation matrix, stable near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = 0.5 * axis.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

impl Default for SimTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimTransform {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            euler: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn new(translation: [f64; 3], euler: [f64; 3], scale: f64) -> Result<Self> {
        let g = Self {
            translation,
            euler,
            scale,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn from_scale(scale: f64) -> Result<Self> {
        Self::new([0.0; 3], [0.0; 3], scale)
    }

    /// Builds a transform from a rotation matrix, translation and scale.
    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vec3, scale: f64) -> Result<Self> {
        Self::new(
            [translation.x, translation.y, translation.z],
            matrix_to_euler(rotation),
            scale,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::input(format!("scale must be positive, got {}", self.scale)));
        }
        if self.translation.iter().chain(self.euler.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("transform parameters must be finite"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_matrix(self.euler)
    }

    pub fn translation_vec(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn similarity(&self) -> Similarity {
        let rotation = self.rotation();
        Similarity {
            rotation,
            translation: self.translation_vec(),
            scale: self.scale,
            scaled_rotation: rotation * self.scale,
        }
    }

    /// Homogeneous matrix `T · R · σ`.
    pub fn to_matrix(&self) -> Result<Matrix4<f64>> {
        self.validate()?;
        let t = self.translation;
        let translate = Matrix4::new(
            1.0, 0.0, 0.0, t[0], //
            0.0, 1.0, 0.0, t[1], //
            0.0, 0.0, 1.0, t[2], //
            0.0, 0.0, 0.0, 1.0,
        );
        let rotate = self.rotation().to_homogeneous();
        let sigma = Matrix4::from_diagonal(&nalgebra::Vector4::new(
            self.scale, self.scale, self.scale, 1.0,
        ));
        Ok(translate * rotate * sigma)
    }

    /// Recovers a similarity from a homogeneous matrix whose upper-left block is `s · R`.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let linear = m.fixed_view::<3, 3>(0, 0).into_owned();
        let det = linear.determinant();
        if !(det.is_finite() && det > 0.0) {
            return Err(Error::input("matrix is not an orientation-preserving similarity"));
        }
        let scale = det.cbrt();
        let rotation = linear / scale;
        let t = Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        Self::from_parts(&rotation, &t, scale)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.similarity().apply(p)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.validate()?;
        let r = self.rotation();
        let rt = r.transpose();
        let t = -(rt * self.translation_vec()) / self.scale;
        Self::from_parts(&rt, &t, 1.0 / self.scale)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        let a = self.similarity();
        let b = other.similarity();
        let rotation = a.rotation * b.rotation;
        let translation = a.rotation * b.translation * a.scale + a.translation;
        Self::from_parts(&rotation, &translation, a.scale * b.scale)
    }
}

/// Decomposed error between `estimate` and `truth`.
pub fn transform_error(estimate: &SimTransform, truth: &SimTransform) -> TransformError {
    let delta_t = (estimate.translation_vec() - truth.translation_vec()).norm();
    let relative = estimate.rotation() * truth.rotation().transpose();
    TransformError {
        delta_t,
        delta_r: rotation_angle(&relative),
        delta_s: (estimate.scale - truth.scale).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn identity_matrix() {
        let m = SimTransform::identity().to_matrix().unwrap();
        assert_eq!(m, Matrix4::identity());
    }

    #[test]
    fn pure_scale_is_diagonal() {
        let m = SimTransform::from_scale(2.0).unwrap().to_matrix().unwrap();
        assert_eq!(m, Matrix4::from_diagonal(&nalgebra::Vector4::new(2.0, 2.0, 2.0, 1.0)));
    }

    #[test]
    fn yaw_quarter_turn_with_offset() {
        // Independent product: Rz(π/2) sends x̂ to ŷ, then add (1,0,0).
        let g = SimTransform::new([1.0, 0.0, 0.0], [0.0, 0.0, FRAC_PI_2], 1.0).unwrap();
        let m = g.to_matrix().unwrap();
        let p = m * nalgebra::Vector4::new(1.0, 0.0, 0.0, 1.0);
        assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12 && p.z.abs() < 1e-12);
        assert_eq!(m.row(3), nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn extrinsic_order_matches_fixed_axis_rotations() {
        // Rotating x̂ about fixed X (no-op), then fixed Y by π/2 gives -ẑ, then fixed Z keeps -ẑ.
        let r = euler_to_matrix([0.3, FRAC_PI_2, 0.7]);
        let p = r * Vec3::x();
        assert!(close(&p, &-Vec3::z(), 1e-12));
    }

    #[test]
    fn non_positive_scale_rejected() {
        let g = SimTransform {
            scale: 0.0,
            ..SimTransform::identity()
        };
        assert!(g.to_matrix().is_err());
        assert!(g.inverse().is_err());
        assert!(SimTransform::new([0.0; 3], [0.0; 3], -1.0).is_err());
    }

    #[test]
    fn apply_examples() {
        let p = Vec3::new(3.0, 4.0, 5.0);
        assert_eq!(SimTransform::identity().apply(&p), p);
        let half = SimTransform::from_scale(0.5).unwrap();
        assert_eq!(half.apply(&Vec3::new(2.0, 2.0, 2.0)), Vec3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn inverse_examples() {
        let inv = SimTransform::identity().inverse().unwrap();
        assert!(close(&inv.translation_vec(), &Vec3::zeros(), 0.0));
        assert!(rotation_angle(&inv.rotation()) < 1e-15);
        let inv = SimTransform::from_translation([1.0, 2.0, 3.0]).inverse().unwrap();
        assert!(close(&inv.translation_vec(), &Vec3::new(-1.0, -2.0, -3.0), 1e-15));
    }

    #[test]
    fn transform_error_examples() {
        let g = SimTransform::new([0.1, 0.2, 0.3], [0.4, 0.5, 0.6], 0.62).unwrap();
        let e = transform_error(&g, &g);
        assert_eq!(e.delta_t, 0.0);
        assert!(e.delta_r < 1e-12);
        assert_eq!(e.delta_s, 0.0);

        let a = SimTransform::new([0.0; 3], [0.0, 0.0, 0.2], 1.0).unwrap();
        let b = SimTransform::new([0.0; 3], [0.0, 0.0, 0.2 + FRAC_PI_2], 1.0).unwrap();
        assert!((transform_error(&a, &b).delta_r - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rotation_angle_near_pi() {
        let r = euler_to_matrix([0.0, 0.0, PI - 1e-9]);
        assert!((rotation_angle(&r) - (PI - 1e-9)).abs() < 1e-9);
    }

    fn any_transform() -> impl Strategy<Value = SimTransform> {
        (
            prop::array::uniform3(-5.0..5.0f64),
            prop::array::uniform3(-PI..PI),
            -4.6f64..4.6,
        )
            .prop_map(|(t, e, log_s)| SimTransform::new(t, e, log_s.exp()).unwrap())
    }

    fn any_point() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-10.0..10.0f64).prop_map(Vec3::from)
    }

    proptest! {
        #[test]
        fn apply_matches_matrix(g in any_transform(), p in any_point()) {
            let m = g.to_matrix().unwrap();
            let h = m * p.push(1.0);
            let q = g.apply(&p);
            prop_assert!((q - h.xyz()).norm() <= 1e-12 * (1.0 + h.xyz().norm()));
        }

        #[test]
        fn inverse_round_trip(g in any_transform(), p in any_point()) {
            let inv = g.inverse().unwrap();
            let back = inv.apply(&g.apply(&p));
            prop_assert!((back - p).norm() < 1e-9);
            let composed = inv.compose(&g).unwrap();
            prop_assert!((composed.apply(&p) - p).norm() < 1e-9);
        }

        #[test]
        fn composition_is_associative(a in any_transform(), b in any_transform(), c in any_transform()) {
            let (ma, mb, mc) = (a.to_matrix().unwrap(), b.to_matrix().unwrap(), c.to_matrix().unwrap());
            let left = (ma * mb) * mc;
            let right = ma * (mb * mc);
            let scale = left.abs().max().max(1.0);
            prop_assert!((left - right).abs().max() <= 1e-12 * scale);
            // the parameter-level composition agrees with the matrix product
            let abc = a.compose(&b).unwrap().compose(&c).unwrap().to_matrix().unwrap();
            prop_assert!((abc - left).abs().max() <= 1e-9 * scale);
        }

        #[test]
        fn euler_round_trip_reproduces_matrix(e in prop::array::uniform3(-2.0 * PI..2.0 * PI)) {
            let r = euler_to_matrix(e);
            let back = euler_to_matrix(matrix_to_euler(&r));
            prop_assert!((r - back).abs().max() < 1e-9);
        }

        #[test]
        fn matrix_round_trip(g in any_transform()) {
            let m = g.to_matrix().unwrap();
            let back = SimTransform::from_matrix(&m).unwrap().to_matrix().unwrap();
            prop_assert!((m - back).abs().max() <= 1e-9 * m.abs().max());
        }

        #[test]
        fn rotation_error_left_invariant(a in any_transform(), b in any_transform(),
                                         e in prop::array::uniform3(-PI..PI),
                                         t in prop::array::uniform3(-3.0..3.0f64)) {
            let rigid = SimTransform::new(t, e, 1.0).unwrap();
            let before = transform_error(&a, &b);
            let after = transform_error(&rigid.compose(&a).unwrap(), &rigid.compose(&b).unwrap());
            prop_assert!((before.delta_r - after.delta_r).abs() < 1e-9);
            prop_assert!(before.delta_r >= 0.0 && before.delta_r <= PI);
        }
    }
}
