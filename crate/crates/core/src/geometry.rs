//! SO(3)/SE(3) algebra with the perturbation convention used across the crate.
//!
//! Poses perturb world-frame left-multiplicatively on rotation and additively
//! on translation:
//!
//! ```text
//! r = r̄ + δr
//! C = Exp(δα) C̄
//! ```
//!
//! Every Jacobian in the crate is written against this convention; the
//! finite-difference tests in `residual` and `graph` only pass if it is
//! applied consistently.

use std::fmt;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};

/// Angle threshold below which the second-order small-angle series is used.
const SMALL_ANGLE: f64 = 1e-8;

/// A rotation stored as a unit quaternion with `w >= 0`.
///
/// The sign canonicalization makes equality checks and serialized output
/// deterministic; `q` and `-q` describe the same rotation.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from raw quaternion components, normalizing and
    /// canonicalizing the sign.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = Unit::new_normalize(Quaternion::new(w, x, y, z));
        Rotation(q).canonicalized()
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(q).canonicalized()
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_matrix(m);
        Rotation(UnitQuaternion::from_rotation_matrix(&r)).canonicalized()
    }

    /// Exponential map: rotation by angle `‖alpha‖` about axis `alpha/‖alpha‖`.
    pub fn exp_so3(alpha: &Vector3<f64>) -> Self {
        let theta = alpha.norm();
        let half = 0.5 * theta;
        let (w, k) = if theta < SMALL_ANGLE {
            // sin(θ/2)/θ = 1/2 - θ²/48 + O(θ⁴)
            (1.0 - half * half / 2.0, 0.5 - theta * theta / 48.0)
        } else {
            (half.cos(), half.sin() / theta)
        };
        let q = Quaternion::new(w, k * alpha.x, k * alpha.y, k * alpha.z);
        Rotation(Unit::new_normalize(q)).canonicalized()
    }

    /// Logarithm map: minimal rotation vector with angle in `[0, π]`.
    pub fn log_so3(&self) -> Vector3<f64> {
        let q = self.canonicalized().0;
        let v = q.vector();
        let s = v.norm();
        let w = q.w;
        if s < SMALL_ANGLE {
            // θ ≈ 2s/w for small angles; the linear term is exact enough here.
            v * (2.0 / w)
        } else {
            let theta = 2.0 * s.atan2(w);
            v * (theta / s)
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    /// Quaternion components as `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        self.0
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.inverse()).canonicalized()
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        let q = self.0 * other.0;
        Rotation(UnitQuaternion::new_normalize(q.into_inner())).canonicalized()
    }

    /// Rotation angle between `self` and `other`, in `[0, π]`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).log_so3().norm()
    }

    /// Shortest-arc spherical interpolation, `u` in `[0, 1]`.
    pub fn slerp(&self, other: &Rotation, u: f64) -> Self {
        let a = self.0.quaternion();
        let mut b = *other.0.quaternion();
        let mut dot = a.dot(&b);
        if dot < 0.0 {
            b = -b;
            dot = -dot;
        }
        if dot > 1.0 - 1e-12 {
            // Nearly identical; linear blend avoids the 0/0 in the slerp weights.
            let q = a.lerp(&b, u);
            return Rotation(Unit::new_normalize(q)).canonicalized();
        }
        let omega = dot.clamp(-1.0, 1.0).acos();
        let sin_omega = omega.sin();
        let wa = ((1.0 - u) * omega).sin() / sin_omega;
        let wb = (u * omega).sin() / sin_omega;
        let q = a * wa + b * wb;
        Rotation(Unit::new_normalize(q)).canonicalized()
    }

    fn canonicalized(self) -> Self {
        if self.0.quaternion().w < 0.0 {
            Rotation(UnitQuaternion::new_unchecked(-self.0.into_inner()))
        } else {
            self
        }
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        write!(f, "Rotation(w={w:.6}, x={x:.6}, y={y:.6}, z={z:.6})")
    }
}

/// Rigid-body transform `T_AB` taking points from frame B to frame A.
#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_parts(translation: [f64; 3], quaternion_wxyz: [f64; 4]) -> Self {
        let [w, x, y, z] = quaternion_wxyz;
        Pose {
            rotation: Rotation::from_quaternion(w, x, y, z),
            translation: Vector3::new(translation[0], translation[1], translation[2]),
        }
    }

    /// `T_AC = T_AB ∘ T_BC`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose {
            rotation: inv_rot,
            translation: -inv_rot.rotate(&self.translation),
        }
    }

    /// `C·p + r`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Applies the world-frame left perturbation: `r + δr`, `Exp(δα)·C`.
    pub fn apply_perturbation(&self, d: &PosePerturbation) -> Pose {
        Pose {
            rotation: Rotation::exp_so3(&d.dalpha).compose(&self.rotation),
            translation: self.translation + d.dr,
        }
    }
}

/// Tangent-space pose increment `δχ = [δr, δα]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PosePerturbation {
    /// Translation increment, meters.
    pub dr: Vector3<f64>,
    /// Rotation increment, radians (axis-angle).
    pub dalpha: Vector3<f64>,
}

impl PosePerturbation {
    pub fn zero() -> Self {
        PosePerturbation::default()
    }

    pub fn new(dr: Vector3<f64>, dalpha: Vector3<f64>) -> Self {
        PosePerturbation { dr, dalpha }
    }

    /// Stacked `[δr, δα]` ordering, matching the Jacobian column layout.
    pub fn from_slice(v: &[f64]) -> Self {
        PosePerturbation {
            dr: Vector3::new(v[0], v[1], v[2]),
            dalpha: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.dr.norm_squared() + self.dalpha.norm_squared()).sqrt()
    }
}

/// Errors from pose interpolation.
#[derive(Debug, Clone, PartialEq)]
pub enum InterpolateError {
    /// `t1 <= t0`: the bracketing window is empty or inverted.
    EmptyWindow { t0: f64, t1: f64 },
    /// Query time outside `[t0, t1]`.
    OutOfRange { t: f64, t0: f64, t1: f64 },
}

impl fmt::Display for InterpolateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpolateError::EmptyWindow { t0, t1 } => {
                write!(f, "invalid interpolation window [{t0}, {t1}]")
            }
            InterpolateError::OutOfRange { t, t0, t1 } => {
                write!(f, "time {t} outside interpolation window [{t0}, {t1}]")
            }
        }
    }
}

impl std::error::Error for InterpolateError {}

/// Interpolates between two timed poses: translation linearly, rotation
/// spherically along the shortest arc.
pub fn interpolate_pose(
    pose0: &Pose,
    t0: f64,
    pose1: &Pose,
    t1: f64,
    t: f64,
) -> Result<Pose, InterpolateError> {
    if !(t1 > t0) {
        return Err(InterpolateError::EmptyWindow { t0, t1 });
    }
    if t < t0 || t > t1 {
        return Err(InterpolateError::OutOfRange { t, t0, t1 });
    }
    let u = (t - t0) / (t1 - t0);
    if u == 0.0 {
        return Ok(*pose0);
    }
    if u == 1.0 {
        return Ok(*pose1);
    }
    Ok(Pose {
        rotation: pose0.rotation.slerp(&pose1.rotation, u),
        translation: pose0.translation.lerp(&pose1.translation, u),
    })
}

/// Skew-symmetric matrix `⌊v⌋ₓ` with `⌊v⌋ₓ·u = v × u`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_vec_eq(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) {
        assert!(
            (a - b).norm() <= tol,
            "vectors differ: {a:?} vs {b:?} (tol {tol})"
        );
    }

    #[test]
    fn exp_zero_is_identity() {
        let r = Rotation::exp_so3(&Vector3::zeros());
        assert_eq!(r.wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = Rotation::exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let m = r.matrix();
        // column 1 (the image of e_x) should be (0, 1, 0)
        assert_vec_eq(&m.column(0).into(), &Vector3::new(0.0, 1.0, 0.0), 1e-12);
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(Rotation::identity().log_so3(), Vector3::zeros());
    }

    #[test]
    fn log_small_round_trip() {
        let alpha = Vector3::new(0.1, 0.0, 0.0);
        let back = Rotation::exp_so3(&alpha).log_so3();
        assert_vec_eq(&back, &alpha, 1e-12);
    }

    #[test]
    fn log_at_pi_boundary() {
        let r = Rotation::exp_so3(&Vector3::new(PI, 0.0, 0.0));
        let back = r.log_so3();
        assert_vec_eq(&back, &Vector3::new(PI, 0.0, 0.0), 1e-9);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = Pose::new(
            Rotation::exp_so3(&Vector3::new(0.3, -0.2, 0.9)),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let id = t.compose(&t.inverse());
        assert!(id.translation.norm() < 1e-9);
        assert!(id.rotation.log_so3().norm() < 1e-9);
    }

    #[test]
    fn zero_perturbation_is_noop() {
        let t = Pose::new(
            Rotation::exp_so3(&Vector3::new(0.1, 0.2, 0.3)),
            Vector3::new(4.0, 5.0, 6.0),
        );
        let t2 = t.apply_perturbation(&PosePerturbation::zero());
        assert_eq!(t.translation, t2.translation);
        let [w0, x0, y0, z0] = t.rotation.wxyz();
        let [w1, x1, y1, z1] = t2.rotation.wxyz();
        assert_abs_diff_eq!(w0, w1, epsilon = 1e-15);
        assert_abs_diff_eq!(x0, x1, epsilon = 1e-15);
        assert_abs_diff_eq!(y0, y1, epsilon = 1e-15);
        assert_abs_diff_eq!(z0, z1, epsilon = 1e-15);
    }

    #[test]
    fn translation_perturbation_on_identity() {
        let t = Pose::identity()
            .apply_perturbation(&PosePerturbation::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()));
        assert_eq!(t.translation, Vector3::new(1.0, 0.0, 0.0));
    }

    // Under the world-frame left convention, d(Exp(δα)·C·p + r + δr)/dδr = I
    // and d/dδα = -⌊C·p⌋ₓ at δ = 0.
    #[test]
    fn perturbation_finite_difference_slope() {
        let t = Pose::new(
            Rotation::exp_so3(&Vector3::new(0.4, -0.1, 0.25)),
            Vector3::new(0.7, -0.3, 1.1),
        );
        let p = Vector3::new(1.3, -0.8, 2.2);
        let h = 1e-6;
        let rotated = t.rotation.rotate(&p);
        // analytic: ∂(T·p)/∂δr = I ; ∂(T·p)/∂δα = -⌊C·p⌋ₓ
        let expected_dalpha = -skew(&rotated);
        for k in 0..6 {
            let mut plus = [0.0; 6];
            let mut minus = [0.0; 6];
            plus[k] = h;
            minus[k] = -h;
            let fp = t
                .apply_perturbation(&PosePerturbation::from_slice(&plus))
                .transform_point(&p);
            let fm = t
                .apply_perturbation(&PosePerturbation::from_slice(&minus))
                .transform_point(&p);
            let slope = (fp - fm) / (2.0 * h);
            let expected = if k < 3 {
                let mut e = Vector3::zeros();
                e[k] = 1.0;
                e
            } else {
                expected_dalpha.column(k - 3).into()
            };
            assert_vec_eq(&slope, &expected, 1e-5);
        }
    }

    #[test]
    fn relative_pose_matches_matrix_oracle() {
        let ta = Pose::new(
            Rotation::exp_so3(&Vector3::new(0.2, 0.5, -0.4)),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let tb = Pose::new(
            Rotation::exp_so3(&Vector3::new(-0.7, 0.1, 0.3)),
            Vector3::new(-2.0, 0.5, 1.5),
        );
        let rel = ta.inverse().compose(&tb);
        // matrix oracle: C_rel = C_aᵀ C_b, r_rel = C_aᵀ (r_b - r_a)
        let c_rel = ta.rotation.matrix().transpose() * tb.rotation.matrix();
        let r_rel = ta.rotation.matrix().transpose() * (tb.translation - ta.translation);
        assert!((rel.rotation.matrix() - c_rel).norm() < 1e-9);
        assert_vec_eq(&rel.translation, &r_rel, 1e-9);
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let t0 = Pose::identity();
        let t1 = Pose::new(Rotation::identity(), Vector3::new(2.0, 0.0, 0.0));
        let at0 = interpolate_pose(&t0, 0.0, &t1, 1.0, 0.0).unwrap();
        assert_eq!(at0.translation, t0.translation);
        let mid = interpolate_pose(&t0, 0.0, &t1, 1.0, 0.5).unwrap();
        assert_vec_eq(&mid.translation, &Vector3::new(1.0, 0.0, 0.0), 1e-15);
    }

    #[test]
    fn interpolate_rotation_midpoint_is_half_angle() {
        let t0 = Pose::identity();
        let t1 = Pose::new(
            Rotation::exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2)),
            Vector3::zeros(),
        );
        let mid = interpolate_pose(&t0, 0.0, &t1, 2.0, 1.0).unwrap();
        let expected = Rotation::exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2 / 2.0));
        assert!(mid.rotation.angle_to(&expected) < 1e-9);
    }

    #[test]
    fn interpolate_rejects_out_of_range() {
        let t = Pose::identity();
        assert!(interpolate_pose(&t, 0.0, &t, 1.0, 1.5).is_err());
        assert!(interpolate_pose(&t, 1.0, &t, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(
            x in -1.0f64..1.0,
            y in -1.0f64..1.0,
            z in -1.0f64..1.0,
            scale in 1e-4f64..1.0,
        ) {
            let dir = Vector3::new(x, y, z);
            prop_assume!(dir.norm() > 1e-3);
            // keep the angle within (0, π - 1e-3) where log is well-conditioned
            let alpha = dir / dir.norm() * scale * (PI - 1e-3);
            let back = Rotation::exp_so3(&alpha).log_so3();
            prop_assert!((back - alpha).norm() < 1e-9, "round trip failed: {:?} vs {:?}", alpha, back);
        }

        #[test]
        fn quaternion_norm_preserved(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
            bx in -3.0f64..3.0, by in -3.0f64..3.0, bz in -3.0f64..3.0,
        ) {
            let a = Rotation::exp_so3(&Vector3::new(ax, ay, az));
            let b = Rotation::exp_so3(&Vector3::new(bx, by, bz));
            let c = a.compose(&b);
            let [w, x, y, z] = c.wxyz();
            let norm = (w * w + x * x + y * y + z * z).sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
            prop_assert!(w >= 0.0);
        }

        #[test]
        fn rotation_matrix_is_orthonormal(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
        ) {
            let m = Rotation::exp_so3(&Vector3::new(ax, ay, az)).matrix();
            let should_be_identity = m * m.transpose();
            prop_assert!((should_be_identity - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
