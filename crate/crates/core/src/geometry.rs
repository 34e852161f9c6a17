//! Pinhole cameras, rigid poses, planes and plane-induced homographies.
//!
//! Conventions: right-handed camera frames with z forward, x right, y down.
//! Pixel `(u, v)` is (column, row) and `u = fx * X / Z + cx`. A [`Pose`]
//! maps points from a target (or second) camera frame into the reference
//! frame, `X_ref = R * X_tgt + t`. A [`Plane`] is the set `n . X + d = 0` in
//! the reference frame, so a fronto-parallel plane at depth `z` has `d = -z`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this magnitude `d + n . t` is treated as zero.
pub const DEGENERATE_EPS: f64 = 1e-9;
/// Below this magnitude a ray is treated as parallel to a plane.
pub const PARALLEL_EPS: f64 = 1e-12;
/// Tolerance of the orthonormality check applied to rotations.
pub const ROTATION_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate plane: |d + n.t| = {0:e} (camera center on the plane)")]
    DegeneratePlane(f64),
    #[error("singular intrinsics")]
    SingularIntrinsics,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid plane: {0}")]
    InvalidPlane(String),
    #[error("ray is parallel to the plane")]
    RayParallelToPlane,
    #[error("plane intersection behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("not a rotation matrix: {0}")]
    NotARotation(String),
}

type GResult<T> = std::result::Result<T, GeometryError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        PixelCoord { u, v }
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> GResult<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the given horizontal field of view and the
    /// principal point at the image center.
    pub fn from_hfov(width: usize, height: usize, hfov_deg: f64) -> GResult<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "horizontal fov {hfov_deg} outside (0, 180)"
            )));
        }
        let f = width as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        Intrinsics::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> GResult<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of the upper-triangular calibration matrix.
    pub fn inverse_matrix(&self) -> GResult<Matrix3<f64>> {
        if self.fx.abs() < f64::MIN_POSITIVE || self.fy.abs() < f64::MIN_POSITIVE {
            return Err(GeometryError::SingularIntrinsics);
        }
        Ok(Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        ))
    }

    /// Viewing ray through `p` with unit z component.
    pub fn backproject(&self, p: PixelCoord) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, x: &Vector3<f64>) -> PixelCoord {
        PixelCoord::new(
            self.fx * x.x / x.z + self.cx,
            self.fy * x.y / x.z + self.cy,
        )
    }

    pub fn principal_point(&self) -> PixelCoord {
        PixelCoord::new(self.cx, self.cy)
    }
}

/// Rigid transform from a target camera frame into the reference frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    const STRICT_EPS: f64 = 1e-9;

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> GResult<Self> {
        check_rotation(&rotation, Self::STRICT_EPS)?;
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NotARotation("non-finite translation".into()));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle_rad: f64, t: Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle_rad);
        Pose {
            rotation: *r.matrix(),
            translation: t,
        }
    }

    /// Intrinsic XYZ Euler angles in degrees: `R = Rx(rx) * Ry(ry) * Rz(rz)`.
    pub fn from_euler_xyz_deg(angles_deg: [f64; 3], t: Vector3<f64>) -> Self {
        let [rx, ry, rz] = angles_deg.map(f64::to_radians);
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), rx)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), ry)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), rz);
        Pose {
            rotation: *r.matrix(),
            translation: t,
        }
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self.compose(other)` applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn rotation_angle_deg(&self) -> f64 {
        // Construction keeps the rotation orthonormal, so this cannot fail.
        rotation_angle_deg(&self.rotation).unwrap_or(f64::NAN)
    }
}

/// Oriented plane `n . X + d = 0` with unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    /// Normalizes `(n, d)` jointly so the normal has unit length.
    pub fn new(normal: Vector3<f64>, offset: f64) -> GResult<Self> {
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0 && offset.is_finite()) {
            return Err(GeometryError::InvalidPlane(format!(
                "normal {normal:?} offset {offset}"
            )));
        }
        Ok(Plane {
            normal: normal / len,
            offset: offset / len,
        })
    }

    /// Plane with normal `n` containing the optical-axis point `(0, 0, depth)`.
    pub fn through_axis_depth(normal: Vector3<f64>, depth: f64) -> GResult<Self> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(GeometryError::InvalidPlane(format!(
                "axis depth must be positive, got {depth}"
            )));
        }
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(GeometryError::InvalidPlane(format!("normal {normal:?}")));
        }
        let n = normal / len;
        if n.z.abs() < PARALLEL_EPS {
            return Err(GeometryError::InvalidPlane(
                "normal is perpendicular to the optical axis".into(),
            ));
        }
        Ok(Plane {
            normal: n,
            offset: -n.z * depth,
        })
    }

    #[inline]
    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    #[inline]
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Depth at which the plane crosses the optical axis.
    pub fn axis_depth(&self) -> f64 {
        -self.offset / self.normal.z
    }

    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x) + self.offset
    }

    /// The same plane expressed in the frame that `pose` maps into this one.
    pub fn in_source_frame(&self, pose: &Pose) -> Plane {
        Plane {
            normal: pose.rotation.transpose() * self.normal,
            offset: self.offset + self.normal.dot(&pose.translation),
        }
    }
}

/// Homography taking target pixels to the reference pixels that image the
/// same point of `plane`:
/// `H = K_r (R - t n^T R / (d + n^T t)) K_t^-1`.
pub fn homography_target_to_reference(
    ref_cam: &Intrinsics,
    tgt_cam: &Intrinsics,
    rel_pose: &Pose,
    plane: &Plane,
) -> GResult<Matrix3<f64>> {
    let n = plane.normal;
    let r = &rel_pose.rotation;
    let t = &rel_pose.translation;
    let denom = plane.offset + n.dot(t);
    if denom.abs() <= DEGENERATE_EPS {
        return Err(GeometryError::DegeneratePlane(denom.abs()));
    }
    let k_t_inv = tgt_cam.inverse_matrix()?;
    let plane_term = t * (n.transpose() * r) / denom;
    Ok(ref_cam.as_matrix() * (r - plane_term) * k_t_inv)
}

/// Linear form `f` with `f . (u, v, 1) > 0` exactly when the target ray through
/// pixel `(u, v)` meets `plane` in front of the target camera. Combined with a
/// positive third homogeneous coordinate of the homography image, the plane
/// point is in front of both cameras.
pub fn front_of_target_form(tgt_cam: &Intrinsics, rel_pose: &Pose, plane: &Plane) -> GResult<Vector3<f64>> {
    let n = plane.normal;
    let denom = plane.offset + n.dot(&rel_pose.translation);
    // The hit depth along the ray K_t^-1 (u, v, 1) is -denom / (n^T R K_t^-1 (u, v, 1)).
    let l = tgt_cam.inverse_matrix()?.transpose() * rel_pose.rotation.transpose() * n;
    Ok(l * -denom)
}

#[inline]
pub fn apply_homography(h: &Matrix3<f64>, p: PixelCoord) -> PixelCoord {
    let x = h[(0, 0)] * p.u + h[(0, 1)] * p.v + h[(0, 2)];
    let y = h[(1, 0)] * p.u + h[(1, 1)] * p.v + h[(1, 2)];
    let w = h[(2, 0)] * p.u + h[(2, 1)] * p.v + h[(2, 2)];
    PixelCoord::new(x / w, y / w)
}

/// Ray-plane reference path for [`homography_target_to_reference`]: casts the
/// target ray, intersects the plane in the target frame, moves the point into
/// the reference frame and projects it.
pub fn project_via_plane(
    u_t: PixelCoord,
    tgt_cam: &Intrinsics,
    ref_cam: &Intrinsics,
    rel_pose: &Pose,
    plane: &Plane,
) -> GResult<PixelCoord> {
    let ray = tgt_cam.backproject(u_t);
    let local = plane.in_source_frame(rel_pose);
    let denom = local.normal.dot(&ray);
    if denom.abs() <= PARALLEL_EPS {
        return Err(GeometryError::RayParallelToPlane);
    }
    let s = -local.offset / denom;
    // ray.z == 1, so s is the depth of the hit in the target frame.
    if !(s > 0.0) {
        return Err(GeometryError::BehindCamera(s));
    }
    let x_ref = rel_pose.transform_point(&(ray * s));
    Ok(ref_cam.project(&x_ref))
}

fn check_rotation(r: &Matrix3<f64>, eps: f64) -> GResult<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(GeometryError::NotARotation("non-finite entries".into()));
    }
    let err = (r * r.transpose() - Matrix3::identity()).abs().max();
    if err > eps {
        return Err(GeometryError::NotARotation(format!(
            "R R^T deviates from identity by {err:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > eps {
        return Err(GeometryError::NotARotation(format!("determinant {det}")));
    }
    Ok(())
}

/// Rotation angle `acos((trace(R) - 1) / 2)` in degrees.
///
/// Arguments that leave [-1, 1] by at most [`ROTATION_EPS`] are clamped;
/// larger excursions and non-orthonormal inputs are rejected.
pub fn rotation_angle_deg(r: &Matrix3<f64>) -> GResult<f64> {
    check_rotation(r, ROTATION_EPS)?;
    let c = (r.trace() - 1.0) / 2.0;
    if !(-1.0 - ROTATION_EPS..=1.0 + ROTATION_EPS).contains(&c) {
        return Err(GeometryError::NotARotation(format!("cos(theta) = {c}")));
    }
    Ok(c.clamp(-1.0, 1.0).acos().to_degrees())
}

/// Layer normal seen from the target camera, `R^T n`.
pub fn rotate_normal(rel_pose: &Pose, normal: &Vector3<f64>) -> Vector3<f64> {
    rel_pose.rotation.transpose() * normal
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cam(f: f64) -> Intrinsics {
        Intrinsics::new(f, f, 63.5, 63.5, 128, 128).unwrap()
    }

    #[test]
    fn intrinsics_matrix_layout() {
        let k = Intrinsics::new(200.0, 210.0, 60.0, 50.0, 120, 100).unwrap();
        let m = k.as_matrix();
        assert_eq!(m[(0, 0)], 200.0);
        assert_eq!(m[(1, 1)], 210.0);
        assert_eq!(m[(0, 2)], 60.0);
        assert_eq!(m[(1, 2)], 50.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(2, 0)], 0.0);
        assert_eq!(m[(2, 1)], 0.0);
        assert_eq!(m[(2, 2)], 1.0);
        assert_relative_eq!(
            m * k.inverse_matrix().unwrap(),
            Matrix3::identity(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, -1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 4).is_err());
    }

    #[test]
    fn identity_pose_same_camera_gives_identity() {
        let k = cam(100.0);
        let plane = Plane::through_axis_depth(Vector3::new(0.3, -0.2, 1.0), 4.0).unwrap();
        let h = homography_target_to_reference(&k, &k, &Pose::identity(), &plane).unwrap();
        assert_relative_eq!(h, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn identity_pose_different_cameras() {
        let kr = cam(100.0);
        let kt = Intrinsics::new(80.0, 90.0, 30.0, 40.0, 64, 64).unwrap();
        let plane = Plane::through_axis_depth(Vector3::z(), 2.0).unwrap();
        let h = homography_target_to_reference(&kr, &kt, &Pose::identity(), &plane).unwrap();
        let expected = kr.as_matrix() * kt.inverse_matrix().unwrap();
        assert_relative_eq!(h, expected, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_plane_detected() {
        let k = cam(100.0);
        let plane = Plane::through_axis_depth(Vector3::z(), 1.0).unwrap();
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert!(matches!(
            homography_target_to_reference(&k, &k, &pose, &plane),
            Err(GeometryError::DegeneratePlane(_))
        ));
    }

    #[test]
    fn principal_ray_hits_frontal_plane_at_principal_point() {
        let k = Intrinsics::new(256.0, 256.0, 128.0, 128.0, 256, 256).unwrap();
        let plane = Plane::through_axis_depth(Vector3::z(), 5.0).unwrap();
        let p = project_via_plane(k.principal_point(), &k, &k, &Pose::identity(), &plane).unwrap();
        assert_relative_eq!(p.u, 128.0, epsilon = 1e-12);
        assert_relative_eq!(p.v, 128.0, epsilon = 1e-12);
    }

    #[test]
    fn lateral_translation_parallax() {
        let k = Intrinsics::new(256.0, 256.0, 128.0, 128.0, 256, 256).unwrap();
        let plane = Plane::through_axis_depth(Vector3::z(), 5.0).unwrap();
        let pose = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let p = project_via_plane(PixelCoord::new(100.0, 90.0), &k, &k, &pose, &plane).unwrap();
        assert_relative_eq!(p.u - 100.0, 5.12, epsilon = 1e-9);
        assert_relative_eq!(p.v, 90.0, epsilon = 1e-9);
    }

    #[test]
    fn ray_oracle_errors() {
        let k = cam(100.0);
        // Plane containing the optical axis direction: x = 1.
        let side = Plane::new(Vector3::x(), -1.0).unwrap();
        assert_eq!(
            project_via_plane(k.principal_point(), &k, &k, &Pose::identity(), &side),
            Err(GeometryError::RayParallelToPlane)
        );
        let front = Plane::through_axis_depth(Vector3::z(), 2.0).unwrap();
        let behind = Pose::from_translation(Vector3::new(0.0, 0.0, 3.0));
        assert!(matches!(
            project_via_plane(k.principal_point(), &k, &k, &behind, &front),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn plane_through_axis_depth() {
        let p = Plane::through_axis_depth(Vector3::new(1.0, 0.0, 1.0), 3.0).unwrap();
        assert_relative_eq!(p.normal().norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.axis_depth(), 3.0, epsilon = 1e-12);
        assert_relative_eq!(
            p.signed_distance(&Vector3::new(0.0, 0.0, 3.0)),
            0.0,
            epsilon = 1e-12
        );
        assert!(Plane::through_axis_depth(Vector3::z(), -1.0).is_err());
        assert!(Plane::through_axis_depth(Vector3::x(), 1.0).is_err());
    }

    #[test]
    fn rotation_angles() {
        assert_eq!(rotation_angle_deg(&Matrix3::identity()).unwrap(), 0.0);
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), 2f64.to_radians());
        assert_relative_eq!(rotation_angle_deg(r.matrix()).unwrap(), 2.0, epsilon = 1e-9);
        let axis = Unit::new_normalize(Vector3::new(1.0, 1.0, 1.0));
        let r = Rotation3::from_axis_angle(&axis, 7f64.to_radians());
        assert_relative_eq!(rotation_angle_deg(r.matrix()).unwrap(), 7.0, epsilon = 1e-9);
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        assert_relative_eq!(rotation_angle_deg(r.matrix()).unwrap(), 180.0, epsilon = 1e-6);
    }

    #[test]
    fn rotation_angle_rejects_non_rotations() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.1;
        assert!(rotation_angle_deg(&m).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(rotation_angle_deg(&reflection).is_err());
    }

    #[test]
    fn rotate_normal_cases() {
        let n = Vector3::new(0.0, 0.6, 0.8);
        assert_eq!(rotate_normal(&Pose::identity(), &n), n);
        let pose = Pose::from_axis_angle(Vector3::y(), std::f64::consts::FRAC_PI_2, Vector3::zeros());
        let r = rotate_normal(&pose, &Vector3::z());
        assert_relative_eq!(r.y, 0.0, epsilon = 1e-15);
        assert_relative_eq!(r.norm(), 1.0, epsilon = 1e-12);
        let moved = Pose::new(*pose.rotation(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(rotate_normal(&moved, &n), rotate_normal(&pose, &n));
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let p = Pose::from_euler_xyz_deg([3.0, -5.0, 7.0], Vector3::new(0.2, -0.1, 0.4));
        let id = p.inverse().compose(&p);
        assert_relative_eq!(*id.rotation(), Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(*id.translation(), Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn euler_order_is_intrinsic_xyz() {
        let p = Pose::from_euler_xyz_deg([10.0, 20.0, 30.0], Vector3::zeros());
        let expected = Rotation3::from_axis_angle(&Vector3::x_axis(), 10f64.to_radians())
            * Rotation3::from_axis_angle(&Vector3::y_axis(), 20f64.to_radians())
            * Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians());
        assert_relative_eq!(*p.rotation(), *expected.matrix(), epsilon = 1e-15);
    }

    #[test]
    fn pose_new_rejects_bad_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-6;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
    }
}
