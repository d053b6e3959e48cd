//! Exact 3D geometric primitives shared by the simulator and the models:
//! cross products, axis-angle rotations, projections, and 3x3 linear solves.
//!
//! Everything here is a pure function over plain `f64` values, safe to call
//! from any thread.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Angle threshold below which `rodrigues_rotation` switches to its Taylor
/// form. Keeps the truncation error at O(theta^3) ~ 1e-27 while avoiding
/// division by a near-zero norm.
pub const SMALL_ANGLE: f64 = 1e-9;

/// Determinant threshold below which `solve3` reports a singular matrix.
pub const SINGULAR_DET: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    /// `project_perp` was handed a non-unit axis; signals a caller bug.
    #[error("expected unit vector, got norm {norm}")]
    NonUnitVector { norm: f64 },
    /// `solve3` was handed a (numerically) singular matrix; signals
    /// degenerate geometry upstream.
    #[error("singular 3x3 system (|det| = {det:e})")]
    SingularMatrix { det: f64 },
}

/// A 3-vector in simulation units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector along `self`; returns `None` when the norm underflows.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-300 {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl std::ops::AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl std::ops::SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

/// Right-handed cross product `a x b`.
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    Vec3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}

/// A 3x3 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [f64; 9],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0] };

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3 { m: [r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z] }
    }

    pub fn diagonal(d: Vec3) -> Self {
        Mat3 { m: [d.x, 0.0, 0.0, 0.0, d.y, 0.0, 0.0, 0.0, d.z] }
    }

    /// Outer product `a b^T`.
    pub fn outer(a: Vec3, b: Vec3) -> Self {
        Mat3 {
            m: [
                a.x * b.x, a.x * b.y, a.x * b.z,
                a.y * b.x, a.y * b.y, a.y * b.z,
                a.z * b.x, a.z * b.y, a.z * b.z,
            ],
        }
    }

    pub fn transpose(self) -> Self {
        let m = self.m;
        Mat3 { m: [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]] }
    }

    pub fn det(self) -> f64 {
        let m = self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn mul_vec(self, v: Vec3) -> Vec3 {
        let m = self.m;
        Vec3::new(
            m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z,
        )
    }

    pub fn mul_mat(self, o: Mat3) -> Mat3 {
        let a = self.m;
        let b = o.m;
        let mut m = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                m[3 * i + j] =
                    a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
            }
        }
        Mat3 { m }
    }
}

impl std::ops::Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut m = self.m;
        for (v, o) in m.iter_mut().zip(o.m) {
            *v += o;
        }
        Mat3 { m }
    }
}

impl std::ops::Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        let mut m = self.m;
        for (v, o) in m.iter_mut().zip(o.m) {
            *v -= o;
        }
        Mat3 { m }
    }
}

impl std::ops::Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        let mut m = self.m;
        for v in &mut m {
            *v *= s;
        }
        Mat3 { m }
    }
}

/// Coefficients `(A, B)` of the rotation expansion
/// `R(w) = I + A [w]x + B [w]x^2` as smooth functions of `s = |w|^2`.
///
/// `A = sin(t)/t` and `B = (1 - cos(t))/t^2` with `t = sqrt(s)`; both are even
/// in `t`, so they are analytic in `s` and admit a clean Taylor form near 0.
pub fn rotation_coeffs(s: f64) -> (f64, f64) {
    if s < SMALL_ANGLE * SMALL_ANGLE {
        // A = 1 - s/6 + s^2/120, B = 1/2 - s/24 + s^2/720
        (1.0 - s / 6.0 + s * s / 120.0, 0.5 - s / 24.0 + s * s / 720.0)
    } else {
        let t = s.sqrt();
        ((t.sin()) / t, (1.0 - t.cos()) / s)
    }
}

/// Derivatives `(dA/ds, dB/ds)` of [`rotation_coeffs`].
///
/// The Taylor branch extends further than the value branch (1e-4 vs 1e-18):
/// the closed forms lose all their significant digits to cancellation well
/// before the values do, while both branches agree to ~1e-8 at the switch.
pub fn rotation_coeff_derivs(s: f64) -> (f64, f64) {
    if s < 1e-4 {
        (
            -1.0 / 6.0 + s / 60.0 - s * s / 2520.0,
            -1.0 / 24.0 + s / 360.0 - s * s / 13440.0,
        )
    } else {
        let t = s.sqrt();
        let da = (t * t.cos() - t.sin()) / (2.0 * t * t * t);
        let db = (t * t.sin() - 2.0 * (1.0 - t.cos())) / (2.0 * s * s);
        (da, db)
    }
}

/// Skew-symmetric cross-product matrix `[w]x` with `[w]x v = w x v`.
pub fn skew(w: Vec3) -> Mat3 {
    Mat3 { m: [0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0] }
}

/// Rotation about the axis `omega/|omega|` by the angle `|omega|`.
///
/// Returns the identity when `omega` is zero; small angles use the Taylor
/// form of the expansion coefficients, so there is no division by a
/// near-zero norm anywhere.
pub fn rodrigues_rotation(omega: Vec3) -> Mat3 {
    let s = omega.norm_squared();
    let (a, b) = rotation_coeffs(s);
    let k = skew(omega);
    Mat3::IDENTITY + k * a + k.mul_mat(k) * b
}

/// Apply `rodrigues_rotation(omega)` to `v` without forming the matrix.
pub fn rotate(omega: Vec3, v: Vec3) -> Vec3 {
    let s = omega.norm_squared();
    let (a, b) = rotation_coeffs(s);
    let wv = cross(omega, v);
    let wwv = cross(omega, wv);
    v + wv * a + wwv * b
}

/// Component of `f` orthogonal to the unit vector `e`: `(I - e e^T) f`.
///
/// Rejects a non-unit `e` (tolerance 1e-9 on the norm); that always means a
/// caller bug rather than bad data.
pub fn project_perp(e: Vec3, f: Vec3) -> Result<Vec3, GeomError> {
    let n = e.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(GeomError::NonUnitVector { norm: n });
    }
    Ok(f - e * e.dot(f))
}

/// Solve `A x = b` for a well-conditioned 3x3 system via the cofactor
/// inverse. Errors out when `|det A| < 1e-14`.
pub fn solve3(a: Mat3, b: Vec3) -> Result<Vec3, GeomError> {
    let m = a.m;
    let c00 = m[4] * m[8] - m[5] * m[7];
    let c01 = m[5] * m[6] - m[3] * m[8];
    let c02 = m[3] * m[7] - m[4] * m[6];
    let det = m[0] * c00 + m[1] * c01 + m[2] * c02;
    if det.abs() < SINGULAR_DET {
        return Err(GeomError::SingularMatrix { det });
    }
    let c10 = m[2] * m[7] - m[1] * m[8];
    let c11 = m[0] * m[8] - m[2] * m[6];
    let c12 = m[1] * m[6] - m[0] * m[7];
    let c20 = m[1] * m[5] - m[2] * m[4];
    let c21 = m[2] * m[3] - m[0] * m[5];
    let c22 = m[0] * m[4] - m[1] * m[3];
    Ok(Vec3::new(
        (c00 * b.x + c10 * b.y + c20 * b.z) / det,
        (c01 * b.x + c11 * b.y + c21 * b.z) / det,
        (c02 * b.x + c12 * b.y + c22 * b.z) / det,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn assert_vec_close(a: Vec3, b: Vec3, tol: f64) {
        assert_close(a.x, b.x, tol);
        assert_close(a.y, b.y, tol);
        assert_close(a.z, b.z, tol);
    }

    #[test]
    fn cross_basis_identity() {
        assert_eq!(
            cross(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
            Vec3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn cross_self_vanishes() {
        let a = Vec3::new(0.3, -1.2, 2.5);
        assert_eq!(cross(a, a), Vec3::ZERO);
    }

    #[test]
    fn cross_hand_expansion() {
        // det formula expanded by hand for (2,3,4) x (5,6,7)
        assert_eq!(
            cross(Vec3::new(2.0, 3.0, 4.0), Vec3::new(5.0, 6.0, 7.0)),
            Vec3::new(-3.0, 6.0, -3.0)
        );
    }

    #[test]
    fn rodrigues_zero_angle_is_identity() {
        assert_eq!(rodrigues_rotation(Vec3::ZERO), Mat3::IDENTITY);
    }

    #[test]
    fn rodrigues_quarter_turn_about_x() {
        let r = rodrigues_rotation(Vec3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        assert_vec_close(r.mul_vec(Vec3::new(0.0, 1.0, 0.0)), Vec3::new(0.0, 0.0, 1.0), 1e-15);
    }

    #[test]
    fn rotate_matches_matrix_path() {
        let w = Vec3::new(0.4, -0.9, 1.3);
        let v = Vec3::new(-2.0, 0.5, 0.7);
        assert_vec_close(rotate(w, v), rodrigues_rotation(w).mul_vec(v), 1e-14);
    }

    #[test]
    fn project_perp_axis_aligned() {
        let out = project_perp(Vec3::new(1.0, 0.0, 0.0), Vec3::new(3.0, 4.0, 5.0)).unwrap();
        assert_eq!(out, Vec3::new(0.0, 4.0, 5.0));
    }

    #[test]
    fn project_perp_parallel_component_removed() {
        let e = Vec3::new(0.0, 0.0, 1.0);
        let out = project_perp(e, e * 7.5).unwrap();
        assert_vec_close(out, Vec3::ZERO, 1e-15);
    }

    #[test]
    fn project_perp_rejects_non_unit() {
        let err = project_perp(Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)).unwrap_err();
        assert!(matches!(err, GeomError::NonUnitVector { .. }));
    }

    #[test]
    fn solve3_identity_system() {
        let x = solve3(Mat3::IDENTITY, Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(x, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn solve3_diagonal_case() {
        // diag(2, 2, 1) is the hinge matrix for orthogonal unit arms
        let a = Mat3::diagonal(Vec3::new(2.0, 2.0, 1.0));
        let x = solve3(a, Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert_eq!(x, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn solve3_rejects_singular() {
        let a = Mat3::from_rows(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(2.0, 4.0, 6.0),
            Vec3::new(0.0, 1.0, 1.0),
        );
        assert!(matches!(solve3(a, Vec3::new(1.0, 1.0, 1.0)), Err(GeomError::SingularMatrix { .. })));
    }

    #[test]
    fn rotation_coeff_derivs_match_finite_differences() {
        for &s in &[1e-2f64, 0.1, 0.5, 1.0, 4.0, 9.0] {
            let h = s * 1e-4;
            let (ap, bp) = rotation_coeffs(s + h);
            let (am, bm) = rotation_coeffs(s - h);
            let (da, db) = rotation_coeff_derivs(s);
            assert_close(da, (ap - am) / (2.0 * h), 1e-6 * (1.0 + da.abs()));
            assert_close(db, (bp - bm) / (2.0 * h), 1e-6 * (1.0 + db.abs()));
        }
    }

    #[test]
    fn rotation_coeff_deriv_branches_agree_at_switchover() {
        let s = 1e-4f64;
        let t = s.sqrt();
        let (da_taylor, db_taylor) = rotation_coeff_derivs(s * (1.0 - 1e-12));
        let da_exact = (t * t.cos() - t.sin()) / (2.0 * t * t * t);
        let db_exact = (t * t.sin() - 2.0 * (1.0 - t.cos())) / (2.0 * s * s);
        assert_close(da_exact, da_taylor, 1e-7);
        assert_close(db_exact, db_taylor, 1e-7);
    }

    #[test]
    fn rodrigues_stays_orthogonal_at_tiny_angles() {
        for &t in &[1e-12f64, 9.9e-10, 1e-9, 1.1e-9, 3e-8, 1e-5] {
            let r = rodrigues_rotation(Vec3::new(t * 0.6, -t * 0.48, t * 0.64));
            let rtr = r.transpose().mul_mat(r);
            for i in 0..9 {
                assert_close(rtr.m[i], Mat3::IDENTITY.m[i], 1e-12);
            }
            assert_close(r.det(), 1.0, 1e-12);
        }
    }

    fn arb_vec3(scale: f64) -> impl Strategy<Value = Vec3> {
        (
            prop::num::f64::NORMAL,
            prop::num::f64::NORMAL,
            prop::num::f64::NORMAL,
        )
            .prop_map(move |(a, b, c)| {
                Vec3::new(a.sin() * scale, b.sin() * scale, c.sin() * scale)
            })
    }

    proptest! {
        #[test]
        fn rodrigues_is_orthogonal_with_unit_det(w in arb_vec3(3.0)) {
            let r = rodrigues_rotation(w);
            let rtr = r.transpose().mul_mat(r);
            for i in 0..9 {
                assert_close(rtr.m[i], Mat3::IDENTITY.m[i], 1e-12);
            }
            assert_close(r.det(), 1.0, 1e-12);
        }

        #[test]
        fn rodrigues_preserves_norms(w in arb_vec3(3.0), v in arb_vec3(5.0)) {
            let rv = rodrigues_rotation(w).mul_vec(v);
            assert_close(rv.norm(), v.norm(), 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn project_perp_is_orthogonal_to_axis(raw in arb_vec3(2.0), f in arb_vec3(5.0)) {
            prop_assume!(raw.norm() > 1e-3);
            let e = raw.normalized().unwrap();
            let out = project_perp(e, f).unwrap();
            assert_close(out.dot(e), 0.0, 1e-12 * (1.0 + f.norm()));
        }

        #[test]
        fn solve3_residual_bound_on_spd(c0 in arb_vec3(1.0), c1 in arb_vec3(1.0), c2 in arb_vec3(1.0), b in arb_vec3(4.0)) {
            // M^T M + 0.1 I is symmetric positive definite by construction
            let m = Mat3::from_rows(c0, c1, c2);
            let spd = m.transpose().mul_mat(m) + Mat3::IDENTITY * 0.1;
            let x = solve3(spd, b).unwrap();
            let residual = spd.mul_vec(x) - b;
            prop_assert!(residual.norm() <= 1e-10 * (1.0 + b.norm()));
        }
    }
}
