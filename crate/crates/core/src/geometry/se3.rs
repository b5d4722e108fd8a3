use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the exp/log maps switch to their series forms.
const SMALL_ANGLE: f64 = 1e-8;

/// Element of se(3): `(v, omega)` with the translational part first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn new(v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Twist(Vector6::new(v.x, v.y, v.z, omega.x, omega.y, omega.z))
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Twist(Vector6::from_column_slice(s))
    }

    pub fn translation_part(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn rotation_part(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> Twist {
        Twist(self.0 * s)
    }
}

#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rigid transform mapping world points into camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose after checking orthonormality and orientation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) || !translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::invalid(format!(
                "not a rigid transform (orthogonality error {ortho:e}, det {det})"
            )));
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

    pub fn from_quaternion(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Pose {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: t,
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn rotation_angle(&self) -> f64 {
        let (s, c) = sin_cos_of_rotation(&self.rotation);
        s.atan2(c)
    }

    /// Left perturbation `exp(eps) * self`.
    pub fn perturb(&self, eps: &Twist) -> Pose {
        se3_exp(eps).compose(self)
    }
}

fn sin_cos_of_rotation(r: &Matrix3<f64>) -> (f64, f64) {
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    (0.5 * v.norm(), 0.5 * (r.trace() - 1.0))
}

/// Closed-form exponential map (Rodrigues rotation and left Jacobian for translation).
pub fn se3_exp(xi: &Twist) -> Pose {
    let w = xi.rotation_part();
    let v = xi.translation_part();
    let theta = w.norm();
    let wx = hat(&w);
    let wx2 = wx * wx;
    let (a, b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        let half = (0.5 * theta).sin();
        (
            theta.sin() / theta,
            2.0 * half * half / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    let id = Matrix3::identity();
    Pose {
        rotation: id + wx * a + wx2 * b,
        translation: (id + wx * b + wx2 * c) * v,
    }
}

/// Logarithm map; fails when the rotation angle is within `1e-6` of pi.
pub fn se3_log(pose: &Pose) -> Result<Twist> {
    let r = &pose.rotation;
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let (s, c) = (0.5 * vee.norm(), 0.5 * (r.trace() - 1.0));
    let theta = s.atan2(c);
    if theta > std::f64::consts::PI - 1e-6 {
        return Err(Error::NearPiRotation { angle: theta });
    }
    let (half_over_sin, d) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 + t2 / 12.0, 1.0 / 12.0 + t2 / 720.0)
    } else {
        let half = 0.5 * theta;
        (
            theta / (2.0 * theta.sin()),
            (1.0 - half / half.tan()) / (theta * theta),
        )
    };
    let w = vee * half_over_sin;
    let wx = hat(&w);
    let v_inv = Matrix3::identity() - wx * 0.5 + wx * wx * d;
    Ok(Twist::new(v_inv * pose.translation, w))
}

/// Geodesic interpolation `exp(alpha * log(p_t * p_s^-1)) * p_s`.
pub fn interpolate_pose(p_t: &Pose, p_s: &Pose, alpha: f64) -> Result<Pose> {
    if alpha == 0.0 || p_t == p_s {
        return Ok(*p_s);
    }
    let delta = se3_log(&p_t.compose(&p_s.inverse()))?;
    Ok(se3_exp(&delta.scale(alpha)).compose(p_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn max_diff(a: &Pose, b: &Pose) -> f64 {
        (a.rotation - b.rotation)
            .amax()
            .max((a.translation - b.translation).amax())
    }

    fn random_twist(rng: &mut ChaCha8Rng, angle: f64) -> Twist {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let v = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        Twist::new(v, axis * angle)
    }

    fn to_mat4(p: &Pose) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
        m
    }

    fn from_mat4(m: &Matrix4<f64>) -> Pose {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    // Generic matrix exponential: scaling and squaring with a Taylor series.
    fn expm(a: &Matrix4<f64>) -> Matrix4<f64> {
        let norm = a.amax() * 4.0;
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
        let a = a / 2f64.powi(squarings as i32);
        let mut term = Matrix4::identity();
        let mut sum = Matrix4::identity();
        for k in 1..30 {
            term = term * a / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    // Generic matrix logarithm: Denman-Beavers square roots, then the Mercator series.
    fn logm(a: &Matrix4<f64>) -> Matrix4<f64> {
        let mut x = *a;
        let mut roots = 0;
        while (x - Matrix4::identity()).amax() > 1e-3 {
            let mut y = x;
            let mut z = Matrix4::identity();
            for _ in 0..60 {
                let yi = y.try_inverse().unwrap();
                let zi = z.try_inverse().unwrap();
                let yn = (y + zi) * 0.5;
                z = (z + yi) * 0.5;
                y = yn;
            }
            x = y;
            roots += 1;
        }
        let e = x - Matrix4::identity();
        let mut term = Matrix4::identity();
        let mut sum = Matrix4::zeros();
        for k in 1..40 {
            term *= e;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sum += term * (sign / k as f64);
        }
        sum * 2f64.powi(roots)
    }

    #[test]
    fn exp_zero_is_identity() {
        assert_eq!(se3_exp(&Twist::zero()), Pose::identity());
    }

    #[test]
    fn exp_pure_translation() {
        let p = se3_exp(&Twist::from_slice(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_half_turn_about_z() {
        let p = se3_exp(&Twist::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, PI]));
        // Rodrigues: R = I + sin(pi) K + (1 - cos(pi)) K^2 with K = hat(z).
        let k = hat(&Vector3::z());
        let expect = Matrix3::identity() + k * PI.sin() + k * k * (1.0 - PI.cos());
        assert!((p.rotation - expect).amax() < 1e-12);
        assert!((p.rotation - Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))).amax() < 1e-12);
        assert_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn log_identity_and_translation() {
        assert_eq!(se3_log(&Pose::identity()).unwrap(), Twist::zero());
        let t = se3_log(&Pose::from_translation(Vector3::new(0.3, -1.0, 2.0))).unwrap();
        assert_eq!(t.rotation_part(), Vector3::zeros());
        assert!((t.translation_part() - Vector3::new(0.3, -1.0, 2.0)).amax() < 1e-15);
    }

    #[test]
    fn log_rejects_half_turn() {
        let p = se3_exp(&Twist::from_slice(&[0.0, 0.0, 0.0, PI, 0.0, 0.0]));
        assert!(matches!(se3_log(&p), Err(Error::NearPiRotation { .. })));
    }

    #[test]
    fn roundtrip_at_angle_0_7() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = se3_exp(&random_twist(&mut rng, 0.7));
            let back = se3_exp(&se3_log(&p).unwrap());
            assert!(max_diff(&p, &back) < 1e-10);
        }
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for angle in [0.0, 1e-12, 5e-9, 2e-8, 1e-6, 1e-3] {
            let xi = random_twist(&mut rng, angle);
            let back = se3_log(&se3_exp(&xi)).unwrap();
            assert!((back.0 - xi.0).amax() < 1e-12, "angle {angle}");
        }
    }

    #[test]
    fn exp_matches_generic_matrix_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let angle = rng.random_range(0.0..3.0);
            let xi = random_twist(&mut rng, angle);
            let mut m = Matrix4::zeros();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.rotation_part()));
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.translation_part());
            assert!(max_diff(&se3_exp(&xi), &from_mat4(&expm(&m))) < 1e-10);
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = se3_exp(&random_twist(&mut rng, 0.5));
        let b = se3_exp(&random_twist(&mut rng, 1.1));
        assert_eq!(interpolate_pose(&a, &b, 0.0).unwrap(), b);
        assert!(max_diff(&interpolate_pose(&a, &b, 1.0).unwrap(), &a) < 1e-10);
        for alpha in [0.0, 0.2, 0.9] {
            assert_eq!(interpolate_pose(&a, &a, alpha).unwrap(), a);
        }
    }

    #[test]
    fn interpolation_of_pure_translation_is_linear() {
        let p = interpolate_pose(
            &Pose::from_translation(Vector3::new(2.0, 0.0, 0.0)),
            &Pose::identity(),
            0.5,
        )
        .unwrap();
        assert!((p.translation - Vector3::new(1.0, 0.0, 0.0)).amax() < 1e-15);
        assert!((p.rotation - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn interpolation_matches_generic_matrix_log_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let (ta, tb) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
            let a = se3_exp(&random_twist(&mut rng, ta));
            let b = se3_exp(&random_twist(&mut rng, tb));
            let rel = to_mat4(&a) * to_mat4(&b).try_inverse().unwrap();
            if se3_log(&from_mat4(&rel)).is_err() {
                continue;
            }
            let expect = expm(&(logm(&rel) * 0.3)) * to_mat4(&b);
            let got = interpolate_pose(&a, &b, 0.3).unwrap();
            assert!(max_diff(&got, &from_mat4(&expect)) < 1e-8);
        }
    }

    #[test]
    fn pose_validation() {
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        assert!(Pose::new(-Matrix3::identity(), Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).is_ok());
    }

    fn twist_strategy(max_angle: f64) -> impl Strategy<Value = Twist> {
        (
            proptest::array::uniform3(-3.0f64..3.0),
            proptest::array::uniform3(-1.0f64..1.0),
            0.0..max_angle,
        )
            .prop_filter("axis must be well defined", |(_, a, _)| a.iter().map(|v| v * v).sum::<f64>() > 1e-4)
            .prop_map(|(v, a, angle)| {
                let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                Twist::from_slice(&[v[0], v[1], v[2], a[0] / n * angle, a[1] / n * angle, a[2] / n * angle])
            })
    }

    proptest! {
        #[test]
        fn log_inverts_exp(xi in twist_strategy(std::f64::consts::PI - 1e-3)) {
            let back = se3_log(&se3_exp(&xi)).unwrap();
            prop_assert!((back.0 - xi.0).amax() < 1e-10);
        }

        #[test]
        fn compose_with_inverse_is_identity(xi in twist_strategy(3.0)) {
            let p = se3_exp(&xi);
            let id = p.compose(&p.inverse());
            prop_assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
            prop_assert!(id.translation.amax() < 1e-12);
        }

        #[test]
        fn interpolation_hits_both_ends(a in twist_strategy(1.5), b in twist_strategy(1.5)) {
            let (pa, pb) = (se3_exp(&a), se3_exp(&b));
            let end = interpolate_pose(&pb, &pa, 1.0).unwrap();
            prop_assert!((end.rotation - pb.rotation).amax() < 1e-10);
            prop_assert!((end.translation - pb.translation).amax() < 1e-10);
            prop_assert_eq!(interpolate_pose(&pb, &pa, 0.0).unwrap(), pa);
        }
    }
}
