//! Rotation-matrix algebra and forward kinematics over a joint tree.
//!
//! Rotations are stored as row-major 3×3 arrays. A [`RotationMatrix`] built
//! through [`RotationMatrix::new`] is guaranteed proper and orthonormal to
//! within [`ROTATION_TOLERANCE`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

/// Tolerance on `‖mᵀm − I‖_max` and `|det m − 1|` for validated rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

pub const NUM_JOINTS: usize = 24;

/// SMPL joint labels, index order.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "Pelvis",
    "L Hip",
    "R Hip",
    "Spine1",
    "L Knee",
    "R Knee",
    "Spine2",
    "L Ankle",
    "R Ankle",
    "Spine3",
    "L Foot",
    "R Foot",
    "Neck",
    "L Collar",
    "R Collar",
    "Head",
    "L Shoulder",
    "R Shoulder",
    "L Elbow",
    "R Elbow",
    "L Wrist",
    "R Wrist",
    "L Hand",
    "R Hand",
];

/// Parent of each SMPL joint; `-1` marks the root.
pub const SMPL_PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// Approximate neutral SMPL rest-pose joint locations (meters, y up).
/// Bone offsets are differences between a joint and its parent.
const SMPL_REST_JOINTS: [[f64; 3]; NUM_JOINTS] = [
    [-0.0018, -0.2233, 0.0282],
    [0.0695, -0.3141, 0.0239],
    [-0.0678, -0.3147, 0.0215],
    [-0.0043, -0.1144, 0.0015],
    [0.1022, -0.6890, 0.0169],
    [-0.1076, -0.6965, 0.0150],
    [0.0016, 0.0205, 0.0026],
    [0.0884, -1.0879, -0.0266],
    [-0.0919, -1.0948, -0.0273],
    [0.0023, 0.0738, 0.0280],
    [0.1148, -1.1437, 0.0925],
    [-0.1174, -1.1430, 0.0961],
    [-0.0002, 0.2876, -0.0149],
    [0.0814, 0.1959, -0.0060],
    [-0.0791, 0.1924, -0.0109],
    [0.0050, 0.3526, 0.0365],
    [0.1722, 0.2259, -0.0190],
    [-0.1752, 0.2251, -0.0197],
    [0.4320, 0.2132, -0.0424],
    [-0.4289, 0.2110, -0.0411],
    [0.6813, 0.2222, -0.0435],
    [-0.6842, 0.2196, -0.0469],
    [0.7653, 0.2141, -0.0585],
    [-0.7688, 0.2132, -0.0568],
];

pub fn joint_index(name: &str) -> Option<usize> {
    JOINT_NAMES.iter().position(|n| *n == name)
}

#[inline]
pub fn mat3_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
pub fn mat3_transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[j][i] = a[i][j];
        }
    }
    out
}

#[inline]
pub fn mat3_apply<T: Real>(a: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

#[inline]
pub fn mat3_det<T: Real>(a: &Mat3<T>) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

#[inline]
pub fn vec3_add<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn vec3_norm<T: Real>(a: &Vec3<T>) -> T {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// `‖mᵀm − I‖_max`.
pub fn orthonormality_error<T: Real>(m: &Mat3<T>) -> T {
    let mtm = mat3_mul(&mat3_transpose(m), m);
    let mut worst = T::zero();
    for (i, row) in mtm.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((*v - target).abs());
        }
    }
    worst
}

/// A proper orthonormal 3×3 matrix (row-major).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct RotationMatrix<T> {
    m: Mat3<T>,
}

impl<T: Real> RotationMatrix<T> {
    /// Validates `m` against the orthonormality and determinant bounds.
    pub fn new(m: Mat3<T>) -> Result<Self> {
        let tol = T::lit(ROTATION_TOLERANCE);
        let orth = orthonormality_error(&m);
        let det = mat3_det(&m);
        if !(orth <= tol) || !((det - T::one()).abs() <= tol) {
            return Err(Error::InvalidRotation {
                orth_err: orth.to_f64_lossy(),
                det: det.to_f64_lossy(),
            });
        }
        Ok(Self { m })
    }

    /// Wraps `m` without validation. Callers must guarantee it is a rotation.
    pub(crate) fn from_matrix_unchecked(m: Mat3<T>) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        let o = T::zero();
        let l = T::one();
        Self {
            m: [[l, o, o], [o, l, o], [o, o, l]],
        }
    }

    /// Builds a rotation from 9 row-major values.
    pub fn from_row_major(v: &[T]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::shape("rotation", 9, v.len()));
        }
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn matrix(&self) -> &Mat3<T> {
        &self.m
    }

    pub fn to_row_major(&self) -> [T; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: mat3_transpose(&self.m),
        }
    }

    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            m: mat3_mul(&self.m, &rhs.m),
        }
    }

    pub fn apply(&self, v: &Vec3<T>) -> Vec3<T> {
        mat3_apply(&self.m, v)
    }

    pub fn cast<U: Real>(&self) -> RotationMatrix<U> {
        let mut m = [[U::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = U::lit(self.m[i][j].to_f64_lossy());
            }
        }
        RotationMatrix { m }
    }
}

impl<T: Real> std::ops::Mul for RotationMatrix<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

/// Minimal rotation angle between `a` and `b`, in degrees, in `[0, 180]`.
///
/// Evaluated as `atan2(‖vee(aᵀb − baᵀ)‖/2, (tr(aᵀb) − 1)/2)`, which equals the
/// clamped `arccos((tr(aᵀb) − 1)/2)` but keeps full precision near 0° and 180°.
pub fn geodesic_angle_deg<T: Real>(a: &RotationMatrix<T>, b: &RotationMatrix<T>) -> T {
    let r = mat3_mul(&mat3_transpose(&a.m), &b.m);
    let two = T::lit(2.0);
    let cos = ((r[0][0] + r[1][1] + r[2][2] - T::one()) / two)
        .max(-T::one())
        .min(T::one());
    let axis = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let sin = vec3_norm(&axis) / two;
    sin.atan2(cos).to_degrees()
}

/// Rodrigues rotation of `angle_deg` degrees about the unit `axis`.
pub fn rot_axis_angle<T: Real>(axis: Vec3<T>, angle_deg: T) -> Result<RotationMatrix<T>> {
    let norm = vec3_norm(&axis);
    if !((norm - T::one()).abs() <= T::lit(1e-9).max(T::epsilon() * T::lit(4.0))) {
        return Err(Error::NonUnitAxis(norm.to_f64_lossy()));
    }
    Ok(RotationMatrix::from_matrix_unchecked(rodrigues(
        axis,
        angle_deg.to_radians(),
    )))
}

/// Rodrigues formula with no axis check; `axis` must already be unit length.
pub(crate) fn rodrigues<T: Real>(axis: Vec3<T>, angle_rad: T) -> Mat3<T> {
    let (s, c) = angle_rad.sin_cos();
    let t = T::one() - c;
    let [x, y, z] = axis;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

pub fn rot_x<T: Real>(deg: T) -> RotationMatrix<T> {
    RotationMatrix::from_matrix_unchecked(rodrigues(
        [T::one(), T::zero(), T::zero()],
        deg.to_radians(),
    ))
}

pub fn rot_y<T: Real>(deg: T) -> RotationMatrix<T> {
    RotationMatrix::from_matrix_unchecked(rodrigues(
        [T::zero(), T::one(), T::zero()],
        deg.to_radians(),
    ))
}

pub fn rot_z<T: Real>(deg: T) -> RotationMatrix<T> {
    RotationMatrix::from_matrix_unchecked(rodrigues(
        [T::zero(), T::zero(), T::one()],
        deg.to_radians(),
    ))
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3×3 matrix.
/// Returns eigenvalues and a matrix whose columns are the eigenvectors.
fn symmetric_eigen<T: Real>(a: &Mat3<T>) -> (Vec3<T>, Mat3<T>) {
    let mut a = *a;
    let o = T::zero();
    let l = T::one();
    let mut v = [[l, o, o], [o, l, o], [o, o, l]];
    for _sweep in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs() + off;
        if off <= T::epsilon() * T::epsilon() * scale || off == T::zero() {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            // A <- Jᵀ A J with J the Givens rotation in the (p, q) plane.
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Nearest rotation to `m` in Frobenius norm: the orthogonal polar factor,
/// with the least-significant singular direction flipped when `det m < 0`.
pub fn project_to_rotation<T: Real>(m: &Mat3<T>) -> Result<RotationMatrix<T>> {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite matrix entry".into()));
    }
    let fro = m
        .iter()
        .flatten()
        .fold(T::zero(), |acc, v| acc + *v * *v)
        .sqrt();
    let det = mat3_det(m);
    if fro == T::zero() || det.abs() <= T::lit(100.0) * T::epsilon() * fro * fro * fro {
        return Err(Error::Degenerate(format!(
            "rank-deficient matrix (det {:.3e}, frobenius {:.3e})",
            det.to_f64_lossy(),
            fro.to_f64_lossy()
        )));
    }
    let mtm = mat3_mul(&mat3_transpose(m), m);
    let (mut vals, mut vecs) = symmetric_eigen(&mtm);
    // Sort descending so the last singular value is the smallest.
    for i in 0..3 {
        for j in (i + 1)..3 {
            if vals[j] > vals[i] {
                vals.swap(i, j);
                for row in vecs.iter_mut() {
                    row.swap(i, j);
                }
            }
        }
    }
    let sign = if det < T::zero() { -T::one() } else { T::one() };
    let mut diag = [T::zero(); 3];
    for k in 0..3 {
        let s = vals[k].max(T::zero()).sqrt();
        if s == T::zero() {
            return Err(Error::Degenerate("zero singular value".into()));
        }
        diag[k] = T::one() / s;
    }
    diag[2] = diag[2] * sign;
    // inner = V · diag · Vᵀ
    let mut inner = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += vecs[i][k] * diag[k] * vecs[j][k];
            }
            inner[i][j] = acc;
        }
    }
    Ok(RotationMatrix::from_matrix_unchecked(mat3_mul(m, &inner)))
}

/// Kinematic tree: joint labels, parent links, and rest bone offsets
/// (offset of each joint in its parent's frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T> {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3<T>>,
}

impl<T: Real> Skeleton<T> {
    pub fn new(
        names: Vec<String>,
        parents: Vec<Option<usize>>,
        offsets: Vec<Vec3<T>>,
    ) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::Validation(
                "skeleton needs at least one joint".into(),
            ));
        }
        if names.len() != n || offsets.len() != n {
            return Err(Error::Validation(format!(
                "skeleton arrays disagree: {} names, {} parents, {} offsets",
                names.len(),
                n,
                offsets.len()
            )));
        }
        if parents[0].is_some() {
            return Err(Error::Validation("joint 0 must be the root".into()));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "joint {j} must have a parent with a smaller index, got {p:?}"
                    )))
                }
            }
        }
        Ok(Self {
            names,
            parents,
            offsets,
        })
    }

    /// The 24-joint SMPL tree with the bundled neutral rest offsets.
    pub fn smpl() -> Self {
        let parents: Vec<Option<usize>> = SMPL_PARENTS
            .iter()
            .map(|&p| usize::try_from(p).ok())
            .collect();
        let offsets = (0..NUM_JOINTS)
            .map(|j| match parents[j] {
                None => [T::zero(); 3],
                Some(p) => {
                    let c = SMPL_REST_JOINTS[j];
                    let q = SMPL_REST_JOINTS[p];
                    [
                        T::lit(c[0] - q[0]),
                        T::lit(c[1] - q[1]),
                        T::lit(c[2] - q[2]),
                    ]
                }
            })
            .collect();
        Self {
            names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            parents,
            offsets,
        }
    }

    /// Same tree with every bone offset scaled by `factor`.
    pub fn with_scaled_offsets(&self, factor: T) -> Self {
        let mut out = self.clone();
        for o in out.offsets.iter_mut() {
            *o = [o[0] * factor, o[1] * factor, o[2] * factor];
        }
        out
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn offsets(&self) -> &[Vec3<T>] {
        &self.offsets
    }
}

/// Local joint rotations of one frame, each relative to its parent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame<T> {
    pub local_rot: Vec<RotationMatrix<T>>,
}

impl<T: Real> PoseFrame<T> {
    pub fn identity(joints: usize) -> Self {
        Self {
            local_rot: vec![RotationMatrix::identity(); joints],
        }
    }

    /// Row-major flattening, 9 values per joint.
    pub fn flatten(&self) -> Vec<T> {
        self.local_rot
            .iter()
            .flat_map(|r| r.to_row_major())
            .collect()
    }

    pub fn from_flat(values: &[T]) -> Result<Self> {
        if values.len() % 9 != 0 {
            return Err(Error::shape("pose frame", "multiple of 9", values.len()));
        }
        let local_rot = values
            .chunks_exact(9)
            .map(RotationMatrix::from_row_major)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { local_rot })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence<T> {
    pub frames: Vec<PoseFrame<T>>,
    pub fps: T,
}

impl<T: Real> PoseSequence<T> {
    pub fn new(frames: Vec<PoseFrame<T>>, fps: T) -> Result<Self> {
        if !(fps > T::zero()) {
            return Err(Error::Validation(format!(
                "fps must be positive, got {fps}"
            )));
        }
        if let Some(first) = frames.first() {
            let n = first.local_rot.len();
            if frames.iter().any(|f| f.local_rot.len() != n) {
                return Err(Error::Validation("frames disagree on joint count".into()));
            }
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkResult<T> {
    pub global_rot: Vec<RotationMatrix<T>>,
    pub positions: Vec<Vec3<T>>,
}

/// Global rotations and joint positions for one frame. The root sits at the
/// origin.
pub fn forward_kinematics<T: Real>(pose: &PoseFrame<T>, skel: &Skeleton<T>) -> Result<FkResult<T>> {
    if pose.local_rot.len() != skel.len() {
        return Err(Error::shape(
            "forward_kinematics",
            skel.len(),
            pose.local_rot.len(),
        ));
    }
    let n = skel.len();
    let mut global_rot: Vec<RotationMatrix<T>> = Vec::with_capacity(n);
    let mut positions: Vec<Vec3<T>> = Vec::with_capacity(n);
    for j in 0..n {
        match skel.parents[j] {
            None => {
                global_rot.push(pose.local_rot[j]);
                positions.push([T::zero(); 3]);
            }
            Some(p) => {
                let g = global_rot[p].compose(&pose.local_rot[j]);
                let pos = vec3_add(&positions[p], &global_rot[p].apply(&skel.offsets[j]));
                global_rot.push(g);
                positions.push(pos);
            }
        }
    }
    Ok(FkResult {
        global_rot,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Vec3<f64> {
        loop {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = vec3_norm(&v);
            if n > 0.1 && n < 1.0 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    fn random_rot(rng: &mut impl Rng) -> RotationMatrix<f64> {
        let axis = random_unit(rng);
        rot_axis_angle(axis, rng.gen_range(0.0..180.0)).unwrap()
    }

    fn max_abs_diff(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((a[i][j] - b[i][j]).abs());
            }
        }
        d
    }

    #[test]
    fn geodesic_examples() {
        let i = RotationMatrix::<f64>::identity();
        assert_eq!(geodesic_angle_deg(&i, &i), 0.0);
        assert_abs_diff_eq!(geodesic_angle_deg(&i, &rot_x(30.0)), 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(
            geodesic_angle_deg(&rot_z(170.0), &rot_z(-170.0)),
            20.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(geodesic_angle_deg(&i, &rot_y(180.0)), 180.0, epsilon = 1e-9);
    }

    #[test]
    fn geodesic_is_symmetric_and_recovers_sweep_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r = random_rot(&mut rng);
            let u = random_unit(&mut rng);
            let theta: f64 = rng.gen_range(0.0..180.0);
            let b = r.compose(&rot_axis_angle(u, theta).unwrap());
            let ab = geodesic_angle_deg(&r, &b);
            let ba = geodesic_angle_deg(&b, &r);
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
            assert_abs_diff_eq!(ab, theta, epsilon = 1e-6);
        }
    }

    #[test]
    fn axis_angle_examples() {
        let x = [1.0, 0.0, 0.0];
        let z = [0.0, 0.0, 1.0];
        let r0 = rot_axis_angle(x, 0.0).unwrap();
        assert_eq!(r0, RotationMatrix::identity());
        let rz = rot_axis_angle(z, 90.0).unwrap();
        let moved = rz.apply(&[1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(moved[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moved[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moved[2], 0.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_unit(&mut rng);
            let r = rot_axis_angle(a, rng.gen_range(-360.0..360.0)).unwrap();
            let fixed = r.apply(&a);
            for k in 0..3 {
                assert_abs_diff_eq!(fixed[k], a[k], epsilon = 1e-12);
            }
            assert!(RotationMatrix::new(*r.matrix()).is_ok());
        }
    }

    #[test]
    fn non_unit_axis_is_rejected() {
        assert!(matches!(
            rot_axis_angle([1.0, 1.0, 0.0], 10.0),
            Err(Error::NonUnitAxis(_))
        ));
    }

    #[test]
    fn invalid_rotation_is_rejected() {
        let m = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(RotationMatrix::new(m).is_err());
        let reflection = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(RotationMatrix::new(reflection).is_err());
    }

    #[test]
    fn projection_fixed_point_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let r = random_rot(&mut rng);
            let p = project_to_rotation(r.matrix()).unwrap();
            assert!(max_abs_diff(p.matrix(), r.matrix()) < 1e-9);
        }
        let two_i = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        let p = project_to_rotation(&two_i).unwrap();
        assert!(max_abs_diff(p.matrix(), RotationMatrix::identity().matrix()) < 1e-12);
    }

    #[test]
    fn projection_of_reflection_is_proper() {
        let m = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let p = project_to_rotation(&m).unwrap();
        assert!(RotationMatrix::new(*p.matrix()).is_ok());
    }

    #[test]
    fn projection_rejects_rank_deficient() {
        let m = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 0.0]];
        assert!(matches!(project_to_rotation(&m), Err(Error::Degenerate(_))));
        assert!(matches!(
            project_to_rotation(&[[0.0; 3]; 3]),
            Err(Error::Degenerate(_))
        ));
    }

    /// Brute-force nearest rotation: random restarts followed by shrinking
    /// coordinate search over a rotation-vector parametrization.
    fn brute_force_nearest(m: &Mat3<f64>, rng: &mut impl Rng) -> Mat3<f64> {
        let cost = |w: &Vec3<f64>| {
            let angle = vec3_norm(w);
            let r = if angle < 1e-15 {
                RotationMatrix::identity()
            } else {
                RotationMatrix::from_matrix_unchecked(rodrigues(
                    [w[0] / angle, w[1] / angle, w[2] / angle],
                    angle,
                ))
            };
            let mut c = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    c += (r.matrix()[i][j] - m[i][j]).powi(2);
                }
            }
            (c, r)
        };
        let mut best_w = [0.0; 3];
        let mut best = cost(&best_w).0;
        for _ in 0..200 {
            let w = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            let c = cost(&w).0;
            if c < best {
                best = c;
                best_w = w;
            }
        }
        let mut step = 0.5;
        while step > 1e-12 {
            let mut improved = false;
            for k in 0..3 {
                for sgn in [-1.0, 1.0] {
                    let mut w = best_w;
                    w[k] += sgn * step;
                    let c = cost(&w).0;
                    if c < best {
                        best = c;
                        best_w = w;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        *cost(&best_w).1.matrix()
    }

    #[test]
    fn projection_of_noisy_rotation_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            let r = random_rot(&mut rng);
            let mut m = *r.matrix();
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v += rng.gen_range(-0.05..0.05);
                }
            }
            let p = project_to_rotation(&m).unwrap();
            let oracle = brute_force_nearest(&m, &mut rng);
            assert!(max_abs_diff(p.matrix(), &oracle) < 1e-5);
            // Within O(noise) of the clean rotation.
            assert!(geodesic_angle_deg(&p, &r) < 10.0);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let mut m = [[0.0; 3]; 3];
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let Ok(p) = project_to_rotation(&m) else {
                continue;
            };
            let pp = project_to_rotation(p.matrix()).unwrap();
            assert!(max_abs_diff(p.matrix(), pp.matrix()) < 1e-9);
            assert!(RotationMatrix::new(*p.matrix()).is_ok());
        }
    }

    #[test]
    fn smpl_skeleton_is_well_formed() {
        let s = Skeleton::<f64>::smpl();
        assert_eq!(s.len(), 24);
        assert_eq!(s.names()[0], "Pelvis");
        assert_eq!(s.names()[23], "R Hand");
        assert_eq!(s.parents()[0], None);
        for j in 1..24 {
            assert!(s.parents()[j].unwrap() < j);
        }
        assert_eq!(joint_index("Spine3"), Some(9));
    }

    #[test]
    fn skeleton_rejects_bad_parents() {
        let names = vec!["a".to_string(), "b".to_string()];
        let offsets = vec![[0.0; 3]; 2];
        assert!(Skeleton::new(names.clone(), vec![None, Some(1)], offsets.clone()).is_err());
        assert!(Skeleton::new(names, vec![Some(0), None], offsets).is_err());
    }

    #[test]
    fn fk_identity_pose_sums_offsets() {
        let s = Skeleton::<f64>::smpl();
        let fk = forward_kinematics(&PoseFrame::identity(24), &s).unwrap();
        for j in 0..24 {
            let mut want = [0.0; 3];
            let mut k = j;
            while let Some(p) = s.parents()[k] {
                want = vec3_add(&want, &s.offsets()[k]);
                k = p;
            }
            for c in 0..3 {
                assert_abs_diff_eq!(fk.positions[j][c], want[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fk_two_joint_chain() {
        let s = Skeleton::new(
            vec!["root".into(), "child".into()],
            vec![None, Some(0)],
            vec![[0.0; 3], [0.0, 1.0, 0.0]],
        )
        .unwrap();
        let pose = PoseFrame {
            local_rot: vec![rot_z(90.0), RotationMatrix::identity()],
        };
        let fk = forward_kinematics(&pose, &s).unwrap();
        assert_abs_diff_eq!(fk.positions[1][0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fk.positions[1][1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fk.positions[1][2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fk_root_prerotation_is_rigid() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let s = Skeleton::<f64>::smpl();
        let pose = PoseFrame {
            local_rot: (0..24).map(|_| random_rot(&mut rng)).collect(),
        };
        let r0 = random_rot(&mut rng);
        let mut rotated = pose.clone();
        rotated.local_rot[0] = r0.compose(&pose.local_rot[0]);
        let a = forward_kinematics(&pose, &s).unwrap();
        let b = forward_kinematics(&rotated, &s).unwrap();
        for j in 0..24 {
            let want = r0.apply(&a.positions[j]);
            for c in 0..3 {
                assert_abs_diff_eq!(b.positions[j][c], want[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fk_rejects_wrong_joint_count() {
        let s = Skeleton::<f64>::smpl();
        assert!(forward_kinematics(&PoseFrame::identity(3), &s).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let a = rot_x(10.0f32);
        let b = rot_x(25.0f32);
        assert!((geodesic_angle_deg(&a, &b) - 15.0).abs() < 1e-3);
        let fk = forward_kinematics(&PoseFrame::<f32>::identity(24), &Skeleton::smpl()).unwrap();
        assert_eq!(fk.positions.len(), 24);
    }
}
