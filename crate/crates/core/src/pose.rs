//! 6-DoF poses: translation in centimetres plus a unit quaternion `(w, x, y, z)`.

/// Quaternion stored as `[w, x, y, z]`.
pub type Quaternion = [f64; 4];

pub const IDENTITY_ROTATION: Quaternion = [1.0, 0.0, 0.0, 0.0];

/// Camera pose. Rotation is always unit-norm with `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: [f64; 3],
    pub rotation: Quaternion,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Normalizes and sign-canonicalizes `rotation`.
    pub fn new(translation: [f64; 3], rotation: Quaternion) -> Self {
        Self {
            translation,
            rotation: canonical_quaternion(rotation),
        }
    }

    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: IDENTITY_ROTATION,
        }
    }

    /// Splits a raw regressor output: translation first, quaternion last.
    pub fn from_raw(raw: &[f64]) -> Self {
        assert_eq!(raw.len(), 7, "raw pose must have 7 values");
        Self::new([raw[0], raw[1], raw[2]], [raw[3], raw[4], raw[5], raw[6]])
    }

    /// Like [`Pose::from_raw`] but keeps an already canonical quaternion
    /// bit-for-bit, so printed poses parse back exactly.
    pub fn from_stored(raw: &[f64]) -> Self {
        assert_eq!(raw.len(), 7, "raw pose must have 7 values");
        let q = [raw[3], raw[4], raw[5], raw[6]];
        let rotation = if q[0] >= 0.0 && (quaternion_norm(q) - 1.0).abs() < 1e-9 {
            q
        } else {
            canonical_quaternion(q)
        };
        Self {
            translation: [raw[0], raw[1], raw[2]],
            rotation,
        }
    }

    pub fn to_raw(&self) -> [f64; 7] {
        let [tx, ty, tz] = self.translation;
        let [w, x, y, z] = self.rotation;
        [tx, ty, tz, w, x, y, z]
    }

    pub fn from_euler_xyz(translation: [f64; 3], angles: [f64; 3]) -> Self {
        Self::new(translation, quaternion_from_euler_xyz(angles))
    }

    /// Intrinsic XYZ Euler angles in radians.
    pub fn euler_xyz(&self) -> [f64; 3] {
        euler_xyz_from_quaternion(self.rotation)
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        rotation_matrix(self.rotation)
    }
}

pub fn quaternion_norm(q: Quaternion) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Unit quaternion with `w >= 0`. When `w == 0` the first non-zero vector
/// component is made positive. A zero quaternion maps to the identity.
pub fn canonical_quaternion(q: Quaternion) -> Quaternion {
    let n = quaternion_norm(q);
    if !n.is_finite() || n <= 0.0 {
        return IDENTITY_ROTATION;
    }
    let mut u = q.map(|v| v / n);
    let lead = u.iter().copied().find(|&v| v != 0.0).unwrap_or(1.0);
    if u[0] < 0.0 || (u[0] == 0.0 && lead < 0.0) {
        u = u.map(|v| -v);
    }
    u
}

pub fn quaternion_mul(a: Quaternion, b: Quaternion) -> Quaternion {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

fn axis_angle(axis: usize, angle: f64) -> Quaternion {
    let (s, c) = (angle / 2.0).sin_cos();
    let mut q = [c, 0.0, 0.0, 0.0];
    q[axis + 1] = s;
    q
}

/// `R = Rx(a) * Ry(b) * Rz(c)`.
pub fn quaternion_from_euler_xyz([a, b, c]: [f64; 3]) -> Quaternion {
    quaternion_mul(
        quaternion_mul(axis_angle(0, a), axis_angle(1, b)),
        axis_angle(2, c),
    )
}

pub fn rotation_matrix(q: Quaternion) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Inverse of [`quaternion_from_euler_xyz`]; the middle angle lies in `[-pi/2, pi/2]`.
pub fn euler_xyz_from_quaternion(q: Quaternion) -> [f64; 3] {
    let r = rotation_matrix(canonical_quaternion(q));
    let b = r[0][2].clamp(-1.0, 1.0).asin();
    let a = (-r[1][2]).atan2(r[2][2]);
    let c = (-r[0][1]).atan2(r[0][0]);
    [a, b, c]
}

pub fn rotate(q: Quaternion, v: [f64; 3]) -> [f64; 3] {
    let r = rotation_matrix(q);
    [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
}
