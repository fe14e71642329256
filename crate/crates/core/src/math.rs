use nalgebra::{Matrix3, Vector3};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cosine similarity with the convention that a zero vector scores 0.
pub fn cosine<A, B>(a: A, b: B) -> f64
where
    A: IntoIterator,
    B: IntoIterator,
    A::Item: Into<f64>,
    B::Item: Into<f64>,
{
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.into_iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn normalize_quat(q: [f64; 4]) -> ([f64; 4], f64) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion it was built from.
pub fn quat_matrix_backward(q_raw: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let ([w, x, y, z], n) = normalize_quat(q_raw);
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)) - 4.0 * x * (g(1, 1) + g(2, 2));
    let dy = 2.0 * (x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)) - 4.0 * y * (g(0, 0) + g(2, 2));
    let dz = 2.0 * (-w * g(0, 1) + x * g(0, 2) + w * g(1, 0) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1)) - 4.0 * z * (g(0, 0) + g(1, 1));
    let dq = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let proj: f64 = dq.iter().zip(qn).map(|(a, b)| a * b).sum();
    [(dq[0] - qn[0] * proj) / n, (dq[1] - qn[1] * proj) / n, (dq[2] - qn[2] * proj) / n, (dq[3] - qn[3] * proj) / n]
}

#[inline]
pub fn vec3(a: [f32; 3]) -> Vector3<f64> {
    Vector3::new(a[0] as f64, a[1] as f64, a[2] as f64)
}

/// Orthonormality defect `max |R Rᵀ - I|`.
pub fn orthonormal_defect(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).abs().max()
}
