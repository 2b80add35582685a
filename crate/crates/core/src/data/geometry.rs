//! Euler angles (degrees) and rotation matrices, `R = Rz(roll)·Ry(yaw)·Rx(pitch)`.

use crate::codec::AngleTriple;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Mat3<T> = [[T; 3]; 3];

/// Matrices whose `|R[2][0]|` exceeds one by more than this are rejected
/// rather than clamped.
pub const DOMAIN_SLACK: f64 = 1e-6;
/// Yaw magnitude (degrees) at and beyond which the decomposition is refused.
pub const GIMBAL_LIMIT_DEG: f64 = 89.99;

pub fn euler_to_matrix<T: Scalar>(a: AngleTriple<T>) -> Mat3<T> {
    let (sp, cp) = a.pitch.to_radians().sin_cos();
    let (sy, cy) = a.yaw.to_radians().sin_cos();
    let (sr, cr) = a.roll.to_radians().sin_cos();
    [
        [cr * cy, cr * sy * sp - sr * cp, cr * sy * cp + sr * sp],
        [sr * cy, sr * sy * sp + cr * cp, sr * sy * cp - cr * sp],
        [-sy, cy * sp, cy * cp],
    ]
}

pub fn matrix_to_euler<T: Scalar>(r: &Mat3<T>) -> Result<AngleTriple<T>> {
    let s = -r[2][0];
    if s.abs() > T::one() + T::lit(DOMAIN_SLACK) || !s.is_finite() {
        return Err(Error::NumericalDomain(format!("|R[2][0]| = {} is not a sine", s.abs())));
    }
    let yaw = s.max(-T::one()).min(T::one()).asin().to_degrees();
    if yaw.abs() >= T::lit(GIMBAL_LIMIT_DEG) {
        return Err(Error::Convention(format!("yaw {yaw} is at gimbal lock; pitch and roll are not separable")));
    }
    let pitch = r[2][1].atan2(r[2][2]).to_degrees();
    let roll = r[1][0].atan2(r[0][0]).to_degrees();
    Ok(AngleTriple::new(pitch, yaw, roll))
}

pub fn mat_mul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose<T: Scalar>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j][i] = v;
        }
    }
    out
}

pub fn determinant<T: Scalar>(a: &Mat3<T>) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// `max |RᵀR − I|`.
pub fn orthonormality_error<T: Scalar>(r: &Mat3<T>) -> T {
    let g = mat_mul(&transpose(r), r);
    let mut worst = T::zero();
    for (i, row) in g.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let e = if i == j { v - T::one() } else { v };
            worst = worst.max(e.abs());
        }
    }
    worst
}

/// Nearest rotation by Gram-Schmidt on the rows.
pub fn orthonormalize<T: Scalar>(r: &Mat3<T>) -> Mat3<T> {
    let dot = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let unit = |a: [T; 3]| {
        let n = dot(&a, &a).sqrt();
        a.map(|v| v / n)
    };
    let x = unit(r[0]);
    let d = dot(&r[1], &x);
    let y = unit([r[1][0] - d * x[0], r[1][1] - d * x[1], r[1][2] - d * x[2]]);
    let z = [x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0]];
    [x, y, z]
}
