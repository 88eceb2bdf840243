//! Small fixed-size and row-major dense helpers shared by the other modules.

use alloc::vec;
use alloc::vec::Vec;

pub type Vec3 = [f64; 3];
/// Row-major 3x3 matrix, `m[row][col]`.
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    libm::sqrt(dot3(a, a))
}

/// Unit vector along `a`, or `None` when the norm is below `tol`.
pub fn normalize3(a: Vec3, tol: f64) -> Option<Vec3> {
    let n = norm3(a);
    if n < tol {
        None
    } else {
        Some(scale3(a, 1.0 / n))
    }
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat3_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_vec(a: &Mat3, v: Vec3) -> Vec3 {
    [dot3(a[0], v), dot3(a[1], v), dot3(a[2], v)]
}

pub fn det3(a: &Mat3) -> f64 {
    dot3(a[0], cross3(a[1], a[2]))
}

/// Matrix whose columns are `x`, `y`, `z`.
pub fn from_columns(x: Vec3, y: Vec3, z: Vec3) -> Mat3 {
    [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]]
}

/// Rodrigues' formula: rotation by `|w|` radians about `w / |w|`.
pub fn axis_angle_to_matrix(w: Vec3) -> Mat3 {
    let theta = norm3(w);
    if theta < 1e-12 {
        // first-order expansion, exact to rounding at these magnitudes
        return [[1.0, -w[2], w[1]], [w[2], 1.0, -w[0]], [-w[1], w[0], 1.0]];
    }
    let a = scale3(w, 1.0 / theta);
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let t = 1.0 - c;
    [
        [c + t * a[0] * a[0], t * a[0] * a[1] - s * a[2], t * a[0] * a[2] + s * a[1]],
        [t * a[1] * a[0] + s * a[2], c + t * a[1] * a[1], t * a[1] * a[2] - s * a[0]],
        [t * a[2] * a[0] - s * a[1], t * a[2] * a[1] + s * a[0], c + t * a[2] * a[2]],
    ]
}

/// Inverse of [`axis_angle_to_matrix`] for a proper rotation, with the angle in `[0, π]`.
///
/// Uses the trace and antisymmetric part away from π. Near π the antisymmetric
/// part vanishes, so the axis comes from the dominant column of the symmetric
/// part `(R + Rᵀ - 2cosθ I) / (2(1 - cosθ)) = a aᵀ`.
pub fn matrix_to_axis_angle(r: &Mat3) -> Vec3 {
    let trace = r[0][0] + r[1][1] + r[2][2];
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = libm::acos(cos_theta);
    let vee = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let sin_theta = libm::sin(theta);
    if theta < 1e-6 {
        return scale3(vee, 0.5);
    }
    if sin_theta > 1e-4 {
        return scale3(vee, theta / (2.0 * sin_theta));
    }
    let denom = 2.0 * (1.0 - cos_theta);
    let mut outer = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 2.0 * cos_theta } else { 0.0 };
            outer[i][j] = (r[i][j] + r[j][i] - delta) / denom;
        }
    }
    let k = (0..3).max_by(|&a, &b| outer[a][a].total_cmp(&outer[b][b])).unwrap_or(0);
    let col = [outer[0][k], outer[1][k], outer[2][k]];
    let mut axis = normalize3(col, 0.0).unwrap_or([1.0, 0.0, 0.0]);
    if dot3(axis, vee) < 0.0 {
        axis = scale3(axis, -1.0);
    }
    scale3(axis, theta)
}

/// `out = A v` for a row-major `n x n` matrix.
pub fn matvec(a: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        out[i] = a[i * n..(i + 1) * n].iter().zip(v).map(|(x, y)| x * y).sum();
    }
}

/// `vᵀ A v` for a row-major `n x n` matrix.
pub fn quadratic_form(a: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let row: f64 = a[i * n..(i + 1) * n].iter().zip(v).map(|(x, y)| x * y).sum();
        acc += v[i] * row;
    }
    acc
}

/// Lower Cholesky factor of a symmetric positive-definite row-major matrix.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i * n + i] = libm::sqrt(d);
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower factor `l`.
pub fn cholesky_solve(l: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    x
}
