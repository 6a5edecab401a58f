//! Small dense linear-algebra helpers shared by the kernel and solver code.

use nalgebra::{Matrix3, Matrix6};

use crate::error::{Error, Result};

/// Invert a 3×3 matrix by explicit adjugate. Near-singular input (|det|
/// below 1e-14 · ‖m‖³) raises an error instead of returning garbage;
/// `context`/`time` identify the offending factor in solver error messages.
pub fn invert3(m: &Matrix3<f64>, context: &str, time: f64) -> Result<Matrix3<f64>> {
    let det = m.determinant();
    let scale = m.norm();
    if det.abs() <= 1e-14 * scale * scale * scale || det == 0.0 {
        return Err(Error::Singular {
            context: context.to_string(),
            time,
        });
    }
    let c00 = m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)];
    let c01 = m[(1, 2)] * m[(2, 0)] - m[(1, 0)] * m[(2, 2)];
    let c02 = m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)];
    let c10 = m[(0, 2)] * m[(2, 1)] - m[(0, 1)] * m[(2, 2)];
    let c11 = m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)];
    let c12 = m[(0, 1)] * m[(2, 0)] - m[(0, 0)] * m[(2, 1)];
    let c20 = m[(0, 1)] * m[(1, 2)] - m[(0, 2)] * m[(1, 1)];
    let c21 = m[(0, 2)] * m[(1, 0)] - m[(0, 0)] * m[(1, 2)];
    let c22 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let inv_det = 1.0 / det;
    Ok(Matrix3::new(
        c00 * inv_det,
        c10 * inv_det,
        c20 * inv_det,
        c01 * inv_det,
        c11 * inv_det,
        c21 * inv_det,
        c02 * inv_det,
        c12 * inv_det,
        c22 * inv_det,
    ))
}

/// Matrix exponential (scaling-and-squaring Padé approximation).
pub fn expm3(m: &Matrix3<f64>) -> Matrix3<f64> {
    m.exp()
}

/// Compute the pair (e^{−L·M}, ∫₀^L e^{−v·M} dv) in one matrix exponential.
///
/// The generator M of the coupled position system is structurally singular
/// (its rows are linearly dependent for every parameter choice), so the
/// integral cannot be evaluated as M⁻¹(I − e^{−LM}). Instead use the block
/// identity
///
///   exp [ −L·M  L·I ] = [ e^{−LM}  ∫₀^L e^{−vM} dv ]
///       [   0    0  ]   [    0            I        ]
///
/// which stays exact for singular M and gives both factors at once.
pub fn expm_with_integral(m: &Matrix3<f64>, l: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let mut block = Matrix6::<f64>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            block[(i, j)] = -l * m[(i, j)];
        }
        block[(i, i + 3)] = l;
    }
    let e = block.exp();
    let mut u = Matrix3::zeros();
    let mut integral = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            u[(i, j)] = e[(i, j)];
            integral[(i, j)] = e[(i, j + 3)];
        }
    }
    (u, integral)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invert3_matches_known_inverse() {
        let m = Matrix3::new(2.0, 0.0, 1.0, 0.0, 3.0, 0.0, 1.0, 0.0, 1.0);
        let inv = invert3(&m, "test", 0.0).unwrap();
        let prod = m * inv;
        assert!((prod - Matrix3::identity()).norm() < 1e-14);
    }

    #[test]
    fn invert3_rejects_singular() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.5, 1.0, 1.5);
        assert!(invert3(&m, "test", 1.25).is_err());
    }

    #[test]
    fn expm_identity_generator() {
        let m = Matrix3::zeros();
        let (u, integral) = expm_with_integral(&m, 2.5);
        assert!((u - Matrix3::identity()).norm() < 1e-15);
        assert!((integral - 2.5 * Matrix3::<f64>::identity()).norm() < 1e-14);
    }

    #[test]
    fn expm_integral_matches_series_on_nilpotent() {
        // M nilpotent (M² = 0): e^{−LM} = I − LM and ∫₀^L e^{−vM}dv = LI − L²/2·M.
        let m = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let l = 1.75;
        let (u, integral) = expm_with_integral(&m, l);
        assert!((u - (Matrix3::identity() - l * m)).norm() < 1e-14);
        assert!((integral - (l * Matrix3::identity() - 0.5 * l * l * m)).norm() < 1e-14);
    }

    #[test]
    fn expm_integral_matches_quadrature() {
        // Dense non-normal M; compare against fine Simpson quadrature of e^{−vM}.
        let m = Matrix3::new(0.3, -1.2, 0.7, 0.4, 0.1, -0.5, -0.2, 0.9, 0.6);
        let l = 1.3;
        let (u, integral) = expm_with_integral(&m, l);
        assert!((u - expm3(&(-l * m))).norm() < 1e-12);
        let steps = 4000;
        let h = l / steps as f64;
        let mut quad = Matrix3::zeros();
        for k in 0..steps {
            let a = k as f64 * h;
            quad += h / 6.0
                * (expm3(&(-a * m))
                    + 4.0 * expm3(&(-(a + 0.5 * h) * m))
                    + expm3(&(-(a + h) * m)));
        }
        assert!(
            (integral - quad).norm() < 1e-10,
            "block integral vs quadrature: {}",
            (integral - quad).norm()
        );
    }
}
