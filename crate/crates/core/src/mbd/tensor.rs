//! Modified Coulomb potential between Gaussian-broadened dipoles and its
//! first three position derivatives: the dipole-dipole interaction tensor
//! and the tensor gradient entering the analytic forces.

use std::f64::consts::PI;

/// Effective width combining two Gaussian widths.
fn sigma_tilde(sigma_i: f64, sigma_j: f64) -> f64 {
    (sigma_i * sigma_i + sigma_j * sigma_j).sqrt()
}

/// v(r) = erf(r / (beta * sigma~)) / r, with the analytic r -> 0 limit.
pub fn coulomb_gg(r: f64, sigma_i: f64, sigma_j: f64, beta: f64) -> f64 {
    let a = beta * sigma_tilde(sigma_i, sigma_j);
    if r == 0.0 {
        return 2.0 / (PI.sqrt() * a);
    }
    libm::erf(r / a) / r
}

/// erf(r/a) and its first three r-derivatives.
fn erf_derivs(r: f64, a: f64) -> (f64, f64, f64, f64) {
    let u = r / a;
    let g = (-u * u).exp();
    let b0 = libm::erf(u);
    let b1 = 2.0 / (PI.sqrt() * a) * g;
    let b2 = -4.0 * r / (a * a * a * PI.sqrt()) * g;
    let b3 = 4.0 / (a * a * a * PI.sqrt()) * g * (2.0 * r * r / (a * a) - 1.0);
    (b0, b1, b2, b3)
}

/// First three radial derivatives of v(r) = erf(r/a)/r for r > 0.
fn v_derivs(r: f64, a: f64) -> (f64, f64, f64, f64) {
    let (b0, b1, b2, b3) = erf_derivs(r, a);
    let v0 = b0 / r;
    let v1 = b1 / r - b0 / (r * r);
    let v2 = b2 / r - 2.0 * b1 / (r * r) + 2.0 * b0 / (r * r * r);
    let v3 = b3 / r - 3.0 * b2 / (r * r) + 6.0 * b1 / (r * r * r) - 6.0 * b0 / (r * r * r * r);
    (v0, v1, v2, v3)
}

/// T_ij = grad_{r_i} (x) grad_{r_j} v(|r_i - r_j|), evaluated at
/// `disp` = r_i - r_j. For a radial v this is
/// -(g1 I + g2 d (x) d) with g1 = v'/r, g2 = (v'' - v'/r)/r^2.
pub fn dipole_tensor(disp: [f64; 3], sigma_i: f64, sigma_j: f64, beta: f64) -> [[f64; 3]; 3] {
    let a = beta * sigma_tilde(sigma_i, sigma_j);
    let r2 = disp[0] * disp[0] + disp[1] * disp[1] + disp[2] * disp[2];
    let r = r2.sqrt();
    let (_, v1, v2, _) = v_derivs(r, a);
    let g1 = v1 / r;
    let g2 = (v2 - v1 / r) / r2;
    let mut t = [[0.0; 3]; 3];
    for ai in 0..3 {
        for bi in 0..3 {
            let mut val = g2 * disp[ai] * disp[bi];
            if ai == bi {
                val += g1;
            }
            t[ai][bi] = -val;
        }
    }
    t
}

/// Gradient of the dipole tensor with respect to the displacement:
/// `out[a][b][c]` = d T^{ab} / d d^c. The gradient with respect to r_i is
/// this; with respect to r_j it is the negative.
pub fn dipole_tensor_gradient(
    disp: [f64; 3],
    sigma_i: f64,
    sigma_j: f64,
    beta: f64,
) -> [[[f64; 3]; 3]; 3] {
    let a = beta * sigma_tilde(sigma_i, sigma_j);
    let r2 = disp[0] * disp[0] + disp[1] * disp[1] + disp[2] * disp[2];
    let r = r2.sqrt();
    let (_, v1, v2, v3) = v_derivs(r, a);
    let g2 = (v2 - v1 / r) / r2;
    let h = v3 / (r2 * r) - 3.0 * g2 / r2;
    let mut out = [[[0.0; 3]; 3]; 3];
    for ai in 0..3 {
        for bi in 0..3 {
            for ci in 0..3 {
                let mut val = h * disp[ai] * disp[bi] * disp[ci];
                if ai == bi {
                    val += g2 * disp[ci];
                }
                if ai == ci {
                    val += g2 * disp[bi];
                }
                if bi == ci {
                    val += g2 * disp[ai];
                }
                out[ai][bi][ci] = -val;
            }
        }
    }
    out
}
