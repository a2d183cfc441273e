//! Real, symmetric (even-order) spherical harmonics basis.
//!
//! Index `j` of order `l` and degree `m` is `l(l+1)/2 + m`; degrees below zero
//! take the real part of `Y_l^|m|`, degrees above zero the imaginary part, both
//! scaled by √2 so the basis stays orthonormal on the sphere.

use std::f64::consts::PI;

/// Number of coefficients up to even order `order`.
pub fn n_coefficients(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// First index of order `l`.
pub fn order_offset(l: usize) -> usize {
    if l == 0 {
        0
    } else {
        l * (l - 1) / 2
    }
}

fn factorial_ratio(l: usize, m: usize) -> f64 {
    // (l − m)! / (l + m)!
    ((l - m + 1)..=(l + m)).fold(1.0, |acc, k| acc / k as f64)
}

/// Associated Legendre `P_l^m(x)` for `m ≥ 0`, without the Condon–Shortley phase.
fn legendre(l: usize, m: usize, x: f64) -> f64 {
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = (x * (2 * ll - 1) as f64 * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Basis values at direction `g` (need not be unit length).
pub fn basis_row(order: usize, g: [f64; 3]) -> Vec<f64> {
    let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    let (cos_t, phi) = if n > 0.0 {
        ((g[2] / n).clamp(-1.0, 1.0), g[1].atan2(g[0]))
    } else {
        (1.0, 0.0)
    };
    let mut row = vec![0.0; n_coefficients(order)];
    for l in (0..=order).step_by(2) {
        let centre = order_offset(l) + l;
        for m in 0..=l {
            let norm = ((2 * l + 1) as f64 / (4.0 * PI) * factorial_ratio(l, m)).sqrt();
            let p = norm * legendre(l, m, cos_t);
            if m == 0 {
                row[centre] = p;
            } else {
                let mf = m as f64;
                row[centre - m] = std::f64::consts::SQRT_2 * p * (mf * phi).cos();
                row[centre + m] = std::f64::consts::SQRT_2 * p * (mf * phi).sin();
            }
        }
    }
    row
}
