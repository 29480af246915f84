//! Quadrature on tetrahedra in barycentric form; weights sum to one and are
//! scaled by the tet volume by the caller.

use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct TetRule<T> {
    pub points: Vec<[T; 4]>,
    pub weights: Vec<T>,
}

impl<T: Real> TetRule<T> {
    /// Symmetric 4-point rule, exact for polynomials of degree 2.
    pub fn order2() -> Self {
        let a = T::lit(0.585_410_196_624_968_5);
        let b = T::lit(0.138_196_601_125_010_5);
        let q = T::lit(0.25);
        TetRule {
            points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
            weights: vec![q; 4],
        }
    }

    /// Collapsed Gauss–Legendre product rule with `m` points per direction,
    /// exact for polynomials of degree `2m - 3`.
    pub fn collapsed_gauss(m: usize) -> Self {
        let (x, w) = gauss_legendre_unit(m);
        let mut points = Vec::with_capacity(m * m * m);
        let mut weights = Vec::with_capacity(m * m * m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let (a, b, c) = (x[i], x[j], x[k]);
                    let l1 = a;
                    let l2 = (1.0 - a) * b;
                    let l3 = (1.0 - a) * (1.0 - b) * c;
                    let l0 = 1.0 - l1 - l2 - l3;
                    // reference simplex has volume 1/6
                    let wt = 6.0 * w[i] * w[j] * w[k] * (1.0 - a) * (1.0 - a) * (1.0 - b);
                    points.push([T::lit(l0), T::lit(l1), T::lit(l2), T::lit(l3)]);
                    weights.push(T::lit(wt));
                }
            }
        }
        TetRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}
