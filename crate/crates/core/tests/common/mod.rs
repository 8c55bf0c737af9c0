#![allow(dead_code)]

use std::f64::consts::PI;

use frakra::special::{dirichlet_beta, riemann_zeta};
use frakra::{GridFunction, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Double sum over ordered pairs of the extended lattice, written out cell by
/// cell: in-box partners, exterior partners inside R = 8L, and the analytic
/// remainder beyond R. Grids must have integer R / h.
pub fn brute_seminorm_sq(u: &GridFunction, s: f64) -> f64 {
    let spec = u.spec;
    let m = spec.resolution as i64;
    let h = spec.spacing();
    let reach = (8.0 * spec.half_width / h).round() as i64;
    assert!(((8.0 * spec.half_width / h) - reach as f64).abs() < 1e-12, "R / h must be an integer");
    let near = -riemann_zeta(s) * dirichlet_beta(s);
    let weight = |di: i64, dj: i64| -> f64 {
        let r2 = (di * di + dj * dj) as f64;
        let extra = if r2 == 1.0 { near } else { 0.0 };
        h.powf(2.0 - 2.0 * s) * (r2.powf(-(1.0 + s)) + extra)
    };
    let value = |i: i64, j: i64| -> f64 {
        if i < 0 || j < 0 || i >= m || j >= m {
            0.0
        } else {
            u.values[spec.index(i as usize, j as usize)]
        }
    };
    let remainder = h * h * 2.0 * PI * (8.0 * spec.half_width).powf(-2.0 * s) / (2.0 * s);
    let mut total = 0.0;
    for j in 0..m {
        for i in 0..m {
            let ux = value(i, j);
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let r2 = di * di + dj * dj;
                    if r2 == 0 || r2 > reach * reach {
                        continue;
                    }
                    let (yi, yj) = (i + di, j + dj);
                    let inside = yi >= 0 && yj >= 0 && yi < m && yj < m;
                    let w = weight(di, dj);
                    if inside {
                        total += w * (ux - value(yi, yj)).powi(2);
                    } else {
                        // the pair counts in both orders
                        total += 2.0 * w * ux * ux;
                    }
                }
            }
            total += 2.0 * ux * ux * remainder;
        }
    }
    total
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random values on the cells strictly inside the box, zero on the outer ring.
pub fn random_interior(spec: GridSpec, rng: &mut ChaCha8Rng, signed: bool) -> GridFunction {
    let m = spec.resolution;
    GridFunction::from_values(
        spec,
        (0..spec.len())
            .map(|k| {
                let (i, j) = spec.coords(k);
                if i == 0 || j == 0 || i + 1 == m || j + 1 == m {
                    0.0
                } else if signed {
                    rng.gen_range(-1.0..1.0)
                } else {
                    rng.gen_range(0.0..1.0)
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Smooth compactly supported bump of radius r about (cx, cy).
pub fn bump(spec: GridSpec, cx: f64, cy: f64, r: f64) -> GridFunction {
    GridFunction::from_fn(spec, |x, y| {
        let t = 1.0 - ((x - cx).powi(2) + (y - cy).powi(2)) / (r * r);
        if t > 0.0 { t * t } else { 0.0 }
    })
}

pub fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

pub fn dot(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum()
}

/// First positive zero of J_0, squared.
pub const J01_SQ: f64 = 5.783_185_962_946_784;
