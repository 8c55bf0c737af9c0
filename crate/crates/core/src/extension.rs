//! Caffarelli-Silvestre extension of grid functions through the Poisson
//! kernel of the weight z^{1-2s}, its energy, and the level-set window of
//! the stability argument.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::constants::{ConstantsRecord, FracParams};
use crate::domain::{fraenkel_asymmetry, GridDomain};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::nonlocal::{check_order, holder_seminorm, Convolver};
use crate::quadrature::GaussRule;

/// β_{2,s} = s / π.
fn beta_planar(s: f64) -> f64 {
    s / PI
}

/// P_z(x) = β z^{2s} / (z^2 + |x|^2)^{(N+2s)/2} in the plane.
pub fn poisson_kernel(x: (f64, f64), z: f64, s: f64) -> Result<f64> {
    check_order(s)?;
    if !(z > 0.0) {
        return Err(Error::InvalidParameter(format!("extension height must satisfy z > 0 (got z = {z})")));
    }
    Ok(kernel_value(x.0 * x.0 + x.1 * x.1, z, s))
}

#[inline]
fn kernel_value(r2: f64, z: f64, s: f64) -> f64 {
    beta_planar(s) * z.powf(2.0 * s) * (z * z + r2).powf(-1.0 - s)
}

/// Mass of P_z outside the disk of radius r: (z^2 / (z^2 + r^2))^s.
pub fn kernel_tail_mass(r: f64, z: f64, s: f64) -> f64 {
    (z * z / (z * z + r * r)).powf(s)
}

/// Mass of P_z over the square [-a, a]^2, exactly in polar form.
fn centered_square_mass(a: f64, z: f64, s: f64, rule: &GaussRule) -> f64 {
    // eight octants, each with boundary ρ(θ) = a / cos θ
    let octant = rule.integrate(0.0, PI / 4.0, |th| {
        let rho = a / th.cos();
        1.0 - kernel_tail_mass(rho, z, s)
    });
    8.0 * octant / (2.0 * PI)
}

/// Cell-integrated kernel ∫_{cell d} P_z for all offsets d in (-M, M)^2,
/// row-major with offset M - 1.
pub fn cell_kernel_weights(spec: GridSpec, z: f64, s: f64) -> Vec<f64> {
    let m = spec.resolution;
    let h = spec.spacing();
    let width = 2 * m - 1;
    let rules: Vec<GaussRule> = (0..=32).map(|n| GaussRule::new(n.max(1))).collect();
    // one octant 0 <= dj <= di, mirrored afterwards
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|di| (0..=di).map(move |dj| (di, dj))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(di, dj)| {
            if di == 0 && dj == 0 {
                return centered_square_mass(0.5 * h, z, s, &rules[32]);
            }
            let ex = (di as f64 - 0.5).max(0.0);
            let ey = (dj as f64 - 0.5).max(0.0);
            let near = h * (ex * ex + ey * ey).sqrt();
            let n = ((16.0 * h / z.max(near)).ceil() as usize).clamp(1, 32);
            let (cx, cy) = (di as f64 * h, dj as f64 * h);
            if n == 1 {
                return kernel_value(cx * cx + cy * cy, z, s) * h * h;
            }
            let rule = &rules[n];
            let mut acc = 0.0;
            for (y, wy) in rule.mapped(cy - 0.5 * h, cy + 0.5 * h) {
                for (x, wx) in rule.mapped(cx - 0.5 * h, cx + 0.5 * h) {
                    acc += wx * wy * kernel_value(x * x + y * y, z, s);
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; width * width];
    let c = m as isize - 1;
    for (&(di, dj), &v) in pairs.iter().zip(&vals) {
        let (a, b) = (di as isize, dj as isize);
        for (x, y) in [(a, b), (b, a)] {
            for (sx, sy) in [(1, 1), (-1, 1), (1, -1), (-1, -1)] {
                out[((sy * y + c) as usize) * width + (sx * x + c) as usize] = v;
            }
        }
    }
    out
}

fn check_zgrid(zgrid: &[f64]) -> Result<()> {
    if zgrid.is_empty() {
        return Err(Error::InvalidParameter("z-grid is empty".into()));
    }
    if !(zgrid[0] > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "z-levels must be positive (first level is {})",
            zgrid[0]
        )));
    }
    if let Some(w) = zgrid.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(format!(
            "z-levels must be strictly increasing ({} is followed by {})",
            w[0], w[1]
        )));
    }
    if zgrid.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidParameter("z-levels must be finite".into()));
    }
    Ok(())
}

/// z_min g^k for k = 0, 1, ... up to the first level >= z_max.
pub fn geometric_zgrid(z_min: f64, z_max: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(z_min > 0.0 && z_max > z_min && ratio > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "geometric z-grid needs 0 < z_min < z_max and ratio > 1 (got {z_min}, {z_max}, {ratio})"
        )));
    }
    let count = ((z_max / z_min).ln() / ratio.ln()).ceil() as usize + 1;
    Ok((0..count).map(|k| z_min * ratio.powi(k as i32)).collect())
}

/// `count` geometrically spaced levels from z_min to z_max inclusive.
pub fn graded_zgrid(z_min: f64, z_max: f64, count: usize) -> Result<Vec<f64>> {
    if !(z_min > 0.0 && z_max > z_min && count >= 2) {
        return Err(Error::InvalidParameter(format!(
            "graded z-grid needs 0 < z_min < z_max and at least 2 levels (got {z_min}, {z_max}, {count})"
        )));
    }
    let ratio = (z_max / z_min).powf(1.0 / (count - 1) as f64);
    let mut z: Vec<f64> = (0..count).map(|k| z_min * ratio.powi(k as i32)).collect();
    z[count - 1] = z_max;
    Ok(z)
}

/// Ratio 1.15 from h/8 to 8L.
pub fn default_zgrid(spec: GridSpec) -> Vec<f64> {
    geometric_zgrid(spec.spacing() / 8.0, 8.0 * spec.half_width, 1.15).unwrap_or_default()
}

/// U(x, z) on the box for every level of a z-grid, plus the trace U(x, 0) = u.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtensionField {
    pub xspec: GridSpec,
    pub s: f64,
    pub zgrid: Vec<f64>,
    pub trace: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

const FIELD_MAGIC: &[u8; 8] = b"FRKXFLD1";

impl ExtensionField {
    pub fn levels(&self) -> usize {
        self.zgrid.len()
    }

    pub fn slice(&self, k: usize) -> GridFunction {
        GridFunction {
            spec: self.xspec,
            values: self.values[k].clone(),
            support: None,
        }
    }

    pub fn trace_function(&self) -> GridFunction {
        GridFunction {
            spec: self.xspec,
            values: self.trace.clone(),
            support: None,
        }
    }

    /// Index of the level equal to z up to 1e-12 relative.
    pub fn level_index(&self, z: f64) -> Option<usize> {
        self.zgrid.iter().position(|&l| (l - z).abs() <= 1e-12 * z.abs())
    }

    /// Little-endian: magic, then f64 values L, M, K, s, the K levels, the
    /// trace slice and the K level slices, each row-major (index j M + i).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        let head = [
            self.xspec.half_width,
            self.xspec.resolution as f64,
            self.zgrid.len() as f64,
            self.s,
        ];
        for v in head.iter().chain(&self.zgrid).chain(&self.trace) {
            w.write_all(&v.to_le_bytes())?;
        }
        for slice in &self.values {
            for v in slice {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Parse("not an extension field file (bad magic)".into()));
        }
        let mut next = || -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let half_width = next()?;
        let (mf, kf, s) = (next()?, next()?, next()?);
        if !(mf >= 1.0 && mf.fract() == 0.0 && kf >= 0.0 && kf.fract() == 0.0) {
            return Err(Error::Parse(format!("bad field header (M = {mf}, K = {kf})")));
        }
        let xspec = GridSpec::unchecked(half_width, mf as usize)?;
        let k = kf as usize;
        let zgrid = (0..k).map(|_| next()).collect::<Result<Vec<f64>>>()?;
        let n = xspec.len();
        let trace = (0..n).map(|_| next()).collect::<Result<Vec<f64>>>()?;
        let values = (0..k)
            .map(|_| (0..n).map(|_| next()).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            xspec,
            s,
            zgrid,
            trace,
            values,
        })
    }
}

/// U(·, z) = Σ_y (∫_{cell y} P_z(x - ·)) u(y) for every level.
pub fn extend(u: &GridFunction, zgrid: &[f64], s: f64) -> Result<ExtensionField> {
    check_order(s)?;
    check_zgrid(zgrid)?;
    if let Some(k) = u.values.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "extension needs nonnegative data (cell {k} holds {})",
            u.values[k]
        )));
    }
    let spec = u.spec;
    let m = spec.resolution as isize;
    let width = (2 * m - 1) as usize;
    let top = u.max().max(0.0);
    let values = zgrid
        .par_iter()
        .map(|&z| {
            let w = cell_kernel_weights(spec, z, s);
            let conv = Convolver::new(spec.resolution, |di, dj| {
                w[(dj + m - 1) as usize * width + (di + m - 1) as usize]
            });
            let mut out = vec![0.0; spec.len()];
            conv.convolve(&u.values, &mut out);
            // FFT round-off can leave values a few ulps outside [0, max u]
            for v in out.iter_mut() {
                *v = v.clamp(0.0, top);
            }
            out
        })
        .collect();
    Ok(ExtensionField {
        xspec: spec,
        s,
        zgrid: zgrid.to_vec(),
        trace: u.values.clone(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Energy estimate above the top level.
    pub z_tail: f64,
    /// Energy estimate outside the box.
    pub x_tail: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub energy: f64,
    pub truncation: Truncation,
}

fn interior_gradient_sq(spec: GridSpec, v: &[f64]) -> f64 {
    let m = spec.resolution;
    let mut acc = 0.0;
    for j in 0..m {
        for i in 0..m {
            let c = v[spec.index(i, j)];
            if i + 1 < m {
                acc += (v[spec.index(i + 1, j)] - c).powi(2);
            }
            if j + 1 < m {
                acc += (v[spec.index(i, j + 1)] - c).powi(2);
            }
        }
    }
    acc
}

/// |∇_{x,z} P|^2 at height 1 and radius r.
fn kernel_gradient_sq(r: f64, z: f64, s: f64) -> f64 {
    let b = beta_planar(s);
    let q = z * z + r * r;
    let dz = b * (2.0 * s * z.powf(2.0 * s - 1.0) * q.powf(-1.0 - s)
        - 2.0 * (1.0 + s) * z.powf(2.0 * s + 1.0) * q.powf(-2.0 - s));
    let dr = -2.0 * b * (1.0 + s) * r * z.powf(2.0 * s) * q.powf(-2.0 - s);
    dz * dz + dr * dr
}

/// 2π ∫_ρ^∞ |∇P_z|^2 r dr, composite Gauss in log r.
fn kernel_gradient_outside(rho: f64, z: f64, s: f64, rule: &GaussRule) -> f64 {
    let lo = rho.max(1e-8 * z).ln();
    let hi = rho.max(z).ln() + 8.0 * 10f64.ln();
    let panels = 40;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = lo + (hi - lo) * p as f64 / panels as f64;
        let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
        acc += rule.integrate(a, b, |lr| {
            let r = lr.exp();
            kernel_gradient_sq(r, z, s) * r * r
        });
    }
    2.0 * PI * acc
}

/// Copy of u centred in a box `factor` times wider at the same spacing.
pub fn pad_function(u: &GridFunction, factor: usize) -> Result<GridFunction> {
    let m = u.spec.resolution;
    if factor == 0 || (m * (factor - 1)) % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "padding factor {factor} does not centre a grid of resolution {m}"
        )));
    }
    let spec = GridSpec::unchecked(u.spec.half_width * factor as f64, m * factor)?;
    let off = m * (factor - 1) / 2;
    let mut values = vec![0.0; spec.len()];
    for j in 0..m {
        for i in 0..m {
            values[spec.index(i + off, j + off)] = u.values[u.spec.index(i, j)];
        }
    }
    Ok(GridFunction {
        spec,
        values,
        support: None,
    })
}

/// ∫∫ z^{1-2s} |∇U|^2 over the box and the levels, with the z^{1-2s} weight
/// integrated exactly on each interval between consecutive levels (the trace
/// is the level z = 0).
pub fn extension_energy(field: &ExtensionField) -> Result<EnergyReport> {
    let spec = field.xspec;
    let s = field.s;
    check_order(s)?;
    let h = spec.spacing();
    let k = field.zgrid.len();
    if k < 8 || field.zgrid[0] > h / 4.0 || field.zgrid[k - 1] < 4.0 * spec.half_width {
        return Err(Error::InvalidParameter(format!(
            "z-grid too coarse: needs >= 8 levels spanning z_min <= h/4 = {} and z_max >= 4L = {} (got {} levels on [{}, {}])",
            h / 4.0,
            4.0 * spec.half_width,
            k,
            field.zgrid.first().copied().unwrap_or(f64::NAN),
            field.zgrid.last().copied().unwrap_or(f64::NAN)
        )));
    }
    let e = 2.0 - 2.0 * s;
    let mut levels: Vec<&[f64]> = Vec::with_capacity(k + 1);
    levels.push(&field.trace);
    levels.extend(field.values.iter().map(|v| v.as_slice()));
    let mut zs = vec![0.0];
    zs.extend_from_slice(&field.zgrid);
    let grads: Vec<f64> = levels.par_iter().map(|v| interior_gradient_sq(spec, v)).collect();
    let energy: f64 = (0..k)
        .map(|t| {
            let (z0, z1) = (zs[t], zs[t + 1]);
            let weight = (z1.powf(e) - z0.powf(e)) / e;
            let dz = z1 - z0;
            let vert: f64 = levels[t]
                .iter()
                .zip(levels[t + 1])
                .map(|(a, b)| ((b - a) / dz).powi(2))
                .sum::<f64>()
                * h
                * h;
            weight * (vert + 0.5 * (grads[t] + grads[t + 1]))
        })
        .sum();

    // Far-field estimates treat u as a point mass of its integral at the origin.
    let mass = h * h * field.trace.iter().sum::<f64>();
    let rule = GaussRule::new(24);
    let zmax = field.zgrid[k - 1];
    let unit = kernel_gradient_outside(0.0, 1.0, s, &rule);
    // |∇(m P_z)|^2 integrates to m^2 z^{-4} · unit; weight z^{1-2s}
    let z_tail = mass * mass * unit * zmax.powf(-2.0 - 2.0 * s) / (2.0 + 2.0 * s);
    let reach = (0..spec.len())
        .filter(|&c| field.trace[c] != 0.0)
        .map(|c| {
            let (x, y) = spec.center(spec.coords(c).0, spec.coords(c).1);
            (x * x + y * y).sqrt()
        })
        .fold(0.0, f64::max);
    let rho = (spec.half_width - reach).max(h);
    let mut x_tail = 0.0;
    let (lo, hi) = ((rho * 1e-10).ln(), zmax.ln());
    let panels = 48;
    for p in 0..panels {
        let a = lo + (hi - lo) * p as f64 / panels as f64;
        let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
        x_tail += rule.integrate(a, b, |lz| {
            let z = lz.exp();
            z.powf(1.0 - 2.0 * s) * kernel_gradient_outside(rho, z, s, &rule) * z
        });
    }
    x_tail *= mass * mass;
    Ok(EnergyReport {
        energy,
        truncation: Truncation { z_tail, x_tail },
    })
}

/// (max_x |U(x, z) - u(x)|, holder_tail · [u]_{0,s} · z^s) at level k.
pub fn sup_deviation(u: &GridFunction, field: &ExtensionField, k: usize, record: &ConstantsRecord) -> Result<(f64, f64)> {
    if k >= field.levels() {
        return Err(Error::InvalidParameter(format!(
            "level index {k} out of range (field has {} levels)",
            field.levels()
        )));
    }
    if u.spec != field.xspec {
        return Err(Error::InvalidParameter("function and field live on different grids".into()));
    }
    let dev = field.values[k]
        .iter()
        .zip(&u.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let bound = record.holder_tail * holder_seminorm(u, field.s)? * field.zgrid[k].powf(field.s);
    Ok((dev, bound))
}

/// h^2 Σ_box (U(·, z) - u)^2 for every level.
pub fn trace_l2_gaps(u: &GridFunction, field: &ExtensionField) -> Vec<f64> {
    let a = u.spec.cell_area();
    field
        .values
        .iter()
        .map(|v| a * v.iter().zip(&u.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Easy,
    Main,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelWindow {
    /// Largest level whose strict superlevel set still holds |Ω|(1 - A/9).
    pub t: f64,
    pub t0: f64,
    pub t_range: (f64, f64),
    pub z0: f64,
    pub z1_smooth: Option<f64>,
    pub branch: Branch,
    pub asymmetry: f64,
    pub measure: f64,
}

/// Level window of a normalized minimizer on a domain of measure |Ω|.
pub fn level_window(
    u: &GridFunction,
    asymmetry: f64,
    lambda_ball: f64,
    params: &FracParams,
    record: &ConstantsRecord,
    smooth_c: Option<f64>,
) -> Result<LevelWindow> {
    if !(asymmetry > 0.0) {
        return Err(Error::Degenerate(format!(
            "level window needs positive asymmetry (got A = {asymmetry})"
        )));
    }
    let cell = u.spec.cell_area();
    let measure = match &u.support {
        Some(dom) => dom.measure(),
        None => cell * u.values.iter().filter(|&&v| v > 0.0).count() as f64,
    };
    let target = measure * (1.0 - asymmetry / 9.0);
    let needed = ((target / cell) - 1e-9).ceil().max(1.0) as usize;
    let mut sorted: Vec<f64> = u.values.iter().copied().filter(|&v| v > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if needed > sorted.len() {
        return Err(Error::Degenerate("superlevel sets never reach the required measure".into()));
    }
    let t = sorted[needed - 1];
    let s = params.s;
    let t0 = record.c2 * asymmetry / (4.0 * (1.0 + record.c2));
    let z0 = ((asymmetry * measure).sqrt() * t / (24.0 * (2.0 * record.beta * lambda_ball).sqrt())).powf(1.0 / s);
    let z1_smooth = smooth_c.map(|c| (t / (8.0 * c)).powf(1.0 / s));
    Ok(LevelWindow {
        t,
        t0,
        t_range: (t / 4.0, 3.0 * t / 8.0),
        z0,
        z1_smooth,
        branch: if t <= t0 { Branch::Easy } else { Branch::Main },
        asymmetry,
        measure,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub t: f64,
    pub z: f64,
    pub mu: f64,
    pub asymmetry: f64,
    /// ||E| - |Ω|| <= |Ω| A / 3.
    pub measure_ok: bool,
    /// A(E) >= A / 5.
    pub asymmetry_ok: bool,
    /// Ω_{T/2} ⊆ E ⊆ Ω_{T/8}, checked for z <= z1.
    pub sandwich_ok: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelScan {
    pub rows: Vec<LevelRow>,
    pub t_grid: Vec<f64>,
    pub z_levels: Vec<usize>,
    pub empty_window: bool,
}

impl LevelScan {
    pub fn all_pass(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.measure_ok && r.asymmetry_ok && r.sandwich_ok.unwrap_or(true))
    }
}

pub const T_POINTS: usize = 9;

/// Superlevel sets E_{t,z} = {U(·, z) > t} over the window.
pub fn level_scan(field: &ExtensionField, window: &LevelWindow, dom: &GridDomain) -> Result<LevelScan> {
    if window.branch != Branch::Main {
        return Err(Error::InvalidParameter("level scan runs on the main branch only".into()));
    }
    if dom.spec != field.xspec {
        return Err(Error::InvalidParameter("domain and field live on different grids".into()));
    }
    let (ta, tb) = window.t_range;
    let t_grid: Vec<f64> = (0..T_POINTS)
        .map(|i| ta + (tb - ta) * i as f64 / (T_POINTS - 1) as f64)
        .collect();
    let z_levels: Vec<usize> = (0..field.levels()).filter(|&k| field.zgrid[k] <= window.z0).collect();
    let measure = dom.measure();
    let a = window.asymmetry;
    let spec = field.xspec;
    let set = |values: &[f64], t: f64| -> Vec<bool> { values.iter().map(|&v| v > t).collect() };
    let inner = set(&field.trace, window.t / 2.0);
    let outer = set(&field.trace, window.t / 8.0);
    let jobs: Vec<(usize, f64)> = z_levels
        .iter()
        .flat_map(|&k| t_grid.iter().map(move |&t| (k, t)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, t)| -> Result<LevelRow> {
            let z = field.zgrid[k];
            let mask = set(&field.values[k], t);
            let e = GridDomain::from_mask(spec, mask)?;
            let mu = e.measure();
            let asym = if e.is_empty() { f64::NAN } else { fraenkel_asymmetry(&e)?.asymmetry };
            let sandwich_ok = match window.z1_smooth {
                Some(z1) if z <= z1 => Some(
                    inner.iter().zip(&e.mask).all(|(&i, &m)| !i || m)
                        && e.mask.iter().zip(&outer).all(|(&m, &o)| !m || o),
                ),
                _ => None,
            };
            Ok(LevelRow {
                t,
                z,
                mu,
                asymmetry: asym,
                measure_ok: (mu - measure).abs() <= measure * a / 3.0,
                asymmetry_ok: asym >= a / 5.0,
                sandwich_ok,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelScan {
        empty_window: z_levels.is_empty(),
        rows,
        t_grid,
        z_levels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Remainder {
    pub value: f64,
    pub used_bins: usize,
    pub skipped_bins: usize,
}

/// C_1 ∫ z^{1-2s} ∫ A(E_{t,z})^2 μ^{2(N-1)/N} / (-∂_t μ) dt dz over the
/// window, from a finished level scan. Bins where μ is flat in t carry no
/// level set and contribute nothing.
pub fn remainder_from_scan(scan: &LevelScan, field: &ExtensionField, record: &ConstantsRecord) -> Result<Remainder> {
    let nt = scan.t_grid.len();
    if nt < 2 {
        return Err(Error::Degenerate("level scan has fewer than two thresholds".into()));
    }
    let s = field.s;
    let e = 2.0 - 2.0 * s;
    let dt = scan.t_grid[1] - scan.t_grid[0];
    let (mut value, mut used, mut skipped) = (0.0, 0, 0);
    for (row_block, &k) in scan.z_levels.iter().enumerate() {
        let rows = &scan.rows[row_block * nt..(row_block + 1) * nt];
        let lower = if k == 0 { 0.0 } else { field.zgrid[k - 1] };
        let wz = (field.zgrid[k].powf(e) - lower.powf(e)) / e;
        let mut inner = 0.0;
        for i in 0..nt {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == nt - 1 {
                (nt - 2, nt - 1)
            } else {
                (i - 1, i + 1)
            };
            let slope = (rows[a].mu - rows[b].mu) / ((b - a) as f64 * dt);
            let asym = rows[i].asymmetry;
            if !(slope > 0.0) || !asym.is_finite() {
                skipped += 1;
                continue;
            }
            used += 1;
            let tw = if i == 0 || i == nt - 1 { 0.5 * dt } else { dt };
            // μ^{2(N-1)/N} = μ for N = 2
            inner += tw * asym * asym * rows[i].mu / slope;
        }
        value += wz * inner;
    }
    Ok(Remainder {
        value: record.c1 * value,
        used_bins: used,
        skipped_bins: skipped,
    })
}

pub fn enhanced_remainder(
    field: &ExtensionField,
    window: &LevelWindow,
    dom: &GridDomain,
    record: &ConstantsRecord,
) -> Result<Remainder> {
    let scan = level_scan(field, window, dom)?;
    remainder_from_scan(&scan, field, record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::eval_constants;

    fn bump(spec: GridSpec, r: f64) -> GridFunction {
        GridFunction::from_fn(spec, |x, y| {
            let t = 1.0 - (x * x + y * y) / (r * r);
            if t > 0.0 { t * t } else { 0.0 }
        })
    }

    #[test]
    fn kernel_value_at_origin() {
        let s = 0.3;
        let z = 0.7;
        let p = poisson_kernel((0.0, 0.0), z, s).unwrap();
        assert!((p - beta_planar(s) * z.powf(-2.0)).abs() < 1e-15);
        assert!(poisson_kernel((0.0, 0.0), 0.0, s).is_err());
    }

    #[test]
    fn kernel_has_unit_mass() {
        let rule = GaussRule::new(32);
        for &s in &[0.2, 0.5, 0.8] {
            for &z in &[0.01f64, 1.0, 30.0] {
                // radial integral in log r over [1e-6 z, 1e30 z]
                let (lo, hi) = ((1e-6 * z).ln(), (1e30 * z).ln());
                let panels = 80;
                let mut mass = 0.0;
                for p in 0..panels {
                    let a = lo + (hi - lo) * p as f64 / panels as f64;
                    let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
                    mass += 2.0 * PI * rule.integrate(a, b, |lr| {
                        let r = lr.exp();
                        kernel_value(r * r, z, s) * r * r
                    });
                }
                assert!((mass - 1.0).abs() < 1e-6, "s={s} z={z} mass={mass}");
            }
        }
    }

    #[test]
    fn cell_weights_sum_to_window_mass() {
        let spec = GridSpec::new(1.0, 32).unwrap();
        for &s in &[0.3, 0.7] {
            for &z in &[1e-4, spec.spacing(), 0.2] {
                let w = cell_kernel_weights(spec, z, s);
                let total: f64 = w.iter().sum();
                // window is the square of half-side (M - 1/2) h = 2L - h/2
                let half = 2.0 - spec.spacing() / 2.0;
                let corner = kernel_tail_mass(half * 2f64.sqrt(), z, s);
                assert!(total <= 1.0 + 1e-12);
                assert!(1.0 - total <= kernel_tail_mass(half, z, s) + 1e-6, "s={s} z={z} total={total}");
                assert!(1.0 - total >= corner - 1e-6);
            }
        }
    }

    #[test]
    fn radial_data_gives_radial_slices() {
        let spec = GridSpec::new(1.0, 24).unwrap();
        let u = bump(spec, 0.6);
        let f = extend(&u, &[0.01, 0.1, 0.5], 0.5).unwrap();
        let m = spec.resolution;
        for v in &f.values {
            for j in 0..m {
                for i in 0..m {
                    let a = v[spec.index(i, j)];
                    for b in [v[spec.index(j, i)], v[spec.index(m - 1 - i, j)], v[spec.index(i, m - 1 - j)]] {
                        assert!((a - b).abs() < 1e-13);
                    }
                }
            }
            assert!(v.iter().all(|&x| (0.0..=u.max()).contains(&x)));
        }
    }

    #[test]
    fn trace_gap_respects_seminorm_bound() {
        let spec = GridSpec::new(1.0, 32).unwrap();
        let s = 0.5;
        let u = bump(spec, 0.5);
        let zg = graded_zgrid(spec.spacing() / 8.0, 8.0, 20).unwrap();
        let f = extend(&u, &zg, s).unwrap();
        let semi = crate::nonlocal::seminorm_sq(&u, s).unwrap();
        for (gap, z) in trace_l2_gaps(&u, &f).iter().zip(&zg) {
            assert!(*gap <= beta_planar(s) * semi * z.powf(2.0 * s) * 1.05);
        }
    }

    #[test]
    fn zero_and_bad_inputs() {
        let spec = GridSpec::new(1.0, 16).unwrap();
        let u = GridFunction::zeros(spec);
        let zg = default_zgrid(spec);
        let f = extend(&u, &zg, 0.5).unwrap();
        assert_eq!(extension_energy(&f).unwrap().energy, 0.0);
        assert!(extend(&u, &[0.1, 0.05], 0.5).is_err());
        assert!(extend(&u, &[-0.1], 0.5).is_err());
        assert!(extension_energy(&extend(&u, &[0.5, 1.0], 0.5).unwrap()).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let spec = GridSpec::new(1.0, 16).unwrap();
        let f = extend(&bump(spec, 0.5), &[0.05, 0.2], 0.4).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * (4 + 2 + 3 * 256));
        let g = ExtensionField::read_binary(buf.as_slice()).unwrap();
        assert_eq!(f, g);
        assert!(ExtensionField::read_binary(&buf[..20]).is_err());
    }

    #[test]
    fn plateau_sets_the_level() {
        let spec = GridSpec::new(1.0, 16).unwrap();
        let dom = GridDomain::from_predicate(spec, |x, y| x.abs() < 0.5 && y.abs() < 0.5).unwrap();
        let mut u = GridFunction::from_fn(spec, |x, y| if x.abs() < 0.5 && y.abs() < 0.5 { 0.7 } else { 0.0 });
        u.support = Some(dom);
        let p = FracParams::new(2, 0.5, 2.0).unwrap();
        let rec = eval_constants(&p).unwrap();
        let w = level_window(&u, 0.2, 10.0, &p, &rec, None).unwrap();
        assert_eq!(w.t, 0.7);
        assert!(level_window(&u, 0.0, 10.0, &p, &rec, None).is_err());
    }
}
