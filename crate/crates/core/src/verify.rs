//! Full checks: Faber-Krahn deficits against the explicit stability
//! constants, torsion, sweeps over shape families and the limit studies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::constants::{eval_constants, stability_constants_with_provenance, ConstantsRecord, FracParams, StabilityConstants};
use crate::domain::{fraenkel_asymmetry, make_shape, scaled_invariant, GridDomain, ShapeParams};
use crate::error::{Error, Result};
use crate::extension::{
    extend, extension_energy, geometric_zgrid, graded_zgrid, level_scan, level_window, pad_function, remainder_from_scan,
    sup_deviation, trace_l2_gaps, Branch, LevelScan, LevelWindow, Remainder, Truncation,
};
use crate::grid::{GridFunction, GridSpec};
use crate::nonlocal::solver::{minimize_lambda_with, torsion_solve_with};
use crate::nonlocal::{
    directional_seminorm_sq, holder_seminorm, minimize_rayleigh, KernelTable, LocalOperator, QuadraticOperator,
    SolverOpts,
};
use crate::rearrange::CellOrder;
use crate::report::fmt_f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOpts {
    pub solver: SolverOpts,
    /// Run the level-set scan and the remainder on the main branch.
    pub level_scan: bool,
}

impl Default for VerifyOpts {
    fn default() -> Self {
        Self {
            solver: SolverOpts::default(),
            level_scan: true,
        }
    }
}

/// Relative slack for discretization noise in same-grid comparisons.
pub const DEFICIT_SLACK: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub starts_disagree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub rows: usize,
    pub measure_pass: usize,
    pub asymmetry_pass: usize,
    pub sandwich_checked: usize,
    pub sandwich_pass: usize,
    pub empty_window: bool,
}

impl ScanSummary {
    fn from_scan(scan: &LevelScan) -> Self {
        Self {
            rows: scan.rows.len(),
            measure_pass: scan.rows.iter().filter(|r| r.measure_ok).count(),
            asymmetry_pass: scan.rows.iter().filter(|r| r.asymmetry_ok).count(),
            sandwich_checked: scan.rows.iter().filter(|r| r.sandwich_ok.is_some()).count(),
            sandwich_pass: scan.rows.iter().filter(|r| r.sandwich_ok == Some(true)).count(),
            empty_window: scan.empty_window,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.measure_pass == self.rows && self.asymmetry_pass == self.rows && self.sandwich_pass == self.sandwich_checked
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeficitReport {
    pub shape: String,
    pub params: FracParams,
    pub grid: GridSpec,
    /// Measure before rescaling to |Ω| = 1.
    pub original_measure: f64,
    pub cells: usize,
    pub lambda_omega: f64,
    pub lambda_ball: f64,
    pub invariant_omega: f64,
    pub invariant_ball: f64,
    pub deficit: f64,
    pub asymmetry: f64,
    pub constants: ConstantsRecord,
    pub stability: StabilityConstants,
    pub rhs_main: f64,
    pub rhs_smooth_exponent: f64,
    pub margin: f64,
    /// "easy", "main", "restricted" (λ(Ω) > 2 λ(B), scan skipped) or "symmetric" (A = 0).
    pub branch: String,
    /// λ(Ω) >= λ(B)(1 + C₂A / (2(1 + C₂))) on the easy branch.
    pub easy_chain: Option<bool>,
    pub window: Option<LevelWindow>,
    pub scan: Option<ScanSummary>,
    pub remainder: Option<Remainder>,
    pub solve_omega: SolveStats,
    pub solve_ball: SolveStats,
}

impl DeficitReport {
    /// Same-grid Faber-Krahn: deficit >= -2% of the ball invariant.
    pub fn faber_krahn_ok(&self) -> bool {
        self.deficit >= -DEFICIT_SLACK * self.invariant_ball
    }

    /// Stability bound: margin >= 0 whenever the deficit is positive.
    pub fn bound_ok(&self) -> bool {
        !(self.deficit > 0.0) || self.margin >= 0.0
    }

    /// Remainder below the deficit with 5% slack, when computed.
    pub fn remainder_ok(&self) -> bool {
        match &self.remainder {
            Some(r) => r.value <= self.deficit.max(0.0) * 1.05 + f64::MIN_POSITIVE,
            None => true,
        }
    }
}

fn stats(iterations: usize, residual: f64, starts_disagree: bool) -> SolveStats {
    SolveStats {
        iterations,
        residual,
        starts_disagree,
    }
}

/// Unit-measure copy of the domain and the same-grid discrete ball with the
/// same number of cells.
pub fn normalized_pair(dom: &GridDomain) -> Result<(GridDomain, GridDomain)> {
    if dom.is_empty() {
        return Err(Error::EmptyDomain("domain has no cells"));
    }
    let scaled = dom.scaled(1.0 / dom.measure().sqrt());
    let ball = CellOrder::new(scaled.spec).ball(scaled.cell_count())?;
    Ok((scaled, ball))
}

/// z-levels for the level scan: ratio 1.15 up to z0 from min(h/8, z0/16).
fn scan_zgrid(spec: GridSpec, z0: f64) -> Result<Vec<f64>> {
    let start = (spec.spacing() / 8.0).min(z0 / 16.0);
    let mut z = geometric_zgrid(start, z0, 1.15)?;
    while z.last().is_some_and(|&v| v > z0) {
        z.pop();
    }
    if z.last().is_none_or(|&v| v < z0) {
        z.push(z0);
    }
    Ok(z)
}

pub fn verify_fk(dom: &GridDomain, params: &FracParams, opts: &VerifyOpts) -> Result<DeficitReport> {
    params.validate()?;
    let record = eval_constants(params)?;
    let (omega, ball) = normalized_pair(dom)?;
    let kernel = KernelTable::new(omega.spec, params.s)?;
    let lo = minimize_lambda_with(&kernel, &omega, params, &opts.solver)?;
    let lb = minimize_lambda_with(&kernel, &ball, params, &opts.solver)?;
    let tb = torsion_solve_with(&kernel, &ball)?;
    let stability = stability_constants_with_provenance(
        &record,
        params,
        lb.lambda,
        tb.torsion,
        &format!("same-grid discrete ball, M = {}", omega.spec.resolution),
    )?;
    let asymmetry = fraenkel_asymmetry(dom)?.asymmetry;
    let invariant_omega = scaled_invariant(lo.lambda, omega.measure(), params);
    let invariant_ball = scaled_invariant(lb.lambda, ball.measure(), params);
    let deficit = invariant_omega - invariant_ball;
    let s = params.s;
    let rhs_main = stability.sigma1 / (1.0 - s) * asymmetry.powf(3.0 / s);

    let mut report = DeficitReport {
        shape: dom.meta.label(),
        params: *params,
        grid: omega.spec,
        original_measure: dom.measure(),
        cells: omega.cell_count(),
        lambda_omega: lo.lambda,
        lambda_ball: lb.lambda,
        invariant_omega,
        invariant_ball,
        deficit,
        asymmetry,
        constants: record,
        stability,
        rhs_main,
        rhs_smooth_exponent: 2.0 + 1.0 / s,
        margin: deficit - rhs_main,
        branch: "symmetric".into(),
        easy_chain: None,
        window: None,
        scan: None,
        remainder: None,
        solve_omega: stats(lo.iterations, lo.residual, lo.starts_disagree),
        solve_ball: stats(lb.iterations, lb.residual, lb.starts_disagree),
    };
    if !(asymmetry > 0.0) {
        return Ok(report);
    }
    let smooth_c = record.holder_tail * holder_seminorm(&lo.u, s)?;
    let window = level_window(&lo.u, asymmetry, lb.lambda, params, &record, Some(smooth_c))?;
    report.window = Some(window);
    match window.branch {
        Branch::Easy => {
            report.branch = "easy".into();
            let c2 = record.c2;
            report.easy_chain = Some(lo.lambda >= lb.lambda * (1.0 + c2 * asymmetry / (2.0 * (1.0 + c2))));
        }
        Branch::Main if lo.lambda > 2.0 * lb.lambda => report.branch = "restricted".into(),
        Branch::Main => {
            report.branch = "main".into();
            if opts.level_scan {
                let (scan, rem) = scan_window(&lo.u, &omega, &window, s, &record)?;
                report.scan = Some(ScanSummary::from_scan(&scan));
                report.remainder = rem;
            }
        }
    }
    Ok(report)
}

/// Extension of the minimizer below z0, level scan and remainder.
pub fn scan_window(
    u: &GridFunction,
    dom: &GridDomain,
    window: &LevelWindow,
    s: f64,
    record: &ConstantsRecord,
) -> Result<(LevelScan, Option<Remainder>)> {
    let zgrid = scan_zgrid(u.spec, window.z0)?;
    let field = extend(u, &zgrid, s)?;
    let scan = level_scan(&field, window, dom)?;
    let rem = if scan.rows.is_empty() { None } else { Some(remainder_from_scan(&scan, &field, record)?) };
    Ok((scan, rem))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStudy {
    pub shape: String,
    pub params: FracParams,
    pub measured_asymmetry: f64,
    /// Asymmetry that defines the window; a nominal value for (near-)balls.
    pub asymmetry: f64,
    pub window: LevelWindow,
    pub summary: ScanSummary,
    pub scan: LevelScan,
    pub remainder: Option<Remainder>,
}

/// Level window and full scan of the normalized minimizer. With
/// `nominal_asymmetry` the window is built from that value instead of the
/// measured one, which lets the sandwich inclusions be exercised on a disk.
pub fn level_study(
    dom: &GridDomain,
    params: &FracParams,
    opts: &SolverOpts,
    nominal_asymmetry: Option<f64>,
) -> Result<LevelStudy> {
    params.validate()?;
    let record = eval_constants(params)?;
    let (omega, ball) = normalized_pair(dom)?;
    let kernel = KernelTable::new(omega.spec, params.s)?;
    let lo = minimize_lambda_with(&kernel, &omega, params, opts)?;
    let lb = minimize_lambda_with(&kernel, &ball, params, opts)?;
    let measured = fraenkel_asymmetry(dom)?.asymmetry;
    let asymmetry = nominal_asymmetry.unwrap_or(measured);
    let smooth_c = record.holder_tail * holder_seminorm(&lo.u, params.s)?;
    let window = level_window(&lo.u, asymmetry, lb.lambda, params, &record, Some(smooth_c))?;
    if window.branch != Branch::Main {
        return Err(Error::Degenerate(format!(
            "level T = {} is below the threshold T0 = {}; the easy branch has no extension window",
            window.t, window.t0
        )));
    }
    let (scan, remainder) = scan_window(&lo.u, &omega, &window, params.s, &record)?;
    Ok(LevelStudy {
        shape: dom.meta.label(),
        params: *params,
        measured_asymmetry: measured,
        asymmetry,
        window,
        summary: ScanSummary::from_scan(&scan),
        scan,
        remainder,
    })
}

/// Three compactly supported smooth bumps on the grid: a radial bump, an
/// elongated one and an off-centre tilted one.
pub fn smooth_bumps(spec: GridSpec) -> Vec<GridFunction> {
    let radial = GridFunction::from_fn(spec, |x, y| (1.0 - (x * x + y * y) / 0.25).max(0.0).powi(3));
    let long = GridFunction::from_fn(spec, |x, y| (1.0 - (x * x / 0.36 + y * y / 0.09)).max(0.0).powi(3));
    let tilted = GridFunction::from_fn(spec, |x, y| {
        let (a, b) = (x - 0.15, y + 0.1);
        (1.0 - (a * a + b * b) / 0.16).max(0.0).powi(4) * (1.0 + 0.5 * a)
    });
    vec![radial, long, tilted]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub s: f64,
    pub resolution: usize,
    pub levels: usize,
    pub padding: usize,
    pub seminorm_sq: f64,
    pub extension_energy: f64,
    pub gamma: f64,
    /// |γ E - [u]^2| / [u]^2.
    pub gap: f64,
    pub truncation: Truncation,
}

/// Compares γ times the weighted energy of the extension with the seminorm.
/// The function is padded `padding` times at the same spacing and the
/// z-grid is graded from h/8 to 8 times the padded half-width.
pub fn extension_identity(u: &GridFunction, s: f64, levels: usize, padding: usize) -> Result<IdentityReport> {
    let record = eval_constants(&FracParams::new(2, s, 2.0)?)?;
    let semi = crate::nonlocal::seminorm_sq(u, s)?;
    if !(semi > 0.0) {
        return Err(Error::Degenerate("extension identity of the zero function".into()));
    }
    let padded = pad_function(u, padding)?;
    let zgrid = graded_zgrid(u.spec.spacing() / 8.0, 8.0 * padded.spec.half_width, levels)?;
    let field = extend(&padded, &zgrid, s)?;
    let energy = extension_energy(&field)?;
    Ok(IdentityReport {
        s,
        resolution: u.spec.resolution,
        levels,
        padding,
        seminorm_sq: semi,
        extension_energy: energy.energy,
        gamma: record.gamma,
        gap: (record.gamma * energy.energy - semi).abs() / semi,
        truncation: energy.truncation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub z: f64,
    pub l2_gap: f64,
    /// β [u]^2 z^{2s}.
    pub l2_bound: f64,
    pub sup_deviation: f64,
    /// Hölder tail constant times [u]_{0,s} z^s.
    pub sup_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub s: f64,
    pub rows: Vec<TraceRow>,
}

/// Relative slack allowed for quadrature error in the trace estimates.
pub const TRACE_SLACK: f64 = 0.05;

impl TraceReport {
    pub fn l2_ok(&self) -> bool {
        self.rows.iter().all(|r| r.l2_gap <= r.l2_bound * (1.0 + TRACE_SLACK))
    }

    pub fn sup_ok(&self) -> bool {
        self.rows.iter().all(|r| r.sup_deviation <= r.sup_bound * (1.0 + TRACE_SLACK))
    }
}

/// L² and sup distance between U(·, z) and its trace at every level. The L²
/// gap is measured on the box, which only shrinks it.
pub fn trace_estimates(u: &GridFunction, s: f64, zgrid: &[f64]) -> Result<TraceReport> {
    let record = eval_constants(&FracParams::new(2, s, 2.0)?)?;
    let semi = crate::nonlocal::seminorm_sq(u, s)?;
    let field = extend(u, zgrid, s)?;
    let gaps = trace_l2_gaps(u, &field);
    let rows = (0..field.levels())
        .map(|k| {
            let z = field.zgrid[k];
            let (dev, bound) = sup_deviation(u, &field, k, &record)?;
            Ok(TraceRow {
                z,
                l2_gap: gaps[k],
                l2_bound: record.beta * semi * z.powf(2.0 * s),
                sup_deviation: dev,
                sup_bound: bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceReport { s, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsionReport {
    pub shape: String,
    pub s: f64,
    pub grid: GridSpec,
    pub torsion_omega: f64,
    pub torsion_ball: f64,
    /// T(B)/|B|^{(N+2s)/N} - T(Ω)/|Ω|^{(N+2s)/N}.
    pub difference: f64,
    pub asymmetry: f64,
    pub sigma2: f64,
    pub rhs: f64,
    pub margin: f64,
    /// |T λ_{s,1} - 1| on Ω and on the ball.
    pub reciprocity_omega: f64,
    pub reciprocity_ball: f64,
    /// 1/λ_{s,1}(B) - 1/λ_{s,1}(Ω), the same difference by the eigenvalue route.
    pub difference_from_lambda: f64,
    pub cg_iterations: usize,
}

impl TorsionReport {
    pub fn bound_ok(&self) -> bool {
        !(self.difference > 0.0) || self.margin >= 0.0
    }

    pub fn reciprocity_ok(&self, tol: f64) -> bool {
        self.reciprocity_omega <= tol && self.reciprocity_ball <= tol
    }
}

pub fn verify_torsion(dom: &GridDomain, s: f64, opts: &VerifyOpts) -> Result<TorsionReport> {
    let params = FracParams::new(2, s, 1.0)?;
    let record = eval_constants(&params)?;
    let (omega, ball) = normalized_pair(dom)?;
    let kernel = KernelTable::new(omega.spec, s)?;
    let to = torsion_solve_with(&kernel, &omega)?;
    let tb = torsion_solve_with(&kernel, &ball)?;
    let lo = minimize_lambda_with(&kernel, &omega, &params, &opts.solver)?;
    let lb = minimize_lambda_with(&kernel, &ball, &params, &opts.solver)?;
    let stability = stability_constants_with_provenance(&record, &params, lb.lambda, tb.torsion, "same-grid discrete ball")?;
    let asymmetry = fraenkel_asymmetry(dom)?.asymmetry;
    let e = (2.0 + 2.0 * s) / 2.0;
    let difference = tb.torsion / ball.measure().powf(e) - to.torsion / omega.measure().powf(e);
    let rhs = stability.sigma2 * (1.0 - s) * asymmetry.powf(3.0 / s);
    Ok(TorsionReport {
        shape: dom.meta.label(),
        s,
        grid: omega.spec,
        torsion_omega: to.torsion,
        torsion_ball: tb.torsion,
        difference,
        asymmetry,
        sigma2: stability.sigma2,
        rhs,
        margin: difference - rhs,
        reciprocity_omega: (to.torsion * lo.lambda - 1.0).abs(),
        reciprocity_ball: (tb.torsion * lb.lambda - 1.0).abs(),
        difference_from_lambda: 1.0 / (lb.lambda * ball.measure().powf(e)) - 1.0 / (lo.lambda * omega.measure().powf(e)),
        cg_iterations: to.iterations,
    })
}

/// A list of shapes rasterized on one grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    pub grid: GridSpec,
    pub shapes: Vec<ShapeParams>,
}

/// Area of every generated family member on the default box [-1, 1]^2.
pub const FAMILY_AREA: f64 = 0.6;

impl FamilySpec {
    pub fn ellipses(grid: GridSpec, aspects: &[f64]) -> Result<Self> {
        let shapes = aspects
            .iter()
            .map(|&r| {
                check_positive("aspect", r)?;
                let b = (FAMILY_AREA / (PI * r)).sqrt();
                Ok(ShapeParams::Ellipse { a: r * b, b })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: "ellipse".into(),
            grid,
            shapes,
        })
    }

    pub fn rectangles(grid: GridSpec, aspects: &[f64]) -> Result<Self> {
        let shapes = aspects
            .iter()
            .map(|&r| {
                check_positive("aspect", r)?;
                let h = (FAMILY_AREA / r).sqrt();
                Ok(ShapeParams::Rectangle { width: r * h, height: h })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: "rectangle".into(),
            grid,
            shapes,
        })
    }

    /// Stadiums with straight part `length` times the cap radius.
    pub fn stadiums(grid: GridSpec, lengths: &[f64]) -> Result<Self> {
        let shapes = lengths
            .iter()
            .map(|&l| {
                if !(l >= 0.0) {
                    return Err(Error::InvalidParameter(format!("stadium length ratio must be >= 0 (got {l})")));
                }
                // area = π r^2 + 2 r (l r)
                let r = (FAMILY_AREA / (PI + 2.0 * l)).sqrt();
                Ok(ShapeParams::Stadium { length: l * r, radius: r })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: "stadium".into(),
            grid,
            shapes,
        })
    }

    /// Two disks of radius r at centre distance 2.4 r joined by a neck of
    /// the given width (as a fraction of r).
    pub fn dumbbells(grid: GridSpec, necks: &[f64]) -> Result<Self> {
        let shapes = necks
            .iter()
            .map(|&w| {
                check_positive("neck ratio", w)?;
                let r = 0.34;
                Ok(ShapeParams::Dumbbell {
                    radius: r,
                    separation: 2.4 * r,
                    neck: w * r,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: "dumbbell".into(),
            grid,
            shapes,
        })
    }

    pub fn parse(kind: &str, grid: GridSpec, values: &[f64]) -> Result<Self> {
        match kind {
            "ellipse" => Self::ellipses(grid, values),
            "rectangle" => Self::rectangles(grid, values),
            "stadium" => Self::stadiums(grid, values),
            "dumbbell" => Self::dumbbells(grid, values),
            other => Err(Error::InvalidParameter(format!(
                "unknown family '{other}' (expected ellipse, rectangle, stadium or dumbbell)"
            ))),
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive (got {v})")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub shape: String,
    pub s: f64,
    pub q: f64,
    pub report: Option<DeficitReport>,
    pub error: Option<String>,
}

pub const SWEEP_COLUMNS: [&str; 27] = [
    "index",
    "shape",
    "s",
    "q",
    "resolution",
    "half_width",
    "cells",
    "asymmetry",
    "lambda_omega",
    "lambda_ball",
    "invariant_omega",
    "invariant_ball",
    "deficit",
    "sigma1",
    "rhs_main",
    "margin",
    "branch",
    "scan_rows",
    "scan_pass",
    "remainder",
    "beta",
    "gamma",
    "c1",
    "c2",
    "theta",
    "residual",
    "status",
];

/// One row per (shape, s, q) in input order; failures are kept as rows.
pub fn sweep_family(family: &FamilySpec, s_list: &[f64], q_list: &[f64], opts: &VerifyOpts) -> Vec<SweepRow> {
    let jobs: Vec<(ShapeParams, f64, f64)> = family
        .shapes
        .iter()
        .flat_map(|&sh| s_list.iter().flat_map(move |&s| q_list.iter().map(move |&q| (sh, s, q))))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(index, &(shape, s, q))| {
            let run = || -> Result<DeficitReport> {
                let params = FracParams::new(2, s, q)?;
                let dom = make_shape(shape, family.grid)?;
                verify_fk(&dom, &params, opts)
            };
            let label = crate::domain::ShapeMeta {
                kind: shape.kind(),
                params: Some(shape),
                analytic_area: None,
                smoothness: None,
            }
            .label();
            match run() {
                Ok(r) => SweepRow {
                    index,
                    shape: label,
                    s,
                    q,
                    report: Some(r),
                    error: None,
                },
                Err(e) => SweepRow {
                    index,
                    shape: label,
                    s,
                    q,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{}", SWEEP_COLUMNS.join(","))?;
    for row in rows {
        let mut cols: Vec<String> = vec![
            row.index.to_string(),
            csv_field(&row.shape),
            fmt_f64(row.s),
            fmt_f64(row.q),
        ];
        match &row.report {
            Some(r) => {
                let (scan_rows, scan_pass) = match &r.scan {
                    Some(sc) => (sc.rows.to_string(), sc.all_pass().to_string()),
                    None => (String::new(), String::new()),
                };
                cols.extend([
                    r.grid.resolution.to_string(),
                    fmt_f64(r.grid.half_width),
                    r.cells.to_string(),
                    fmt_f64(r.asymmetry),
                    fmt_f64(r.lambda_omega),
                    fmt_f64(r.lambda_ball),
                    fmt_f64(r.invariant_omega),
                    fmt_f64(r.invariant_ball),
                    fmt_f64(r.deficit),
                    fmt_f64(r.stability.sigma1),
                    fmt_f64(r.rhs_main),
                    fmt_f64(r.margin),
                    r.branch.clone(),
                    scan_rows,
                    scan_pass,
                    r.remainder.map(|x| fmt_f64(x.value)).unwrap_or_default(),
                    fmt_f64(r.constants.beta),
                    fmt_f64(r.constants.gamma),
                    fmt_f64(r.constants.c1),
                    fmt_f64(r.constants.c2),
                    fmt_f64(r.constants.theta),
                    fmt_f64(r.solve_omega.residual),
                    "ok".into(),
                ]);
            }
            None => {
                cols.extend(std::iter::repeat_n(String::new(), SWEEP_COLUMNS.len() - 5));
                cols.push(csv_field(&format!("error: {}", row.error.as_deref().unwrap_or("unknown"))));
            }
        }
        writeln!(w, "{}", cols.join(","))?;
    }
    Ok(())
}

/// Value at x = 0 of the polynomial through the points (x_i, y_i).
pub fn polynomial_extrapolate(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidParameter("extrapolation needs matching nonempty samples".into()));
    }
    // Neville's scheme evaluated at 0
    let mut p = ys.to_vec();
    let n = xs.len();
    for k in 1..n {
        for i in 0..n - k {
            let d = xs[i] - xs[i + k];
            if d == 0.0 {
                return Err(Error::InvalidParameter("extrapolation nodes must be distinct".into()));
            }
            p[i] = (xs[i] * p[i + 1] - xs[i + k] * p[i]) / d;
        }
    }
    Ok(p[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SLimitRow {
    pub s: f64,
    pub lambda: f64,
    /// (1 - s) λ_{s,q}.
    pub scaled: f64,
    /// (ω_N / 2) λ_{1,q}.
    pub target: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SLimitStudy {
    pub shape: String,
    pub q: f64,
    pub local_lambda: f64,
    pub rows: Vec<SLimitRow>,
    /// Quadratic extrapolation in (1 - s) through the last three rows.
    pub extrapolated: f64,
    pub extrapolated_gap: f64,
    pub gap_monotone: bool,
}

pub fn s_limit_study(dom: &GridDomain, q: f64, s_list: &[f64], opts: &SolverOpts) -> Result<SLimitStudy> {
    if s_list.len() < 3 || s_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "s-limit study needs at least three increasing orders".into(),
        ));
    }
    let local = local_lambda(dom, q, opts)?;
    let target = PI / 2.0 * local;
    let rows = s_list
        .iter()
        .map(|&s| {
            let params = FracParams::new(2, s, q)?;
            let kernel = KernelTable::new(dom.spec, s)?;
            let r = minimize_lambda_with(&kernel, dom, &params, opts)?;
            let scaled = (1.0 - s) * r.lambda;
            Ok(SLimitRow {
                s,
                lambda: r.lambda,
                scaled,
                target,
                gap: (scaled - target).abs() / target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tail = &rows[rows.len() - 3..];
    let xs: Vec<f64> = tail.iter().map(|r| 1.0 - r.s).collect();
    let ys: Vec<f64> = tail.iter().map(|r| r.scaled).collect();
    let extrapolated = polynomial_extrapolate(&xs, &ys)?;
    Ok(SLimitStudy {
        shape: dom.meta.label(),
        q,
        local_lambda: local,
        gap_monotone: rows.windows(2).all(|w| w[1].gap <= w[0].gap),
        extrapolated_gap: (extrapolated - target).abs() / target,
        extrapolated,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLimitRow {
    pub q: f64,
    pub invariant_omega: f64,
    pub invariant_ball: f64,
    pub deficit: f64,
    /// λ on the whole usable box at the same grid (unscaled), a lower bound for λ(Ω).
    pub lambda_box: f64,
    pub lambda_omega: f64,
    /// Fewer than 4 cells carry half of ∫ u^q.
    pub concentrated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLimitStudy {
    pub shape: String,
    pub s: f64,
    pub rows: Vec<QLimitRow>,
    pub deficit_decreasing: bool,
    /// Truncated-extremal upper estimate of the sharp Sobolev constant.
    pub sobolev_estimate: f64,
}

fn concentration_cells(u: &GridFunction, q: f64) -> usize {
    let mut v: Vec<f64> = u.values.iter().map(|x| x.abs().powf(q)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = v.iter().sum();
    let mut acc = 0.0;
    for (k, x) in v.iter().enumerate() {
        acc += x;
        if acc >= 0.5 * total {
            return k + 1;
        }
    }
    v.len()
}

pub fn q_limit_study(dom: &GridDomain, s: f64, q_list: &[f64], opts: &SolverOpts) -> Result<QLimitStudy> {
    if q_list.is_empty() || q_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("q-limit study needs increasing exponents".into()));
    }
    let (omega, ball) = normalized_pair(dom)?;
    let kernel = KernelTable::new(omega.spec, s)?;
    let m = omega.spec.resolution;
    let big = GridDomain::from_mask(
        omega.spec,
        (0..omega.spec.len())
            .map(|k| {
                let (i, j) = omega.spec.coords(k);
                i > 0 && j > 0 && i + 1 < m && j + 1 < m
            })
            .collect(),
    )?;
    let rows = q_list
        .iter()
        .map(|&q| {
            let params = FracParams::new(2, s, q)?;
            let lo = minimize_lambda_with(&kernel, &omega, &params, opts)?;
            let lb = minimize_lambda_with(&kernel, &ball, &params, opts)?;
            let lbox = minimize_lambda_with(&kernel, &big, &params, opts)?;
            let io = scaled_invariant(lo.lambda, omega.measure(), &params);
            let ib = scaled_invariant(lb.lambda, ball.measure(), &params);
            Ok(QLimitRow {
                q,
                invariant_omega: io,
                invariant_ball: ib,
                deficit: io - ib,
                lambda_box: lbox.lambda,
                lambda_omega: lo.lambda,
                concentrated: concentration_cells(&lo.u, q) < 4,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QLimitStudy {
        shape: dom.meta.label(),
        s,
        sobolev_estimate: extremal_quotient(s, 16.0, 128)?.quotient,
        deficit_decreasing: rows.windows(2).all(|w| w[1].deficit < w[0].deficit),
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremalQuotient {
    pub radius: f64,
    pub resolution: usize,
    pub quotient: f64,
}

/// Rayleigh quotient at q = 2*_s of U(ρ) = (1 + ρ^2)^{(2s-N)/2} cut off at
/// radius R (U - U(R))_+, on the box of half-width 1.25 R.
pub fn extremal_quotient(s: f64, radius: f64, resolution: usize) -> Result<ExtremalQuotient> {
    if !(radius >= 8.0) {
        return Err(Error::InvalidParameter(format!(
            "extremal truncation radius must be >= 8 (got {radius})"
        )));
    }
    let spec = GridSpec::new(1.25 * radius, resolution)?;
    if spec.spacing() > 0.5 {
        return Err(Error::InvalidParameter(format!(
            "grid spacing {} does not resolve the unit-scale bump (needs <= 0.5; raise the resolution)",
            spec.spacing()
        )));
    }
    let q = FracParams::new(2, s, 2.0)?.two_star_s();
    let profile = |r2: f64| (1.0 + r2).powf(s - 1.0);
    let cut = profile(radius * radius);
    let u = GridFunction::from_fn(spec, |x, y| (profile(x * x + y * y) - cut).max(0.0));
    let kernel = KernelTable::new(spec, s)?;
    let au = kernel.apply_operator(&u)?;
    let energy: f64 = u.values.iter().zip(&au.values).map(|(a, b)| a * b).sum();
    let norm = u.lq_norm(q);
    Ok(ExtremalQuotient {
        radius,
        resolution,
        quotient: energy / (norm * norm),
    })
}

/// Local Poincaré-Sobolev constant with the five-point Dirichlet form.
pub fn local_lambda(dom: &GridDomain, q: f64, opts: &SolverOpts) -> Result<f64> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(Error::InvalidParameter(format!("exponent must satisfy q >= 1 (got q = {q})")));
    }
    let op = LocalOperator::new(dom)?;
    let weight = dom.spec.cell_area();
    let init = crate::nonlocal::conjugate_gradient(&op, &vec![weight; op.dim()], None, 1e-8, 50_000)?.x;
    Ok(minimize_rayleigh(&op, weight, q, opts, init)?.value)
}

/// C* = √(2N) (√π Γ(s + 1/2) / Γ(s + 1))^{1/2} for N = 2.
pub fn equivalence_constant(s: f64) -> f64 {
    let n = 2.0f64;
    let integral = PI.sqrt() * crate::special::gamma_ratio(s + 0.5, s + 1.0);
    (2.0 * n).sqrt() * integral.sqrt()
}

/// Σ_i [u]_{w_i} / [u]_{W^{s,2}}.
pub fn equivalence_ratio(u: &GridFunction, s: f64) -> Result<f64> {
    let full = crate::nonlocal::seminorm_sq(u, s)?;
    if !(full > 0.0) {
        return Err(Error::Degenerate("equivalence ratio of the zero function".into()));
    }
    let dirs = directional_seminorm_sq(u, s, 0)?.sqrt() + directional_seminorm_sq(u, s, 1)?.sqrt();
    Ok(dirs / full.sqrt())
}

/// Deterministic corpus of 25 test functions on [-1, 1]^2.
pub fn equivalence_corpus(spec: GridSpec) -> Vec<GridFunction> {
    let mut out = Vec::with_capacity(25);
    let bump = |cx: f64, cy: f64, a: f64, b: f64, p: i32| {
        GridFunction::from_fn(spec, move |x, y| {
            let t = 1.0 - ((x - cx) / a).powi(2) - ((y - cy) / b).powi(2);
            if t > 0.0 { t.powi(p) } else { 0.0 }
        })
    };
    for k in 0..10 {
        let t = k as f64;
        out.push(bump(0.1 * (t * 0.7).sin(), 0.1 * (t * 1.3).cos(), 0.35 + 0.04 * t, 0.6 - 0.03 * t, 2 + (k % 3) as i32));
    }
    for k in 0..5 {
        let f = 1.0 + k as f64;
        out.push(GridFunction::from_fn(spec, move |x, y| {
            let r2 = x * x + y * y;
            if r2 < 0.5 {
                (0.5 - r2) * (f * PI * x).cos().powi(2) * (1.0 + 0.3 * (f * y).sin())
            } else {
                0.0
            }
        }));
    }
    for k in 0..5 {
        let w = 0.2 + 0.1 * k as f64;
        out.push(GridFunction::from_fn(spec, move |x, y| {
            if x.abs() < w && y.abs() < 0.6 { (w - x.abs()) * (0.6 - y.abs()) } else { 0.0 }
        }));
    }
    for k in 0..5 {
        let d = 0.2 + 0.08 * k as f64;
        out.push(GridFunction::from_fn(spec, move |x, y| {
            let a = 1.0 - ((x - d).powi(2) + y * y) / 0.09;
            let b = 1.0 - ((x + d).powi(2) + (y - 0.1).powi(2)) / 0.06;
            a.max(0.0).powi(2) + 0.7 * b.max(0.0).powi(3)
        }));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub s: f64,
    pub constant: f64,
    pub ratios: Vec<f64>,
    pub ratio_low: f64,
    pub ratio_high: f64,
    pub within_band: bool,
}

pub fn seminorm_equivalence_check(corpus: &[GridFunction], s: f64) -> Result<EquivalenceReport> {
    let ratios = corpus
        .par_iter()
        .map(|u| equivalence_ratio(u, s))
        .collect::<Result<Vec<_>>>()?;
    let c = equivalence_constant(s);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(EquivalenceReport {
        s,
        constant: c,
        within_band: lo >= 1.0 / c && hi <= c,
        ratio_low: lo,
        ratio_high: hi,
        ratios,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub s: f64,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    /// 3/s + 0.3.
    pub proven_limit: f64,
    /// 2 + 1/s.
    pub smooth_target: f64,
    pub within_proven: bool,
}

/// Least-squares slope of log(deficit) against log(A).
pub fn smooth_exponent_check(samples: &[(f64, f64)], s: f64) -> Result<ExponentFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(a, d)| *a > 0.0 && *d > 0.0)
        .map(|(a, d)| (a.ln(), d.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::Degenerate(format!(
            "exponent fit needs at least 4 shapes with positive asymmetry and deficit (got {})",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("all shapes share one asymmetry value".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let proven_limit = 3.0 / s + 0.3;
    Ok(ExponentFit {
        s,
        points: pts.len(),
        slope,
        intercept: my - slope * mx,
        proven_limit,
        smooth_target: 2.0 + 1.0 / s,
        within_proven: slope <= proven_limit,
    })
}
