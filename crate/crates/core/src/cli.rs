//! The `frakra` command line: argument parsing, dispatch and report output.
//!
//! Exit status is 0 on success, 1 when a checked inequality fails, 2 on
//! invalid input and 3 when a numerical method fails to converge.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{Map, Value};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::constants::{eval_constants, stability_constants_with_provenance, ConstantsRecord, FracParams};
use crate::domain::{
    fraenkel_asymmetry, geometry_summary, make_shape, scaled_invariant, GridDomain, ShapeKind, ShapeParams,
};
use crate::error::{Error, Result};
use crate::extension::{extend, extension_energy, graded_zgrid, pad_function};
use crate::grid::{GridFunction, GridSpec};
use crate::nonlocal::{minimize_lambda, seminorm_sq, torsion_solve, SolverOpts};
use crate::rearrange::{gradient_energy, schwarz_rearrange};
use crate::report::{fmt_f64, to_json};
use crate::verify::{
    q_limit_study, s_limit_study, sweep_family, verify_fk, verify_torsion, write_sweep_csv, FamilySpec, VerifyOpts,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const THREADS_ENV: &str = "FRAKRA_THREADS";

#[derive(Parser, Debug, Serialize)]
#[command(name = "frakra", version, about = "Fractional Faber-Krahn numerics on pixelated planar domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Emit the report as JSON.
    #[arg(long, global = true, conflicts_with = "csv")]
    pub json: bool,

    /// Emit the report as CSV.
    #[arg(long, global = true)]
    pub csv: bool,

    /// Worker threads (falls back to FRAKRA_THREADS, then all cores).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Closed-form constants, and σ₁, σ₂ when ball values are given.
    Constants {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        lambda_ball: Option<f64>,
        #[arg(long)]
        torsion_ball: Option<f64>,
        /// Write the report to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rasterize a shape and report its geometry.
    Shape {
        #[command(flatten)]
        shape: ShapeArgs,
        /// Write the rasterized mask as a shape file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraenkel asymmetry of a shape.
    Asymmetry {
        #[command(flatten)]
        shape: ShapeArgs,
        /// Write the report to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Poincaré-Sobolev constant λ_{s,q} and its minimizer.
    Eigen {
        #[command(flatten)]
        shape: ShapeArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the minimizer as a function CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fractional torsional rigidity, optionally checked against the ball.
    Torsion {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long)]
        s: f64,
        /// Compare against the same-grid ball and check the stability bound.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the torsion function as a function CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schwarz rearrangement of a function CSV.
    Rearrange {
        /// Function CSV as written by `eigen --save`.
        input: PathBuf,
        /// Also compare Gagliardo seminorms at this order.
        #[arg(long)]
        s: Option<f64>,
        /// Write the rearranged function CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Poisson-kernel extension of a function CSV and its weighted energy.
    Extend {
        input: PathBuf,
        #[arg(long)]
        s: f64,
        /// Number of z-levels.
        #[arg(long, default_value_t = 64)]
        levels: usize,
        /// Lowest level (default h/8).
        #[arg(long)]
        zmin: Option<f64>,
        /// Highest level (default 8 times the padded half-width).
        #[arg(long)]
        zmax: Option<f64>,
        /// Pad the box this many times (odd) before extending.
        #[arg(long, default_value_t = 1)]
        pad: usize,
        /// Write the extension in the binary field format.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantitative Faber-Krahn check for one shape.
    VerifyFk {
        #[command(flatten)]
        shape: ShapeArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Skip the level-set scan on the main branch.
        #[arg(long)]
        no_scan: bool,
        /// Write the report to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Faber-Krahn checks over a shape family.
    Sweep {
        #[arg(long, value_enum)]
        family: FamilyKind,
        /// Aspect ratios (ellipse, rectangle), length ratios (stadium) or neck ratios (dumbbell).
        #[arg(long, alias = "aspects", value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        s: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long, default_value_t = 1.0)]
        half_width: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        no_scan: bool,
        /// Write the CSV (or JSON) to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// s → 1 or q → 2*_s limit studies.
    Limits {
        #[arg(long, value_enum)]
        mode: LimitMode,
        #[command(flatten)]
        shape: ShapeArgs,
        /// Fixed q for `--mode s`.
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        /// Fixed s for `--mode q`.
        #[arg(long, default_value_t = 0.5)]
        s: f64,
        /// Increasing s values (mode s) or q values (mode q).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the report to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    /// Destination of the report itself, for commands whose `--out` is the report.
    fn report_path(&self) -> Option<&PathBuf> {
        match self {
            Command::Constants { out, .. }
            | Command::Asymmetry { out, .. }
            | Command::VerifyFk { out, .. }
            | Command::Sweep { out, .. }
            | Command::Limits { out, .. } => out.as_ref(),
            _ => None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Ellipse,
    Rectangle,
    Stadium,
    Dumbbell,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitMode {
    S,
    Q,
}

#[derive(Args, Debug, Serialize)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long)]
    pub s: f64,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct ShapeArgs {
    /// Shape file, or an inline shape such as `ellipse:a=0.6,b=0.3`.
    #[arg(required_unless_present = "kind", conflicts_with = "kind")]
    pub shape: Option<String>,
    /// Shape kind, with its parameters given as flags (`--kind ellipse --a 0.6 --b 0.3`).
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub side: Option<f64>,
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub height: Option<f64>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub neck: Option<f64>,
    #[arg(long)]
    pub inner: Option<f64>,
    #[arg(long)]
    pub outer: Option<f64>,
    /// Cells per side (generated shapes only; a file carries its own grid).
    #[arg(long)]
    pub res: Option<usize>,
    /// Half-width of the box [-L, L]^2 (generated shapes only). Defaults to 1,
    /// or 1.25 times the largest half-extent when the shape reaches past 0.75.
    #[arg(long)]
    pub half_width: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random starts (0 picks 1 for q <= 2 and 3 otherwise).
    #[arg(long, default_value_t = 0)]
    pub starts: usize,
    /// Cross-check q = 2 eigenvalues with Lanczos.
    #[arg(long)]
    pub cross_check: bool,
}

impl SolverArgs {
    fn opts(&self) -> Result<SolverOpts> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!("--tol must lie in (0, 1) (got {})", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("--max-iter must be positive".into()));
        }
        Ok(SolverOpts {
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            starts: self.starts,
            cross_check: self.cross_check,
        })
    }
}

impl ParamArgs {
    fn params(&self) -> Result<FracParams> {
        FracParams::new(self.n, self.s, self.q)
    }
}

pub const DEFAULT_RESOLUTION: usize = 64;

fn shape_from_pairs(kind: &str, pairs: &[(&str, f64)]) -> Result<ShapeParams> {
    let mut obj = Map::new();
    obj.insert("kind".into(), Value::String(kind.trim().to_string()));
    for &(k, x) in pairs {
        let num = serde_json::Number::from_f64(x)
            .ok_or_else(|| Error::InvalidShape(format!("shape parameter {k} must be finite")))?;
        obj.insert(k.to_string(), Value::Number(num));
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::InvalidShape(format!("{kind}: {e}")))
}

/// Inline shape: `kind:key=value,...` with the field names of [`ShapeParams`].
pub fn parse_inline_shape(text: &str) -> Result<ShapeParams> {
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let mut pairs = Vec::new();
    for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidShape(format!("shape parameter '{pair}' is not key=value")))?;
        let x: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidShape(format!("shape parameter {k} = '{v}' is not a number")))?;
        pairs.push((k.trim(), x));
    }
    shape_from_pairs(kind, &pairs)
}

/// Box half-width used for a generated shape when none is given.
pub fn default_half_width(shape: &ShapeParams) -> f64 {
    let (ex, ey) = shape.extent();
    let e = ex.max(ey);
    if e <= 0.75 {
        1.0
    } else {
        1.25 * e
    }
}

impl ShapeArgs {
    fn generated(&self) -> Result<Option<ShapeParams>> {
        if let Some(kind) = &self.kind {
            let flags = [
                ("a", self.a),
                ("b", self.b),
                ("radius", self.radius),
                ("side", self.side),
                ("width", self.width),
                ("height", self.height),
                ("length", self.length),
                ("separation", self.separation),
                ("neck", self.neck),
                ("inner", self.inner),
                ("outer", self.outer),
            ];
            let pairs: Vec<(&str, f64)> = flags.iter().filter_map(|&(k, v)| v.map(|x| (k, x))).collect();
            return shape_from_pairs(kind, &pairs).map(Some);
        }
        let text = self.shape.as_deref().unwrap_or_default();
        if Path::new(text).is_file() {
            return Ok(None);
        }
        if text.contains(':') {
            return parse_inline_shape(text).map(Some);
        }
        if ShapeKind::parse(text).is_ok() {
            return Err(Error::InvalidShape(format!(
                "'{text}' needs parameters, e.g. disk:radius=0.5 or --kind disk --radius 0.5"
            )));
        }
        Err(Error::InvalidShape(format!("shape file '{text}' not found")))
    }

    fn domain(&self) -> Result<GridDomain> {
        match self.generated()? {
            Some(params) => {
                let l = self.half_width.unwrap_or_else(|| default_half_width(&params));
                let spec = GridSpec::new(l, self.res.unwrap_or(DEFAULT_RESOLUTION))?;
                make_shape(params, spec)
            }
            None => {
                let path = Path::new(self.shape.as_deref().unwrap_or_default());
                let dom = GridDomain::read_shape(BufReader::new(File::open(path)?))?;
                if let Some(m) = self.res.filter(|&m| m != dom.spec.resolution) {
                    return Err(Error::InvalidParameter(format!(
                        "--res {m} conflicts with the shape file resolution {}",
                        dom.spec.resolution
                    )));
                }
                if self.half_width.is_some_and(|l| l != dom.spec.half_width) {
                    return Err(Error::InvalidParameter(format!(
                        "--half-width conflicts with the shape file half-width {}",
                        dom.spec.half_width
                    )));
                }
                Ok(dom)
            }
        }
    }
}

/// Named pass/fail outcome attached to a report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        pass,
        detail,
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    grid: Option<GridSpec>,
    constants: Option<ConstantsRecord>,
    result: Value,
    checks: &'a [Check],
}

/// Tabular payload for `--csv`: frozen header plus rows.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

struct Outcome {
    grid: Option<GridSpec>,
    constants: Option<ConstantsRecord>,
    result: Value,
    checks: Vec<Check>,
    table: Option<Table>,
    /// Raw CSV written verbatim (sweep).
    raw_csv: Option<String>,
}

fn value_of<T: Serialize>(v: &T) -> Value {
    serde_json::from_str(&to_json(v)).expect("reports serialize to valid JSON")
}

impl Outcome {
    fn new<T: Serialize>(result: &T) -> Self {
        Self {
            grid: None,
            constants: None,
            result: value_of(result),
            checks: Vec::new(),
            table: None,
            raw_csv: None,
        }
    }
}

fn write_field<T, F>(path: &Option<PathBuf>, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<T>,
{
    if let Some(p) = path {
        let mut w = BufWriter::new(File::create(p)?);
        f(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn read_function(path: &Path) -> Result<GridFunction> {
    GridFunction::read_csv(BufReader::new(File::open(path)?))
}

#[derive(Serialize)]
struct ShapeResult {
    label: String,
    cells: usize,
    measure: f64,
    analytic_area: Option<f64>,
    perimeter: f64,
    barycenter: (f64, f64),
    components: usize,
}

#[derive(Serialize)]
struct EigenResult {
    shape: String,
    lambda: f64,
    measure: f64,
    scaled_invariant: f64,
    iterations: usize,
    residual: f64,
    start_values: Vec<f64>,
    starts_disagree: bool,
    cross_check: Option<f64>,
}

#[derive(Serialize)]
struct TorsionResult {
    shape: String,
    s: f64,
    torsion: f64,
    measure: f64,
    scaled_torsion: f64,
    iterations: usize,
    residual: f64,
}

#[derive(Serialize)]
struct RearrangeResult {
    equimeasurable: bool,
    gradient_energy: f64,
    gradient_energy_rearranged: f64,
    seminorm_sq: Option<f64>,
    seminorm_sq_rearranged: Option<f64>,
}

#[derive(Serialize)]
struct ExtendResult {
    s: f64,
    levels: usize,
    padding: usize,
    z_min: f64,
    z_max: f64,
    extension_energy: f64,
    z_tail: f64,
    x_tail: f64,
    seminorm_sq: f64,
    gamma: f64,
    gamma_energy: f64,
    relative_gap: f64,
}

/// Relative slack of the discrete Pólya-Szegő comparison.
pub const POLYA_SZEGO_SLACK: f64 = 0.02;

fn sorted_bits(v: &[f64]) -> Vec<u64> {
    let mut b: Vec<f64> = v.to_vec();
    b.sort_by(|x, y| x.total_cmp(y));
    b.into_iter().map(f64::to_bits).collect()
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Constants {
            params,
            lambda_ball,
            torsion_ball,
            ..
        } => {
            let p = params.params()?;
            let record = eval_constants(&p)?;
            let mut out = match (lambda_ball, torsion_ball) {
                (Some(l), Some(t)) => {
                    Outcome::new(&stability_constants_with_provenance(&record, &p, *l, *t, "command line")?)
                }
                (None, None) => Outcome::new(&record),
                _ => {
                    return Err(Error::InvalidParameter(
                        "--lambda-ball and --torsion-ball must be given together".into(),
                    ))
                }
            };
            out.constants = Some(record);
            Ok(out)
        }
        Command::Shape { shape, out: save } => {
            let dom = shape.domain()?;
            let g = geometry_summary(&dom)?;
            write_field(save, |w| dom.write_shape(w))?;
            let mut out = Outcome::new(&ShapeResult {
                label: dom.meta.label(),
                cells: dom.cell_count(),
                measure: g.measure,
                analytic_area: dom.meta.analytic_area,
                perimeter: g.perimeter,
                barycenter: g.barycenter,
                components: dom.connected_components().len(),
            });
            out.grid = Some(dom.spec);
            Ok(out)
        }
        Command::Asymmetry { shape, .. } => {
            let dom = shape.domain()?;
            let mut out = Outcome::new(&fraenkel_asymmetry(&dom)?);
            out.grid = Some(dom.spec);
            Ok(out)
        }
        Command::Eigen {
            shape,
            params,
            solver,
            out: save,
        } => {
            let p = params.params()?;
            let opts = solver.opts()?;
            let dom = shape.domain()?;
            let r = minimize_lambda(&dom, &p, &opts)?;
            write_field(save, |w| r.u.write_csv(w))?;
            let mut out = Outcome::new(&EigenResult {
                shape: dom.meta.label(),
                lambda: r.lambda,
                measure: dom.measure(),
                scaled_invariant: scaled_invariant(r.lambda, dom.measure(), &p),
                iterations: r.iterations,
                residual: r.residual,
                start_values: r.start_values.clone(),
                starts_disagree: r.starts_disagree,
                cross_check: r.cross_check,
            });
            if let Some(c) = r.cross_check {
                let rel = (c - r.lambda).abs() / r.lambda;
                out.checks
                    .push(check("lanczos_agreement", rel <= 1e-6, format!("relative gap {}", fmt_f64(rel))));
            }
            out.grid = Some(dom.spec);
            out.constants = Some(eval_constants(&p)?);
            Ok(out)
        }
        Command::Torsion {
            shape,
            s,
            verify,
            solver,
            out: save,
        } => {
            let dom = shape.domain()?;
            let p = FracParams::new(2, *s, 1.0)?;
            let mut out = if *verify {
                let opts = VerifyOpts {
                    solver: solver.opts()?,
                    level_scan: false,
                };
                let r = verify_torsion(&dom, *s, &opts)?;
                let mut out = Outcome::new(&r);
                out.checks.push(check(
                    "torsion_bound",
                    r.bound_ok(),
                    format!("margin {}", fmt_f64(r.margin)),
                ));
                out.checks.push(check(
                    "reciprocity",
                    r.reciprocity_ok(0.05),
                    format!(
                        "|T λ - 1| = {} on Ω, {} on the ball",
                        fmt_f64(r.reciprocity_omega),
                        fmt_f64(r.reciprocity_ball)
                    ),
                ));
                out
            } else {
                let r = torsion_solve(&dom, *s)?;
                write_field(save, |w| r.w.write_csv(w))?;
                let e = (2.0 + 2.0 * s) / 2.0;
                Outcome::new(&TorsionResult {
                    shape: dom.meta.label(),
                    s: *s,
                    torsion: r.torsion,
                    measure: dom.measure(),
                    scaled_torsion: r.torsion / dom.measure().powf(e),
                    iterations: r.iterations,
                    residual: r.residual,
                })
            };
            out.grid = Some(dom.spec);
            out.constants = Some(eval_constants(&p)?);
            Ok(out)
        }
        Command::Rearrange { input, s, out: save } => {
            let u = read_function(input)?;
            let r = schwarz_rearrange(&u)?;
            write_field(save, |w| r.write_csv(w))?;
            let (a, b) = match s {
                Some(s) => (Some(seminorm_sq(&u, *s)?), Some(seminorm_sq(&r, *s)?)),
                None => (None, None),
            };
            let ge = gradient_energy(u.spec, &u.values);
            let gr = gradient_energy(r.spec, &r.values);
            let res = RearrangeResult {
                equimeasurable: sorted_bits(&u.values) == sorted_bits(&r.values),
                gradient_energy: ge,
                gradient_energy_rearranged: gr,
                seminorm_sq: a,
                seminorm_sq_rearranged: b,
            };
            let mut out = Outcome::new(&res);
            out.checks
                .push(check("equimeasurable", res.equimeasurable, "sorted values compared bitwise".into()));
            out.checks.push(check(
                "polya_szego_gradient",
                gr <= ge * (1.0 + POLYA_SZEGO_SLACK),
                format!("{} after vs {} before", fmt_f64(gr), fmt_f64(ge)),
            ));
            if let (Some(a), Some(b)) = (a, b) {
                out.checks.push(check(
                    "polya_szego_seminorm",
                    b <= a * (1.0 + POLYA_SZEGO_SLACK),
                    format!("{} after vs {} before", fmt_f64(b), fmt_f64(a)),
                ));
            }
            out.grid = Some(u.spec);
            Ok(out)
        }
        Command::Extend {
            input,
            s,
            levels,
            zmin,
            zmax,
            pad,
            out: save,
        } => {
            let u = read_function(input)?;
            let p = FracParams::new(2, *s, 2.0)?;
            let record = eval_constants(&p)?;
            let padded = pad_function(&u, *pad)?;
            let zgrid = graded_zgrid(
                zmin.unwrap_or(u.spec.spacing() / 8.0),
                zmax.unwrap_or(8.0 * padded.spec.half_width),
                *levels,
            )?;
            let field = extend(&padded, &zgrid, *s)?;
            write_field(save, |w| field.write_binary(w))?;
            let energy = extension_energy(&field)?;
            let semi = seminorm_sq(&u, *s)?;
            let ge = record.gamma * energy.energy;
            let mut out = Outcome::new(&ExtendResult {
                s: *s,
                levels: *levels,
                padding: *pad,
                z_min: zgrid[0],
                z_max: zgrid[zgrid.len() - 1],
                extension_energy: energy.energy,
                z_tail: energy.truncation.z_tail,
                x_tail: energy.truncation.x_tail,
                seminorm_sq: semi,
                gamma: record.gamma,
                gamma_energy: ge,
                relative_gap: if semi > 0.0 { (ge - semi).abs() / semi } else { 0.0 },
            });
            out.grid = Some(u.spec);
            out.constants = Some(record);
            Ok(out)
        }
        Command::VerifyFk {
            shape,
            params,
            solver,
            no_scan,
            ..
        } => {
            let p = params.params()?;
            let opts = VerifyOpts {
                solver: solver.opts()?,
                level_scan: !no_scan,
            };
            let dom = shape.domain()?;
            let r = verify_fk(&dom, &p, &opts)?;
            let mut out = Outcome::new(&r);
            out.checks = deficit_checks(&r);
            out.grid = Some(r.grid);
            out.constants = Some(r.constants.clone());
            Ok(out)
        }
        Command::Sweep {
            family,
            values,
            s,
            q,
            res,
            half_width,
            solver,
            no_scan,
            ..
        } => {
            let grid = GridSpec::new(*half_width, *res)?;
            for &x in s {
                FracParams::new(2, x, 1.0)?;
            }
            for &x in q {
                FracParams::new(2, 0.5, x)?;
            }
            let name = match family {
                FamilyKind::Ellipse => "ellipse",
                FamilyKind::Rectangle => "rectangle",
                FamilyKind::Stadium => "stadium",
                FamilyKind::Dumbbell => "dumbbell",
            };
            let fam = FamilySpec::parse(name, grid, values)?;
            let opts = VerifyOpts {
                solver: solver.opts()?,
                level_scan: !no_scan,
            };
            let rows = sweep_family(&fam, s, q, &opts);
            let mut checks = Vec::new();
            for row in &rows {
                match (&row.report, &row.error) {
                    (Some(r), _) => {
                        for c in deficit_checks(r).into_iter().filter(|c| !c.pass) {
                            checks.push(check(&format!("row {}: {}", row.index, c.name), false, c.detail));
                        }
                    }
                    (None, Some(e)) => checks.push(check(&format!("row {}: error", row.index), true, e.clone())),
                    (None, None) => {}
                }
            }
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf)?;
            let mut out = Outcome::new(&rows);
            out.grid = Some(grid);
            out.checks = checks;
            out.raw_csv = Some(String::from_utf8(buf).expect("CSV is UTF-8"));
            Ok(out)
        }
        Command::Limits {
            mode,
            shape,
            q,
            s,
            values,
            solver,
            ..
        } => {
            let dom = shape.domain()?;
            let opts = solver.opts()?;
            let mut out = match mode {
                LimitMode::S => {
                    let list = values.clone().unwrap_or_else(|| vec![0.6, 0.7, 0.8, 0.85, 0.9, 0.95]);
                    let st = s_limit_study(&dom, *q, &list, &opts)?;
                    let mut out = Outcome::new(&st);
                    out.table = Some(Table {
                        header: ["s", "lambda", "scaled", "target", "gap"].map(String::from).to_vec(),
                        rows: st
                            .rows
                            .iter()
                            .map(|r| vec![fmt_f64(r.s), fmt_f64(r.lambda), fmt_f64(r.scaled), fmt_f64(r.target), fmt_f64(r.gap)])
                            .collect(),
                    });
                    out
                }
                LimitMode::Q => {
                    let list = values.clone().unwrap_or_else(|| vec![2.0, 2.8, 3.4, 3.8]);
                    let st = q_limit_study(&dom, *s, &list, &opts)?;
                    let mut out = Outcome::new(&st);
                    out.checks.push(check(
                        "deficit_decreasing",
                        st.deficit_decreasing,
                        "deficit strictly decreasing along q".into(),
                    ));
                    let mono = st.rows.iter().all(|r| r.lambda_omega >= r.lambda_box);
                    out.checks.push(check(
                        "domain_monotonicity",
                        mono,
                        "λ(Ω) >= λ(box) in every row".into(),
                    ));
                    out.table = Some(Table {
                        header: [
                            "q",
                            "invariant_omega",
                            "invariant_ball",
                            "deficit",
                            "lambda_box",
                            "lambda_omega",
                            "concentrated",
                        ]
                        .map(String::from)
                        .to_vec(),
                        rows: st
                            .rows
                            .iter()
                            .map(|r| {
                                vec![
                                    fmt_f64(r.q),
                                    fmt_f64(r.invariant_omega),
                                    fmt_f64(r.invariant_ball),
                                    fmt_f64(r.deficit),
                                    fmt_f64(r.lambda_box),
                                    fmt_f64(r.lambda_omega),
                                    r.concentrated.to_string(),
                                ]
                            })
                            .collect(),
                    });
                    out
                }
            };
            out.grid = Some(dom.spec);
            Ok(out)
        }
    }
}

/// Pass/fail flags of a single Faber-Krahn report.
pub fn deficit_checks(r: &crate::verify::DeficitReport) -> Vec<Check> {
    let mut out = vec![
        check(
            "faber_krahn",
            r.faber_krahn_ok(),
            format!(
                "deficit {} vs -2% of the ball invariant {}",
                fmt_f64(r.deficit),
                fmt_f64(r.invariant_ball)
            ),
        ),
        check("stability_bound", r.bound_ok(), format!("margin {}", fmt_f64(r.margin))),
    ];
    if let Some(ok) = r.easy_chain {
        out.push(check("easy_branch_chain", ok, "λ(Ω) >= λ(B)(1 + C₂A/(2(1 + C₂)))".into()));
    }
    if let Some(sc) = &r.scan {
        out.push(check(
            "level_window",
            sc.all_pass(),
            format!(
                "{} rows: {} measure, {} asymmetry, {}/{} sandwich",
                sc.rows, sc.measure_pass, sc.asymmetry_pass, sc.sandwich_pass, sc.sandwich_checked
            ),
        ));
    }
    if let Some(rem) = &r.remainder {
        out.push(check(
            "remainder_below_deficit",
            r.remainder_ok(),
            format!("remainder {} vs deficit {}", fmt_f64(rem.value), fmt_f64(r.deficit)),
        ));
    }
    out
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.to_string(),
            (None, Some(i)) => i.to_string(),
            _ => fmt_f64(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => s.clone(),
        _ => unreachable!("only scalars are flattened"),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&key(k), x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&key(&i.to_string()), x, out);
            }
        }
        _ => out.push((prefix.to_string(), scalar_text(v))),
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Text,
    Json,
    Csv,
}

fn render(cli: &Cli, outcome: &Outcome, format: Format) -> String {
    let env = Envelope {
        tool: "frakra",
        version: env!("CARGO_PKG_VERSION"),
        command: &cli.command,
        grid: outcome.grid,
        constants: outcome.constants.clone(),
        result: outcome.result.clone(),
        checks: &outcome.checks,
    };
    match format {
        Format::Json => {
            let mut s = to_json(&env);
            s.push('\n');
            s
        }
        Format::Csv => {
            if let Some(raw) = &outcome.raw_csv {
                return raw.clone();
            }
            let mut s = String::new();
            if let Some(t) = &outcome.table {
                s.push_str(&t.header.join(","));
                s.push('\n');
                for r in &t.rows {
                    s.push_str(&r.iter().map(|x| csv_escape(x)).collect::<Vec<_>>().join(","));
                    s.push('\n');
                }
                return s;
            }
            let mut pairs = Vec::new();
            flatten("", &value_of(&env), &mut pairs);
            s.push_str("key,value\n");
            for (k, v) in pairs {
                s.push_str(&format!("{},{}\n", csv_escape(&k), csv_escape(&v)));
            }
            s
        }
        Format::Text => {
            let mut pairs = Vec::new();
            flatten("", &value_of(&env), &mut pairs);
            let mut s = String::new();
            for (k, v) in pairs {
                s.push_str(&format!("{k} = {v}\n"));
            }
            s
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } | Error::CgBreakdown { .. } | Error::Degenerate(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Thread count from `--threads`, else `FRAKRA_THREADS`, else rayon's default (0).
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> std::result::Result<usize, String> {
    match (flag, env) {
        (Some(n), _) => Ok(n),
        (None, Some(v)) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer (got '{v}')")),
        _ => Ok(0),
    }
}

/// Parse, run and write the report; returns the process exit code.
pub fn run<I, T, O, E>(args: I, stdout: &mut O, stderr: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    O: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    let env = std::env::var(THREADS_ENV).ok();
    let threads = match resolve_threads(cli.threads, env.as_deref()) {
        Ok(n) => n,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            return EXIT_INPUT;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start {threads} worker threads: {e}");
            return EXIT_INPUT;
        }
    };
    let outcome = match pool.install(|| dispatch(&cli.command)) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_code(&e);
        }
    };
    let format = if cli.json {
        Format::Json
    } else if cli.csv || matches!(cli.command, Command::Sweep { .. }) {
        Format::Csv
    } else {
        Format::Text
    };
    let text = render(&cli, &outcome, format);
    let written = match cli.command.report_path() {
        Some(p) => std::fs::write(p, text.as_bytes()),
        None => stdout.write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: cannot write report: {e}");
        return EXIT_INPUT;
    }
    let failed: Vec<&Check> = outcome.checks.iter().filter(|c| !c.pass).collect();
    for c in &outcome.checks {
        if c.name.ends_with(": error") {
            let _ = writeln!(stderr, "warning: {}: {}", c.name, c.detail);
        }
    }
    if failed.is_empty() {
        EXIT_OK
    } else {
        for c in failed {
            let _ = writeln!(stderr, "assertion failed: {}: {}", c.name, c.detail);
        }
        EXIT_ASSERTION
    }
}
