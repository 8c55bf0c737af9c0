//! Pixelated planar domains: shape generation, measure, perimeter and
//! Fraenkel asymmetry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::constants::FracParams;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Ellipse,
    Square,
    Rectangle,
    Stadium,
    Dumbbell,
    Annulus,
    Custom,
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Square => "square",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Stadium => "stadium",
            ShapeKind::Dumbbell => "dumbbell",
            ShapeKind::Annulus => "annulus",
            ShapeKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "disk" => ShapeKind::Disk,
            "ellipse" => ShapeKind::Ellipse,
            "square" => ShapeKind::Square,
            "rectangle" => ShapeKind::Rectangle,
            "stadium" => ShapeKind::Stadium,
            "dumbbell" => ShapeKind::Dumbbell,
            "annulus" => ShapeKind::Annulus,
            "custom" => ShapeKind::Custom,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown shape kind '{other}' (expected disk, ellipse, square, rectangle, stadium, dumbbell or annulus)"
                )))
            }
        })
    }
}

/// Continuum shape, centered at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeParams {
    Disk { radius: f64 },
    /// Semi-axes `a` (along x) and `b` (along y).
    Ellipse { a: f64, b: f64 },
    Square { side: f64 },
    Rectangle { width: f64, height: f64 },
    /// Points within `radius` of the segment [-length/2, length/2] x {0}.
    Stadium { length: f64, radius: f64 },
    /// Two disks of `radius` centered at (±separation/2, 0), joined by a neck of width `neck`.
    Dumbbell { radius: f64, separation: f64, neck: f64 },
    Annulus { inner: f64, outer: f64 },
}

impl ShapeParams {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeParams::Disk { .. } => ShapeKind::Disk,
            ShapeParams::Ellipse { .. } => ShapeKind::Ellipse,
            ShapeParams::Square { .. } => ShapeKind::Square,
            ShapeParams::Rectangle { .. } => ShapeKind::Rectangle,
            ShapeParams::Stadium { .. } => ShapeKind::Stadium,
            ShapeParams::Dumbbell { .. } => ShapeKind::Dumbbell,
            ShapeParams::Annulus { .. } => ShapeKind::Annulus,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            ShapeParams::Disk { radius } => x * x + y * y < radius * radius,
            ShapeParams::Ellipse { a, b } => (x / a).powi(2) + (y / b).powi(2) < 1.0,
            ShapeParams::Square { side } => x.abs() < 0.5 * side && y.abs() < 0.5 * side,
            ShapeParams::Rectangle { width, height } => x.abs() < 0.5 * width && y.abs() < 0.5 * height,
            ShapeParams::Stadium { length, radius } => {
                let dx = (x.abs() - 0.5 * length).max(0.0);
                dx * dx + y * y < radius * radius
            }
            ShapeParams::Dumbbell { radius, separation, neck } => {
                let c = 0.5 * separation;
                let in_disk = |cx: f64| (x - cx).powi(2) + y * y < radius * radius;
                in_disk(c) || in_disk(-c) || (x.abs() <= c && y.abs() < 0.5 * neck)
            }
            ShapeParams::Annulus { inner, outer } => {
                let r2 = x * x + y * y;
                r2 < outer * outer && r2 > inner * inner
            }
        }
    }

    pub fn analytic_area(&self) -> f64 {
        match *self {
            ShapeParams::Disk { radius } => PI * radius * radius,
            ShapeParams::Ellipse { a, b } => PI * a * b,
            ShapeParams::Square { side } => side * side,
            ShapeParams::Rectangle { width, height } => width * height,
            ShapeParams::Stadium { length, radius } => 2.0 * radius * length + PI * radius * radius,
            ShapeParams::Dumbbell { radius, separation, neck } => {
                let a = 0.5 * neck;
                let chord = a * (radius * radius - a * a).sqrt() + radius * radius * (a / radius).asin();
                2.0 * PI * radius * radius + neck * separation - 2.0 * chord
            }
            ShapeParams::Annulus { inner, outer } => PI * (outer * outer - inner * inner),
        }
    }

    /// Half-extents (x, y) of the bounding box.
    pub fn extent(&self) -> (f64, f64) {
        match *self {
            ShapeParams::Disk { radius } => (radius, radius),
            ShapeParams::Ellipse { a, b } => (a, b),
            ShapeParams::Square { side } => (0.5 * side, 0.5 * side),
            ShapeParams::Rectangle { width, height } => (0.5 * width, 0.5 * height),
            ShapeParams::Stadium { length, radius } => (0.5 * length + radius, radius),
            ShapeParams::Dumbbell { radius, separation, .. } => (0.5 * separation + radius, radius),
            ShapeParams::Annulus { outer, .. } => (outer, outer),
        }
    }

    fn validate(&self, h: f64) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidShape(format!("{name} must be positive (got {v})")))
            }
        };
        match *self {
            ShapeParams::Disk { radius } => pos("radius", radius),
            ShapeParams::Ellipse { a, b } => pos("a", a).and(pos("b", b)),
            ShapeParams::Square { side } => pos("side", side),
            ShapeParams::Rectangle { width, height } => pos("width", width).and(pos("height", height)),
            ShapeParams::Stadium { length, radius } => {
                pos("radius", radius)?;
                if length < 0.0 {
                    return Err(Error::InvalidShape(format!("stadium length must be >= 0 (got {length})")));
                }
                Ok(())
            }
            ShapeParams::Dumbbell { radius, separation, neck } => {
                pos("radius", radius)?;
                if separation < 2.0 * radius {
                    return Err(Error::InvalidShape(format!(
                        "dumbbell separation {separation} must be at least twice the radius {radius}"
                    )));
                }
                if neck < 2.0 * h {
                    return Err(Error::InvalidShape(format!(
                        "dumbbell neck width {neck} is below 2h = {}",
                        2.0 * h
                    )));
                }
                if neck >= 2.0 * radius {
                    return Err(Error::InvalidShape(format!(
                        "dumbbell neck width {neck} must be smaller than the disk diameter {}",
                        2.0 * radius
                    )));
                }
                Ok(())
            }
            ShapeParams::Annulus { inner, outer } => {
                pos("inner", inner)?;
                if outer <= inner {
                    return Err(Error::InvalidShape(format!(
                        "annulus outer radius {outer} must exceed inner radius {inner}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Smoothness class of the boundary: (exterior-ball radius, Hölder exponent).
    fn smoothness(&self, half_width: f64) -> SmoothnessClass {
        match *self {
            ShapeParams::Disk { .. }
            | ShapeParams::Ellipse { .. }
            | ShapeParams::Stadium { .. } => SmoothnessClass {
                lipschitz: true,
                exterior_ball_radius: Some(half_width),
                c1_alpha: Some(1.0),
            },
            ShapeParams::Annulus { inner, .. } => SmoothnessClass {
                lipschitz: true,
                exterior_ball_radius: Some(inner),
                c1_alpha: Some(1.0),
            },
            ShapeParams::Square { .. } | ShapeParams::Rectangle { .. } => SmoothnessClass {
                lipschitz: true,
                exterior_ball_radius: Some(half_width),
                c1_alpha: None,
            },
            ShapeParams::Dumbbell { .. } => SmoothnessClass {
                lipschitz: true,
                exterior_ball_radius: None,
                c1_alpha: None,
            },
        }
    }
}

/// Regularity flags used by the smooth-set improvement: class A is a
/// Lipschitz boundary with an exterior ball of the given radius, class B a
/// C^{1,α} boundary. Convex shapes record the box half-width as radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessClass {
    pub lipschitz: bool,
    pub exterior_ball_radius: Option<f64>,
    pub c1_alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeMeta {
    pub kind: ShapeKind,
    pub params: Option<ShapeParams>,
    pub analytic_area: Option<f64>,
    pub smoothness: Option<SmoothnessClass>,
}

impl ShapeMeta {
    pub fn custom() -> Self {
        Self {
            kind: ShapeKind::Custom,
            params: None,
            analytic_area: None,
            smoothness: None,
        }
    }

    pub fn label(&self) -> String {
        match self.params {
            None => self.kind.name().to_string(),
            Some(p) => match p {
                ShapeParams::Disk { radius } => format!("disk(r={radius})"),
                ShapeParams::Ellipse { a, b } => format!("ellipse(a={a};b={b})"),
                ShapeParams::Square { side } => format!("square(side={side})"),
                ShapeParams::Rectangle { width, height } => format!("rectangle(w={width};h={height})"),
                ShapeParams::Stadium { length, radius } => format!("stadium(l={length};r={radius})"),
                ShapeParams::Dumbbell { radius, separation, neck } => {
                    format!("dumbbell(r={radius};d={separation};w={neck})")
                }
                ShapeParams::Annulus { inner, outer } => format!("annulus(ri={inner};ro={outer})"),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDomain {
    pub spec: GridSpec,
    pub mask: Vec<bool>,
    measure: f64,
    pub meta: ShapeMeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: (f64, f64),
    pub radius: f64,
}

impl Ball {
    pub fn new(center: (f64, f64), radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("ball radius must be positive (got {radius})")));
        }
        Ok(Self { center, radius })
    }

    pub fn with_area(center: (f64, f64), area: f64) -> Result<Self> {
        Self::new(center, (area / PI).sqrt())
    }

    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }
}

pub fn make_shape(shape: ShapeParams, spec: GridSpec) -> Result<GridDomain> {
    let h = spec.spacing();
    shape.validate(h)?;
    let (ex, ey) = shape.extent();
    let limit = spec.half_width - h;
    if ex >= limit || ey >= limit {
        return Err(Error::InvalidShape(format!(
            "{} with half-extents ({ex}, {ey}) does not fit strictly inside the box (needs < L - h = {limit})",
            shape.kind().name()
        )));
    }
    let mut dom = GridDomain::from_predicate(spec, |x, y| shape.contains(x, y))?;
    dom.meta = ShapeMeta {
        kind: shape.kind(),
        params: Some(shape),
        analytic_area: Some(shape.analytic_area()),
        smoothness: Some(shape.smoothness(spec.half_width)),
    };
    Ok(dom)
}

impl GridDomain {
    pub fn from_mask(spec: GridSpec, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != spec.len() {
            return Err(Error::InvalidShape(format!(
                "mask has {} cells, grid has {}",
                mask.len(),
                spec.len()
            )));
        }
        let m = spec.resolution;
        for k in 0..m {
            let ring = [spec.index(k, 0), spec.index(k, m - 1), spec.index(0, k), spec.index(m - 1, k)];
            if ring.iter().any(|&c| mask[c]) {
                return Err(Error::InvalidShape(
                    "domain touches the outer ring of the box; it must lie strictly inside".into(),
                ));
            }
        }
        let count = mask.iter().filter(|&&b| b).count();
        Ok(Self {
            spec,
            mask,
            measure: count as f64 * spec.cell_area(),
            meta: ShapeMeta::custom(),
        })
    }

    pub fn from_predicate<F: Fn(f64, f64) -> bool>(spec: GridSpec, f: F) -> Result<Self> {
        let mut mask = Vec::with_capacity(spec.len());
        for j in 0..spec.resolution {
            for i in 0..spec.resolution {
                let (x, y) = spec.center(i, j);
                mask.push(f(x, y));
            }
        }
        Self::from_mask(spec, mask)
    }

    pub fn with_meta(mut self, meta: ShapeMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn cell_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.measure == 0.0
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }

    pub fn contains_cell(&self, i: usize, j: usize) -> bool {
        self.mask[self.spec.index(i, j)]
    }

    pub fn is_subset_of(&self, other: &GridDomain) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            spec: self.spec.scaled(factor),
            mask: self.mask.clone(),
            measure: self.measure * factor * factor,
            meta: self.meta.clone(),
        }
    }

    /// Shift the mask by whole cells; cells pushed onto the outer ring are an error.
    pub fn shifted(&self, di: isize, dj: isize) -> Result<Self> {
        let m = self.spec.resolution as isize;
        let mut mask = vec![false; self.spec.len()];
        for k in self.cells() {
            let (i, j) = self.spec.coords(k);
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni < 0 || nj < 0 || ni >= m || nj >= m {
                return Err(Error::InvalidShape("shift moves the domain out of the box".into()));
            }
            mask[self.spec.index(ni as usize, nj as usize)] = true;
        }
        Ok(Self::from_mask(self.spec, mask)?.with_meta(self.meta.clone()))
    }

    /// 4-connected components, each as a list of cell indices in scan order.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let m = self.spec.resolution;
        let mut label = vec![usize::MAX; self.spec.len()];
        let mut comps = Vec::new();
        for start in 0..self.spec.len() {
            if !self.mask[start] || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut comp = Vec::new();
            let mut stack = vec![start];
            label[start] = id;
            while let Some(c) = stack.pop() {
                comp.push(c);
                let (i, j) = self.spec.coords(c);
                let mut push = |ni: usize, nj: usize| {
                    let n = self.spec.index(ni, nj);
                    if self.mask[n] && label[n] == usize::MAX {
                        label[n] = id;
                        stack.push(n);
                    }
                };
                if i > 0 {
                    push(i - 1, j);
                }
                if i + 1 < m {
                    push(i + 1, j);
                }
                if j > 0 {
                    push(i, j - 1);
                }
                if j + 1 < m {
                    push(i, j + 1);
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Shape file: `L M` header followed by M rows of '#'/'.'; row k holds cells with j = k.
    pub fn write_shape<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{} {}",
            crate::report::fmt_f64(self.spec.half_width),
            self.spec.resolution
        )?;
        let m = self.spec.resolution;
        let mut line = String::with_capacity(m);
        for j in 0..m {
            line.clear();
            for i in 0..m {
                line.push(if self.contains_cell(i, j) { '#' } else { '.' });
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_shape<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = loop {
            match lines.next() {
                None => return Err(Error::Parse("shape file is empty".into())),
                Some(l) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        break l;
                    }
                }
            }
        };
        let mut parts = header.split_whitespace();
        let l: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("shape header must be '<L> <M>'".into()))?;
        let m: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("shape header must be '<L> <M>'".into()))?;
        let spec = GridSpec::unchecked(l, m)?;
        let mut mask = Vec::with_capacity(spec.len());
        let mut rows = 0;
        for line in lines {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if rows == m {
                return Err(Error::Parse(format!("shape file has more than {m} rows")));
            }
            if line.chars().count() != m {
                return Err(Error::Parse(format!(
                    "shape row {} has {} characters, expected {m}",
                    rows + 1,
                    line.chars().count()
                )));
            }
            for c in line.chars() {
                match c {
                    '#' => mask.push(true),
                    '.' => mask.push(false),
                    other => {
                        return Err(Error::Parse(format!(
                            "shape row {} contains '{other}'; only '#' and '.' are allowed",
                            rows + 1
                        )))
                    }
                }
            }
            rows += 1;
        }
        if rows != m {
            return Err(Error::Parse(format!("shape file has {rows} rows, expected {m}")));
        }
        GridDomain::from_mask(spec, mask)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySummary {
    pub measure: f64,
    pub perimeter: f64,
    pub barycenter: (f64, f64),
}

/// Measure, marching-squares perimeter and barycenter.
pub fn geometry_summary(dom: &GridDomain) -> Result<GeometrySummary> {
    if dom.is_empty() {
        return Err(Error::EmptyDomain("geometry of an empty domain"));
    }
    let spec = dom.spec;
    let length_units = contour_length(dom);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0usize;
    for k in dom.cells() {
        let (i, j) = spec.coords(k);
        let (x, y) = spec.center(i, j);
        sx += x;
        sy += y;
        n += 1;
    }
    Ok(GeometrySummary {
        measure: dom.measure(),
        perimeter: length_units * spec.spacing(),
        barycenter: (sx / n as f64, sy / n as f64),
    })
}

/// Length (in cell units) of the 1/2 iso-contour of the 3x3 box-averaged
/// indicator, by marching squares with linear edge interpolation. Straight
/// axis-aligned edges land exactly on cell faces.
fn contour_length(dom: &GridDomain) -> f64 {
    let m = dom.spec.resolution;
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= m as isize || j >= m as isize {
            0.0
        } else if dom.contains_cell(i as usize, j as usize) {
            1.0
        } else {
            0.0
        }
    };
    let mut smooth = vec![0.0; (m + 2) * (m + 2)];
    // padded by one cell on each side; index (i + 1, j + 1)
    for j in -1..=(m as isize) {
        for i in -1..=(m as isize) {
            let mut acc = 0.0;
            for dj in -1..=1 {
                for di in -1..=1 {
                    acc += at(i + di, j + dj);
                }
            }
            smooth[(j + 1) as usize * (m + 2) + (i + 1) as usize] = acc / 9.0;
        }
    }
    let w = m + 2;
    let f = |i: usize, j: usize| smooth[j * w + i];
    let iso = 0.5;
    let cross = |a: f64, b: f64| (iso - a) / (b - a);
    let mut total = 0.0;
    for j in 0..w - 1 {
        for i in 0..w - 1 {
            // corners counter-clockwise: (0,0) (1,0) (1,1) (0,1)
            let v = [f(i, j), f(i + 1, j), f(i + 1, j + 1), f(i, j + 1)];
            let inside: Vec<bool> = v.iter().map(|&x| x > iso).collect();
            let count = inside.iter().filter(|&&b| b).count();
            if count == 0 || count == 4 {
                continue;
            }
            // crossing points on the four edges
            let pos = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            let mut pts: Vec<(f64, f64)> = Vec::with_capacity(4);
            for e in 0..4 {
                let a = e;
                let b = (e + 1) % 4;
                if inside[a] != inside[b] {
                    let t = cross(v[a], v[b]);
                    pts.push((
                        pos[a].0 + t * (pos[b].0 - pos[a].0),
                        pos[a].1 + t * (pos[b].1 - pos[a].1),
                    ));
                }
            }
            let dist = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            if pts.len() == 2 {
                total += dist(pts[0], pts[1]);
            } else if pts.len() == 4 {
                // saddle: the block average decides which corners connect
                let center = v.iter().sum::<f64>() / 4.0;
                if (center > iso) == inside[0] {
                    total += dist(pts[0], pts[1]) + dist(pts[2], pts[3]);
                } else {
                    total += dist(pts[3], pts[0]) + dist(pts[1], pts[2]);
                }
            }
        }
    }
    total
}

/// |Ω|^{2/q - 1 + 2s/N} λ.
pub fn scaled_invariant(lambda: f64, measure: f64, params: &FracParams) -> f64 {
    measure.powf(params.measure_exponent()) * lambda
}

/// Lower bound on the asymmetry of a set E with |ΩΔE|/|Ω| ≤ γ A(Ω).
pub fn transfer_bound(a_omega: f64, gamma: f64, e_minus_omega_null: bool) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "transfer parameter must satisfy 0 < gamma < 1/2 (got {gamma})"
        )));
    }
    if !(0.0..2.0).contains(&a_omega) {
        return Err(Error::InvalidParameter(format!(
            "asymmetry must lie in [0, 2) (got {a_omega})"
        )));
    }
    let c = if e_minus_omega_null { 1.0 } else { 1.0 + 2.0 * gamma };
    Ok((1.0 - 2.0 * gamma) / c * a_omega)
}

const SUBCELLS: usize = 16;

/// Cell/ball overlap in lattice units; the cell is [x0, x0+1] x [y0, y0+1].
fn cell_ball_overlap(x0: f64, y0: f64, cx: f64, cy: f64, rho: f64) -> f64 {
    let nx = cx.clamp(x0, x0 + 1.0) - cx;
    let ny = cy.clamp(y0, y0 + 1.0) - cy;
    let r2 = rho * rho;
    if nx * nx + ny * ny >= r2 {
        return 0.0;
    }
    let fx = (x0 - cx).abs().max((x0 + 1.0 - cx).abs());
    let fy = (y0 - cy).abs().max((y0 + 1.0 - cy).abs());
    if fx * fx + fy * fy <= r2 {
        return 1.0;
    }
    let step = 1.0 / SUBCELLS as f64;
    let mut inside = 0usize;
    for a in 0..SUBCELLS {
        let px = x0 + (a as f64 + 0.5) * step - cx;
        let px2 = px * px;
        for b in 0..SUBCELLS {
            let py = y0 + (b as f64 + 0.5) * step - cy;
            if px2 + py * py < r2 {
                inside += 1;
            }
        }
    }
    inside as f64 / (SUBCELLS * SUBCELLS) as f64
}

/// Cells of a domain in local lattice coordinates (lower-left corners),
/// anchored at the minimum occupied (i, j) so that whole-cell shifts are exact.
struct LocalCells {
    anchor: (usize, usize),
    corners: Vec<(f64, f64)>,
    rows: Vec<(usize, usize)>,
}

impl LocalCells {
    fn new(dom: &GridDomain) -> Self {
        let spec = dom.spec;
        let mut imin = usize::MAX;
        let mut jmin = usize::MAX;
        for k in dom.cells() {
            let (i, j) = spec.coords(k);
            imin = imin.min(i);
            jmin = jmin.min(j);
        }
        let mut corners = Vec::new();
        let mut rows = Vec::new();
        let m = spec.resolution;
        for j in 0..m {
            let start = corners.len();
            for i in 0..m {
                if dom.contains_cell(i, j) {
                    corners.push(((i - imin) as f64, (j - jmin) as f64));
                }
            }
            if corners.len() > start {
                rows.push((start, corners.len()));
            }
        }
        Self {
            anchor: (imin, jmin),
            corners,
            rows,
        }
    }

    /// |Ω ∩ B| in cell units, summed row by row in a fixed order.
    fn intersection(&self, cx: f64, cy: f64, rho: f64) -> f64 {
        let per_row: Vec<f64> = self
            .rows
            .par_iter()
            .map(|&(a, b)| {
                self.corners[a..b]
                    .iter()
                    .map(|&(x0, y0)| cell_ball_overlap(x0, y0, cx, cy, rho))
                    .sum::<f64>()
            })
            .collect();
        per_row.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryResult {
    pub asymmetry: f64,
    pub best: Ball,
    /// Final pattern-search step (world units); the center is a local
    /// minimizer up to this resolution.
    pub tolerance: f64,
    pub starts: usize,
}

/// Fraenkel asymmetry min_B |ΩΔB|/|Ω| over balls with |B| = |Ω|.
pub fn fraenkel_asymmetry(dom: &GridDomain) -> Result<AsymmetryResult> {
    if dom.is_empty() {
        return Err(Error::EmptyDomain("asymmetry of an empty domain"));
    }
    let spec = dom.spec;
    let h = spec.spacing();
    let local = LocalCells::new(dom);
    let n_cells = local.corners.len() as f64;
    let rho = (n_cells / PI).sqrt();
    let objective = |cx: f64, cy: f64| {
        // |ΩΔB| / |Ω| with |B| = |Ω|
        let inter = local.intersection(cx, cy, rho);
        (2.0 * n_cells - 2.0 * inter) / n_cells
    };

    let mut starts: Vec<(f64, f64)> = Vec::new();
    let centroid = |cells: &mut dyn Iterator<Item = (f64, f64)>| {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (x, y) in cells {
            sx += x + 0.5;
            sy += y + 0.5;
            n += 1.0;
        }
        (sx / n, sy / n)
    };
    starts.push(centroid(&mut local.corners.iter().copied()));
    let (ai, aj) = local.anchor;
    for comp in dom.connected_components() {
        let mut it = comp.iter().map(|&k| {
            let (i, j) = spec.coords(k);
            ((i - ai) as f64, (j - aj) as f64)
        });
        let c = centroid(&mut it);
        if !starts.contains(&c) {
            starts.push(c);
        }
    }

    let min_step = 1.0 / SUBCELLS as f64;
    let mut best: Option<(f64, (f64, f64))> = None;
    for &start in &starts {
        let (val, c) = pattern_search(&objective, start, (rho / 4.0).max(1.0), min_step);
        best = Some(match best {
            None => (val, c),
            Some((bv, bc)) => {
                if val < bv || (val == bv && lex_less(c, bc)) {
                    (val, c)
                } else {
                    (bv, bc)
                }
            }
        });
    }
    let (val, (cx, cy)) = best.expect("at least one start");
    let (x0, y0) = spec.center(ai, aj);
    let center = (x0 + (cx - 0.5) * h, y0 + (cy - 0.5) * h);
    Ok(AsymmetryResult {
        asymmetry: val.clamp(0.0, 2.0 - f64::EPSILON),
        best: Ball {
            center,
            radius: (dom.measure() / PI).sqrt(),
        },
        tolerance: min_step * h,
        starts: starts.len(),
    })
}

fn lex_less(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Compass search with 8 directions and step halving.
fn pattern_search<F: Fn(f64, f64) -> f64>(
    f: &F,
    start: (f64, f64),
    initial_step: f64,
    min_step: f64,
) -> (f64, (f64, f64)) {
    const DIRS: [(f64, f64); 8] = [
        (-1.0, 0.0),
        (0.0, -1.0),
        (0.0, 1.0),
        (1.0, 0.0),
        (-1.0, -1.0),
        (-1.0, 1.0),
        (1.0, -1.0),
        (1.0, 1.0),
    ];
    let mut c = start;
    let mut val = f(c.0, c.1);
    let mut step = initial_step;
    while step >= min_step {
        let mut improved = false;
        let mut best = (val, c);
        for (dx, dy) in DIRS {
            let cand = (c.0 + dx * step, c.1 + dy * step);
            let v = f(cand.0, cand.1);
            if v < best.0 || (v == best.0 && v < val && lex_less(cand, best.1)) {
                best = (v, cand);
            }
        }
        if best.0 < val {
            val = best.0;
            c = best.1;
            improved = true;
        }
        if !improved {
            step *= 0.5;
        }
    }
    (val, c)
}

/// |ΩΔB| for an arbitrary ball, with the same cell/ball overlap rule.
pub fn symmetric_difference(dom: &GridDomain, ball: &Ball) -> f64 {
    let spec = dom.spec;
    let h = spec.spacing();
    let local = LocalCells::new(dom);
    if local.corners.is_empty() {
        return ball.area();
    }
    let (ai, aj) = local.anchor;
    let (x0, y0) = spec.center(ai, aj);
    let cx = (ball.center.0 - x0) / h + 0.5;
    let cy = (ball.center.1 - y0) / h + 0.5;
    let rho = ball.radius / h;
    let inter = local.intersection(cx, cy, rho) * h * h;
    dom.measure() + ball.area() - 2.0 * inter
}
