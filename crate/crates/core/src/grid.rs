//! Uniform cell lattice on the box [-L, L]^2 and scalar fields living on it.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::domain::GridDomain;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub resolution: usize,
}

impl GridSpec {
    /// Production grid: `resolution` even and at least 16.
    pub fn new(half_width: f64, resolution: usize) -> Result<Self> {
        if resolution < 16 || resolution % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be even and >= 16 (got M = {resolution})"
            )));
        }
        Self::unchecked(half_width, resolution)
    }

    /// Any positive resolution; used for toy grids in checks and tests.
    pub fn unchecked(half_width: f64, resolution: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) || resolution == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid needs L > 0 and M >= 1 (got L = {half_width}, M = {resolution})"
            )));
        }
        Ok(Self { half_width, resolution })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.resolution as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.resolution + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.resolution, idx / self.resolution)
    }

    /// Center of cell (i, j); i runs along x, j along y.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        (
            -self.half_width + (i as f64 + 0.5) * h,
            -self.half_width + (j as f64 + 0.5) * h,
        )
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// Same lattice with all lengths multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            half_width: self.half_width * factor,
            resolution: self.resolution,
        }
    }
}

/// Cell-valued field, implicitly zero outside the box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub support: Option<GridDomain>,
}

impl GridFunction {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
            support: None,
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} values for a {}x{} grid, got {}",
                spec.len(),
                spec.resolution,
                spec.resolution,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("grid function values must be finite".into()));
        }
        Ok(Self { spec, values, support: None })
    }

    pub fn from_fn<F: FnMut(f64, f64) -> f64>(spec: GridSpec, mut f: F) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for j in 0..spec.resolution {
            for i in 0..spec.resolution {
                let (x, y) = spec.center(i, j);
                values.push(f(x, y));
            }
        }
        Self { spec, values, support: None }
    }

    /// Restrict to `dom`: values outside are zeroed and the support recorded.
    pub fn restricted_to(mut self, dom: &GridDomain) -> Self {
        for (v, &m) in self.values.iter_mut().zip(&dom.mask) {
            if !m {
                *v = 0.0;
            }
        }
        self.support = Some(dom.clone());
        self
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Discrete L^q norm (h^2 Σ |u|^q)^{1/q}.
    pub fn lq_norm(&self, q: f64) -> f64 {
        let h2 = self.spec.cell_area();
        let sum: f64 = self.values.iter().map(|v| v.abs().powf(q)).sum();
        (h2 * sum).powf(1.0 / q)
    }

    pub fn l2_dist_sq(&self, other: &GridFunction) -> f64 {
        let h2 = self.spec.cell_area();
        h2 * self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            spec: self.spec,
            values: self.values.iter().map(|v| c * v).collect(),
            support: self.support.clone(),
        }
    }

    pub fn abs(&self) -> Self {
        Self {
            spec: self.spec,
            values: self.values.iter().map(|v| v.abs()).collect(),
            support: self.support.clone(),
        }
    }

    /// Same values on a grid whose lengths are multiplied by `factor`.
    pub fn on_scaled_grid(&self, factor: f64) -> Self {
        Self {
            spec: self.spec.scaled(factor),
            values: self.values.clone(),
            support: self.support.as_ref().map(|d| d.scaled(factor)),
        }
    }

    pub fn is_supported_strictly_inside(&self) -> bool {
        let m = self.spec.resolution;
        (0..m).all(|k| {
            self.values[self.spec.index(k, 0)] == 0.0
                && self.values[self.spec.index(k, m - 1)] == 0.0
                && self.values[self.spec.index(0, k)] == 0.0
                && self.values[self.spec.index(m - 1, k)] == 0.0
        })
    }

    /// Function dump: a `# half_width=.. resolution=..` line, a header and (i, j, value) rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# half_width={} resolution={}",
            crate::report::fmt_f64(self.spec.half_width),
            self.spec.resolution
        )?;
        writeln!(w, "i,j,value")?;
        for j in 0..self.spec.resolution {
            for i in 0..self.spec.resolution {
                writeln!(
                    w,
                    "{},{},{}",
                    i,
                    j,
                    crate::report::fmt_f64(self.values[self.spec.index(i, j)])
                )?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut spec: Option<GridSpec> = None;
        let mut values: Vec<f64> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut l = None;
                let mut m = None;
                for tok in rest.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("half_width=") {
                        l = v.parse::<f64>().ok();
                    } else if let Some(v) = tok.strip_prefix("resolution=") {
                        m = v.parse::<usize>().ok();
                    }
                }
                if let (Some(l), Some(m)) = (l, m) {
                    let s = GridSpec::unchecked(l, m)?;
                    values = vec![0.0; s.len()];
                    spec = Some(s);
                }
                continue;
            }
            if line.starts_with("i,") {
                continue;
            }
            let s = spec.ok_or_else(|| {
                Error::Parse("function CSV must start with '# half_width=<L> resolution=<M>'".into())
            })?;
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected i,j,value", lineno + 1)));
            }
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 1));
            let i: usize = parts[0].trim().parse().map_err(|_| bad("i"))?;
            let j: usize = parts[1].trim().parse().map_err(|_| bad("j"))?;
            let v: f64 = parts[2].trim().parse().map_err(|_| bad("value"))?;
            if i >= s.resolution || j >= s.resolution {
                return Err(Error::Parse(format!("line {}: cell ({i},{j}) outside grid", lineno + 1)));
            }
            if !v.is_finite() {
                return Err(bad("value (not finite)"));
            }
            let k = s.index(i, j);
            values[k] = v;
        }
        let spec = spec.ok_or_else(|| Error::Parse("empty function CSV".into()))?;
        Ok(Self { spec, values, support: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(1.0, 15).is_err());
        assert!(GridSpec::new(1.0, 18).is_ok());
        assert!(GridSpec::new(0.0, 32).is_err());
        let g = GridSpec::new(2.0, 16).unwrap();
        assert_eq!(g.spacing(), 0.25);
        assert_eq!(g.center(0, 0), (-1.875, -1.875));
        assert_eq!(g.center(15, 15), (1.875, 1.875));
    }

    #[test]
    fn lq_norm_of_constant() {
        let g = GridSpec::new(1.0, 16).unwrap();
        let u = GridFunction::from_fn(g, |_, _| 2.0);
        assert!((u.lq_norm(2.0) - 4.0).abs() < 1e-12);
        assert!((u.lq_norm(1.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let g = GridSpec::new(1.5, 16).unwrap();
        let u = GridFunction::from_fn(g, |x, y| (x * 3.0).sin() * y.cos() + 0.1);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let v = GridFunction::read_csv(&buf[..]).unwrap();
        assert_eq!(u.spec, v.spec);
        assert_eq!(u.values, v.values);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(GridFunction::read_csv("1,2,3\n".as_bytes()).is_err());
        let bad = "# half_width=1 resolution=4\ni,j,value\n9,0,1.0\n";
        assert!(GridFunction::read_csv(bad.as_bytes()).is_err());
    }
}
