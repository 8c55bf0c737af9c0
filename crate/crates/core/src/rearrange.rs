//! Discrete Schwarz symmetrization about the centre of the box.

use rayon::prelude::*;

use crate::domain::GridDomain;
use crate::error::{Error, Result};
use crate::extension::ExtensionField;
use crate::grid::{GridFunction, GridSpec};

/// Box cells sorted by distance of their centre to the origin, ties broken
/// by scan index.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOrder {
    pub spec: GridSpec,
    pub order: Vec<usize>,
}

impl CellOrder {
    pub fn new(spec: GridSpec) -> Self {
        let m = spec.resolution as i64;
        // twice the centre coordinate in cell units is an exact integer
        let key = |k: usize| {
            let (i, j) = spec.coords(k);
            let a = 2 * i as i64 - m + 1;
            let b = 2 * j as i64 - m + 1;
            a * a + b * b
        };
        let mut order: Vec<usize> = (0..spec.len()).collect();
        order.sort_by_key(|&k| (key(k), k));
        Self { spec, order }
    }

    /// The discrete ball made of the first `count` cells.
    pub fn ball(&self, count: usize) -> Result<GridDomain> {
        let mut mask = vec![false; self.spec.len()];
        for &k in self.order.iter().take(count) {
            mask[k] = true;
        }
        GridDomain::from_mask(self.spec, mask)
    }
}

fn check_nonnegative(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(*v >= 0.0)) {
        None => Ok(()),
        Some(k) => Err(Error::InvalidParameter(format!(
            "rearrangement needs nonnegative finite values (cell {k} holds {})",
            values[k]
        ))),
    }
}

fn rearrange_values(order: &CellOrder, values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; values.len()];
    for (&target, &source) in order.order.iter().zip(&idx) {
        out[target] = values[source];
    }
    out
}

pub fn schwarz_rearrange(u: &GridFunction) -> Result<GridFunction> {
    schwarz_rearrange_with(&CellOrder::new(u.spec), u)
}

pub fn schwarz_rearrange_with(order: &CellOrder, u: &GridFunction) -> Result<GridFunction> {
    check_nonnegative(&u.values)?;
    Ok(GridFunction {
        spec: u.spec,
        values: rearrange_values(order, &u.values),
        support: None,
    })
}

/// h^2 · #{u > t}.
pub fn level_measure(u: &GridFunction, t: f64) -> f64 {
    u.spec.cell_area() * u.values.iter().filter(|&&v| v > t).count() as f64
}

/// Measure and cell set of the strict superlevel set {u > t}.
pub fn level_stats(u: &GridFunction, t: f64) -> Result<(f64, GridDomain)> {
    let mask: Vec<bool> = u.values.iter().map(|&v| v > t).collect();
    let dom = GridDomain::from_mask(u.spec, mask)?;
    Ok((dom.measure(), dom))
}

/// Rearranges every slice of the field (and its trace) independently.
pub fn partial_rearrange(field: &ExtensionField) -> Result<ExtensionField> {
    check_nonnegative(&field.trace)?;
    for slice in &field.values {
        check_nonnegative(slice)?;
    }
    let order = CellOrder::new(field.xspec);
    let values = field.values.par_iter().map(|v| rearrange_values(&order, v)).collect();
    Ok(ExtensionField {
        xspec: field.xspec,
        s: field.s,
        zgrid: field.zgrid.clone(),
        trace: rearrange_values(&order, &field.trace),
        values,
    })
}

/// Σ over lattice edges of squared differences, counting edges to the zero
/// exterior of the box.
pub fn gradient_energy(spec: GridSpec, values: &[f64]) -> f64 {
    let m = spec.resolution;
    let mut acc = 0.0;
    for j in 0..m {
        for i in 0..m {
            let v = values[spec.index(i, j)];
            let right = if i + 1 < m { values[spec.index(i + 1, j)] } else { 0.0 };
            let up = if j + 1 < m { values[spec.index(i, j + 1)] } else { 0.0 };
            acc += (v - right).powi(2) + (v - up).powi(2);
            if i == 0 {
                acc += v * v;
            }
            if j == 0 {
                acc += v * v;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::new(1.0, 16).unwrap()
    }

    #[test]
    fn order_starts_at_center_cluster() {
        let o = CellOrder::new(spec());
        let first = spec().coords(o.order[0]);
        assert!([7, 8].contains(&first.0) && [7, 8].contains(&first.1));
        let mut seen = o.order.clone();
        seen.sort();
        assert_eq!(seen, (0..256).collect::<Vec<_>>());
    }

    #[test]
    fn indicator_goes_to_discrete_ball() {
        let g = spec();
        let mut u = GridFunction::zeros(g);
        for k in [3usize, 40, 41, 77, 200, 201, 202] {
            u.values[k] = 1.0;
        }
        let r = schwarz_rearrange(&u).unwrap();
        let o = CellOrder::new(g);
        for (rank, &k) in o.order.iter().enumerate() {
            assert_eq!(r.values[k], if rank < 7 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn negative_values_rejected() {
        let mut u = GridFunction::zeros(spec());
        u.values[5] = -1.0;
        assert!(schwarz_rearrange(&u).is_err());
    }

    #[test]
    fn level_stats_edges() {
        let g = spec();
        let dom = GridDomain::from_predicate(g, |x, y| x * x + y * y < 0.4).unwrap();
        let u = GridFunction::from_fn(g, |x, y| if x * x + y * y < 0.4 { 1.0 } else { 0.0 });
        let (mu, set) = level_stats(&u, 0.0).unwrap();
        assert_eq!(mu, dom.measure());
        assert_eq!(set.mask, dom.mask);
        let (mu, set) = level_stats(&u, 1.0).unwrap();
        assert_eq!(mu, 0.0);
        assert!(set.is_empty());
    }
}
