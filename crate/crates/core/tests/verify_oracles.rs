mod common;

use std::f64::consts::PI;

use common::rel;
use frakra::domain::{make_shape, ShapeParams};
use frakra::nonlocal::SolverOpts;
use frakra::rearrange::CellOrder;
use frakra::verify::{
    equivalence_corpus, equivalence_ratio, extremal_quotient, local_lambda, q_limit_study, seminorm_equivalence_check,
    smooth_exponent_check, sweep_family, verify_fk, verify_torsion, write_sweep_csv, FamilySpec, VerifyOpts,
    SWEEP_COLUMNS,
};
use frakra::{FracParams, GridFunction, GridSpec};

/// First zero of J_0.
const J01: f64 = 2.404_825_557_695_773;

fn quick() -> VerifyOpts {
    VerifyOpts {
        level_scan: false,
        ..VerifyOpts::default()
    }
}

#[test]
fn disk_has_no_deficit() {
    let g = GridSpec::new(1.0, 64).unwrap();
    let disk = make_shape(ShapeParams::Disk { radius: 0.5 }, g).unwrap();
    let p = FracParams::new(2, 0.5, 2.0).unwrap();
    let r = verify_fk(&disk, &p, &VerifyOpts::default()).unwrap();
    assert!(r.deficit.abs() <= 0.02 * r.invariant_ball, "deficit {}", r.deficit);
    assert!(r.asymmetry < 0.05);
    assert!(r.rhs_main < 1e-6 * r.invariant_ball);
    assert!(r.margin.abs() <= 0.02 * r.invariant_ball);
    assert!(r.faber_krahn_ok() && r.bound_ok() && r.remainder_ok());
}

#[test]
fn elongated_ellipse_has_a_positive_margin() {
    let g = GridSpec::new(1.0, 96).unwrap();
    let b = (0.6 / (2.0 * PI)).sqrt();
    let e = make_shape(ShapeParams::Ellipse { a: 2.0 * b, b }, g).unwrap();
    let p = FracParams::new(2, 0.5, 2.0).unwrap();
    let r = verify_fk(&e, &p, &VerifyOpts::default()).unwrap();
    assert!(r.asymmetry > 0.2);
    assert!(r.deficit > 0.0 && r.margin > 0.0, "deficit {}, margin {}", r.deficit, r.margin);
    assert!(r.faber_krahn_ok() && r.bound_ok() && r.remainder_ok());
    assert!((r.original_measure - 0.6).abs() < 0.02);
    assert!(rel(r.grid.half_width, 1.0 / r.original_measure.sqrt()) < 1e-12);
}

#[test]
fn square_torsion_beats_the_bound() {
    let g = GridSpec::new(1.0, 64).unwrap();
    let sq = make_shape(ShapeParams::Square { side: 0.8 }, g).unwrap();
    let r = verify_torsion(&sq, 0.5, &VerifyOpts::default()).unwrap();
    assert!(r.difference > 0.0 && r.margin > 0.0, "difference {}, margin {}", r.difference, r.margin);
    assert!(r.bound_ok());
    assert!(r.reciprocity_ok(1e-6));
    assert!(rel(r.difference_from_lambda, r.difference) < 0.05);
    let fk = verify_fk(&sq, &FracParams::new(2, 0.5, 2.0).unwrap(), &quick()).unwrap();
    assert_eq!(fk.asymmetry, r.asymmetry);
}

#[test]
fn sweep_rows_follow_input_order() {
    let g = GridSpec::new(1.0, 32).unwrap();
    let fam = FamilySpec::rectangles(g, &[1.0, 2.0]).unwrap();
    let rows = sweep_family(&fam, &[0.4, 0.6], &[2.0, 1.5], &quick());
    assert_eq!(rows.len(), 8);
    let expect: Vec<(f64, f64)> = (0..2)
        .flat_map(|_| [0.4, 0.6].into_iter().flat_map(|s| [2.0, 1.5].into_iter().map(move |q| (s, q))))
        .collect();
    for (i, (row, &(s, q))) in rows.iter().zip(&expect).enumerate() {
        assert_eq!((row.index, row.s, row.q), (i, s, q));
        assert!(row.shape.starts_with("rectangle"), "{}", row.shape);
        assert!(row.error.is_none(), "{:?}", row.error);
    }
    assert_ne!(rows[0].shape, rows[4].shape);
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[0], SWEEP_COLUMNS.join(","));
    for line in &lines[1..] {
        assert!(line.ends_with(",ok"), "{line}");
    }
}

#[test]
fn sweep_keeps_failures_as_rows() {
    let g = GridSpec::new(1.0, 32).unwrap();
    let fam = FamilySpec::ellipses(g, &[1.0]).unwrap();
    let rows = sweep_family(&fam, &[0.5, 1.5], &[2.0], &quick());
    assert_eq!(rows.len(), 2);
    assert!(rows[0].report.is_some());
    assert!(rows[1].report.is_none() && rows[1].error.is_some());
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().nth(2).unwrap().contains("error: "));
    assert!(FamilySpec::parse("triangle", g, &[1.0]).is_err());
    assert!(FamilySpec::parse("ellipse", g, &[-1.0]).is_err());
}

#[test]
fn family_members_share_the_area() {
    let g = GridSpec::new(1.0, 16).unwrap();
    for fam in [
        FamilySpec::ellipses(g, &[1.0, 2.5]).unwrap(),
        FamilySpec::rectangles(g, &[1.0, 3.0]).unwrap(),
        FamilySpec::stadiums(g, &[0.0, 1.5]).unwrap(),
    ] {
        for sh in &fam.shapes {
            let area = match *sh {
                ShapeParams::Ellipse { a, b } => PI * a * b,
                ShapeParams::Rectangle { width, height } => width * height,
                ShapeParams::Stadium { length, radius } => PI * radius * radius + 2.0 * radius * length,
                _ => unreachable!(),
            };
            assert!(rel(area, 0.6) < 1e-12, "{sh:?}");
        }
    }
}

#[test]
fn q_study_on_a_lattice_ball() {
    let g = GridSpec::new(1.0, 32).unwrap();
    let ball = CellOrder::new(g).ball(300).unwrap();
    let study = q_limit_study(&ball, 0.5, &[1.5, 2.0, 3.0], &SolverOpts::default()).unwrap();
    assert_eq!(study.rows.len(), 3);
    for row in &study.rows {
        assert_eq!(row.deficit, 0.0, "q = {}", row.q);
        assert!(row.lambda_omega >= row.lambda_box * (1.0 - 1e-6), "q = {}", row.q);
    }
    assert!(study.sobolev_estimate > 0.0);
    assert!(q_limit_study(&ball, 0.5, &[2.0, 1.5], &SolverOpts::default()).is_err());
}

#[test]
fn extremal_quotient_falls_with_the_radius() {
    let a = extremal_quotient(0.5, 8.0, 64).unwrap();
    let b = extremal_quotient(0.5, 16.0, 128).unwrap();
    assert!(b.quotient > 0.0 && b.quotient < a.quotient, "{} then {}", a.quotient, b.quotient);
    assert!(extremal_quotient(0.5, 4.0, 64).is_err());
    assert!(extremal_quotient(0.5, 16.0, 32).is_err());
}

#[test]
fn local_eigenvalues_of_disk_and_square() {
    let opts = SolverOpts::default();
    let g = GridSpec::new(1.0, 128).unwrap();
    let r = 0.8;
    let disk = make_shape(ShapeParams::Disk { radius: r }, g).unwrap();
    let ld = local_lambda(&disk, 2.0, &opts).unwrap();
    assert!(rel(ld, J01 * J01 / (r * r)) < 0.02, "disk {ld}");
    let g = GridSpec::new(0.6, 128).unwrap();
    let sq = make_shape(ShapeParams::Square { side: 1.0 }, g).unwrap();
    let ls = local_lambda(&sq, 2.0, &opts).unwrap();
    assert!(rel(ls, 2.0 * PI * PI) < 0.02, "square {ls}");
    assert!(local_lambda(&sq, 0.5, &opts).is_err());
}

#[test]
fn local_faber_krahn() {
    let opts = SolverOpts::default();
    let g = GridSpec::new(1.0, 64).unwrap();
    let disk = make_shape(ShapeParams::Disk { radius: 0.5 }, g).unwrap();
    let base = local_lambda(&disk, 2.0, &opts).unwrap() * disk.measure();
    for sh in [
        ShapeParams::Ellipse { a: 0.7, b: 0.35 },
        ShapeParams::Square { side: 0.9 },
        ShapeParams::Stadium { length: 0.5, radius: 0.3 },
    ] {
        let d = make_shape(sh, g).unwrap();
        let v = local_lambda(&d, 2.0, &opts).unwrap() * d.measure();
        assert!(v >= 0.98 * base, "{sh:?}: {v} vs {base}");
    }
}

#[test]
fn directional_seminorms_stay_in_the_band() {
    let g = GridSpec::new(1.0, 32).unwrap();
    let corpus = equivalence_corpus(g);
    assert_eq!(corpus.len(), 25);
    assert!(corpus.iter().all(|u| u.max() > 0.0));
    for &s in &[0.2, 0.5, 0.8] {
        let rep = seminorm_equivalence_check(&corpus, s).unwrap();
        assert!(rep.within_band, "s = {s}: [{}, {}] vs {}", rep.ratio_low, rep.ratio_high, rep.constant);
        assert_eq!(rep.ratios.len(), 25);
    }
    assert!(equivalence_ratio(&GridFunction::zeros(g), 0.5).is_err());
}

#[test]
fn equivalence_ratio_ignores_translation() {
    let g = GridSpec::new(1.0, 32).unwrap();
    let m = g.resolution;
    let u = &equivalence_corpus(g)[3];
    let base = equivalence_ratio(u, 0.5).unwrap();
    for (di, dj) in [(2usize, 0usize), (0, 3), (1, 1)] {
        let mut moved = GridFunction::zeros(g);
        for j in 0..m - dj {
            for i in 0..m - di {
                moved.values[g.index(i + di, j + dj)] = u.values[g.index(i, j)];
            }
        }
        let r = equivalence_ratio(&moved, 0.5).unwrap();
        assert!(rel(r, base) < 1e-10, "shift ({di}, {dj})");
    }
}

#[test]
fn exponent_fit_recovers_a_power_law() {
    let s = 0.5;
    let pts: Vec<(f64, f64)> = [0.03, 0.08, 0.15, 0.3, 0.5]
        .iter()
        .map(|&a: &f64| (a, 0.7 * a.powf(2.0 + 1.0 / s)))
        .collect();
    let fit = smooth_exponent_check(&pts, s).unwrap();
    assert!((fit.slope - 4.0).abs() < 1e-12);
    assert!((fit.intercept - 0.7f64.ln()).abs() < 1e-12);
    assert!(fit.slope < 3.0 / s && fit.within_proven);
    // nonpositive samples are dropped before fitting
    let mut noisy = pts.clone();
    noisy.push((0.0, 1.0));
    noisy.push((0.2, -1e-3));
    assert_eq!(smooth_exponent_check(&noisy, s).unwrap().points, 5);
    assert!(smooth_exponent_check(&pts[..1], s).is_err());
}

#[test]
fn thinner_necks_raise_the_deficit() {
    let g = GridSpec::new(1.0, 64).unwrap();
    let fam = FamilySpec::dumbbells(g, &[0.3, 0.5, 0.8]).unwrap();
    let rows = sweep_family(&fam, &[0.5], &[2.0], &quick());
    let deficits: Vec<f64> = rows.iter().map(|r| r.report.as_ref().unwrap().deficit).collect();
    assert!(deficits.windows(2).all(|w| w[1] < w[0]), "{deficits:?}");
    assert!(deficits.iter().all(|&d| d > 0.0));
}
