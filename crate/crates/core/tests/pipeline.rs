//! End-to-end runs across the operator, solver and report layers.

use blockjacobi::bounds::BoundParams;
use blockjacobi::example_st::{st_family, StParams};
use blockjacobi::green::{
    eigenpairs_below, green_column, perturbed_truncation, verify_green_decay, Verdict, CSV_HEADER,
};
use blockjacobi::linalg::{dense_solve, hermitian_eig, vec_norm, CMatrix};
use blockjacobi::operator::{assemble_truncation, FamilyTable, OperatorFamily, TableBlock, TableEntry};
use blockjacobi::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn green_column_matches_dense_inverse() {
    for seed in [3u64, 11, 42] {
        let fam = OperatorFamily::random(3, seed);
        let n = 25;
        let trunc = assemble_truncation(&fam, n).unwrap();
        let d = trunc.dim();
        let lambda = c(-2.0, -1.0);
        for k in [1, 7, n] {
            let col = green_column(&trunc, lambda, k).unwrap().stacked();
            let shifted = trunc.dense().shifted(-lambda);
            let rhs = CMatrix::from_fn(n * d, d, |i, j| {
                if i == (k - 1) * d + j {
                    c(1.0, 0.0)
                } else {
                    c(0.0, 0.0)
                }
            });
            let dense = dense_solve(&shifted, &rhs).unwrap();
            let err = (&col - &dense).frobenius_norm() / dense.frobenius_norm();
            assert!(err < 1e-12, "seed {seed}, k {k}: {err:e}");
        }
    }
}

fn table_of(fam: &OperatorFamily, n: usize) -> String {
    let entries = |m: &CMatrix| -> Vec<TableEntry> {
        m.as_slice().iter().map(|z| TableEntry::Complex([z.re, z.im])).collect()
    };
    let blocks = (1..=n)
        .map(|k| TableBlock {
            n: k,
            a: Some(entries(&fam.offdiag(k).unwrap())),
            b: Some(entries(&fam.diag(k).unwrap())),
        })
        .collect();
    let table = FamilyTable {
        dim: fam.dim(),
        blocks,
        edge_b: fam.edge_b(),
        label: Some("tabulated".into()),
    };
    serde_json::to_string(&table).unwrap()
}

#[test]
fn tabulated_family_reproduces_report() {
    let fam = st_family(StParams::new(2.0, 2.0, 0.6).unwrap());
    let n = 80;
    let json = table_of(&fam, n);
    let loaded = OperatorFamily::from_json_str(&json).unwrap();
    assert_eq!(loaded.edge_b(), Some(0.0));

    let p = BoundParams::real(-1.0, 0.0).unwrap();
    let a = verify_green_decay(&fam, &p, n, 1, None).unwrap();
    let b = verify_green_decay(&loaded, &p, n, 1, None).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn diagonal_shift_covariance() {
    let fam = st_family(StParams::new(2.0, 2.0, 0.6).unwrap());
    let shift = 3.5;
    let moved = fam.with_diag_shift(shift);
    assert_eq!(moved.edge_b(), Some(shift));

    let p = BoundParams::new(c(-1.0, 0.25), 0.0, 1.0, 0.1).unwrap();
    let q = p.shifted(shift).unwrap();
    let a = verify_green_decay(&fam, &p, 150, 4, None).unwrap();
    let b = verify_green_decay(&moved, &q, 150, 4, None).unwrap();
    assert_eq!(a.gamma, b.gamma);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.envelope, y.envelope);
        assert!((x.measured - y.measured).abs() <= 1e-10 * x.measured.max(1e-300));
        assert_eq!(x.verdict, y.verdict);
    }
}

#[test]
fn report_csv_is_consistent() {
    let fam = OperatorFamily::scalar_free();
    let p = BoundParams::real(-3.0, -2.0).unwrap();
    let r = verify_green_decay(&fam, &p, 60, 1, None).unwrap();
    let csv = r.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.next(), Some("index,measured,envelope,ratio,verdict"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 60);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<usize>().unwrap(), i + 1);
        let m: f64 = row[1].parse().unwrap();
        let e: f64 = row[2].parse().unwrap();
        let ratio: f64 = row[3].parse().unwrap();
        assert_eq!(m, r.rows[i].measured);
        assert_eq!(ratio, m / e);
    }
    // last N/10 indices carry no verdict
    assert!(rows[54..].iter().all(|r| r[4] == Verdict::Excluded.as_str()));
    assert!(rows[..54].iter().all(|r| r[4] == "pass"));

    let summary = r.summary_json();
    assert_eq!(summary["all_pass"], true);
    assert_eq!(summary["params"]["b"], -2.0);
}

#[test]
fn eigenpairs_match_dense_spectrum() {
    let fam = OperatorFamily::random(2, 5);
    let trunc = assemble_truncation(&fam, 30).unwrap();
    let dense = trunc.dense();
    let eig = hermitian_eig(&dense).unwrap();
    let b = eig.values[6] + 0.5 * (eig.values[7] - eig.values[6]);
    let pairs = eigenpairs_below(&trunc, b).unwrap();
    assert_eq!(pairs.len(), 7);
    for (pair, &w) in pairs.iter().zip(&eig.values) {
        assert!((pair.value - w).abs() < 1e-10);
        assert!((vec_norm(&pair.vector) - 1.0).abs() < 1e-12);
        let hu = dense.matvec(&pair.vector);
        let res: Vec<Complex64> = hu
            .iter()
            .zip(&pair.vector)
            .map(|(h, u)| h - u * pair.value)
            .collect();
        assert!(vec_norm(&res) < 1e-9 * (1.0 + pair.value.abs()));
    }
}

#[test]
fn zero_perturbation_keeps_spectrum() {
    let fam = st_family(StParams::new(2.0, 2.0, 0.6).unwrap()).with_first_block_shift(-10.0);
    let trunc = assemble_truncation(&fam, 100).unwrap();
    let id = CMatrix::identity(2);
    let same = perturbed_truncation(&trunc, 0.0, &id).unwrap();
    let lam = trunc.min_eigenvalue().unwrap();
    assert!(same.distance_to_spectrum(c(lam, 0.0)).unwrap() < 1e-12);

    // B_1 grows by τ; the bottom eigenvalue moves up by at most τ
    let tau = 0.05;
    let pert = perturbed_truncation(&trunc, tau, &id).unwrap();
    let moved = pert.min_eigenvalue().unwrap();
    assert!(moved > lam && moved <= lam + tau + 1e-12);
}

#[test]
fn doubling_the_truncation_leaves_verified_range_stable() {
    let fam = st_family(StParams::new(2.0, 2.0, 0.6).unwrap());
    let p = BoundParams::real(-1.0, 0.0).unwrap();
    let short = verify_green_decay(&fam, &p, 300, 1, None).unwrap();
    let long = verify_green_decay(&fam, &p, 600, 1, None).unwrap();
    let mut worst: f64 = 0.0;
    for j in 1..=250 {
        let (a, b) = (short.row(j).measured, long.row(j).measured);
        worst = worst.max((a - b).abs() / b);
    }
    assert!(worst < 1e-8, "{worst:e}");
    assert_eq!(short.fitted_c, long.fitted_c);
}

#[test]
fn rate_sharpens_away_from_edge() {
    let fam = st_family(StParams::new(2.0, 2.0, 0.6).unwrap());
    let mut prev_gamma = f64::INFINITY;
    for lambda in [-4.0, -2.0, -1.0, -0.5, -0.25, -0.1] {
        let p = BoundParams::real(lambda, 0.0).unwrap();
        let r = verify_green_decay(&fam, &p, 200, 1, None).unwrap();
        assert!(r.gamma < prev_gamma);
        assert!(r.all_pass(), "λ = {lambda}");
        prev_gamma = r.gamma;
    }
}
