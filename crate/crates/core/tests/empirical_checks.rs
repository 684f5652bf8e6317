use std::io::Write;
use std::path::{Path, PathBuf};

use incomedist_core::empirical::{ColumnMap, Quarter, SeriesSource, SyntheticParams};
use incomedist_core::numeric::simple_ols;
use incomedist_core::{derive_columns, generate_synthetic, load_series, regress, Error, QuarterlySeries};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn write(dir: &Path, name: &str, rows: &[(String, String)]) -> SeriesSource {
    let path: PathBuf = dir.join(format!("{name}.csv"));
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "date,value").unwrap();
    for (d, v) in rows {
        writeln!(f, "{d},{v}").unwrap();
    }
    SeriesSource {
        name: name.into(),
        path,
        date_column: "date".into(),
        value_column: "value".into(),
        scale: 1.0,
    }
}

fn quarterly_rows(from: Quarter, to: Quarter) -> Vec<(String, String)> {
    (from.index()..=to.index())
        .map(|i| {
            let q = Quarter::from_index(i);
            (format!("{}-{:02}-01", q.year, (q.q - 1) * 3 + 1), format!("{}", i))
        })
        .collect()
}

fn q(y: i32, n: u8) -> Quarter {
    Quarter::new(y, n).unwrap()
}

#[test]
fn full_sample_has_217_quarters() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a", &quarterly_rows(q(1964, 4), q(2018, 4)));
    // monthly, so each quarter takes its last month
    let monthly: Vec<(String, String)> = (0..(2018 - 1964) * 12 + 3)
        .map(|k| {
            let (y, m) = (1964 + (9 + k) / 12, (9 + k) % 12 + 1);
            (format!("{y}-{m:02}-01"), format!("{k}"))
        })
        .collect();
    let b = write(dir.path(), "b", &monthly);
    let panel = load_series(&[a, b]).unwrap();
    assert_eq!(panel.len(), 217);
    assert_eq!(panel.quarters[0], q(1964, 4));
    assert_eq!(*panel.quarters.last().unwrap(), q(2018, 4));
    assert_eq!(panel.column("b").unwrap()[0], 2.0);
    assert!(panel.gaps.is_empty());
}

#[test]
fn overlapping_ranges_intersect() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a", &quarterly_rows(q(2000, 1), q(2010, 4)));
    let b = write(dir.path(), "b", &quarterly_rows(q(2005, 1), q(2015, 4)));
    let panel = load_series(&[a.clone(), b]).unwrap();
    assert_eq!(panel.len(), 24);
    assert_eq!(panel.quarters[0], q(2005, 1));
    assert_eq!(*panel.quarters.last().unwrap(), q(2010, 4));

    let single = load_series(&[a]).unwrap();
    assert_eq!(single.len(), 44);
}

#[test]
fn disjoint_ranges_fail() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a", &quarterly_rows(q(2000, 1), q(2001, 4)));
    let b = write(dir.path(), "b", &quarterly_rows(q(2005, 1), q(2006, 4)));
    assert!(matches!(load_series(&[a, b]), Err(Error::InsufficientData(_))));
}

#[test]
fn bad_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        ("2001-01-01".to_string(), "1".to_string()),
        ("2000-07-01".to_string(), "2".to_string()),
    ];
    let a = write(dir.path(), "a", &rows);
    assert!(matches!(load_series(&[a]), Err(Error::Parse(_))));
    let rows = vec![("2001-01-01".to_string(), "abc".to_string())];
    let b = write(dir.path(), "b", &rows);
    assert!(matches!(load_series(&[b]), Err(Error::Parse(_))));
    let missing = SeriesSource {
        path: dir.path().join("none.csv"),
        ..write(dir.path(), "c", &[])
    };
    assert!(load_series(&[missing]).is_err());
}

#[test]
fn missing_quarters_are_carried_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        ("2001-01-01".to_string(), "1".to_string()),
        ("2001-04-01".to_string(), ".".to_string()),
        ("2001-07-01".to_string(), "3".to_string()),
    ];
    let panel = load_series(&[write(dir.path(), "a", &rows)]).unwrap();
    assert_eq!(panel.column("a").unwrap(), &[1.0, 1.0, 3.0]);
    assert_eq!(panel.gaps.len(), 1);
    assert_eq!(panel.gaps[0].quarter, q(2001, 2));
}

#[test]
fn fixture_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let series = generate_synthetic(5, &SyntheticParams::default()).unwrap();
    let map = ColumnMap::default();
    let sources = series.write_csvs(dir.path(), &map).unwrap();
    let panel = load_series(&sources).unwrap();
    let back = QuarterlySeries::from_panel(&panel, &map).unwrap();
    assert_eq!(back, series);
}

#[test]
fn known_line_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 1e-8).unwrap();
    let x: Vec<f64> = (0..200).map(|i| i as f64 / 10.0).collect();
    let y: Vec<f64> = x.iter().map(|x| 2.0 * x + 3.0 + noise.sample(&mut rng)).collect();
    let fit = simple_ols(&x, &y).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-6);
    assert!((fit.intercept - 3.0).abs() < 1e-6);
    assert!((fit.r_squared - fit.correlation.powi(2)).abs() < 1e-12);
    assert!((fit.f_statistic / fit.slope_t.powi(2) - 1.0).abs() < 1e-9);
}

#[test]
fn synthetic_generation_is_deterministic() {
    let p = SyntheticParams::default();
    assert_eq!(generate_synthetic(3, &p).unwrap(), generate_synthetic(3, &p).unwrap());
    assert_ne!(generate_synthetic(3, &p).unwrap(), generate_synthetic(4, &p).unwrap());
}

#[test]
fn zero_premium_panel_gives_zero_theory() {
    let p = SyntheticParams {
        zero_premium: true,
        ..SyntheticParams::default()
    };
    let d = derive_columns(&generate_synthetic(1, &p).unwrap()).unwrap();
    for v in d.new_series.iter().flatten() {
        assert!(v.abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_premium_inverts_exactly(seed in 0u64..1_000_000, vol in 0.0f64..0.1, dy in 0.5f64..3.0) {
        let p = SyntheticParams { stock_volatility: vol, debt_to_gdp: dy, ..SyntheticParams::default() };
        let series = generate_synthetic(seed, &p).unwrap();
        let d = derive_columns(&series).unwrap();
        let mut defined = 0;
        for t in 0..series.len() {
            if let (Some(a), Some(b)) = (d.premium[t], d.new_series[t]) {
                prop_assert!((a - b).abs() < 1e-9);
                defined += 1;
            }
        }
        prop_assert_eq!(defined, series.len() - 4);
        if vol > 1e-3 {
            let r = regress(&d).unwrap();
            prop_assert!((r.ols.slope - 1.0).abs() < 1e-9);
            prop_assert!(r.ols.intercept.abs() < 1e-9);
            prop_assert!((r.ols.correlation - 1.0).abs() < 1e-9);
        }
    }
}
