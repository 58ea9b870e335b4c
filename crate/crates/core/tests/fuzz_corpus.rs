//! Replays the checked-in fuzz corpus on stable with the fuzz targets' invariants.

use std::path::{Path, PathBuf};

use contact_hj::config::parse_config_str;
use contact_hj::expr::Expr;
use contact_hj::GridFunction;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn expression_seeds() {
    let mut accepted = 0;
    for (name, src) in seeds("parse_expression") {
        let Ok(e) = Expr::parse(&src) else { continue };
        accepted += 1;
        assert_eq!(e.source(), src);
        for p in [[0.0, 0.0], [0.25, 0.5], [0.9, 0.1]] {
            let (v, j) = (e.value(p), e.jet(p).value);
            assert!(
                v == j || (v.is_nan() && j.is_nan()) || (v - j).abs() <= 1e-12 * v.abs().max(1.0),
                "{name}: {v} vs {j}"
            );
        }
    }
    assert_eq!(accepted, 7);
}

#[test]
fn grid_csv_seeds() {
    let mut accepted = 0;
    for (name, text) in seeds("read_grid_csv") {
        let Ok(f) = GridFunction::read_csv_str(&text) else {
            continue;
        };
        accepted += 1;
        let again = GridFunction::read_csv_str(&f.to_csv_string("value")).unwrap();
        assert_eq!(f.grid(), again.grid(), "{name}");
        assert_eq!(f.values(), again.values(), "{name}");
    }
    assert_eq!(accepted, 2);
}

#[test]
fn config_seeds() {
    let base = PathBuf::from(".");
    let results: Vec<(String, bool)> = seeds("parse_config")
        .into_iter()
        .map(|(name, text)| {
            let ok = parse_config_str(&text, &base).map(|cfg| {
                assert!(cfg.eps > 0.0 && cfg.eps <= 1.0);
                for f in cfg.initial.iter().chain(&cfg.roster) {
                    assert_eq!(f.grid(), &cfg.grid);
                }
            });
            (name, ok.is_ok())
        })
        .collect();
    let rejected: Vec<&str> = results
        .iter()
        .filter(|r| !r.1)
        .map(|r| r.0.as_str())
        .collect();
    assert_eq!(rejected, ["bad_eps.json", "huge_grid.json", "typo.json"]);
}
