//! Replays the checked-in fuzz seeds through the parsers.

use std::fs;
use std::path::PathBuf;

use divbar::config::RunConfig;
use divbar::io::{read_boundary_csv, read_path_csv, read_points_csv};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn config_seeds() {
    let mut accepted = 0;
    for (path, bytes) in seeds("config") {
        let src = String::from_utf8(bytes).unwrap();
        match RunConfig::from_toml_str(&src) {
            Ok(cfg) => {
                accepted += 1;
                assert_eq!(cfg.hash().len(), 64);
            }
            Err(e) => assert!(path.ends_with("bad_m_bar.toml"), "{}: {e}", path.display()),
        }
    }
    assert!(accepted >= 3);
}

#[test]
fn points_seeds() {
    for (_, bytes) in seeds("points_csv") {
        let rows = read_points_csv(&bytes[..]).unwrap();
        assert!(rows.iter().any(|r| r.point.is_ok()));
    }
}

#[test]
fn path_seeds() {
    for (_, bytes) in seeds("path_csv") {
        let cols = read_path_csv(&bytes[..]).unwrap();
        assert!(!cols[0].is_empty());
    }
}

#[test]
fn boundary_seeds() {
    for (_, bytes) in seeds("boundary_csv") {
        let t = read_boundary_csv(&bytes[..]).unwrap();
        assert!(t.m.windows(2).all(|w| w[1] > w[0]));
    }
}
