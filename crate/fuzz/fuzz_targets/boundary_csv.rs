#![no_main]

use divbar::io::read_boundary_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = read_boundary_csv(data) {
        assert_eq!(t.m.len(), t.b.len());
        assert!(t.a.iter().all(|a| a.len() == t.m.len()));
    }
});
