#![no_main]

use divbar::io::read_path_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cols) = read_path_csv(data) {
        let n = cols[0].len();
        assert!(cols.iter().all(|c| c.len() == n));
    }
});
