#![no_main]

use divbar::io::read_points_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_points_csv(data) {
        for row in rows {
            if let Ok((x, m)) = row.point {
                assert!(x.is_finite() && m.is_finite());
            }
        }
    }
});
