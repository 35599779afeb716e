#![no_main]

use divbar::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_toml_str(src) {
        // Anything accepted must validate and hash.
        cfg.params.validate().unwrap();
        assert_eq!(cfg.hash().len(), 64);
    }
});
