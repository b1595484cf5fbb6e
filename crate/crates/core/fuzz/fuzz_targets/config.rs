#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = hmtl::RunConfig::parse(s) {
            let _ = cfg.validate();
            let again = hmtl::RunConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(cfg, again);
        }
    }
});
