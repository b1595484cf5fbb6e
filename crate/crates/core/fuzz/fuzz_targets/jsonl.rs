#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        // Anything accepted must survive a write/read cycle unchanged.
        if let Ok(docs) = hmtl::corpus::parse_jsonl(s, "fuzz") {
            let again = hmtl::corpus::parse_jsonl(&hmtl::corpus::to_jsonl(&docs), "fuzz").unwrap();
            assert_eq!(docs, again);
        }
    }
});
