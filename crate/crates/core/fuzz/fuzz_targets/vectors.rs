#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&dim, rest)) = data.split_first() else { return };
    let dim = usize::from(dim % 8);
    if let Ok(s) = std::str::from_utf8(rest) {
        let _ = hmtl::embedder::parse_word_vectors(s, dim, "fuzz");
        let _ = hmtl::embedder::CachedContext::parse(s, dim, "fuzz");
    }
});
