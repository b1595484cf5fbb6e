#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() >= 2 {
        let (rows, cols) = (usize::from(data[0] % 16), usize::from(data[1] % 16));
        let _ = hmtl::checkpoint::decode_f32(&data[2..], rows, cols);
    }
    let _ = serde_json::from_slice::<hmtl::checkpoint::Manifest>(data);
});
