#![no_main]

use libfuzzer_sys::fuzz_target;
use protoflow::io::parse_run_log;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_run_log(text);
    }
});
