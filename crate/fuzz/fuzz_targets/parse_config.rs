#![no_main]

use libfuzzer_sys::fuzz_target;
use protoflow::io::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        let echoed = cfg.to_toml().expect("accepted config serializes");
        assert_eq!(parse_config(&echoed).expect("echo parses"), cfg);
    }
});
