#![no_main]

use libfuzzer_sys::fuzz_target;
use protoflow::io::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ckpt) = decode_checkpoint(text) {
        let again = decode_checkpoint(&encode_checkpoint(&ckpt)).expect("re-encoded checkpoint decodes");
        assert_eq!(again, ckpt);
    }
});
