#![no_main]

use libfuzzer_sys::fuzz_target;
use protoflow::io::{parse_csv, AngleRow, IouHistoryRow, PerClassRow, SummaryRow};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_csv::<SummaryRow>(text);
    let _ = parse_csv::<PerClassRow>(text);
    let _ = parse_csv::<IouHistoryRow>(text);
    let _ = parse_csv::<AngleRow>(text);
});
