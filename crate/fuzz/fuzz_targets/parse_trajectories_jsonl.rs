#![no_main]

use libfuzzer_sys::fuzz_target;
use protoflow::io::{parse_trajectories_jsonl, to_jsonl, trajectory_lines};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trajs) = parse_trajectories_jsonl(text) {
        let out = to_jsonl(trajectory_lines(&trajs)).expect("lines serialize");
        assert_eq!(parse_trajectories_jsonl(&out).expect("export parses"), trajs);
    }
});
