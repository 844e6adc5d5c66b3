#![no_main]

use libfuzzer_sys::fuzz_target;
use protoflow::io::{parse_trajectories_csv, to_csv, trajectory_rows};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trajs) = parse_trajectories_csv(text) {
        let out = to_csv(&trajectory_rows(&trajs)).expect("rows serialize");
        assert_eq!(parse_trajectories_csv(&out).expect("export parses"), trajs);
    }
});
