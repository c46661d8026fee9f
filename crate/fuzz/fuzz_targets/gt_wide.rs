#![no_main]

use libfuzzer_sys::fuzz_target;
use survey_hazard::io;

fuzz_target!(|data: &[u8]| {
    let _ = io::read_gt_wide(data, "fuzz");
});
