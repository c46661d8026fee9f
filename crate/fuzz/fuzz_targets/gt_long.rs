#![no_main]

use libfuzzer_sys::fuzz_target;
use survey_hazard::io;

fuzz_target!(|data: &[u8]| {
    if let Some((&w, rest)) = data.split_first() {
        let _ = io::read_gt_long(rest, "fuzz", usize::from(w % 16));
    }
});
