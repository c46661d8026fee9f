#![no_main]

use libfuzzer_sys::fuzz_target;
use survey_hazard::glm::model_file::{read_model, write_model};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = read_model(text) {
        let written = write_model(&model).expect("parsed model writes");
        assert_eq!(read_model(&written).expect("written model parses"), model);
    }
});
