#![no_main]

use libfuzzer_sys::fuzz_target;
use relclean::pipeline::PipelineConfig;

fuzz_target!(|text: &str| {
    if let Ok(config) = PipelineConfig::from_toml_str(text) {
        config.validate().expect("accepted config validates");
    }
});
