#![no_main]

use libfuzzer_sys::fuzz_target;
use relclean::dataset::{parse_dataset, LoadOptions};

fuzz_target!(|text: &str| {
    let Ok(data) = parse_dataset(text, &LoadOptions::default()) else {
        return;
    };
    // Anything accepted must survive a write/read cycle unchanged.
    let options = LoadOptions {
        vocab: Some(data.vocab.clone()),
        ..LoadOptions::default()
    };
    let back = parse_dataset(&data.to_jsonl(), &options).expect("re-reading written dataset");
    assert_eq!(back.records, data.records);
});
