#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    if let Ok(view) = relclean::dataset::parse_record_line(line) {
        let _ = (view.id(), view.predicate(), view.feature().len());
    }
});
