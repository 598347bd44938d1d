#![no_main]

use libfuzzer_sys::fuzz_target;
use relclean::dataset::PredicateVocab;

fuzz_target!(|text: &str| {
    if let Ok(vocab) = PredicateVocab::parse_sidecar(text) {
        let again = PredicateVocab::parse_sidecar(&vocab.to_sidecar()).expect("re-reading sidecar");
        assert_eq!(again.names(), vocab.names());
    }
});
