#![no_main]

use libfuzzer_sys::fuzz_target;
use relclean::dataset::PredicateVocab;
use relclean::synth::GroundTruth;

fuzz_target!(|text: &str| {
    let vocab = PredicateVocab::from_names(vec!["on".into(), "has".into(), "near".into()]).unwrap();
    let _ = GroundTruth::parse_jsonl(text, &vocab);
});
