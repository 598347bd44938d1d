#![no_main]

use libfuzzer_sys::fuzz_target;
use relclean::neg_nsd::ConfidenceModel;

fuzz_target!(|text: &str| {
    let Ok(model) = ConfidenceModel::from_text(text) else {
        return;
    };
    let (probs, _) = model.predict(&vec![0.0; model.input_dim()]);
    assert_eq!(probs.len(), model.n_classes());
    let back = ConfidenceModel::from_text(&model.to_text()).expect("re-reading model");
    assert_eq!(back.to_text(), model.to_text());
});
