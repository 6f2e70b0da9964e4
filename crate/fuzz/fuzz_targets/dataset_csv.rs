#![no_main]

use igm_core::dataset::{read_dataset, write_dataset};
use igm_core::problem::Loss;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ds) = read_dataset(data) else {
        return;
    };
    let mut out = Vec::new();
    write_dataset(&ds, &mut out).unwrap();
    assert_eq!(read_dataset(out.as_slice()).unwrap(), ds);
    let _ = ds.clone().into_problem(Loss::Square);
    let _ = ds.into_problem(Loss::Logistic);
});
