#![no_main]

use igm_core::linalg::Matrix;
use igm_core::optimal::{OptimalSet, OptimalSetCertificate};
use igm_core::problem::{ComposedProblem, Loss};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(cert) = serde_json::from_slice::<OptimalSetCertificate>(data) else {
        return;
    };
    let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
    let problem = ComposedProblem::new(e, vec![1.0, 2.0], Loss::Square).unwrap();
    if let Ok(set) = OptimalSet::new(cert, &problem) {
        assert!(set.dist(&[0.0, 0.0]).unwrap().is_finite());
    }
});
