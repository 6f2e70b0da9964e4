#![no_main]

use igm_lab::generate::GeneratorSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<GeneratorSpec>(data) else {
        return;
    };
    if spec.validate().is_err() {
        return;
    }
    // generation cost grows with M*n; skip the big ones
    let (m, n) = match &spec {
        GeneratorSpec::RankDeficientLs {
            samples, features, ..
        }
        | GeneratorSpec::NonSeparableLogistic {
            samples, features, ..
        } => (*samples, *features),
    };
    if m.saturating_mul(n) <= 4096 {
        let p = spec.generate().unwrap();
        assert_eq!((p.num_samples(), p.num_features()), (m, n));
    }
});
