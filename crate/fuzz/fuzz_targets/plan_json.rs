#![no_main]

use libfuzzer_sys::fuzz_target;
use wsn_gsp::sampling::SamplingPlan;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = SamplingPlan::from_json(text) {
        plan.validate().unwrap();
        let n: usize = plan.sets.iter().map(Vec::len).sum();
        assert_eq!(n, plan.node_order.len());
        if plan.epsilon.is_finite() && plan.set_rmse.iter().all(|r| r.is_finite()) {
            assert_eq!(SamplingPlan::from_json(&plan.to_json().unwrap()).unwrap(), plan);
        }
    }
});
