//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;

use ttn::crosscheck::{
    canonical_scaling, canonical_suite, cluster_suite, gates_suite, ground_state_suite, measurement_suite, rdm_suite,
    routing_suite, tebd_real_suite, truncation_suite, CheckOutcome, SuiteParams,
};
use ttn::TtnResult;

const SEED: u64 = 20_240_601;

fn criteria() -> Vec<(&'static str, Box<dyn Fn() -> TtnResult<Vec<CheckOutcome>>>)> {
    vec![
        (
            "canonical form: 50 random states, n = 4..8, three layouts, 1e-10",
            Box::new(|| Ok(vec![canonical_suite(&SuiteParams::new((4..=8).collect(), 50, SEED))?])),
        ),
        (
            "reduced density matrices: 50 random canonical states, path lengths 1..4, 1e-10",
            Box::new(|| Ok(vec![rdm_suite(&SuiteParams::new(vec![6, 7, 8], 50, SEED + 1))?])),
        ),
        (
            "gates and swaps: fidelity ≥ 1 − 1e-9, swap pair ≥ 1 − 1e-10, canonical preserved",
            Box::new(|| Ok(vec![gates_suite(&SuiteParams::new((4..=8).collect(), 40, SEED + 2))?])),
        ),
        (
            "truncation: F = √K within 1e-10, F = best rank-χ̃ fidelity within 1e-9, n ≤ 8",
            Box::new(|| Ok(vec![truncation_suite(&SuiteParams::new((4..=8).collect(), 15, SEED + 3))?])),
        ),
        (
            "measurement: Born probabilities within 1e-10, no rank growth, 200 trials",
            Box::new(|| Ok(vec![measurement_suite(&SuiteParams::new((4..=7).collect(), 200, SEED + 4))?])),
        ),
        (
            "cluster states: rank 2, fidelity ≥ 1 − 1e-10 for n ≤ 12; 4-qubit wire over 8 branches",
            Box::new(|| Ok(vec![cluster_suite(&SuiteParams::new((3..=12).collect(), 5, SEED + 5))?])),
        ),
        (
            "real-time evolution: TFIM n = 8, ⟨Z⟩ within 1e-4, dt-halving ratio in [3, 5]",
            Box::new(|| Ok(vec![tebd_real_suite(&SuiteParams::new(vec![8], 1, SEED + 6))?])),
        ),
        (
            "ground state: TFIM n = 8, energy within 1e-6 of exact, χ ≤ 16, < 5 min",
            Box::new(|| Ok(vec![ground_state_suite(&SuiteParams::new(vec![8], 1, SEED + 7))?])),
        ),
        (
            "complexity: canonicalize slope 4 ± 0.7 over χ = 8..64; path lengths log vs linear",
            Box::new(|| {
                Ok(vec![canonical_scaling(&[8, 16, 32, 64], 5, SEED + 8)?, routing_suite(&(8..=64).collect::<Vec<_>>(), SEED + 9)?])
            }),
        ),
    ]
}

fn main() -> ExitCode {
    let mut failures = 0;
    for (k, (title, check)) in criteria().into_iter().enumerate() {
        match check() {
            Ok(outcomes) => {
                let passed = outcomes.iter().all(|o| o.passed);
                let detail: Vec<String> = outcomes.iter().map(|o| format!("{}: {}", o.name, o.detail)).collect();
                println!("{} [{}] {title} ({:.1}s) | {}", if passed { "PASS" } else { "FAIL" }, k + 1,
                    outcomes.iter().map(|o| o.seconds).sum::<f64>(), detail.join(" | "));
                if !passed {
                    failures += 1;
                }
            }
            Err(e) => {
                println!("FAIL [{}] {title} | error: {e}", k + 1);
                failures += 1;
            }
        }
    }
    if failures == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
