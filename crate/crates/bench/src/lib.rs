//! Shared inputs for the benchmarks.

use fairquota::synth::GroupSpec;
use fairquota::{generate_population, Cohort, SynthSpec};

/// The desk-scale group mix scaled to `n` people.
pub fn cohort(n: usize, seed: u64) -> Cohort {
    let base = SynthSpec::desk_scale(seed);
    let total = base.total_size();
    let groups = base.groups.into_iter().map(|g| GroupSpec { n: g.n * n / total, ..g }).collect();
    generate_population(&SynthSpec::new("race", groups, seed)).expect("valid spec")
}
