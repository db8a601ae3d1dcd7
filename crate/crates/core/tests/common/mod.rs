#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use fairquota::{Cohort, ScoredExample};
use rand::Rng;

pub const ATTR: &str = "race";

/// Builds examples from `(group, score level, label)` rows. Entity ids are
/// a fixed permutation of the row index (up to 211 rows), so id order and row order differ.
pub fn examples(rows: &[(usize, u32, bool)]) -> Vec<ScoredExample> {
    rows.iter()
        .enumerate()
        .map(|(i, &(g, s, y))| {
            ScoredExample::new(format!("e{:03}", (i * 37 + 11) % 211), f64::from(s) / 10.0, y)
                .with_group(ATTR, format!("g{g}"))
        })
        .collect()
}

pub fn cohort(xs: Vec<ScoredExample>) -> Cohort {
    Cohort::new(xs, vec![ATTR.to_string()], "test").unwrap()
}

/// Up to `max_n` rows over at most `max_groups` groups, scores on an 11
/// level grid so ties are common. Every listed group is non-empty.
pub fn random_rows<R: Rng>(rng: &mut R, max_n: usize, max_groups: usize) -> Vec<(usize, u32, bool)> {
    let groups = rng.random_range(1..=max_groups);
    let n = rng.random_range(groups..=max_n);
    let p: f64 = rng.random_range(0.05..0.7);
    (0..n)
        .map(|i| {
            let g = if i < groups { i } else { rng.random_range(0..groups) };
            (g, rng.random_range(0..=10), rng.random_bool(p))
        })
        .collect()
}

/// A reference group with positives, if any.
pub fn pick_reference<R: Rng>(rng: &mut R, gs: &[oracle::Group]) -> Option<String> {
    let with: Vec<&oracle::Group> = gs.iter().filter(|g| g.y() > 0).collect();
    if with.is_empty() {
        None
    } else {
        Some(with[rng.random_range(0..with.len())].name.clone())
    }
}

/// A recall target that is either a recall level of some group or a
/// random fraction.
pub fn pick_target<R: Rng>(rng: &mut R, gs: &[oracle::Group]) -> oracle::Q {
    let with: Vec<&oracle::Group> = gs.iter().filter(|g| g.y() > 0).collect();
    if !with.is_empty() && rng.random_bool(0.6) {
        let g = with[rng.random_range(0..with.len())];
        oracle::q(rng.random_range(0..=g.y()), g.y())
    } else {
        let d = rng.random_range(1..=17);
        oracle::q(rng.random_range(0..=d), d)
    }
}
