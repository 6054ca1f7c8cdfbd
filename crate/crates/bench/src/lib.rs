//! Fixtures shared by the benchmarks.

use crossmatch::synthlab::{generate, suite_scenario};
use crossmatch::ObservationTable;

/// Heterogeneous-effect suite table resized to `n` units.
pub fn table(n: usize) -> ObservationTable {
    let scenario = suite_scenario("heterogeneous").expect("suite scenario").with_n(n);
    generate(&scenario).expect("generate").table
}
