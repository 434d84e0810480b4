mod common;

use common::{check_golden, golden_cases};

#[test]
fn default_design_matches_pinned_images() {
    for (name, frame) in golden_cases() {
        check_golden(&name, &frame).unwrap();
    }
}
