#[path = "support/steps.rs"]
mod steps;

use steps::ALL;

#[test]
fn twenty_single_steps() {
    assert_eq!(ALL.len(), 20);
    let failed: Vec<String> = ALL.iter().filter_map(|(name, case)| case().err().map(|e| format!("{name}: {e}"))).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}
