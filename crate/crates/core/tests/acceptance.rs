use surge_core::acceptance::{run_criteria, CRITERIA};

#[test]
fn acceptance_suite() {
    let outcomes = run_criteria(&CRITERIA, |o| println!("{}", o.line()));
    assert_eq!(outcomes.len(), CRITERIA.len());
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
