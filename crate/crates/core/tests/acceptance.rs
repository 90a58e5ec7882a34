//! Acceptance gate. Each criterion prints one `[PASS]`/`[FAIL]` line; run
//! with `--nocapture` to see them.

use ligru::checks::{self, Verdict};

fn line(v: &Verdict) -> bool {
    println!("{v}");
    v.passed
}

/// The seven criteria, run one after another so the timing-based checks
/// are not disturbed by other tests.
#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let verdicts = checks::all(dir.path()).unwrap();
    let failed: Vec<&str> = verdicts
        .iter()
        .filter(|v| !line(v))
        .map(|v| v.name.as_str())
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
