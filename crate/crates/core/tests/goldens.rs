use cinetransfer::goldens::{check_goldens, compute_goldens, golden_dir, goldens_json, load_goldens, Origin, GOLDEN_FILE};

#[test]
fn committed_goldens_hold() {
    let cases = load_goldens(&golden_dir().join(GOLDEN_FILE)).unwrap();
    assert!(cases.iter().any(|c| c.origin == Origin::Trivial));
    assert!(cases.iter().any(|c| c.origin == Origin::OracleLp));
    assert!(cases.iter().any(|c| c.origin == Origin::OracleFd));
    assert!(cases.iter().any(|c| c.origin == Origin::OracleDense));
    check_goldens(&cases).unwrap();
}

#[test]
fn goldens_regenerate_to_the_committed_file() {
    let committed = load_goldens(&golden_dir().join(GOLDEN_FILE)).unwrap();
    let fresh = compute_goldens().unwrap();
    assert_eq!(fresh.len(), committed.len());
    for (f, c) in fresh.iter().zip(&committed) {
        assert_eq!((&f.id, f.origin, &f.inputs, f.tolerance), (&c.id, c.origin, &c.inputs, c.tolerance));
        match f.origin {
            // Exact arithmetic paths must reproduce byte for byte.
            Origin::Trivial | Origin::OracleLp => assert_eq!(f.expected, c.expected, "{}", f.id),
            // Long float reductions may differ in the last bits across platforms.
            _ => {
                for (a, b) in f.expected.iter().zip(&c.expected) {
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12), "{}: {a} vs {b}", f.id);
                }
            }
        }
    }
}

#[test]
fn json_form_round_trips() {
    let cases = load_goldens(&golden_dir().join(GOLDEN_FILE)).unwrap();
    let text = goldens_json(&cases);
    assert_eq!(serde_json::from_str::<Vec<_>>(&text).map(|v: Vec<cinetransfer::goldens::GoldenCase>| v).unwrap(), cases);
}
