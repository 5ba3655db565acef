use etr_pcp_wasm_demo::{approx_json, halfspace_json, pass_rate_curve_json};

#[test]
fn honest_curve_starts_at_one_and_decays() {
    let v = pass_rate_curve_json("addq", 64, 4, 0.5, 5, 20_000, 3).unwrap();
    let pts = v["points"].as_array().unwrap();
    assert_eq!(pts.len(), 6);
    assert_eq!(pts[0]["pass"].as_f64(), Some(1.0));
    assert_eq!(pts[0]["overlay"].as_u64(), Some(0));
    assert!(pts[5]["pass"].as_f64().unwrap() < 0.9);
    assert_eq!(v, pass_rate_curve_json("addq", 64, 4, 0.5, 5, 20_000, 3).unwrap());
}

#[test]
fn curve_accepts_every_group() {
    for g in ["mulq", "modp:31", "int"] {
        assert!(pass_rate_curve_json(g, 16, 2, 0.2, 2, 1000, 1).is_ok(), "{g}");
    }
    assert!(pass_rate_curve_json("reals", 16, 2, 0.2, 2, 1000, 1).is_err());
    assert!(pass_rate_curve_json("addq", 16, 2, 1.5, 2, 1000, 1).is_err());
    assert!(pass_rate_curve_json("addq", 16, 2, 0.5, 2, 0, 1).is_err());
}

#[test]
fn halfspace_is_far_but_mostly_passes() {
    let v = halfspace_json(16, 1, 50_000, 9).unwrap();
    assert_eq!(v["length"].as_u64(), Some(17));
    assert_eq!(v["distance_to_affine"].as_u64(), Some(8));
    // the shift-1 decoder reads 1 only across the step
    assert_eq!(v["decoded_shift1"].as_array().unwrap().iter().filter(|d| *d == "1").count(), 1);
    assert!(v["pass"].as_f64().unwrap() > 0.5);
    assert!(halfspace_json(10_000, 1, 10, 0).is_err());
}

#[test]
fn approx_methods_run_on_text_instances() {
    let text = "etrinv 2\nEQ1 0\nADD 1 1 0\n";
    let two = approx_json(text, 2, None, 0).unwrap();
    assert_eq!(two["satisfied"].as_u64(), Some(2));
    assert_eq!(two["assignment"], serde_json::json!(["1", "1/2"]));
    let eight = approx_json(text, 8, None, 0).unwrap();
    assert_eq!(eight["method"], "derandomized");
    let r = approx_json(text, 8, Some(4), 10).unwrap();
    assert_eq!(r, approx_json(text, 8, Some(4), 10).unwrap());
    assert!(approx_json(text, 3, None, 0).is_err());
    assert!(approx_json("nonsense", 2, None, 0).is_err());
}
