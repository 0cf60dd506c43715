use serde_json::Value;
use stopforge_web::{forge_json, simulate_json, trace_json};

#[test]
fn simulate_returns_consistent_arrays() {
    let v: Value = serde_json::from_str(&simulate_json(5, 200, "").unwrap()).unwrap();
    let states = v["states"].as_array().unwrap();
    let bits = v["bits"].as_array().unwrap();
    let truth = v["truth"].as_array().unwrap();
    assert_eq!((states.len(), bits.len(), truth.len()), (200, 200, 200));
    for (s, b) in states.iter().zip(bits) {
        let s = s.as_u64().unwrap();
        assert_eq!(b.as_u64().unwrap(), (s >= 2) as u64);
    }
    // Under the base coding the truth is always one of 0, 1/2 or 1 after a reset.
    let after_reset = truth.iter().skip(20).all(|p| {
        let p = p.as_f64().unwrap();
        p == 0.0 || p == 0.5 || p == 1.0
    });
    assert!(after_reset);
    assert_eq!(simulate_json(5, 200, "").unwrap(), simulate_json(5, 200, "").unwrap());
}

#[test]
fn trace_matches_case_values() {
    let v: Value = serde_json::from_str(&trace_json("0011100111", "", "const:0.3").unwrap()).unwrap();
    let truth: Vec<f64> = v["truth"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(truth[1], 1.0);
    assert_eq!(truth[5], 0.0);
    assert_eq!(truth[6], 1.0);
    assert!(v["predicted"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.3)));
    assert_eq!(v["last_reset"], 7);
}

#[test]
fn bad_inputs_are_reported() {
    assert!(simulate_json(1, 0, "").is_err());
    assert!(simulate_json(1, 10, "{\"default_odd\": 2}").unwrap_err().starts_with("coding"));
    assert!(trace_json("0101", "", "kt:2").is_err());
    assert!(trace_json("01x", "", "kt:2").is_err());
    assert!(forge_json("kt:2", "sometimes", 1, 1000, 0).is_err());
}

#[test]
fn forge_produces_a_report() {
    let v: Value = serde_json::from_str(&forge_json("const:0.5", "always", 1, 2000, 3).unwrap()).unwrap();
    assert_eq!(v["levels"].as_array().unwrap().len(), 1);
    assert_eq!(v["levels"][0]["N"], 2);
}
