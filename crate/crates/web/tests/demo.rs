use rbbf_web::{boundary_recall, fp_curve, sizing, Playground};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn sizing_matches_the_rule_of_thumb() {
    let v = parse(sizing(0.05, 2.5e6, 1.0, 6));
    assert_eq!(v["k"], 5);
    assert_eq!(v["rule_of_thumb_bytes"], 4_375_000.0);
    assert!(sizing(0.0, 1e5, 1.0, 6).is_err());
}

#[test]
fn curves_rise_with_load() {
    let v = parse(fp_curve(5, 1e6, 0.5, 4e5, 20));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[0]["classic"], 0.0);
    for w in rows.windows(2) {
        assert!(w[1]["classic"].as_f64() >= w[0]["classic"].as_f64());
    }
    assert!(fp_curve(5, 1e6, 0.5, 4e5, 1).is_err());
}

#[test]
fn boundary_demo_shows_the_effect() {
    let v = parse(boundary_recall(3, 2000.0, 0.2, 4));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows[0]["pairs"].as_u64().unwrap() > 100);
    assert!(rows[0]["recall"].as_f64().unwrap() < 0.05);
    assert_eq!(rows[3]["recall"], 1.0);
}

#[test]
fn playground_walks_through_outcomes() {
    let mut p = Playground::new(256, 3).unwrap();
    let outcome = |s: Result<String, String>| parse(s)["outcome"].as_str().unwrap().to_string();
    assert_eq!(outcome(p.observe("10.0.0.1:443/tcp")), "FIRST_SEEN");
    assert_eq!(outcome(p.observe("10.0.0.1:443/tcp")), "PROMOTED");
    assert_eq!(outcome(p.observe("10.0.0.1:443/tcp")), "KNOWN_DUPLICATE");
    let ones = |b: Vec<u8>| b.iter().filter(|&&x| x == 1).count();
    assert_eq!(p.b1_bits().len(), 256);
    assert!((1..=3).contains(&ones(p.b2_bits())));
    assert_eq!(parse(Ok(p.counters()))["promoted"], 1);
    assert_eq!(parse(p.peek("10.0.0.1:443/tcp"))["in_b2"], true);
    p.reset();
    assert_eq!(ones(p.b1_bits()), 0);
    assert!(Playground::new(4, 3).is_err());
}
