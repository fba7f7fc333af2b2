//! Bundled problem files, embedded at build time.

use serde_json::{json, Value};

const ENTRIES: &[(&str, &str)] = &[
    ("tangent-de-rham", include_str!("../gallery/tangent-de-rham.json")),
    ("so3-lie-algebra", include_str!("../gallery/so3-lie-algebra.json")),
    ("so3-flat-bundle", include_str!("../gallery/so3-flat-bundle.json")),
    ("so3-poisson-leaves", include_str!("../gallery/so3-poisson-leaves.json")),
    ("adjoint-lift", include_str!("../gallery/adjoint-lift.json")),
    ("courant", include_str!("../gallery/courant.json")),
];

pub fn get(name: &str) -> Option<&'static str> {
    ENTRIES.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}

pub fn listing() -> Value {
    ENTRIES
        .iter()
        .map(|(name, src)| {
            let v: Value = serde_json::from_str(src).expect("bundled problem is valid JSON");
            json!({ "name": name, "description": v["description"] })
        })
        .collect()
}
