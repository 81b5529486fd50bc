//! Bundled test systems, embedded from the repository `data/` directory.

pub const TWO_BUS: &str = include_str!("../../../data/case2.txt");
pub const IEEE9: &str = include_str!("../../../data/case9.txt");
pub const IEEE14: &str = include_str!("../../../data/case14.txt");
pub const IEEE39: &str = include_str!("../../../data/case39.txt");

pub const ALL: [(&str, &str); 4] = [
    ("case2", TWO_BUS),
    ("case9", IEEE9),
    ("case14", IEEE14),
    ("case39", IEEE39),
];

/// Looks up a bundled case by name (`case9`, `ieee14`, `39`, ...).
pub fn by_name(name: &str) -> Option<&'static str> {
    let digits: String = name.chars().filter(|c| c.is_ascii_digit()).collect();
    match digits.as_str() {
        "2" => Some(TWO_BUS),
        "9" => Some(IEEE9),
        "14" => Some(IEEE14),
        "39" => Some(IEEE39),
        _ => None,
    }
}
