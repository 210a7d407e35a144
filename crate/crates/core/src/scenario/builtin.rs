//! Scenario files shipped with the binary.

use super::{SResult, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Builtin {
    pub name: &'static str,
    pub source: &'static str,
}

impl Builtin {
    pub fn scenario(&self) -> SResult<Scenario> {
        Scenario::parse(self.source, &format!("builtin:{}", self.name))
    }
}

macro_rules! builtins {
    ($($name:literal),* $(,)?) => {
        &[$(Builtin { name: $name, source: include_str!(concat!("../../scenarios/", $name, ".toml")) }),*]
    };
}

static BUILTINS: &[Builtin] = builtins![
    "basin-duffing",
    "basin-impact-default",
    "basin-three-attractor",
    "duffing-switch",
    "region-duffing",
    "region-impact-p2",
    "region-impact-p5",
    "simulate-impact-reference",
    "sweep-duffing",
    "sweep-impact-p2",
    "sweep-impact-p2-fold",
    "sweep-impact-p5",
    "switch-p2-to-p5-amplitude",
    "switch-p2-to-p5-gap",
    "switch-p2-to-p5-linear",
    "switch-p5-to-p2-amplitude",
    "switch-p5-to-p2-gap",
    "switch-p5-to-p2-linear",
    "three-cycle-amp",
];

pub fn builtins() -> &'static [Builtin] {
    BUILTINS
}

pub fn builtin(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses_and_is_named_after_its_file() {
        for b in builtins() {
            let sc = b.scenario().unwrap_or_else(|e| panic!("{}: {e}", b.name));
            assert_eq!(sc.scenario.name, b.name);
            assert!(sc.scenario.figure.is_some(), "{} names no figure", b.name);
            sc.resolved().unwrap();
        }
        assert!(builtins().len() >= 12);
    }

    #[test]
    fn three_cycle_bounds() {
        let sc = builtin("three-cycle-amp").unwrap().scenario().unwrap();
        let sw = sc.switch.unwrap();
        assert_eq!((sw.m1, sw.m2), (0.2, 10.0));
    }
}
