use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::DType;

/// Neighbour count for the kNN density: a fixed value or the
/// `max(2, round(sqrt(n)))` heuristic capped at `n - 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NeighborCount {
    #[default]
    Auto,
    Fixed(usize),
}

impl NeighborCount {
    /// Resolve for a set of `n_items` items. Returns 0 only when `n_items == 1`.
    pub fn resolve(self, n_items: usize) -> usize {
        let cap = n_items.saturating_sub(1);
        match self {
            NeighborCount::Auto => {
                let c = ((n_items as f64).sqrt().round() as usize).max(2);
                c.min(cap)
            }
            NeighborCount::Fixed(c) => c,
        }
    }
}

impl Serialize for NeighborCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NeighborCount::Auto => s.serialize_str("auto"),
            NeighborCount::Fixed(c) => s.serialize_u64(*c as u64),
        }
    }
}

impl<'de> Deserialize<'de> for NeighborCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(c) => Ok(NeighborCount::Fixed(c)),
            Raw::Text(s) if s == "auto" => Ok(NeighborCount::Auto),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "C must be a positive integer or \"auto\", got {s:?}"
            ))),
        }
    }
}

/// Validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub d: usize,
    pub d_prime: usize,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "C")]
    pub c: NeighborCount,
    #[serde(rename = "J")]
    pub j: usize,
    pub layer_sizes: Vec<usize>,
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub r_d_threshold: f64,
    pub r_a_threshold: f64,
    pub pool_block: usize,
    /// Use the hard gather in the forward pass while gradients still flow
    /// through the perturbed selection.
    pub straight_through: bool,
    pub precision: DType,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    d: Option<usize>,
    d_prime: Option<usize>,
    #[serde(rename = "P")]
    p: Option<usize>,
    #[serde(rename = "L")]
    l: Option<usize>,
    #[serde(rename = "K")]
    k: Option<usize>,
    #[serde(rename = "C")]
    c: Option<NeighborCount>,
    #[serde(rename = "J")]
    j: Option<usize>,
    layer_sizes: Option<Vec<usize>>,
    sigma: Option<f64>,
    n_samples: Option<usize>,
    seed: Option<u64>,
    r_d_threshold: Option<f64>,
    r_a_threshold: Option<f64>,
    pool_block: Option<usize>,
    straight_through: Option<bool>,
    precision: Option<DType>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 1408,
            d_prime: 1408,
            p: 16,
            l: 25,
            k: 20,
            c: NeighborCount::Auto,
            j: 2,
            layer_sizes: vec![16, 6],
            sigma: 0.05,
            n_samples: 500,
            seed: 0,
            r_d_threshold: 0.6,
            r_a_threshold: 0.4,
            pool_block: 4,
            straight_through: false,
            precision: DType::F32,
        }
    }
}

impl RunConfig {
    /// Total number of multi-grained spatial prototypes per frame.
    pub fn i_total(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Tokens emitted for a frame on the fine path.
    pub fn fine_tokens(&self) -> usize {
        self.p + self.i_total() + 2
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawConfig = if text.trim().is_empty() {
            RawConfig::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::Validation {
                keys: vec!["<json>".into()],
                message: e.to_string(),
            })?
        };
        let defaults = RunConfig::default();
        let d = raw.d.unwrap_or(defaults.d);
        let layer_sizes = raw.layer_sizes.unwrap_or(defaults.layer_sizes);
        let cfg = RunConfig {
            d,
            d_prime: raw.d_prime.unwrap_or(d),
            p: raw.p.unwrap_or(defaults.p),
            l: raw.l.unwrap_or(defaults.l),
            k: raw.k.unwrap_or(defaults.k),
            c: raw.c.unwrap_or(defaults.c),
            j: raw.j.unwrap_or(layer_sizes.len()),
            layer_sizes,
            sigma: raw.sigma.unwrap_or(defaults.sigma),
            n_samples: raw.n_samples.unwrap_or(defaults.n_samples),
            seed: raw.seed.unwrap_or(defaults.seed),
            r_d_threshold: raw.r_d_threshold.unwrap_or(defaults.r_d_threshold),
            r_a_threshold: raw.r_a_threshold.unwrap_or(defaults.r_a_threshold),
            pool_block: raw.pool_block.unwrap_or(defaults.pool_block),
            straight_through: raw.straight_through.unwrap_or(defaults.straight_through),
            precision: raw.precision.unwrap_or(defaults.precision),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every invariant and report all offending keys at once.
    pub fn validate(&self) -> Result<()> {
        let mut keys = Vec::new();
        let mut problems = Vec::new();
        let mut flag = |key: &str, msg: String| {
            if !keys.iter().any(|k| k == key) {
                keys.push(key.to_string());
            }
            problems.push(msg);
        };
        for (key, v) in [
            ("d", self.d),
            ("d_prime", self.d_prime),
            ("P", self.p),
            ("L", self.l),
            ("K", self.k),
            ("n_samples", self.n_samples),
            ("pool_block", self.pool_block),
        ] {
            if v == 0 {
                flag(key, format!("{key} must be positive"));
            }
        }
        if self.k > self.l {
            flag("K", format!("K={} exceeds L={}", self.k, self.l));
            flag("L", format!("L={} is smaller than K={}", self.l, self.k));
        }
        let side = (self.p as f64).sqrt().round() as usize;
        if self.p > 0 && side * side != self.p {
            flag("P", format!("P={} is not a square number of pooled cells", self.p));
        }
        if let NeighborCount::Fixed(0) = self.c {
            flag("C", "C must be at least 1".into());
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            flag(
                "layer_sizes",
                format!("layer_sizes must be non-empty and positive, got {:?}", self.layer_sizes),
            );
        } else if self.layer_sizes.windows(2).any(|w| w[1] > w[0]) {
            flag(
                "layer_sizes",
                format!("layer_sizes must be non-increasing, got {:?}", self.layer_sizes),
            );
        }
        if self.j != self.layer_sizes.len() {
            flag(
                "J",
                format!("J={} but layer_sizes has {} entries", self.j, self.layer_sizes.len()),
            );
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            flag("sigma", format!("sigma must be positive, got {}", self.sigma));
        }
        for (key, v) in [
            ("r_d_threshold", self.r_d_threshold),
            ("r_a_threshold", self.r_a_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                flag(key, format!("{key} must lie in [0, 1], got {v}"));
            }
        }
        if keys.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation {
                keys,
                message: problems.join("; "),
            })
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.d, 1408);
        assert_eq!((cfg.l, cfg.k, cfg.p, cfg.j), (25, 20, 16, 2));
        assert_eq!(cfg.d_prime, 1408);
        assert_eq!(cfg.sigma, 0.05);
        assert_eq!(cfg.n_samples, 500);
        assert_eq!(cfg.c, NeighborCount::Auto);
        assert_eq!((cfg.r_d_threshold, cfg.r_a_threshold), (0.6, 0.4));
        assert_eq!(RunConfig::from_json_str("").unwrap(), cfg);
    }

    #[test]
    fn k_above_l_is_rejected_with_keys() {
        match RunConfig::from_json_str(r#"{"K": 30, "L": 25}"#) {
            Err(Error::Validation { keys, message }) => {
                assert_eq!(keys, vec!["K", "L"]);
                assert!(message.contains("K=30"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn layer_sizes_sum_to_i() {
        let cfg = RunConfig::from_json_str(r#"{"layer_sizes":[16,6]}"#).unwrap();
        assert_eq!(cfg.i_total(), 22);
        assert_eq!(cfg.fine_tokens(), 40);
    }

    #[test]
    fn d_prime_follows_d() {
        let cfg = RunConfig::from_json_str(r#"{"d": 32}"#).unwrap();
        assert_eq!(cfg.d_prime, 32);
    }

    #[test]
    fn collects_every_violation() {
        let err = RunConfig::from_json_str(
            r#"{"layer_sizes":[4, 8], "sigma": 0, "r_a_threshold": 1.5, "C": 0, "J": 3}"#,
        )
        .unwrap_err();
        let Error::Validation { keys, .. } = err else {
            panic!("wrong error kind")
        };
        for k in ["layer_sizes", "sigma", "r_a_threshold", "C", "J"] {
            assert!(keys.iter().any(|x| x == k), "missing {k} in {keys:?}");
        }
    }

    #[test]
    fn neighbor_count_parsing_and_resolution() {
        let cfg = RunConfig::from_json_str(r#"{"C": "auto"}"#).unwrap();
        assert_eq!(cfg.c, NeighborCount::Auto);
        let cfg = RunConfig::from_json_str(r#"{"C": 3}"#).unwrap();
        assert_eq!(cfg.c, NeighborCount::Fixed(3));
        assert!(RunConfig::from_json_str(r#"{"C": "many"}"#).is_err());

        assert_eq!(NeighborCount::Auto.resolve(100), 10);
        assert_eq!(NeighborCount::Auto.resolve(3), 2);
        assert_eq!(NeighborCount::Auto.resolve(2), 1);
        assert_eq!(NeighborCount::Auto.resolve(1), 0);
        assert_eq!(NeighborCount::Auto.resolve(256), 16);
    }

    #[test]
    fn unknown_keys_and_bad_json_are_validation_errors() {
        assert!(matches!(
            RunConfig::from_json_str(r#"{"sigmaa": 1}"#),
            Err(Error::Validation { .. })
        ));
        assert!(matches!(
            RunConfig::from_json_str("{"),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn echo_uses_wire_names() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        assert_eq!(v["K"], 20);
        assert_eq!(v["C"], "auto");
        assert_eq!(v["precision"], "f32");
    }
}
