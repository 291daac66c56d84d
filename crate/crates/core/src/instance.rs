//! System description: task classes, service rates, pool capacities, and the
//! TOML instance file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{derive_feedback, derive_quality, FeedbackParams, QualityDerived, QualityParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub lambda: f64,
    pub theta: f64,
    pub mu_w: f64,
    pub mu_j: f64,
    pub mu_h: f64,
    pub reward: f64,
    pub quality: QualityParams,
    /// Error-rate multiplier for reworked tasks that received human feedback.
    pub kappa: Option<f64>,
}

impl ClassParams {
    pub fn validate(&self, class: usize) -> Result<()> {
        let field = |f: &str| format!("classes[{class}].{f}");
        for (name, v) in [
            ("mu_w", self.mu_w),
            ("mu_j", self.mu_j),
            ("mu_h", self.mu_h),
            ("reward", self.reward),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(field(name), format!("{v} must be positive and finite")));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("theta", self.theta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(field(name), format!("{v} must be nonnegative and finite")));
            }
        }
        self.quality
            .validate()
            .map_err(|e| relabel(e, &field("")))?;
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k < 1.0) {
                return Err(Error::domain(field("kappa"), format!("{k} is outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn derived(&self, class: usize) -> Result<QualityDerived> {
        derive_quality(&self.quality).map_err(|e| match e {
            Error::DegenerateJudge { .. } => Error::DegenerateJudge { class },
            other => other,
        })
    }

    pub fn feedback(&self, class: usize) -> Result<FeedbackParams> {
        let kappa = self.kappa.ok_or_else(|| {
            Error::Usage(format!("class {class} has no kappa; feedback analysis needs one per class"))
        })?;
        derive_feedback(&self.quality, kappa)
    }
}

fn relabel(e: Error, prefix: &str) -> Error {
    match e {
        Error::Domain { name, reason } => Error::Domain {
            name: format!("{prefix}{name}"),
            reason,
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub classes: Vec<ClassParams>,
    pub n_w: f64,
    pub n_j: f64,
    pub n_h: f64,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::domain("classes", "at least one class is required"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            c.validate(i)?;
        }
        for (name, v) in [("n_w", self.n_w), ("n_j", self.n_j), ("n_h", self.n_h)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(name, format!("{v} must be nonnegative and finite")));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn with_capacities(&self, n_w: f64, n_j: f64, n_h: f64) -> Instance {
        Instance {
            classes: self.classes.clone(),
            n_w,
            n_j,
            n_h,
        }
    }

    pub fn with_n_h(&self, n_h: f64) -> Instance {
        self.with_capacities(self.n_w, self.n_j, n_h)
    }

    pub fn derived(&self) -> Result<Vec<QualityDerived>> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| c.derived(i))
            .collect()
    }

    pub fn has_feedback(&self) -> bool {
        self.classes.iter().all(|c| c.kappa.is_some())
    }

    /// Stable 64-bit fingerprint of every numeric field (FNV-1a over the bit patterns).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: f64| {
            for byte in x.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for c in &self.classes {
            for v in [
                c.lambda,
                c.theta,
                c.mu_w,
                c.mu_j,
                c.mu_h,
                c.reward,
                c.quality.alpha,
                c.quality.beta_i,
                c.quality.beta_ii,
                c.kappa.unwrap_or(-1.0),
            ] {
                feed(v);
            }
        }
        feed(self.n_w);
        feed(self.n_j);
        feed(self.n_h);
        h
    }
}

/// Staffing budget for joint capacity planning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(rename = "B")]
    pub b: f64,
    pub gamma_w: f64,
    pub gamma_j: f64,
}

/// Simulation settings carried by an instance file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub scale_n: u32,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    pub warmup: f64,
    pub seed: u64,
    pub sample_interval: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            scale_n: 10,
            horizon_t: 500.0,
            warmup: 100.0,
            seed: 42,
            sample_interval: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub lambda: f64,
    pub theta: f64,
    pub mu_w: f64,
    pub mu_j: f64,
    pub mu_h: f64,
    #[serde(default = "one")]
    pub reward: f64,
    pub alpha: f64,
    #[serde(rename = "beta_I")]
    pub beta_i: f64,
    #[serde(rename = "beta_II")]
    pub beta_ii: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capacities {
    pub n_w: f64,
    pub n_j: f64,
    pub n_h: f64,
}

/// On-disk instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub classes: Vec<ClassEntry>,
    pub capacities: Capacities,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSettings>,
}

impl InstanceFile {
    pub fn parse(text: &str, origin: &str) -> Result<InstanceFile> {
        let file: InstanceFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        file.instance()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<InstanceFile> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        InstanceFile::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("instance files always serialize")
    }

    pub fn instance(&self) -> Result<Instance> {
        let inst = Instance {
            classes: self
                .classes
                .iter()
                .map(|c| ClassParams {
                    lambda: c.lambda,
                    theta: c.theta,
                    mu_w: c.mu_w,
                    mu_j: c.mu_j,
                    mu_h: c.mu_h,
                    reward: c.reward,
                    quality: QualityParams::new(c.alpha, c.beta_i, c.beta_ii),
                    kappa: c.kappa,
                })
                .collect(),
            n_w: self.capacities.n_w,
            n_j: self.capacities.n_j,
            n_h: self.capacities.n_h,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn from_instance(inst: &Instance) -> InstanceFile {
        InstanceFile {
            classes: inst
                .classes
                .iter()
                .map(|c| ClassEntry {
                    lambda: c.lambda,
                    theta: c.theta,
                    mu_w: c.mu_w,
                    mu_j: c.mu_j,
                    mu_h: c.mu_h,
                    reward: c.reward,
                    alpha: c.quality.alpha,
                    beta_i: c.quality.beta_i,
                    beta_ii: c.quality.beta_ii,
                    kappa: c.kappa,
                })
                .collect(),
            capacities: Capacities {
                n_w: inst.n_w,
                n_j: inst.n_j,
                n_h: inst.n_h,
            },
            budget: None,
            sim: None,
        }
    }
}

/// Parameter sets used throughout the documentation and tests.
pub mod presets {
    use super::*;

    fn class(alpha: f64, beta_i: f64, beta_ii: f64) -> ClassParams {
        ClassParams {
            lambda: 75.0,
            theta: 0.5,
            mu_w: 20.0,
            mu_j: 30.0,
            mu_h: 10.0,
            reward: 1.0,
            quality: QualityParams::new(alpha, beta_i, beta_ii),
            kappa: None,
        }
    }

    /// Single class, `n_w = 5`, `n_j = 3`, alpha 0.3, judge errors (0.1, 0.2).
    pub fn single_class(n_h: f64) -> Instance {
        Instance {
            classes: vec![class(0.3, 0.1, 0.2)],
            n_w: 5.0,
            n_j: 3.0,
            n_h,
        }
    }

    /// Single class with ample workers (`n_w = 10`).
    pub fn single_class_abundant(n_h: f64) -> Instance {
        Instance {
            n_w: 10.0,
            ..single_class(n_h)
        }
    }

    /// Single class with feedback rework, kappa 0.5.
    pub fn single_class_feedback(n_h: f64) -> Instance {
        let mut inst = single_class(n_h);
        inst.classes[0].kappa = Some(0.5);
        inst
    }

    /// Two classes sharing alpha 0.3: a lenient judge (0.05, 0.40) and a strict one (0.15, 0.10).
    pub fn two_class(n_h: f64) -> Instance {
        Instance {
            classes: vec![class(0.3, 0.05, 0.40), class(0.3, 0.15, 0.10)],
            n_w: 10.0,
            n_j: 6.0,
            n_h,
        }
    }

    /// The two-class instance with a staffing budget of 10 at unit cost.
    pub fn two_class_budget() -> Budget {
        Budget {
            b: 10.0,
            gamma_w: 1.0,
            gamma_j: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[[classes]]
lambda = 75.0
theta = 0.5
mu_w = 20.0
mu_j = 30.0
mu_h = 10.0
reward = 1.0
alpha = 0.3
beta_I = 0.1
beta_II = 0.2

[capacities]
n_w = 5.0
n_j = 3.0
n_h = 6.5

[sim]
scale_n = 50
"#;

    #[test]
    fn parses_sample() {
        let f = InstanceFile::parse(SAMPLE, "sample").unwrap();
        let inst = f.instance().unwrap();
        assert_eq!(inst, presets::single_class(6.5));
        let sim = f.sim.unwrap();
        assert_eq!(sim.scale_n, 50);
        assert_eq!(sim.seed, 42);
    }

    #[test]
    fn rejects_unknown_keys_with_location() {
        let text = SAMPLE.replace("reward = 1.0", "reward = 1.0\nrewrad = 2.0");
        let err = InstanceFile::parse(&text, "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml"), "{msg}");
        assert!(msg.contains("rewrad"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn rejects_invalid_values() {
        let text = SAMPLE.replace("alpha = 0.3", "alpha = 1.3");
        let err = InstanceFile::parse(&text, "x").unwrap_err();
        assert!(err.to_string().contains("classes[0].alpha"), "{err}");
        let text = SAMPLE.replace("n_j = 3.0", "n_j = -3.0");
        assert!(InstanceFile::parse(&text, "x").is_err());
        let text = SAMPLE.replace("mu_h = 10.0", "mu_h = 0.0");
        assert!(InstanceFile::parse(&text, "x").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut f = InstanceFile::from_instance(&presets::two_class(14.0));
        f.budget = Some(presets::two_class_budget());
        let back = InstanceFile::parse(&f.to_toml(), "rt").unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn fingerprint_distinguishes_instances() {
        let a = presets::single_class(6.5);
        assert_eq!(a.fingerprint(), presets::single_class(6.5).fingerprint());
        assert_ne!(a.fingerprint(), a.with_n_h(6.75).fingerprint());
    }
}
