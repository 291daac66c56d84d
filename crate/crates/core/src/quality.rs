//! Per-class error model: worker error rate, judge Type I / Type II errors,
//! and the probabilities derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for equality comparisons on derived probabilities.
pub const PROB_TOL: f64 = 1e-12;

/// Error primitives of one task class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityParams {
    /// Probability a worker output is incorrect.
    pub alpha: f64,
    /// Probability the judge rejects a correct output.
    pub beta_i: f64,
    /// Probability the judge accepts an incorrect output.
    pub beta_ii: f64,
}

/// Judge pass/reject probabilities and the posterior quality of accepted outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityDerived {
    pub p_pass: f64,
    pub p_rej: f64,
    /// P(correct | judge accepts).
    pub q_acc: f64,
    /// Judge-accepted outputs are strictly more likely correct than unscreened ones.
    pub judge_improves: bool,
}

/// Error model for rework attempts that benefit from human feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackParams {
    pub kappa: f64,
    /// Judge rejection probability for feedback tasks.
    pub p_rej_fb: f64,
}

impl FeedbackParams {
    pub fn p_pass_fb(&self) -> f64 {
        1.0 - self.p_rej_fb
    }
}

/// Which task type should receive judge capacity first when judge and
/// human capacity bind and workers are slack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackOrdering {
    FreshFirst,
    FeedbackFirst,
    Indifferent,
}

impl QualityParams {
    pub fn new(alpha: f64, beta_i: f64, beta_ii: f64) -> Self {
        QualityParams {
            alpha,
            beta_i,
            beta_ii,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("alpha", self.alpha),
            ("beta_I", self.beta_i),
            ("beta_II", self.beta_ii),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(name, format!("{p} is not a probability")));
            }
        }
        Ok(())
    }

    pub fn derive(&self) -> Result<QualityDerived> {
        derive_quality(self)
    }
}

pub fn derive_quality(params: &QualityParams) -> Result<QualityDerived> {
    params.validate()?;
    let QualityParams {
        alpha,
        beta_i,
        beta_ii,
    } = *params;
    let correct_pass = (1.0 - alpha) * (1.0 - beta_i);
    let p_pass = correct_pass + alpha * beta_ii;
    let p_rej = 1.0 - p_pass;
    let q_acc = if p_pass > 0.0 {
        correct_pass / p_pass
    } else if alpha == 0.0 {
        // Zero accepted mass; every worker output is correct anyway.
        1.0
    } else {
        return Err(Error::DegenerateJudge { class: 0 });
    };
    let judge_improves = p_pass > 0.0 && q_acc > (1.0 - alpha) + PROB_TOL;
    Ok(QualityDerived {
        p_pass,
        p_rej,
        q_acc,
        judge_improves,
    })
}

pub fn derive_feedback(params: &QualityParams, kappa: f64) -> Result<FeedbackParams> {
    params.validate()?;
    check_kappa(kappa)?;
    let ka = kappa * params.alpha;
    let p_rej_fb = (1.0 - ka) * params.beta_i + ka * (1.0 - params.beta_ii);
    Ok(FeedbackParams { kappa, p_rej_fb })
}

/// Compares `1 - beta_II` against `(1 - beta_I - beta_II)(alpha^2 kappa + alpha)`.
pub fn feedback_priority_condition(params: &QualityParams, kappa: f64) -> Result<FeedbackOrdering> {
    params.validate()?;
    check_kappa(kappa)?;
    let informativeness = 1.0 - params.beta_i - params.beta_ii;
    if informativeness <= 0.0 {
        return Err(Error::precondition(
            "judge must be informative (beta_I + beta_II < 1)",
        ));
    }
    let a = params.alpha;
    let lhs = 1.0 - params.beta_ii;
    let rhs = informativeness * (a * a * kappa + a);
    Ok(if (lhs - rhs).abs() <= PROB_TOL {
        FeedbackOrdering::Indifferent
    } else if lhs > rhs {
        FeedbackOrdering::FreshFirst
    } else {
        FeedbackOrdering::FeedbackFirst
    })
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(Error::domain("kappa", format!("{kappa} is outside (0, 1)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn single_class_reference_point() {
        let d = derive_quality(&QualityParams::new(0.3, 0.1, 0.2)).unwrap();
        assert!(close(d.p_pass, 0.69, 1e-15));
        assert!(close(d.p_rej, 0.31, 1e-15));
        assert!(close(d.q_acc, 0.63 / 0.69, 1e-15));
        assert!(close(d.q_acc, 0.913043, 1e-6));
        assert!(d.judge_improves);
    }

    #[test]
    fn lenient_judge_class() {
        let d = derive_quality(&QualityParams::new(0.3, 0.05, 0.40)).unwrap();
        assert!(close(d.p_pass, 0.785, 1e-15));
        assert!(close(d.p_rej, 0.215, 1e-15));
        assert!(close(d.q_acc, 0.847134, 1e-6));
    }

    #[test]
    fn perfect_worker_gains_nothing_from_judge() {
        let d = derive_quality(&QualityParams::new(0.0, 0.0, 0.5)).unwrap();
        assert_eq!(d.p_pass, 1.0);
        assert_eq!(d.p_rej, 0.0);
        assert_eq!(d.q_acc, 1.0);
        assert!(!d.judge_improves);
    }

    #[test]
    fn reject_everything_judge() {
        let d = derive_quality(&QualityParams::new(0.0, 1.0, 0.3)).unwrap();
        assert_eq!(d.p_pass, 0.0);
        assert_eq!(d.q_acc, 1.0);
        assert!(!d.judge_improves);

        let err = derive_quality(&QualityParams::new(1.0, 0.2, 0.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateJudge { .. }));
    }

    #[test]
    fn out_of_range_probability() {
        assert!(derive_quality(&QualityParams::new(1.2, 0.1, 0.1)).is_err());
        assert!(derive_quality(&QualityParams::new(0.2, -0.1, 0.1)).is_err());
    }

    #[test]
    fn feedback_rejection_rates() {
        let fb = derive_feedback(&QualityParams::new(0.3, 0.1, 0.2), 0.5).unwrap();
        assert!(close(fb.p_rej_fb, 0.85 * 0.1 + 0.15 * 0.8, 1e-15));
        assert!(close(fb.p_rej_fb, 0.205, 1e-15));

        let fb = derive_feedback(&QualityParams::new(0.3, 0.05, 0.40), 0.5).unwrap();
        assert!(close(fb.p_rej_fb, 0.1325, 1e-15));

        let fb = derive_feedback(&QualityParams::new(0.0, 0.07, 0.4), 0.5).unwrap();
        assert_eq!(fb.p_rej_fb, 0.07);
    }

    #[test]
    fn feedback_kappa_domain() {
        let q = QualityParams::new(0.3, 0.1, 0.2);
        for k in [0.0, 1.0, -0.3, 1.5] {
            assert!(derive_feedback(&q, k).is_err());
            assert!(feedback_priority_condition(&q, k).is_err());
        }
    }

    #[test]
    fn feedback_priority_reference_point() {
        let q = QualityParams::new(0.3, 0.1, 0.2);
        assert_eq!(
            feedback_priority_condition(&q, 0.5).unwrap(),
            FeedbackOrdering::FreshFirst
        );
        // rhs is zero with no worker errors
        let q = QualityParams::new(0.0, 0.3, 0.3);
        assert_eq!(
            feedback_priority_condition(&q, 0.9).unwrap(),
            FeedbackOrdering::FreshFirst
        );
    }

    #[test]
    fn feedback_priority_reversal_and_knife_edge() {
        // alpha = 1, beta_II small: lhs = 1 - b2, rhs = (1 - b1 - b2)(1 + kappa).
        let q = QualityParams::new(1.0, 0.05, 0.05);
        assert_eq!(
            feedback_priority_condition(&q, 0.5).unwrap(),
            FeedbackOrdering::FeedbackFirst
        );
        // kappa chosen so that 1 - b2 = (1 - b1 - b2)(1 + kappa)
        let (b1, b2) = (0.2, 0.3);
        let kappa = (1.0 - b2) / (1.0 - b1 - b2) - 1.0;
        let q = QualityParams::new(1.0, b1, b2);
        assert_eq!(
            feedback_priority_condition(&q, kappa).unwrap(),
            FeedbackOrdering::Indifferent
        );
    }

    #[test]
    fn uninformative_judge_is_a_precondition_failure() {
        let q = QualityParams::new(0.3, 0.6, 0.5);
        assert!(matches!(
            feedback_priority_condition(&q, 0.5),
            Err(Error::Precondition { .. })
        ));
    }

    proptest! {
        #[test]
        fn pass_reject_partition(a in 0.0..=1.0f64, b1 in 0.0..=1.0f64, b2 in 0.0..=1.0f64) {
            if let Ok(d) = derive_quality(&QualityParams::new(a, b1, b2)) {
                prop_assert!((d.p_pass + d.p_rej - 1.0).abs() < 1e-15);
                prop_assert!((0.0..=1.0 + 1e-15).contains(&d.q_acc));
                if d.p_pass > 0.0 {
                    prop_assert!((d.q_acc * d.p_pass - (1.0 - a) * (1.0 - b1)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn posterior_sign_identity(a in 0.01..0.99f64, b1 in 0.0..=1.0f64, b2 in 0.0..=1.0f64) {
            let d = derive_quality(&QualityParams::new(a, b1, b2));
            prop_assume!(d.is_ok());
            let d = d.unwrap();
            prop_assume!(d.p_pass > 1e-9);
            let lhs = d.q_acc - (1.0 - a);
            let rhs = d.p_rej - b1;
            prop_assume!(lhs.abs() > 1e-10 && rhs.abs() > 1e-10);
            prop_assert_eq!(lhs.signum(), rhs.signum());
        }
    }

    #[test]
    fn judge_improves_iff_informative_on_grid() {
        let steps = 40;
        for ia in 1..steps {
            for i1 in 0..=steps {
                for i2 in 0..=steps {
                    let a = ia as f64 / steps as f64;
                    let b1 = i1 as f64 / steps as f64;
                    let b2 = i2 as f64 / steps as f64;
                    let Ok(d) = derive_quality(&QualityParams::new(a, b1, b2)) else {
                        continue;
                    };
                    let informative = b1 + b2 < 1.0 - 1e-9;
                    if (b1 + b2 - 1.0).abs() > 1e-9 {
                        assert_eq!(d.judge_improves, informative, "a={a} b1={b1} b2={b2}");
                    }
                }
            }
        }
    }
}
