//! Rule hierarchies, grasp rank, and the rank-preserving utilities.
//!
//! A hierarchy is an ordered list of rules; rule `i` (1-based) is the
//! conjunction of its criteria and outranks every rule after it. For `N`
//! rules the rank of a satisfaction pattern is
//!
//! ```text
//! r = 2^N - sum_i 2^(N-i) * eval_i          (1 = everything satisfied)
//! ```
//!
//! and the integer utility is `u = 2^N - r + 1`, so `u` ranges over `[1, 2^N]`.
//! The expected utility uses a different constant offset,
//! `U = sum_i 2^(N-i) q_i - 2^N` in `[-2^N, -1]`, which is the negated expected
//! rank. The two differ by `2^N + 1` when every `q_i` is 0 or 1 and order
//! grasps identically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest hierarchy whose ranks fit a `u64`.
pub const MAX_RULES: usize = 62;

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Criterion identifiers understood by the built-in evaluator registry.
pub const STABILITY: &str = "stability";
pub const EXECUTION: &str = "execution";
pub const COLLISION: &str = "collision";
pub const INTENTION: &str = "intention";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub priority: usize,
    pub criteria: Vec<String>,
}

/// Ordered rules, priority 1 first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct RuleHierarchy {
    rules: Vec<Rule>,
}

impl RuleHierarchy {
    /// Builds a hierarchy from criterion lists in priority order.
    pub fn new<S: Into<String>>(rules: Vec<Vec<S>>) -> Result<Self> {
        let rules = rules
            .into_iter()
            .enumerate()
            .map(|(i, criteria)| Rule {
                priority: i + 1,
                criteria: criteria.into_iter().map(Into::into).collect(),
            })
            .collect();
        Self::from_rules(rules)
    }

    /// Builds a hierarchy from explicitly prioritized rules. Priorities must
    /// be exactly `1..=N` (any order); rules are stored sorted by priority.
    pub fn from_rules(mut rules: Vec<Rule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::validation("hierarchy", "at least one rule is required"));
        }
        if rules.len() > MAX_RULES {
            return Err(Error::Size(format!(
                "{} rules exceeds the supported maximum of {MAX_RULES}",
                rules.len()
            )));
        }
        rules.sort_by_key(|r| r.priority);
        for (i, rule) in rules.iter().enumerate() {
            if rule.priority != i + 1 {
                return Err(Error::validation(
                    "hierarchy",
                    format!("priorities must be exactly 1..={} without gaps or duplicates", rules.len()),
                ));
            }
            if rule.criteria.is_empty() {
                return Err(Error::validation(
                    format!("hierarchy[{i}]"),
                    "a rule needs at least one criterion",
                ));
            }
        }
        Ok(Self { rules })
    }

    /// Stability first; execution and collision together second; intention last.
    pub fn grasp_default() -> Self {
        Self::new(vec![
            vec![STABILITY],
            vec![EXECUTION, COLLISION],
            vec![INTENTION],
        ])
        .expect("default hierarchy is valid")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Every criterion identifier in priority order, without repeats.
    pub fn criteria(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in self.rules.iter().flat_map(|r| r.criteria.iter()) {
            if !out.contains(&c.as_str()) {
                out.push(c);
            }
        }
        out
    }

    pub fn contains(&self, criterion: &str) -> bool {
        self.rules.iter().any(|r| r.criteria.iter().any(|c| c == criterion))
    }

    /// Compact label such as `S|EC|N`: one letter per criterion, rules
    /// separated by `|`. Unknown criteria use their upper-cased initial.
    pub fn label(&self) -> String {
        let letter = |c: &str| match c {
            STABILITY => 'S',
            EXECUTION => 'E',
            COLLISION => 'C',
            INTENTION => 'N',
            other => other.chars().next().unwrap_or('?').to_ascii_uppercase(),
        };
        self.rules
            .iter()
            .map(|r| r.criteria.iter().map(|c| letter(c)).collect::<String>())
            .collect::<Vec<_>>()
            .join("|")
    }
}

impl TryFrom<Vec<Vec<String>>> for RuleHierarchy {
    type Error = Error;

    fn try_from(value: Vec<Vec<String>>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<RuleHierarchy> for Vec<Vec<String>> {
    fn from(h: RuleHierarchy) -> Self {
        h.rules.into_iter().map(|r| r.criteria).collect()
    }
}

/// Which rules a grasp satisfies; index 0 is priority 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SatisfactionPattern {
    bits: Vec<bool>,
}

impl SatisfactionPattern {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Pattern whose bit for priority `i` is bit `N - i` of `mask`, so that
    /// `mask` equals `utility - 1`.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        Self {
            bits: (0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    fn weighted_sum(&self) -> Result<u64> {
        let n = self.bits.len();
        if n == 0 || n > MAX_RULES {
            return Err(Error::Size(format!(
                "pattern length {n} outside supported range 1..={MAX_RULES}"
            )));
        }
        Ok(self
            .bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| 1u64 << (n - 1 - i))
            .sum())
    }
}

/// Rank in `[1, 2^N]`; 1 when every rule holds.
pub fn rank(pattern: &SatisfactionPattern) -> Result<u64> {
    let sum = pattern.weighted_sum()?;
    Ok((1u64 << pattern.len()) - sum)
}

/// Integer utility `2^N - rank + 1`, in `[1, 2^N]`.
pub fn utility(pattern: &SatisfactionPattern) -> Result<u64> {
    Ok(pattern.weighted_sum()? + 1)
}

/// Per-rule satisfaction probabilities, optionally with the per-criterion
/// probabilities they were multiplied from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleProbabilities {
    rule: Vec<f64>,
    criteria: Option<Vec<Vec<f64>>>,
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} = {p} is not a probability")))
    }
}

impl RuleProbabilities {
    /// From rule-level probabilities `q_i` only.
    pub fn from_rules(rule: Vec<f64>) -> Result<Self> {
        if rule.is_empty() || rule.len() > MAX_RULES {
            return Err(Error::Size(format!("{} rules outside 1..={MAX_RULES}", rule.len())));
        }
        for (i, &q) in rule.iter().enumerate() {
            check_probability(q, &format!("q[{}]", i + 1))?;
        }
        Ok(Self { rule, criteria: None })
    }

    /// From per-criterion probabilities grouped by rule; each rule probability
    /// is the product of its criteria (conditional independence).
    pub fn from_criteria(criteria: Vec<Vec<f64>>) -> Result<Self> {
        if criteria.is_empty() || criteria.len() > MAX_RULES {
            return Err(Error::Size(format!(
                "{} rules outside 1..={MAX_RULES}",
                criteria.len()
            )));
        }
        let mut rule = Vec::with_capacity(criteria.len());
        for (i, ps) in criteria.iter().enumerate() {
            if ps.is_empty() {
                return Err(Error::domain(format!("rule {} has no criteria", i + 1)));
            }
            for (j, &p) in ps.iter().enumerate() {
                check_probability(p, &format!("p[{}][{}]", i + 1, j + 1))?;
            }
            rule.push(ps.iter().product());
        }
        Ok(Self {
            rule,
            criteria: Some(criteria),
        })
    }

    pub fn rule(&self) -> &[f64] {
        &self.rule
    }

    pub fn criteria(&self) -> Option<&[Vec<f64>]> {
        self.criteria.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }
}

/// Negated expected rank, `sum_i 2^(N-i) q_i - 2^N`.
pub fn expected_utility(probs: &RuleProbabilities) -> Result<f64> {
    let n = probs.len();
    for (i, &q) in probs.rule.iter().enumerate() {
        check_probability(q, &format!("q[{}]", i + 1))?;
    }
    let weighted: f64 = probs
        .rule
        .iter()
        .enumerate()
        .map(|(i, &q)| pow2(n - 1 - i) * q)
        .sum();
    Ok(weighted - pow2(n))
}

/// Partial derivative of [`expected_utility`] with respect to `q_i` (1-based).
pub fn rule_weight(n: usize, priority: usize) -> f64 {
    pow2(n - priority)
}

/// Sum of clamped log-probabilities over every criterion.
///
/// When only rule-level probabilities are present each rule counts as a
/// single criterion, which gives the same value for conjunctions.
pub fn log_lower_bound(probs: &RuleProbabilities) -> f64 {
    let ln = |p: f64| p.clamp(PROB_FLOOR, 1.0).ln();
    match &probs.criteria {
        Some(groups) => groups.iter().flatten().map(|&p| ln(p)).sum(),
        None => probs.rule.iter().map(|&q| ln(q)).sum(),
    }
}

/// Monte-Carlo estimate of the expected utility: each rule is an independent
/// Bernoulli draw and the negated rank is averaged. Returns `(mean, std_err)`.
pub fn monte_carlo_utility(probs: &RuleProbabilities, draws: u64, seed: u64) -> Result<(f64, f64)> {
    if draws == 0 {
        return Err(Error::domain("monte-carlo estimate needs at least one draw"));
    }
    let n = probs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![false; n];
    // Welford accumulation.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 1..=draws {
        for (bit, &q) in bits.iter_mut().zip(&probs.rule) {
            *bit = rng.random::<f64>() < q;
        }
        let x = -(rank(&SatisfactionPattern::new(bits.clone()))? as f64);
        let delta = x - mean;
        mean += delta / k as f64;
        m2 += delta * (x - mean);
    }
    let std_err = if draws > 1 {
        (m2 / (draws - 1) as f64 / draws as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, std_err))
}

/// Probability of each rank `1..=2^N` under independent rule satisfaction.
pub fn rank_distribution(probs: &RuleProbabilities) -> Result<Vec<f64>> {
    let n = probs.len();
    if n > 16 {
        return Err(Error::Size(format!("rank distribution limited to 16 rules, got {n}")));
    }
    let count = 1u64 << n;
    // Rank r corresponds to mask = 2^N - r.
    Ok((1..=count)
        .map(|r| {
            let pattern = SatisfactionPattern::from_mask(n, count - r);
            pattern
                .bits()
                .iter()
                .zip(&probs.rule)
                .map(|(&b, &q)| if b { q } else { 1.0 - q })
                .product()
        })
        .collect())
}

fn pow2(k: usize) -> f64 {
    (k as f64).exp2()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(bits: &[u8]) -> SatisfactionPattern {
        SatisfactionPattern::new(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&pat(&[1, 1, 1])).unwrap(), 1);
        assert_eq!(rank(&pat(&[0, 0, 0])).unwrap(), 8);
        assert_eq!(rank(&pat(&[1, 0, 1])).unwrap(), 3);
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(&pat(&[1, 1, 1])).unwrap(), 8);
        assert_eq!(utility(&pat(&[0, 0, 0])).unwrap(), 1);
        assert_eq!(utility(&pat(&[1, 0, 1])).unwrap(), 6);
    }

    #[test]
    fn rank_size_limits() {
        assert!(matches!(rank(&SatisfactionPattern::new(vec![])), Err(Error::Size(_))));
        assert!(matches!(
            rank(&SatisfactionPattern::new(vec![true; 63])),
            Err(Error::Size(_))
        ));
        assert_eq!(rank(&SatisfactionPattern::new(vec![false; 62])).unwrap(), 1 << 62);
        assert_eq!(rank(&SatisfactionPattern::new(vec![true; 62])).unwrap(), 1);
    }

    #[test]
    fn expected_utility_examples() {
        let u = |q: Vec<f64>| expected_utility(&RuleProbabilities::from_rules(q).unwrap()).unwrap();
        assert_eq!(u(vec![1.0, 1.0]), -1.0);
        assert_eq!(u(vec![0.0, 0.0]), -4.0);
        assert_eq!(u(vec![0.5, 0.5]), -2.5);
    }

    #[test]
    fn probabilities_outside_unit_interval_rejected() {
        assert!(matches!(RuleProbabilities::from_rules(vec![1.2]), Err(Error::Domain(_))));
        assert!(matches!(RuleProbabilities::from_rules(vec![-0.1]), Err(Error::Domain(_))));
        assert!(matches!(
            RuleProbabilities::from_criteria(vec![vec![0.5, f64::NAN]]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn log_lower_bound_examples() {
        let single = RuleProbabilities::from_criteria(vec![vec![0.5]]).unwrap();
        let l = log_lower_bound(&single);
        assert!((l + std::f64::consts::LN_2).abs() < 1e-6);
        let shifted = expected_utility(&single).unwrap() + 2.0;
        assert_eq!(l.exp(), shifted);

        let ones = RuleProbabilities::from_criteria(vec![vec![1.0, 1.0], vec![1.0]]).unwrap();
        assert_eq!(log_lower_bound(&ones), 0.0);

        let two = RuleProbabilities::from_criteria(vec![vec![0.5], vec![0.5]]).unwrap();
        assert!((log_lower_bound(&two) - (-1.386294)).abs() < 1e-6);
    }

    #[test]
    fn log_lower_bound_clamps_zero() {
        let p = RuleProbabilities::from_criteria(vec![vec![0.0]]).unwrap();
        assert_eq!(log_lower_bound(&p), PROB_FLOOR.ln());
    }

    #[test]
    fn monte_carlo_degenerate_cases() {
        let certain = RuleProbabilities::from_rules(vec![1.0, 1.0]).unwrap();
        assert_eq!(monte_carlo_utility(&certain, 100, 3).unwrap(), (-1.0, 0.0));
        let never = RuleProbabilities::from_rules(vec![0.0, 0.0]).unwrap();
        assert_eq!(monte_carlo_utility(&never, 100, 3).unwrap(), (-4.0, 0.0));
        assert!(matches!(monte_carlo_utility(&never, 0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        let q = RuleProbabilities::from_rules(vec![0.5, 0.5]).unwrap();
        let (mean, se) = monte_carlo_utility(&q, 100_000, 11).unwrap();
        assert!((mean - (-2.5)).abs() <= 3.0 * se, "mean {mean} se {se}");
        assert_eq!(monte_carlo_utility(&q, 1000, 5).unwrap(), monte_carlo_utility(&q, 1000, 5).unwrap());
    }

    #[test]
    fn hierarchy_validation() {
        assert!(RuleHierarchy::new(Vec::<Vec<String>>::new()).is_err());
        assert!(RuleHierarchy::new(vec![vec!["a"], vec![]]).is_err());
        let gap = vec![
            Rule { priority: 1, criteria: vec!["a".into()] },
            Rule { priority: 3, criteria: vec!["b".into()] },
        ];
        assert!(RuleHierarchy::from_rules(gap).is_err());
        let dup = vec![
            Rule { priority: 1, criteria: vec!["a".into()] },
            Rule { priority: 1, criteria: vec!["b".into()] },
        ];
        assert!(RuleHierarchy::from_rules(dup).is_err());
        let h = RuleHierarchy::grasp_default();
        assert_eq!(h.len(), 3);
        assert_eq!(h.label(), "S|EC|N");
        assert_eq!(h.criteria(), vec![STABILITY, EXECUTION, COLLISION, INTENTION]);
    }

    #[test]
    fn hierarchy_serde_is_nested_lists() {
        let h = RuleHierarchy::grasp_default();
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(json, r#"[["stability"],["execution","collision"],["intention"]]"#);
        let back: RuleHierarchy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<RuleHierarchy>("[]").is_err());
    }

    #[test]
    fn rank_distribution_sums_to_one() {
        let q = RuleProbabilities::from_rules(vec![0.3, 0.9, 0.5]).unwrap();
        let dist = rank_distribution(&q).unwrap();
        assert_eq!(dist.len(), 8);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((dist[0] - 0.3 * 0.9 * 0.5).abs() < 1e-15);
        assert!((dist[7] - 0.7 * 0.1 * 0.5).abs() < 1e-15);
        let expected: f64 = dist.iter().enumerate().map(|(r, p)| -((r + 1) as f64) * p).sum();
        assert!((expected - expected_utility(&q).unwrap()).abs() < 1e-12);
    }
}
