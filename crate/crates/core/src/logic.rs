//! Symbolic side: rules over pattern/region atom pairs, the threshold-based
//! consequence step, rule extraction from the program tensor, and rule-based
//! scoring and classification.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rulenet::ProgramTensor;
use crate::symbolize::FuzzyInterpretationVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomKind {
    Pattern,
    Region,
    Head,
}

/// A ground or variable atom; paired pattern/region atoms share `variable`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Atom {
    pub kind: AtomKind,
    pub index: usize,
    pub variable: usize,
}

/// One body feature: pattern_i(X) together with region_j(X) on the same
/// variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct BodyPair {
    pub pattern: usize,
    pub region: usize,
}

impl BodyPair {
    pub fn atoms(&self, variable: usize) -> (Atom, Atom) {
        (
            Atom {
                kind: AtomKind::Pattern,
                index: self.pattern,
                variable,
            },
            Atom {
                kind: AtomKind::Region,
                index: self.region,
                variable,
            },
        )
    }
}

/// A learned rule: head class, body pairs, the extraction threshold, and
/// (once scored) precision/recall.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub head_class: usize,
    pub body: Vec<BodyPair>,
    pub tau: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Exact matrix encoding of a same-head propositional program: each rule row
/// puts weight 1/p on its p body atoms.
#[derive(Debug, Clone)]
pub struct LogicProgramMatrix(pub Matrix);

impl LogicProgramMatrix {
    /// Builds the encoding from per-rule body atom index sets.
    pub fn from_bodies(bodies: &[Vec<usize>], n_atoms: usize) -> Result<Self> {
        if bodies.is_empty() {
            return Err(Error::invalid_argument("program needs at least one rule"));
        }
        let mut m = Matrix::zeros(bodies.len(), n_atoms);
        for (r, body) in bodies.iter().enumerate() {
            if body.is_empty() {
                return Err(Error::invalid_argument("rule body must be non-empty"));
            }
            let w = 1.0 / body.len() as f64;
            for &a in body {
                if a >= n_atoms {
                    return Err(Error::invalid_argument("body atom index out of range"));
                }
                m.set(r, a, w);
            }
        }
        Ok(LogicProgramMatrix(m))
    }
}

/// Numeric slack absorbing 1/p rounding inside the threshold test.
const THETA_SLACK: f64 = 1e-9;

/// One immediate-consequence step: theta(M_P v) per rule row plus the head
/// value as the disjunction over rows. theta(x) = 1 iff x >= 1 - 1e-9.
pub fn tp_step(prog: &LogicProgramMatrix, v: &[bool]) -> Result<(Vec<bool>, bool)> {
    let vf: Vec<f64> = v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let scores = prog.0.matvec(&vf)?;
    let fired: Vec<bool> = scores.iter().map(|&s| s >= 1.0 - THETA_SLACK).collect();
    let head = fired.iter().any(|&b| b);
    Ok((fired, head))
}

/// Atom indices of one program-tensor row that clear the threshold.
pub fn body_indices(row: &[f64], tau: f64) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter(|(_, &v)| v > tau)
        .map(|(i, _)| i)
        .collect()
}

/// Reads rules out of the program tensor: per row, every atom above `tau`
/// becomes a pattern/region body pair. Rows with empty bodies emit nothing and
/// duplicate bodies are deduplicated.
pub fn extract_rules(
    mp: &ProgramTensor,
    tau: f64,
    target_class: usize,
    clusters: usize,
) -> Result<Vec<Rule>> {
    if !(0.0..1.0).contains(&tau) || tau <= 0.0 {
        return Err(Error::invalid_argument("extract_rules: tau must be in (0,1)"));
    }
    let mut seen: BTreeSet<Vec<BodyPair>> = BTreeSet::new();
    let mut rules = Vec::new();
    for r in 0..mp.matrix.rows {
        let mut body: Vec<BodyPair> = body_indices(mp.matrix.row(r), tau)
            .into_iter()
            .map(|flat| {
                let (pattern, region) = FuzzyInterpretationVector::atom(clusters, flat);
                BodyPair { pattern, region }
            })
            .collect();
        body.sort();
        if body.is_empty() || !seen.insert(body.clone()) {
            continue;
        }
        rules.push(Rule {
            head_class: target_class,
            body,
            tau,
            precision: None,
            recall: None,
        });
    }
    Ok(rules)
}

/// Whether a discretized (one-hot per region block) interpretation satisfies
/// every body pair of the rule.
pub fn rule_satisfied(rule: &Rule, discretized: &[f64], clusters: usize) -> Result<bool> {
    if rule.body.is_empty() {
        return Err(Error::invalid_argument(
            "rule_satisfied: empty rule body is never emitted",
        ));
    }
    for pair in &rule.body {
        let idx = FuzzyInterpretationVector::index(clusters, pair.pattern, pair.region);
        match discretized.get(idx) {
            Some(&v) if v == 1.0 => {}
            Some(_) => return Ok(false),
            None => {
                return Err(Error::invalid_argument(
                    "rule_satisfied: rule references an atom outside the interpretation",
                ))
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy)]
pub struct RuleMetrics {
    /// None when the rule never fires on the dataset.
    pub precision: Option<f64>,
    pub recall: f64,
    pub n_body: usize,
    pub n_body_and_head: usize,
    pub n_head: usize,
}

/// Precision and recall of one rule over (discretized interpretation, label)
/// pairs.
pub fn rule_metrics(
    rule: &Rule,
    dataset: &[(Vec<f64>, usize)],
    clusters: usize,
) -> Result<RuleMetrics> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("rule_metrics: empty dataset".into()));
    }
    let mut n_body = 0;
    let mut n_body_and_head = 0;
    let mut n_head = 0;
    for (d, label) in dataset {
        let is_head = *label == rule.head_class;
        if is_head {
            n_head += 1;
        }
        if rule_satisfied(rule, d, clusters)? {
            n_body += 1;
            if is_head {
                n_body_and_head += 1;
            }
        }
    }
    if n_head == 0 {
        return Err(Error::InvalidDataset(
            "rule_metrics: no instance carries the head class".into(),
        ));
    }
    Ok(RuleMetrics {
        precision: if n_body > 0 {
            Some(n_body_and_head as f64 / n_body as f64)
        } else {
            None
        },
        recall: n_body_and_head as f64 / n_head as f64,
        n_body,
        n_body_and_head,
        n_head,
    })
}

/// Picks the class of the highest-precision firing rule; precision ties go to
/// the head class most frequent in training, and when nothing fires the
/// fallback class wins.
pub fn classify_with_rules(
    rules: &[Rule],
    discretized: &[f64],
    clusters: usize,
    class_counts: &[usize],
    fallback: usize,
) -> Result<usize> {
    let mut best: Option<(f64, usize, usize)> = None; // (precision, head freq, class)
    for rule in rules {
        let precision = rule.precision.ok_or_else(|| {
            Error::invalid_argument("classify_with_rules: rule carries no training precision")
        })?;
        if !rule_satisfied(rule, discretized, clusters)? {
            continue;
        }
        let freq = class_counts.get(rule.head_class).copied().unwrap_or(0);
        let candidate = (precision, freq, rule.head_class);
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                if candidate.0 > cur.0
                    || (candidate.0 == cur.0 && candidate.1 > cur.1)
                    || (candidate.0 == cur.0 && candidate.1 == cur.1 && candidate.2 < cur.2)
                {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    Ok(best.map(|(_, _, class)| class).unwrap_or(fallback))
}

/// Canonical text form, e.g.
/// `class_1 :- pattern_0(X0), region_1(X0). % p=1.00 r=1.00 tau=0.30`.
pub fn format_rule(rule: &Rule) -> String {
    let mut body = String::new();
    for (i, pair) in rule.body.iter().enumerate() {
        if i > 0 {
            body.push_str(", ");
        }
        body.push_str(&format!(
            "pattern_{}(X{i}), region_{}(X{i})",
            pair.pattern, pair.region
        ));
    }
    let mut line = format!("class_{} :- {}.", rule.head_class, body);
    line.push_str(" %");
    if let Some(p) = rule.precision {
        line.push_str(&format!(" p={p:.2}"));
    }
    if let Some(r) = rule.recall {
        line.push_str(&format!(" r={r:.2}"));
    }
    line.push_str(&format!(" tau={:.2}", rule.tau));
    line
}
