use std::fmt;

use serde::Serialize;

use super::{Expr, Literal, RuleSet, RuleSource};
use crate::domain::TierDefaults;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LintLevel {
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LintWarning {
    pub rule: String,
    pub level: LintLevel,
    pub message: String,
}

impl fmt::Display for LintWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.level {
            LintLevel::Warning => "warning",
            LintLevel::Info => "info",
        };
        write!(f, "{level}: rule {:?}: {}", self.rule, self.message)
    }
}

/// `Some(b)` when the boolean value of `e` does not depend on any input.
fn constant_truth(e: &Expr) -> Option<bool> {
    use super::BinOp::*;
    match e {
        Expr::Lit(Literal::Bool(b)) => Some(*b),
        Expr::Not(inner) => constant_truth(inner).map(|b| !b),
        // Tri-state evaluation is strict, so `x and false` is still not applicable when x is;
        // only input-free subtrees are provably constant.
        _ if !e.has_inputs() => match e {
            Expr::Binary { op: And, lhs, rhs } => {
                Some(constant_truth(lhs)? && constant_truth(rhs)?)
            }
            Expr::Binary { op: Or, lhs, rhs } => Some(constant_truth(lhs)? || constant_truth(rhs)?),
            Expr::Binary { op, lhs, rhs } if op.is_comparison() => {
                let l = constant_value(lhs)?;
                let r = constant_value(rhs)?;
                compare_literals(*op, &l, &r)
            }
            _ => None,
        },
        _ => None,
    }
}

fn constant_value(e: &Expr) -> Option<Literal> {
    use super::BinOp::*;
    match e {
        Expr::Lit(l) => Some(l.clone()),
        Expr::Neg(inner) => match constant_value(inner)? {
            Literal::Num(n) => Some(Literal::Num(-n)),
            _ => None,
        },
        Expr::Binary {
            op: op @ (Add | Sub | Mul | Div),
            lhs,
            rhs,
        } => {
            let (Literal::Num(a), Literal::Num(b)) = (constant_value(lhs)?, constant_value(rhs)?)
            else {
                return None;
            };
            let v = match op {
                Add => a + b,
                Sub => a - b,
                Mul => a * b,
                _ if b == 0.0 => return None,
                _ => a / b,
            };
            Some(Literal::Num(v))
        }
        other => constant_truth(other).map(Literal::Bool),
    }
}

fn compare_literals(op: super::BinOp, l: &Literal, r: &Literal) -> Option<bool> {
    use super::BinOp::*;
    match (l, r) {
        (Literal::Num(a), Literal::Num(b)) => Some(match op {
            Lt => a < b,
            Le => a <= b,
            Gt => a > b,
            Ge => a >= b,
            Eq => a == b,
            _ => a != b,
        }),
        _ => match op {
            Eq => Some(l == r),
            Ne => Some(l != r),
            _ => None,
        },
    }
}

/// Hygiene checks over a parsed rule set. Never fails; findings only.
pub fn lint_ruleset(rs: &RuleSet, defaults: &TierDefaults) -> Vec<LintWarning> {
    let mut out = Vec::new();
    for r in &rs.rules {
        if let Some(b) = constant_truth(&r.condition) {
            out.push(LintWarning {
                rule: r.name.clone(),
                level: LintLevel::Warning,
                message: format!("condition is always {b}"),
            });
        }
        if r.effective_contribution(defaults) >= 1.0 {
            out.push(LintWarning {
                rule: r.name.clone(),
                level: LintLevel::Warning,
                message: "contribution 1 saturates the score on its own".into(),
            });
        }
        if r.source == RuleSource::ModelBacked && r.explanation.trim().is_empty() {
            out.push(LintWarning {
                rule: r.name.clone(),
                level: LintLevel::Info,
                message: "model-backed rule without explanation; auditors see the limited-explanation notice".into(),
            });
        }
    }
    out
}
