//! The rule-definition language: AST, parser, canonical formatter and linter.
//!
//! A rule file is a sequence of blocks:
//!
//! ```text
//! kind: missing_trader
//!
//! rule "FewEmployees" {
//!     weight: MED
//!     when: case.employee_count < 4
//!     explain: "The company has fewer than four employees ({case.employee_count})."
//! }
//!
//! combo { rules: ["FewEmployees", "MultipleAddressUsage"] bonus: 0.2 }
//! ```
//!
//! The full grammar lives in `docs/rulelang.md`.

mod format;
mod lint;
mod parser;
mod template;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{CaseKind, TierDefaults, WeightTier};

pub use format::{format_expr, format_rules};
pub use lint::{lint_ruleset, LintLevel, LintWarning};
pub use parser::{parse_rules, parse_rules_bytes, ParseError, ParseErrorKind, ParseErrors};
pub use template::{format_number, Template, TemplatePart};

/// Model outputs that rule conditions may reference as `model.<id>`.
pub const MODEL_COMPANY_FRAUD: &str = "company_fraud";
pub const MODEL_EFFECTIVENESS_RISK: &str = "effectiveness_risk";

/// Shipped missing-trader rule base (`data/missing_trader.rules`).
pub const MISSING_TRADER_RULES: &str = include_str!("../../data/missing_trader.rules");
/// Shipped company-audit rule base (`data/company_audit.rules`).
pub const COMPANY_AUDIT_RULES: &str = include_str!("../../data/company_audit.rules");

pub fn builtin_model_ids() -> BTreeSet<String> {
    [MODEL_COMPANY_FRAUD, MODEL_EFFECTIVENESS_RISK]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Num(f64),
    Str(String),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Or,
    And,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

/// Data-source lookups callable from conditions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceCall {
    WatchlistLinks,
    CompaniesAtAddress,
    MonthsSinceLastVatReturn,
    UidInvalidCount,
    PeerRatio(String),
    PeerZscore(String),
}

impl SourceCall {
    pub fn name(&self) -> &'static str {
        match self {
            SourceCall::WatchlistLinks => "watchlist_links",
            SourceCall::CompaniesAtAddress => "companies_at_address",
            SourceCall::MonthsSinceLastVatReturn => "months_since_last_vat_return",
            SourceCall::UidInvalidCount => "uid_invalid_count",
            SourceCall::PeerRatio(_) => "peer_ratio",
            SourceCall::PeerZscore(_) => "peer_zscore",
        }
    }

    pub fn argument(&self) -> Option<&str> {
        match self {
            SourceCall::PeerRatio(f) | SourceCall::PeerZscore(f) => Some(f),
            _ => None,
        }
    }
}

impl fmt::Display for SourceCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), self.argument().unwrap_or(""))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Literal),
    /// `case.<feature>`
    Feature(String),
    /// `model.<id>`
    Model(String),
    Call(SourceCall),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Whether the expression reads anything besides literals.
    pub fn has_inputs(&self) -> bool {
        match self {
            Expr::Lit(_) => false,
            Expr::Feature(_) | Expr::Model(_) | Expr::Call(_) => true,
            Expr::Not(e) | Expr::Neg(e) => e.has_inputs(),
            Expr::Binary { lhs, rhs, .. } => lhs.has_inputs() || rhs.has_inputs(),
        }
    }

    /// Visits every leaf reference (feature, model, call) in evaluation order.
    pub fn for_each_input<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        match self {
            Expr::Lit(_) => {}
            Expr::Feature(_) | Expr::Model(_) | Expr::Call(_) => f(self),
            Expr::Not(e) | Expr::Neg(e) => e.for_each_input(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.for_each_input(f);
                rhs.for_each_input(f);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_expr(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSource {
    Expert,
    ModelBacked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleDef {
    pub name: String,
    pub tier: WeightTier,
    /// Explicit contribution; `None` falls back to the tier default.
    pub contribution: Option<f64>,
    pub condition: Expr,
    /// Explanation template; may be empty only for model-backed rules.
    pub explanation: String,
    pub source: RuleSource,
}

impl RuleDef {
    pub fn effective_contribution(&self, defaults: &TierDefaults) -> f64 {
        self.contribution
            .unwrap_or_else(|| defaults.for_tier(self.tier))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynergyDef {
    pub rule_names: BTreeSet<String>,
    pub bonus: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    /// Case kind this set applies to; `None` accepts any kind.
    pub kind: Option<CaseKind>,
    pub rules: Vec<RuleDef>,
    pub synergies: Vec<SynergyDef>,
}

impl RuleSet {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty() && self.synergies.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&RuleDef> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn rule_names(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.name.as_str())
    }

    /// The set with one rule removed, along with every combo that names it.
    pub fn without(&self, name: &str) -> RuleSet {
        RuleSet {
            kind: self.kind,
            rules: self
                .rules
                .iter()
                .filter(|r| r.name != name)
                .cloned()
                .collect(),
            synergies: self
                .synergies
                .iter()
                .filter(|s| !s.rule_names.contains(name))
                .cloned()
                .collect(),
        }
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(format_rules(self).as_bytes()))
    }
}
