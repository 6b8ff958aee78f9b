//! Rule evaluation, noisy-OR score combination and explained score reports.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{
    CaseKind, FeatureValue, FraudScore, NotApplicable, TaxpayerCase, TierDefaults, YearMonth,
};
use crate::error::DomainError;
use crate::models::TrainedModels;
use crate::rules::{
    format_expr, BinOp, Expr, Literal, RuleDef, RuleSet, RuleSource, SourceCall, Template,
    TemplatePart,
};
use crate::sources::SourceSnapshot;

pub use report::{
    read_reports_jsonl, render_explanations, reports_digest, write_reports_jsonl,
    NotApplicableRule, ScoreReport, SynergyBonus, TriggeredRule, LIMITED_EXPLANATION_NOTICE,
    REGULAR_AUDIT_NOTICE,
};

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("case {case_id} is {case_kind} but the rule set is for {rules_kind}")]
    KindMismatch {
        case_id: String,
        case_kind: CaseKind,
        rules_kind: CaseKind,
    },
    #[error("unknown rule {0:?} in deactivation list")]
    UnknownRule(String),
    #[error("no rule set loaded for {0} cases")]
    NoRuleSet(CaseKind),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Shared, read-only inputs of one scoring batch.
#[derive(Debug, Clone, Copy)]
pub struct ScoringEnv<'a> {
    pub models: &'a TrainedModels,
    pub sources: &'a SourceSnapshot,
    /// Simulated month index recorded in reports.
    pub clock: u32,
    /// Calendar month used for filing-history lookups.
    pub now: YearMonth,
}

/// One case plus everything its rules may read.
#[derive(Debug, Clone, Copy)]
pub struct CaseContext<'a> {
    pub case: &'a TaxpayerCase,
    pub env: ScoringEnv<'a>,
    pub deactivated: &'a BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleOutcome {
    Triggered(TriggeredRule),
    NotTriggered,
    NotApplicable(String),
}

fn type_error() -> NotApplicable {
    NotApplicable::new("type mismatch at evaluation")
}

fn finite(x: f64) -> Result<Literal, NotApplicable> {
    if x.is_finite() {
        Ok(Literal::Num(x))
    } else {
        Err(NotApplicable::new("arithmetic overflow"))
    }
}

impl<'a> CaseContext<'a> {
    fn call(&self, c: &SourceCall) -> Result<f64, NotApplicable> {
        let src = self.env.sources;
        let case = self.case;
        match c {
            SourceCall::WatchlistLinks => src.watchlist_links(case).map(|n| n as f64),
            SourceCall::CompaniesAtAddress => src.companies_at_address(case).map(|n| n as f64),
            SourceCall::MonthsSinceLastVatReturn => src
                .months_since_last_vat_return(case, self.env.now)
                .map(|n| n as f64),
            SourceCall::UidInvalidCount => src.uid_invalid_count(case).map(|n| n as f64),
            SourceCall::PeerRatio(f) | SourceCall::PeerZscore(f) => {
                let peers = self
                    .env
                    .models
                    .peers
                    .as_ref()
                    .ok_or_else(|| NotApplicable::new("peer statistics not trained"))?;
                if matches!(c, SourceCall::PeerRatio(_)) {
                    peers.ratio(case, f)
                } else {
                    peers.zscore(case, f)
                }
            }
        }
    }

    /// Strict evaluation: both operands are always evaluated and the first unavailable
    /// input (in left-to-right order) makes the whole expression not applicable.
    pub fn eval(&self, e: &Expr) -> Result<Literal, NotApplicable> {
        match e {
            Expr::Lit(l) => Ok(l.clone()),
            Expr::Feature(f) => match self.case.feature(f) {
                FeatureValue::Number(n) => Ok(Literal::Num(*n)),
                FeatureValue::Text(s) => Ok(Literal::Str(s.clone())),
                FeatureValue::Flag(b) => Ok(Literal::Bool(*b)),
                FeatureValue::Missing => Err(NotApplicable::missing_feature(f)),
            },
            Expr::Model(id) => self.env.models.output(id, self.case).map(Literal::Num),
            Expr::Call(c) => self.call(c).map(Literal::Num),
            Expr::Not(inner) => match self.eval(inner)? {
                Literal::Bool(b) => Ok(Literal::Bool(!b)),
                _ => Err(type_error()),
            },
            Expr::Neg(inner) => match self.eval(inner)? {
                Literal::Num(n) => Ok(Literal::Num(-n)),
                _ => Err(type_error()),
            },
            Expr::Binary { op, lhs, rhs } => {
                let l = self.eval(lhs);
                let r = self.eval(rhs);
                apply(*op, l?, r?)
            }
        }
    }
}

fn apply(op: BinOp, l: Literal, r: Literal) -> Result<Literal, NotApplicable> {
    use Literal::*;
    Ok(match (op, l, r) {
        (BinOp::And, Bool(a), Bool(b)) => Bool(a && b),
        (BinOp::Or, Bool(a), Bool(b)) => Bool(a || b),
        (BinOp::Eq, a, b) => Bool(match (a, b) {
            (Num(x), Num(y)) => x == y,
            (Str(x), Str(y)) => x == y,
            (Bool(x), Bool(y)) => x == y,
            _ => return Err(type_error()),
        }),
        (BinOp::Ne, a, b) => match apply(BinOp::Eq, a, b)? {
            Bool(v) => Bool(!v),
            _ => unreachable!("equality yields a flag"),
        },
        (BinOp::Lt, Num(a), Num(b)) => Bool(a < b),
        (BinOp::Le, Num(a), Num(b)) => Bool(a <= b),
        (BinOp::Gt, Num(a), Num(b)) => Bool(a > b),
        (BinOp::Ge, Num(a), Num(b)) => Bool(a >= b),
        (BinOp::Add, Num(a), Num(b)) => return finite(a + b),
        (BinOp::Sub, Num(a), Num(b)) => return finite(a - b),
        (BinOp::Mul, Num(a), Num(b)) => return finite(a * b),
        (BinOp::Div, Num(_), Num(b)) if b == 0.0 => {
            return Err(NotApplicable::new("division by zero"))
        }
        (BinOp::Div, Num(a), Num(b)) => return finite(a / b),
        _ => return Err(type_error()),
    })
}

/// Noisy-OR over contributions and bonuses, scaled to 0..=999 with half-up rounding.
///
/// Factors are multiplied in sorted order so the result does not depend on input order.
pub fn combine_contributions(
    contributions: &[f64],
    bonuses: &[f64],
) -> Result<FraudScore, DomainError> {
    let mut factors: Vec<f64> = Vec::with_capacity(contributions.len() + bonuses.len());
    for &c in contributions.iter().chain(bonuses) {
        if !(c > 0.0 && c <= 1.0) {
            return Err(DomainError::ContributionOutOfRange(c));
        }
        factors.push(1.0 - c);
    }
    factors.sort_by(f64::total_cmp);
    let keep: f64 = factors.iter().product();
    let s = 1.0 - keep;
    // The small epsilon keeps exact .5 ties from rounding down through binary representation error.
    let scaled = (999.0 * s + 0.5 + 1e-9).floor();
    FraudScore::new(scaled.clamp(0.0, 999.0) as i64)
}

#[derive(Debug, Clone)]
struct CompiledRule {
    def: RuleDef,
    contribution: f64,
    template: Template,
    /// Condition inputs and template references, deduplicated by canonical text.
    inputs: Vec<(String, Expr)>,
}

/// A rule set prepared for repeated scoring.
#[derive(Debug, Clone)]
pub struct Scorer {
    ruleset: RuleSet,
    rules: Vec<CompiledRule>,
    digest: String,
    defaults: TierDefaults,
}

impl Scorer {
    pub fn new(ruleset: RuleSet, defaults: TierDefaults) -> Scorer {
        let rules = ruleset
            .rules
            .iter()
            .map(|def| {
                let template = Template::compile(&def.explanation);
                let mut inputs: Vec<(String, Expr)> = Vec::new();
                let mut push = |e: &Expr| {
                    let key = format_expr(e);
                    if !inputs.iter().any(|(k, _)| *k == key) {
                        inputs.push((key, e.clone()));
                    }
                };
                def.condition.for_each_input(&mut push);
                for part in &template.parts {
                    if let TemplatePart::Value { expr, .. } = part {
                        push(expr);
                    }
                }
                CompiledRule {
                    contribution: def.effective_contribution(&defaults),
                    def: def.clone(),
                    template,
                    inputs,
                }
            })
            .collect();
        let digest = ruleset.digest();
        Scorer {
            ruleset,
            rules,
            digest,
            defaults,
        }
    }

    pub fn ruleset(&self) -> &RuleSet {
        &self.ruleset
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn tier_defaults(&self) -> TierDefaults {
        self.defaults
    }

    fn evaluate_compiled(&self, rule: &CompiledRule, ctx: &CaseContext) -> RuleOutcome {
        match ctx.eval(&rule.def.condition) {
            Err(na) => RuleOutcome::NotApplicable(na.0),
            Ok(Literal::Bool(false)) => RuleOutcome::NotTriggered,
            Ok(Literal::Bool(true)) => {
                let inputs_snapshot: BTreeMap<String, Literal> = rule
                    .inputs
                    .iter()
                    .filter_map(|(k, e)| ctx.eval(e).ok().map(|v| (k.clone(), v)))
                    .collect();
                RuleOutcome::Triggered(TriggeredRule {
                    rule_name: rule.def.name.clone(),
                    tier: rule.def.tier,
                    contribution: rule.contribution,
                    source: rule.def.source,
                    explanation: rule.template.render(&inputs_snapshot),
                    inputs_snapshot,
                })
            }
            Ok(_) => RuleOutcome::NotApplicable("condition is not a flag".to_string()),
        }
    }

    /// Outcome of the rule named `name`, ignoring deactivation.
    pub fn evaluate(&self, name: &str, ctx: &CaseContext) -> Option<RuleOutcome> {
        self.rules
            .iter()
            .find(|r| r.def.name == name)
            .map(|r| self.evaluate_compiled(r, ctx))
    }

    pub fn score(&self, ctx: &CaseContext) -> Result<ScoreReport, ScoreError> {
        if let Some(kind) = self.ruleset.kind {
            if kind != ctx.case.kind {
                return Err(ScoreError::KindMismatch {
                    case_id: ctx.case.case_id.clone(),
                    case_kind: ctx.case.kind,
                    rules_kind: kind,
                });
            }
        }
        if let Some(unknown) = ctx.deactivated.iter().find(|n| !self.ruleset.contains(n)) {
            return Err(ScoreError::UnknownRule(unknown.clone()));
        }
        let mut triggered = Vec::new();
        let mut not_applicable = Vec::new();
        let mut deactivated = Vec::new();
        for rule in &self.rules {
            if ctx.deactivated.contains(&rule.def.name) {
                deactivated.push(rule.def.name.clone());
                continue;
            }
            match self.evaluate_compiled(rule, ctx) {
                RuleOutcome::Triggered(t) => triggered.push(t),
                RuleOutcome::NotTriggered => {}
                RuleOutcome::NotApplicable(reason) => not_applicable.push(NotApplicableRule {
                    rule_name: rule.def.name.clone(),
                    reason,
                }),
            }
        }
        let fired: BTreeSet<&str> = triggered
            .iter()
            .map(|t: &TriggeredRule| t.rule_name.as_str())
            .collect();
        let synergy_bonuses: Vec<SynergyBonus> = self
            .ruleset
            .synergies
            .iter()
            .filter(|s| s.rule_names.iter().all(|n| fired.contains(n.as_str())))
            .map(|s| SynergyBonus {
                rule_names: s.rule_names.iter().cloned().collect(),
                bonus: s.bonus,
            })
            .collect();
        let contributions: Vec<f64> = triggered.iter().map(|t| t.contribution).collect();
        let bonuses: Vec<f64> = synergy_bonuses.iter().map(|s| s.bonus).collect();
        let score = combine_contributions(&contributions, &bonuses)?;
        Ok(ScoreReport {
            case_id: ctx.case.case_id.clone(),
            kind: ctx.case.kind,
            score,
            triggered,
            not_applicable,
            deactivated,
            synergy_bonuses,
            ruleset_digest: self.digest.clone(),
            tier_defaults: self.defaults,
            scored_at: ctx.env.clock,
        })
    }

    fn context<'a>(
        &self,
        case: &'a TaxpayerCase,
        env: ScoringEnv<'a>,
        activation: &'a Activation,
        empty: &'a BTreeSet<String>,
    ) -> CaseContext<'a> {
        CaseContext {
            case,
            env,
            deactivated: activation.get(&case.case_id).unwrap_or(empty),
        }
    }

    /// Scores every case on the current rayon pool; output order matches input order.
    pub fn score_batch(
        &self,
        cases: &[TaxpayerCase],
        env: ScoringEnv,
        activation: &Activation,
    ) -> Vec<Result<ScoreReport, ScoreError>> {
        let empty = BTreeSet::new();
        cases
            .par_iter()
            .map(|c| self.score(&self.context(c, env, activation, &empty)))
            .collect()
    }

    pub fn score_batch_sequential(
        &self,
        cases: &[TaxpayerCase],
        env: ScoringEnv,
        activation: &Activation,
    ) -> Vec<Result<ScoreReport, ScoreError>> {
        let empty = BTreeSet::new();
        cases
            .iter()
            .map(|c| self.score(&self.context(c, env, activation, &empty)))
            .collect()
    }

    /// Scores on a dedicated pool of `workers` threads.
    pub fn score_batch_with_workers(
        &self,
        cases: &[TaxpayerCase],
        env: ScoringEnv,
        activation: &Activation,
        workers: usize,
    ) -> Vec<Result<ScoreReport, ScoreError>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| self.score_batch(cases, env, activation))
    }
}

/// The active rule sets, one per case kind.
#[derive(Debug, Clone, Default)]
pub struct RuleBase {
    scorers: BTreeMap<CaseKind, Scorer>,
}

impl RuleBase {
    /// A set without a `kind:` header serves every kind not claimed by another set.
    pub fn new(rulesets: impl IntoIterator<Item = RuleSet>, defaults: TierDefaults) -> RuleBase {
        let mut scorers = BTreeMap::new();
        let mut generic = None;
        for rs in rulesets {
            match rs.kind {
                Some(kind) => {
                    scorers.insert(kind, Scorer::new(rs, defaults));
                }
                None => generic = Some(rs),
            }
        }
        if let Some(rs) = generic {
            for kind in [CaseKind::CompanyAudit, CaseKind::MissingTrader] {
                scorers
                    .entry(kind)
                    .or_insert_with(|| Scorer::new(rs.clone(), defaults));
            }
        }
        RuleBase { scorers }
    }

    /// The two shipped rule files.
    pub fn shipped(defaults: TierDefaults) -> RuleBase {
        let schema = crate::domain::FeatureSchema::shipped();
        let models = crate::rules::builtin_model_ids();
        let sets = [
            crate::rules::COMPANY_AUDIT_RULES,
            crate::rules::MISSING_TRADER_RULES,
        ]
        .map(|text| {
            crate::rules::parse_rules(text, &schema, &models).expect("shipped rules parse")
        });
        RuleBase::new(sets, defaults)
    }

    pub fn scorer(&self, kind: CaseKind) -> Option<&Scorer> {
        self.scorers.get(&kind)
    }

    pub fn scorers(&self) -> impl Iterator<Item = (CaseKind, &Scorer)> {
        self.scorers.iter().map(|(k, s)| (*k, s))
    }

    /// Rule set digests per kind, as `kind:digest` joined by commas.
    pub fn digest(&self) -> String {
        let parts: Vec<String> = self
            .scorers
            .iter()
            .map(|(k, s)| format!("{k}:{}", s.digest()))
            .collect();
        parts.join(",")
    }

    pub fn contains_rule(&self, kind: CaseKind, name: &str) -> bool {
        self.scorer(kind)
            .is_some_and(|s| s.ruleset().contains(name))
    }

    pub fn score(&self, ctx: &CaseContext) -> Result<ScoreReport, ScoreError> {
        self.scorer(ctx.case.kind)
            .ok_or(ScoreError::NoRuleSet(ctx.case.kind))?
            .score(ctx)
    }

    pub fn score_batch(
        &self,
        cases: &[TaxpayerCase],
        env: ScoringEnv,
        activation: &Activation,
    ) -> Vec<Result<ScoreReport, ScoreError>> {
        let empty = BTreeSet::new();
        cases
            .par_iter()
            .map(|c| {
                let deactivated = activation.get(&c.case_id).unwrap_or(&empty);
                self.score(&CaseContext {
                    case: c,
                    env,
                    deactivated,
                })
            })
            .collect()
    }
}

/// Rules deactivated per case id.
pub type Activation = BTreeMap<String, BTreeSet<String>>;

pub fn evaluate_rule(rule: &RuleDef, ctx: &CaseContext, defaults: &TierDefaults) -> RuleOutcome {
    let rs = RuleSet {
        kind: None,
        rules: vec![rule.clone()],
        synergies: Vec::new(),
    };
    let scorer = Scorer::new(rs, *defaults);
    scorer.evaluate_compiled(&scorer.rules[0], ctx)
}

pub fn score_case(
    rs: &RuleSet,
    ctx: &CaseContext,
    defaults: &TierDefaults,
) -> Result<ScoreReport, ScoreError> {
    Scorer::new(rs.clone(), *defaults).score(ctx)
}

/// Case ids by descending score, ties by ascending id, truncated to `top_k`.
pub fn rank_cases(reports: &[ScoreReport], top_k: usize) -> Vec<String> {
    let mut order: Vec<&ScoreReport> = reports.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then_with(|| a.case_id.cmp(&b.case_id))
    });
    order
        .into_iter()
        .take(top_k)
        .map(|r| r.case_id.clone())
        .collect()
}

/// Whether a rule's explanation is the fixed limited-explanation notice.
pub fn has_limited_explanation(t: &TriggeredRule) -> bool {
    t.source == RuleSource::ModelBacked && t.explanation.is_empty()
}
