//! Randomized inputs shared by unit, property and acceptance tests.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::domain::{
    CaseKind, FeatureSchema, FeatureType, FeatureValue, TaxpayerCase, VatReturn, WeightTier,
    YearMonth,
};
use crate::rules::{
    builtin_model_ids, BinOp, Expr, Literal, RuleDef, RuleSet, RuleSource, SourceCall, SynergyDef,
};

const NICE_NUMBERS: [f64; 10] = [0.0, 1.0, 2.0, 3.0, 4.0, 13.0, 24.0, 0.5, 0.8, 10000.0];
const TEXT_VALUES: [&str; 4] = ["GmbH", "AG", "KG", "OG"];

pub struct ExprGen<'a> {
    numeric: Vec<&'a str>,
    text: Vec<&'a str>,
    flags: Vec<&'a str>,
    models: Vec<String>,
}

impl<'a> ExprGen<'a> {
    pub fn new(schema: &'a FeatureSchema) -> Self {
        let by = |ty| {
            schema
                .features
                .iter()
                .filter(|(_, s)| s.ty == ty)
                .map(|(n, _)| n.as_str())
                .collect::<Vec<_>>()
        };
        ExprGen {
            numeric: by(FeatureType::Number),
            text: by(FeatureType::Text),
            flags: by(FeatureType::Flag),
            models: builtin_model_ids().into_iter().collect(),
        }
    }

    pub fn number_literal(rng: &mut impl Rng) -> f64 {
        match rng.random_range(0..3) {
            0 => *NICE_NUMBERS.choose(rng).unwrap(),
            1 => (rng.random_range(-1_000_000i64..1_000_000) as f64) / 100.0,
            _ => rng.random_range(-1e6..1e6),
        }
    }

    pub fn random_string(rng: &mut impl Rng) -> String {
        const ALPHABET: &[char] = &[
            'a', 'Z', '0', ' ', '"', '\\', '{', '}', 'ü', '€', '\t', '\n', '#', '-',
        ];
        let n = rng.random_range(0..8);
        (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
    }

    pub fn call(&self, rng: &mut impl Rng) -> SourceCall {
        match rng.random_range(0..6) {
            0 => SourceCall::WatchlistLinks,
            1 => SourceCall::CompaniesAtAddress,
            2 => SourceCall::MonthsSinceLastVatReturn,
            3 => SourceCall::UidInvalidCount,
            4 => SourceCall::PeerRatio(self.numeric.choose(rng).unwrap().to_string()),
            _ => SourceCall::PeerZscore(self.numeric.choose(rng).unwrap().to_string()),
        }
    }

    pub fn num(&self, rng: &mut impl Rng, depth: u32) -> Expr {
        let leaf = depth == 0 || rng.random_bool(0.4);
        if leaf {
            return match rng.random_range(0..4) {
                0 => Expr::Lit(Literal::Num(Self::number_literal(rng))),
                1 => Expr::Feature(self.numeric.choose(rng).unwrap().to_string()),
                2 => Expr::Model(self.models.choose(rng).unwrap().clone()),
                _ => Expr::Call(self.call(rng)),
            };
        }
        match rng.random_range(0..5) {
            0 => Expr::Neg(Box::new(self.num(rng, depth - 1))),
            k => {
                let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div][k - 1];
                Expr::binary(op, self.num(rng, depth - 1), self.num(rng, depth - 1))
            }
        }
    }

    pub fn boolean(&self, rng: &mut impl Rng, depth: u32) -> Expr {
        let leaf = depth == 0 || rng.random_bool(0.3);
        if leaf {
            return match rng.random_range(0..5) {
                0 => Expr::Lit(Literal::Bool(rng.random())),
                1 => Expr::Feature(self.flags.choose(rng).unwrap().to_string()),
                2 => Expr::binary(
                    if rng.random() { BinOp::Eq } else { BinOp::Ne },
                    Expr::Feature(self.text.choose(rng).unwrap().to_string()),
                    Expr::Lit(Literal::Str(if rng.random() {
                        TEXT_VALUES.choose(rng).unwrap().to_string()
                    } else {
                        Self::random_string(rng)
                    })),
                ),
                _ => self.comparison(rng, 1),
            };
        }
        match rng.random_range(0..4) {
            0 => Expr::Not(Box::new(self.boolean(rng, depth - 1))),
            1 => Expr::binary(
                BinOp::And,
                self.boolean(rng, depth - 1),
                self.boolean(rng, depth - 1),
            ),
            2 => Expr::binary(
                BinOp::Or,
                self.boolean(rng, depth - 1),
                self.boolean(rng, depth - 1),
            ),
            _ => self.comparison(rng, depth - 1),
        }
    }

    pub fn comparison(&self, rng: &mut impl Rng, depth: u32) -> Expr {
        let op = *[
            BinOp::Lt,
            BinOp::Le,
            BinOp::Gt,
            BinOp::Ge,
            BinOp::Eq,
            BinOp::Ne,
        ]
        .choose(rng)
        .unwrap();
        Expr::binary(op, self.num(rng, depth), self.num(rng, depth))
    }

    pub fn template(&self, rng: &mut impl Rng) -> String {
        let mut out = String::new();
        for _ in 0..rng.random_range(1..4) {
            match rng.random_range(0..4) {
                0 => out.push_str(&format!("{{case.{}}}", self.numeric.choose(rng).unwrap())),
                1 => out.push_str(&format!("{{{}}}", self.call(rng))),
                2 => out.push_str("{{literal}} "),
                _ => out.push_str(&Self::random_string(rng).replace(['{', '}'], "")),
            }
        }
        if out.trim().is_empty() {
            out.push_str("flagged");
        }
        out
    }
}

/// A random, type-correct rule set in the form the parser produces.
pub fn random_ruleset(rng: &mut impl Rng, schema: &FeatureSchema, max_rules: usize) -> RuleSet {
    let g = ExprGen::new(schema);
    let n = rng.random_range(0..=max_rules);
    let mut rules = Vec::with_capacity(n);
    for i in 0..n {
        let source = if rng.random_bool(0.3) {
            RuleSource::ModelBacked
        } else {
            RuleSource::Expert
        };
        let explanation = if source == RuleSource::ModelBacked && rng.random_bool(0.5) {
            String::new()
        } else {
            g.template(rng)
        };
        rules.push(RuleDef {
            name: format!("R{i}{}", ExprGen::random_string(rng)),
            tier: *WeightTier::ALL.choose(rng).unwrap(),
            contribution: if rng.random() {
                Some(random_contribution(rng))
            } else {
                None
            },
            condition: g.boolean(rng, 3),
            explanation,
            source,
        });
    }
    let mut synergies = Vec::new();
    if n >= 2 {
        for _ in 0..rng.random_range(0..3) {
            let k = rng.random_range(2..=n.min(4));
            let names: BTreeSet<String> = rules
                .choose_multiple(rng, k)
                .map(|r: &RuleDef| r.name.clone())
                .collect();
            synergies.push(SynergyDef {
                rule_names: names,
                bonus: random_contribution(rng),
            });
        }
    }
    let kind = match rng.random_range(0..3) {
        0 => None,
        1 => Some(CaseKind::CompanyAudit),
        _ => Some(CaseKind::MissingTrader),
    };
    RuleSet {
        kind,
        rules,
        synergies,
    }
}

pub fn random_contribution(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..3) {
        0 => *[0.1, 0.3, 0.6, 1.0, 0.05, 0.25].choose(rng).unwrap(),
        1 => rng.random_range(1..=100) as f64 / 100.0,
        _ => 1.0 - rng.random::<f64>(),
    }
}

/// A random case of the given kind; roughly one feature in ten is missing.
pub fn random_case(
    rng: &mut impl Rng,
    schema: &FeatureSchema,
    id: usize,
    kind: CaseKind,
) -> TaxpayerCase {
    let mut features = BTreeMap::new();
    for (name, spec) in &schema.features {
        let v = if rng.random_bool(0.1) {
            FeatureValue::Missing
        } else {
            match spec.ty {
                FeatureType::Number => FeatureValue::Number(match rng.random_range(0..3) {
                    0 => rng.random_range(0..20) as f64,
                    1 => rng.random_range(0.0..1.5),
                    _ => rng.random_range(0.0..2_000_000.0),
                }),
                FeatureType::Text => {
                    FeatureValue::Text(TEXT_VALUES.choose(rng).unwrap().to_string())
                }
                FeatureType::Flag => FeatureValue::Flag(rng.random()),
            }
        };
        features.insert(name.clone(), v);
    }
    let base = YearMonth::new(2020, 1).unwrap();
    let mut vat_returns = Vec::new();
    let mut m = rng.random_range(0..12);
    while m < 48 {
        vat_returns.push(VatReturn {
            period: base.plus_months(m),
            filed: rng.random_bool(0.8),
        });
        m += rng.random_range(1..6);
    }
    TaxpayerCase {
        case_id: format!("R-{id:05}"),
        kind,
        features,
        persons: (0..rng.random_range(0..4))
            .map(|_| format!("P-{}", rng.random_range(0..40)))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        address_id: format!("A-{}", rng.random_range(0..25)),
        vat_returns,
        last_audited_year: if rng.random() {
            Some(rng.random_range(2005..2024))
        } else {
            None
        },
        registered_date: NaiveDate::from_ymd_opt(
            rng.random_range(2000..2023),
            rng.random_range(1..13),
            1,
        )
        .unwrap(),
        trading_partners: (0..rng.random_range(0..4))
            .map(|_| format!("F-{}", rng.random_range(0..30)))
            .collect(),
        outcome: None,
    }
}

/// A case with no features, persons, returns or partners, registered 2015-01-01.
pub fn blank_case(id: &str, kind: CaseKind) -> TaxpayerCase {
    TaxpayerCase {
        case_id: id.to_string(),
        kind,
        features: BTreeMap::new(),
        persons: Vec::new(),
        address_id: format!("ADDR-{id}"),
        vat_returns: Vec::new(),
        last_audited_year: None,
        registered_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
        trading_partners: Vec::new(),
        outcome: None,
    }
}

/// Sets numeric features on a case.
pub fn with_numbers(mut case: TaxpayerCase, values: &[(&str, f64)]) -> TaxpayerCase {
    for (f, v) in values {
        case.features
            .insert(f.to_string(), FeatureValue::Number(*v));
    }
    case
}

/// Month used by [`mt_fixture`].
pub fn fixture_month() -> YearMonth {
    YearMonth::new(2024, 6).unwrap()
}

/// A missing-trader case that, under the shipped rules and with no trained models,
/// triggers exactly `PersonLinkedToEurofiscWatchlist` (0.6) and `FewEmployees` (0.3).
///
/// Returns the case and a hub whose watchlist links its person `P-1` to company `W-1`.
pub fn mt_fixture() -> (TaxpayerCase, crate::sources::SourceHub) {
    let mut case = with_numbers(
        blank_case("T1-0001", CaseKind::MissingTrader),
        &[("employee_count", 3.0)],
    );
    case.persons = vec!["P-1".into()];
    case.vat_returns = vec![VatReturn {
        period: fixture_month(),
        filed: true,
    }];
    let mut hub = crate::sources::SourceHub::default();
    hub.register_company("W-1", "ADDR-W", "DE").unwrap();
    hub.register_company(&case.case_id, &case.address_id, "AT")
        .unwrap();
    hub.add_watchlist_link("W-1", "P-1").unwrap();
    (case, hub)
}

/// A report with no rule details, for ranking and selection tests.
pub fn bare_report(case_id: &str, kind: CaseKind, score: u16) -> crate::scoring::ScoreReport {
    crate::scoring::ScoreReport {
        case_id: case_id.to_string(),
        kind,
        score: crate::domain::FraudScore::new(i64::from(score)).expect("score in range"),
        triggered: Vec::new(),
        not_applicable: Vec::new(),
        deactivated: Vec::new(),
        synergy_bonuses: Vec::new(),
        ruleset_digest: String::new(),
        tier_defaults: crate::domain::TierDefaults::default(),
        scored_at: 0,
    }
}
