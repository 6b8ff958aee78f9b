//! Shared data model: cases, features, outcomes, scores and weight tiers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::DomainError;

/// Monetary amount in integer euro cents.
///
/// Serialized as a EUR decimal number (`12.34`), parsed back to the nearest cent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub const fn from_euros(euros: i64) -> Self {
        Money(euros * 100)
    }

    /// Nearest cent, half away from zero.
    pub fn from_eur_f64(eur: f64) -> Self {
        Money((eur * 100.0).round() as i64)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    pub fn to_eur_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02} EUR", abs / 100, abs % 100)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_eur_f64())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let eur = f64::deserialize(d)?;
        if !eur.is_finite() {
            return Err(serde::de::Error::custom("monetary amount must be finite"));
        }
        Ok(Money::from_eur_f64(eur))
    }
}

/// Calendar month, stored as `year * 12 + (month - 1)`; serialized as `"YYYY-MM"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth(i32);

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self, DomainError> {
        if !(1..=12).contains(&month) {
            return Err(DomainError::InvalidMonth(format!("{year}-{month}")));
        }
        Ok(YearMonth(year * 12 + month as i32 - 1))
    }

    pub fn of_date(date: NaiveDate) -> Self {
        YearMonth(date.year() * 12 + date.month0() as i32)
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn plus_months(self, months: i32) -> Self {
        YearMonth(self.0 + months)
    }

    /// Signed number of months from `earlier` to `self`.
    pub fn months_since(self, earlier: YearMonth) -> i32 {
        self.0 - earlier.0
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for YearMonth {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DomainError::InvalidMonth(s.to_string());
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    CompanyAudit,
    MissingTrader,
}

impl CaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseKind::CompanyAudit => "company_audit",
            CaseKind::MissingTrader => "missing_trader",
        }
    }
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "company_audit" => Ok(CaseKind::CompanyAudit),
            "missing_trader" => Ok(CaseKind::MissingTrader),
            other => Err(DomainError::UnknownKind(other.to_string())),
        }
    }
}

/// A single feature value. `Missing` is a real value, distinct from zero.
///
/// JSON: number, string, bool or `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    Text(String),
    Flag(bool),
    Missing,
}

impl FeatureValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            FeatureValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            FeatureValue::Number(_) => "number",
            FeatureValue::Text(_) => "text",
            FeatureValue::Flag(_) => "flag",
            FeatureValue::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VatReturn {
    pub period: YearMonth,
    pub filed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditOutcome {
    pub audited: bool,
    pub fraud_found: bool,
    pub back_tax_eur: Money,
    /// Simulated month index at which the result becomes known.
    pub available_at: u32,
}

impl AuditOutcome {
    pub fn is_visible_at(&self, clock: u32) -> bool {
        self.available_at <= clock
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxpayerCase {
    pub case_id: String,
    pub kind: CaseKind,
    #[serde(default)]
    pub features: BTreeMap<String, FeatureValue>,
    #[serde(default)]
    pub persons: Vec<String>,
    pub address_id: String,
    #[serde(default)]
    pub vat_returns: Vec<VatReturn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_audited_year: Option<i32>,
    pub registered_date: NaiveDate,
    /// Company ids whose foreign VAT ids this case trades with.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trading_partners: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<AuditOutcome>,
}

impl TaxpayerCase {
    /// The feature value, `Missing` when absent from the map.
    pub fn feature(&self, name: &str) -> &FeatureValue {
        const MISSING: FeatureValue = FeatureValue::Missing;
        self.features.get(name).unwrap_or(&MISSING)
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        self.feature(name).as_number()
    }

    pub fn last_filed_period(&self) -> Option<YearMonth> {
        self.vat_returns
            .iter()
            .filter(|r| r.filed)
            .map(|r| r.period)
            .max()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("case serialization is infallible")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Integer fraudulence score in `[0, 999]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct FraudScore(u16);

impl FraudScore {
    pub const MAX: u16 = 999;
    pub const ZERO: FraudScore = FraudScore(0);

    pub fn new(value: i64) -> Result<Self, DomainError> {
        if (0..=Self::MAX as i64).contains(&value) {
            Ok(FraudScore(value as u16))
        } else {
            Err(DomainError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> u16 {
        self.0
    }
}

impl<'de> Deserialize<'de> for FraudScore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        FraudScore::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for FraudScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Traffic-light weight of a rule. `Low < Med < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WeightTier {
    #[serde(rename = "LOW")]
    Low,
    #[serde(rename = "MED")]
    Med,
    #[serde(rename = "HIGH")]
    High,
}

impl WeightTier {
    pub const ALL: [WeightTier; 3] = [WeightTier::Low, WeightTier::Med, WeightTier::High];

    pub fn keyword(self) -> &'static str {
        match self {
            WeightTier::Low => "LOW",
            WeightTier::Med => "MED",
            WeightTier::High => "HIGH",
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            WeightTier::Low => "green",
            WeightTier::Med => "yellow",
            WeightTier::High => "red",
        }
    }
}

impl fmt::Display for WeightTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Contribution assumed for rules that omit an explicit `contribution:`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierDefaults {
    pub low: f64,
    pub med: f64,
    pub high: f64,
}

impl Default for TierDefaults {
    fn default() -> Self {
        TierDefaults {
            low: 0.10,
            med: 0.30,
            high: 0.60,
        }
    }
}

impl TierDefaults {
    pub fn for_tier(&self, tier: WeightTier) -> f64 {
        match tier {
            WeightTier::Low => self.low,
            WeightTier::Med => self.med,
            WeightTier::High => self.high,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for tier in WeightTier::ALL {
            let c = self.for_tier(tier);
            if !(c > 0.0 && c <= 1.0) {
                return Err(DomainError::ContributionOutOfRange(c));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureType {
    Number,
    Text,
    Flag,
}

impl FeatureType {
    pub fn accepts(self, value: &FeatureValue) -> bool {
        matches!(
            (self, value),
            (_, FeatureValue::Missing)
                | (FeatureType::Number, FeatureValue::Number(_))
                | (FeatureType::Text, FeatureValue::Text(_))
                | (FeatureType::Flag, FeatureValue::Flag(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    #[serde(rename = "type")]
    pub ty: FeatureType,
    /// `EUR`, `count`, `ratio`, `months`, `grade` or empty for text/flags.
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub features: BTreeMap<String, FeatureSpec>,
}

const SHIPPED_SCHEMA: &str = include_str!("../data/schema.json");

impl FeatureSchema {
    /// The schema shipped with the crate (`data/schema.json`).
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_SCHEMA).expect("shipped schema is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.get(name)
    }

    pub fn type_of(&self, name: &str) -> Option<FeatureType> {
        self.features.get(name).map(|s| s.ty)
    }

    pub fn numeric_features(&self) -> impl Iterator<Item = &str> {
        self.features
            .iter()
            .filter(|(_, s)| s.ty == FeatureType::Number)
            .map(|(n, _)| n.as_str())
    }
}

/// Why an input to a rule could not be produced. Never coerced to a default value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NotApplicable(pub String);

impl NotApplicable {
    pub fn new(reason: impl Into<String>) -> Self {
        NotApplicable(reason.into())
    }

    pub fn missing_feature(name: &str) -> Self {
        NotApplicable(format!("missing feature {name}"))
    }
}

impl fmt::Display for NotApplicable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A validation finding: dotted field path plus message.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Checks a case against its invariants and the feature schema.
///
/// `current_year` bounds `last_audited_year`; pass `None` to skip that check.
pub fn validate_case(
    case: &TaxpayerCase,
    schema: &FeatureSchema,
    current_year: Option<i32>,
) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if case.case_id.trim().is_empty() {
        out.push(Diagnostic::new("case_id", "must be non-empty"));
    }
    if case.address_id.trim().is_empty() {
        out.push(Diagnostic::new("address_id", "must be non-empty"));
    }
    for (name, value) in &case.features {
        let path = format!("features.{name}");
        match schema.get(name) {
            None => out.push(Diagnostic::new(path, "feature not in schema")),
            Some(spec) if !spec.ty.accepts(value) => out.push(Diagnostic::new(
                path,
                format!("expected {:?}, found {}", spec.ty, value.type_name()).to_lowercase(),
            )),
            Some(_) => {}
        }
        if let FeatureValue::Number(v) = value {
            if !v.is_finite() {
                out.push(Diagnostic::new(
                    format!("features.{name}"),
                    "number must be finite",
                ));
            }
        }
    }
    for (i, pair) in case.vat_returns.windows(2).enumerate() {
        if pair[1].period <= pair[0].period {
            out.push(Diagnostic::new(
                format!("vat_returns[{}].period", i + 1),
                format!(
                    "periods must be strictly increasing ({} after {})",
                    pair[1].period, pair[0].period
                ),
            ));
        }
    }
    if let (Some(year), Some(now)) = (case.last_audited_year, current_year) {
        if year > now {
            out.push(Diagnostic::new(
                "last_audited_year",
                format!("{year} is after the current corpus year {now}"),
            ));
        }
    }
    let mut seen = BTreeSet::new();
    for (i, p) in case.persons.iter().enumerate() {
        if !seen.insert(p) {
            out.push(Diagnostic::new(
                format!("persons[{i}]"),
                format!("duplicate person {p}"),
            ));
        }
    }
    if let Some(o) = &case.outcome {
        if o.fraud_found && !o.audited {
            out.push(Diagnostic::new(
                "outcome.fraud_found",
                "fraud_found requires audited",
            ));
        }
        if o.back_tax_eur < Money::ZERO {
            out.push(Diagnostic::new("outcome.back_tax_eur", "must be >= 0"));
        }
        if o.back_tax_eur > Money::ZERO && !o.fraud_found {
            out.push(Diagnostic::new(
                "outcome.back_tax_eur",
                "positive back tax requires fraud_found",
            ));
        }
    }
    out
}

/// Checks case-id uniqueness across a corpus; diagnostics are prefixed by line index.
pub fn validate_corpus(
    cases: &[TaxpayerCase],
    schema: &FeatureSchema,
    current_year: Option<i32>,
) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, case) in cases.iter().enumerate() {
        if !ids.insert(case.case_id.as_str()) {
            out.push(Diagnostic::new(
                format!("[{i}].case_id"),
                format!("duplicate case id {}", case.case_id),
            ));
        }
        out.extend(
            validate_case(case, schema, current_year)
                .into_iter()
                .map(|d| Diagnostic {
                    path: format!("[{i}].{}", d.path),
                    message: d.message,
                }),
        );
    }
    out
}

/// Simulated month counter. Advanced only by the simulation driver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusClock {
    month: u32,
}

impl CorpusClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn at(month: u32) -> Self {
        CorpusClock { month }
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn advance(&mut self, months: u32) {
        self.month += months;
    }
}

/// Cases plus the simulated clock and the calendar month that clock index 0 maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub cases: Vec<TaxpayerCase>,
    pub base_month: YearMonth,
    pub clock: CorpusClock,
}

impl Corpus {
    pub fn new(cases: Vec<TaxpayerCase>, base_month: YearMonth) -> Self {
        Corpus {
            cases,
            base_month,
            clock: CorpusClock::new(),
        }
    }

    /// Current simulated month index.
    pub fn clock(&self) -> u32 {
        self.clock.month()
    }

    pub fn advance(&mut self, months: u32) {
        self.clock.advance(months);
    }

    /// Calendar month corresponding to the current clock.
    pub fn now(&self) -> YearMonth {
        self.base_month.plus_months(self.clock.month() as i32)
    }

    pub fn current_year(&self) -> i32 {
        self.now().year()
    }

    pub fn get(&self, case_id: &str) -> Option<&TaxpayerCase> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Vec<Diagnostic> {
        validate_corpus(&self.cases, schema, Some(self.current_year()))
    }
}

/// Reads a JSON Lines case file. Blank lines are skipped; any bad line fails the whole read.
pub fn read_cases_jsonl(text: &str) -> Result<Vec<TaxpayerCase>, DomainError> {
    let mut cases = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match TaxpayerCase::from_json_line(line) {
            Ok(c) => cases.push(c),
            Err(e) => errors.push(Diagnostic::new(format!("line {}", i + 1), e.to_string())),
        }
    }
    if errors.is_empty() {
        Ok(cases)
    } else {
        Err(DomainError::Rejected(errors))
    }
}

pub fn write_cases_jsonl(cases: &[TaxpayerCase]) -> String {
    let mut out = String::new();
    for c in cases {
        out.push_str(&c.to_json_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_case() -> TaxpayerCase {
        let mut features = BTreeMap::new();
        features.insert("employee_count".into(), FeatureValue::Number(12.0));
        features.insert("revenue_eur".into(), FeatureValue::Number(1_250_000.0));
        features.insert("industry_code".into(), FeatureValue::Text("G46".into()));
        features.insert("is_vat_group".into(), FeatureValue::Flag(false));
        features.insert("profit_eur".into(), FeatureValue::Missing);
        TaxpayerCase {
            case_id: "C-0001".into(),
            kind: CaseKind::CompanyAudit,
            features,
            persons: vec!["P-1".into(), "P-2".into()],
            address_id: "A-17".into(),
            vat_returns: vec![
                VatReturn {
                    period: "2023-11".parse().unwrap(),
                    filed: true,
                },
                VatReturn {
                    period: "2023-12".parse().unwrap(),
                    filed: false,
                },
            ],
            last_audited_year: Some(2019),
            registered_date: NaiveDate::from_ymd_opt(2015, 3, 1).unwrap(),
            trading_partners: vec![],
            outcome: None,
        }
    }

    #[test]
    fn well_formed_case_has_no_diagnostics() {
        let diags = validate_case(&sample_case(), &FeatureSchema::shipped(), Some(2024));
        assert!(diags.is_empty(), "{diags:?}");
    }

    #[test]
    fn back_tax_without_fraud_is_flagged() {
        let mut c = sample_case();
        c.outcome = Some(AuditOutcome {
            audited: true,
            fraud_found: false,
            back_tax_eur: Money::from_euros(500),
            available_at: 3,
        });
        let diags = validate_case(&c, &FeatureSchema::shipped(), Some(2024));
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].path, "outcome.back_tax_eur");
    }

    #[test]
    fn text_in_numeric_feature_is_flagged() {
        let mut c = sample_case();
        c.features
            .insert("employee_count".into(), FeatureValue::Text("twelve".into()));
        let diags = validate_case(&c, &FeatureSchema::shipped(), Some(2024));
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].path, "features.employee_count");
    }

    #[test]
    fn other_invariants() {
        let schema = FeatureSchema::shipped();
        let mut c = sample_case();
        c.vat_returns.swap(0, 1);
        c.last_audited_year = Some(2030);
        c.outcome = Some(AuditOutcome {
            audited: false,
            fraud_found: true,
            back_tax_eur: Money::from_euros(1),
            available_at: 0,
        });
        let paths: Vec<_> = validate_case(&c, &schema, Some(2024))
            .into_iter()
            .map(|d| d.path)
            .collect();
        assert_eq!(
            paths,
            [
                "vat_returns[1].period",
                "last_audited_year",
                "outcome.fraud_found"
            ]
        );
        assert_eq!(
            validate_case(&c, &schema, Some(2024)),
            validate_case(&c, &schema, Some(2024))
        );
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = serde_json::to_value(sample_case()).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("surprise".into(), 1.into());
        assert!(TaxpayerCase::from_json_line(&v.to_string()).is_err());
    }

    #[test]
    fn duplicate_ids_in_corpus() {
        let cases = vec![sample_case(), sample_case()];
        let d = validate_corpus(&cases, &FeatureSchema::shipped(), None);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("duplicate"));
    }

    #[test]
    fn fraud_score_bounds() {
        assert!(FraudScore::new(-1).is_err());
        assert!(FraudScore::new(1000).is_err());
        assert_eq!(FraudScore::new(999).unwrap().value(), 999);
        assert!(serde_json::from_str::<FraudScore>("1000").is_err());
    }

    #[test]
    fn tiers_are_ordered() {
        assert!(WeightTier::Low < WeightTier::Med && WeightTier::Med < WeightTier::High);
    }

    #[test]
    fn clock_advances() {
        let mut clock = CorpusClock::new();
        assert_eq!(clock.month(), 0);
        clock.advance(3);
        clock.advance(3);
        assert_eq!(clock.month(), 6);
        let mut corpus = Corpus::new(vec![], YearMonth::new(2024, 1).unwrap());
        corpus.advance(6);
        assert_eq!(corpus.clock(), 6);
        assert_eq!(corpus.now().to_string(), "2024-07");
    }

    #[test]
    fn money_display_and_parse() {
        assert_eq!(Money::from_cents(999_999).to_string(), "9999.99 EUR");
        let m: Money = serde_json::from_str("9999.99").unwrap();
        assert_eq!(m.cents(), 999_999);
        assert_eq!(
            serde_json::to_string(&Money::from_euros(10_000)).unwrap(),
            "10000.0"
        );
    }

    #[test]
    fn year_month_parsing() {
        assert!("2024-13".parse::<YearMonth>().is_err());
        assert!("24-01".parse::<YearMonth>().is_err());
        let a: YearMonth = "2022-12".parse().unwrap();
        let b: YearMonth = "2025-01".parse().unwrap();
        assert_eq!(b.months_since(a), 25);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn feature_value() -> impl Strategy<Value = FeatureValue> {
            prop_oneof![
                (-1e9f64..1e9).prop_map(FeatureValue::Number),
                "[a-zA-Z0-9 ]{0,8}".prop_map(FeatureValue::Text),
                any::<bool>().prop_map(FeatureValue::Flag),
                Just(FeatureValue::Missing),
            ]
        }

        fn case() -> impl Strategy<Value = TaxpayerCase> {
            (
                "[A-Z]-[0-9]{1,5}",
                prop::collection::btree_map("[a-z_]{1,12}", feature_value(), 0..6),
                prop::collection::vec("P-[0-9]{1,4}", 0..4),
                prop::collection::btree_set(0i32..400, 0..6),
                prop::option::of(1990i32..2024),
                (any::<bool>(), 0i64..10_000_000, 0u32..48),
                any::<bool>(),
            )
                .prop_map(
                    |(id, features, persons, periods, last, (fraud, cents, at), kind)| {
                        let base = YearMonth::new(2000, 1).unwrap();
                        TaxpayerCase {
                            case_id: id,
                            kind: if kind {
                                CaseKind::MissingTrader
                            } else {
                                CaseKind::CompanyAudit
                            },
                            features,
                            persons,
                            address_id: "A-1".into(),
                            vat_returns: periods
                                .into_iter()
                                .map(|p| VatReturn {
                                    period: base.plus_months(p),
                                    filed: p % 3 != 0,
                                })
                                .collect(),
                            last_audited_year: last,
                            registered_date: NaiveDate::from_ymd_opt(1999, 5, 17).unwrap(),
                            trading_partners: vec![],
                            outcome: Some(AuditOutcome {
                                audited: true,
                                fraud_found: fraud,
                                back_tax_eur: Money::from_cents(if fraud { cents } else { 0 }),
                                available_at: at,
                            }),
                        }
                    },
                )
        }

        proptest! {
            #[test]
            fn json_round_trip(c in case()) {
                let back = TaxpayerCase::from_json_line(&c.to_json_line()).unwrap();
                prop_assert_eq!(back, c);
            }
        }
    }
}
