//! Data sources behind rule calls: watchlist, company registry, filing history and
//! the quota-limited cross-border VAT id validation client.
//!
//! Scoring never touches the hub directly. It works on a [`SourceSnapshot`] taken when a
//! batch starts, and the hub refuses mutations while any batch guard is alive.

mod stores;
mod uid;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    read_cases_jsonl, validate_corpus, Diagnostic, FeatureSchema, NotApplicable, TaxpayerCase,
    YearMonth,
};
use crate::error::DomainError;

pub use stores::{
    parse_registry, parse_uid_register, parse_watchlist, write_registry, write_uid_register,
    write_watchlist, RegistryEntry, RegistryStore, WatchlistStore,
};
pub use uid::{ProcessedCheck, QueuedCheck, UidStatus, UidValidationClient, DEFAULT_DAILY_QUOTA};

pub const WATCHLIST: &str = "watchlist";
pub const REGISTRY: &str = "registry";
pub const FILINGS: &str = "filings";
pub const UID_VALIDATION: &str = "uid_validation";
pub const SOURCE_NAMES: [&str; 4] = [WATCHLIST, REGISTRY, FILINGS, UID_VALIDATION];

/// Member state of the home administration; partners registered here need no cross-border check.
pub const DOMESTIC_STATE: &str = "AT";

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("data sources cannot change while a scoring batch is running")]
    MidBatch,
    #[error("unknown data source {0:?}")]
    UnknownSource(String),
    #[error("company {0} is already registered")]
    DuplicateCompany(String),
}

fn no_legal_basis() -> NotApplicable {
    NotApplicable::new("no legal basis")
}

/// Months from the latest filed return to `now`.
///
/// A company that never filed counts from its registration month; it is not applicable
/// while the company is younger than one month.
pub fn months_since_last_vat_return(
    case: &TaxpayerCase,
    now: YearMonth,
) -> Result<i64, NotApplicable> {
    if let Some(last) = case.last_filed_period() {
        return Ok(now.months_since(last) as i64);
    }
    let age = now.months_since(YearMonth::of_date(case.registered_date));
    if age < 1 {
        return Err(NotApplicable::new(
            "no VAT return filed and company younger than one month",
        ));
    }
    Ok(age as i64)
}

/// Immutable view of every source, shared by all lookups of one batch.
#[derive(Debug, Clone)]
pub struct SourceSnapshot {
    version: u64,
    watchlist: Arc<WatchlistStore>,
    registry: Arc<RegistryStore>,
    uid_statuses: Arc<BTreeMap<String, UidStatus>>,
    legal_basis: Arc<BTreeMap<String, bool>>,
}

impl Default for SourceSnapshot {
    fn default() -> Self {
        SourceHub::default().snapshot()
    }
}

impl SourceSnapshot {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn has_legal_basis(&self, source: &str) -> bool {
        self.legal_basis.get(source).copied().unwrap_or(false)
    }

    fn gate(&self, source: &str) -> Result<(), NotApplicable> {
        if self.has_legal_basis(source) {
            Ok(())
        } else {
            Err(no_legal_basis())
        }
    }

    pub fn watchlist(&self) -> &WatchlistStore {
        &self.watchlist
    }

    pub fn registry(&self) -> &RegistryStore {
        &self.registry
    }

    pub fn watchlist_links(&self, case: &TaxpayerCase) -> Result<usize, NotApplicable> {
        self.gate(WATCHLIST)?;
        Ok(self.watchlist.linked_persons(&case.case_id, &case.persons))
    }

    pub fn companies_at_address(&self, case: &TaxpayerCase) -> Result<usize, NotApplicable> {
        self.gate(REGISTRY)?;
        Ok(self.registry.companies_at(&case.address_id))
    }

    pub fn months_since_last_vat_return(
        &self,
        case: &TaxpayerCase,
        now: YearMonth,
    ) -> Result<i64, NotApplicable> {
        self.gate(FILINGS)?;
        months_since_last_vat_return(case, now)
    }

    /// Trading partners whose VAT id was checked and found invalid. Pending checks do not count.
    pub fn uid_invalid_count(&self, case: &TaxpayerCase) -> Result<usize, NotApplicable> {
        self.gate(UID_VALIDATION)?;
        Ok(case
            .trading_partners
            .iter()
            .filter(|p| self.uid_statuses.get(p.as_str()) == Some(&UidStatus::Invalid))
            .count())
    }
}

/// Marks a running batch; the hub rejects mutations until every guard is dropped.
#[derive(Debug)]
pub struct BatchGuard {
    counter: Arc<AtomicUsize>,
    snapshot: SourceSnapshot,
}

impl BatchGuard {
    pub fn snapshot(&self) -> &SourceSnapshot {
        &self.snapshot
    }
}

impl Drop for BatchGuard {
    fn drop(&mut self) {
        self.counter.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub cases: usize,
    pub watchlist_links: usize,
    pub watchlist_companies: usize,
    pub registry_companies: usize,
    pub addresses_in_use: usize,
}

/// Single-writer owner of the stores.
#[derive(Debug)]
pub struct SourceHub {
    watchlist: Arc<WatchlistStore>,
    registry: Arc<RegistryStore>,
    uid: UidValidationClient,
    uid_statuses: Arc<BTreeMap<String, UidStatus>>,
    legal_basis: Arc<BTreeMap<String, bool>>,
    version: u64,
    active_batches: Arc<AtomicUsize>,
}

impl Default for SourceHub {
    fn default() -> Self {
        SourceHub::new(
            WatchlistStore::default(),
            RegistryStore::default(),
            UidValidationClient::default(),
        )
    }
}

impl SourceHub {
    /// A hub with every source legally usable.
    pub fn new(
        watchlist: WatchlistStore,
        registry: RegistryStore,
        uid: UidValidationClient,
    ) -> Self {
        let uid_statuses = Arc::new(uid.statuses().clone());
        SourceHub {
            watchlist: Arc::new(watchlist),
            registry: Arc::new(registry),
            uid,
            uid_statuses,
            legal_basis: Arc::new(SOURCE_NAMES.iter().map(|s| (s.to_string(), true)).collect()),
            version: 0,
            active_batches: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn snapshot(&self) -> SourceSnapshot {
        SourceSnapshot {
            version: self.version,
            watchlist: Arc::clone(&self.watchlist),
            registry: Arc::clone(&self.registry),
            uid_statuses: Arc::clone(&self.uid_statuses),
            legal_basis: Arc::clone(&self.legal_basis),
        }
    }

    pub fn begin_batch(&self) -> BatchGuard {
        self.active_batches.fetch_add(1, Ordering::SeqCst);
        BatchGuard {
            counter: Arc::clone(&self.active_batches),
            snapshot: self.snapshot(),
        }
    }

    pub fn batch_running(&self) -> bool {
        self.active_batches.load(Ordering::SeqCst) > 0
    }

    fn writable(&mut self) -> Result<(), SourceError> {
        if self.batch_running() {
            return Err(SourceError::MidBatch);
        }
        self.version += 1;
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn watchlist(&self) -> &WatchlistStore {
        &self.watchlist
    }

    pub fn registry(&self) -> &RegistryStore {
        &self.registry
    }

    pub fn uid_client(&self) -> &UidValidationClient {
        &self.uid
    }

    pub fn legal_basis(&self) -> &BTreeMap<String, bool> {
        &self.legal_basis
    }

    pub fn set_legal_basis(&mut self, source: &str, allowed: bool) -> Result<(), SourceError> {
        if !SOURCE_NAMES.contains(&source) {
            return Err(SourceError::UnknownSource(source.to_string()));
        }
        self.writable()?;
        Arc::make_mut(&mut self.legal_basis).insert(source.to_string(), allowed);
        Ok(())
    }

    pub fn add_watchlist_link(
        &mut self,
        company_id: &str,
        person_id: &str,
    ) -> Result<(), SourceError> {
        self.writable()?;
        Arc::make_mut(&mut self.watchlist).insert(company_id, person_id);
        Ok(())
    }

    pub fn register_company(
        &mut self,
        company_id: &str,
        address_id: &str,
        member_state: &str,
    ) -> Result<(), SourceError> {
        if self.registry.contains(company_id) {
            return Err(SourceError::DuplicateCompany(company_id.to_string()));
        }
        self.writable()?;
        Arc::make_mut(&mut self.registry).insert(company_id, address_id, member_state);
        Ok(())
    }

    /// Replaces watchlist and registry together.
    pub fn install(
        &mut self,
        watchlist: WatchlistStore,
        registry: RegistryStore,
    ) -> Result<(), SourceError> {
        self.writable()?;
        self.watchlist = Arc::new(watchlist);
        self.registry = Arc::new(registry);
        Ok(())
    }

    pub fn set_uid_quota(&mut self, quota: usize) -> Result<(), SourceError> {
        self.writable()?;
        self.uid.set_quota(quota);
        Ok(())
    }

    /// Queues a check for every foreign registered trading partner of the case.
    pub fn enqueue_partner_checks(&mut self, case: &TaxpayerCase, priority: u32) {
        for partner in &case.trading_partners {
            if let Some(entry) = self.registry.get(partner) {
                if entry.member_state != DOMESTIC_STATE {
                    self.uid.enqueue(&entry.member_state, partner, priority);
                }
            }
        }
    }

    pub fn enqueue_uid_check(&mut self, state: &str, id: &str, priority: u32) {
        self.uid.enqueue(state, id, priority);
    }

    pub fn run_validation_day(
        &mut self,
        oracle: impl Fn(&str) -> bool,
    ) -> Result<Vec<ProcessedCheck>, SourceError> {
        self.writable()?;
        let processed = self.uid.run_validation_day(oracle);
        self.uid_statuses = Arc::new(self.uid.statuses().clone());
        Ok(processed)
    }
}

/// Parsed and validated input files, ready to install.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub cases: Vec<TaxpayerCase>,
    pub watchlist: WatchlistStore,
    pub registry: RegistryStore,
    pub summary: LoadSummary,
}

fn prefixed(file: &str, diags: Vec<Diagnostic>) -> Vec<Diagnostic> {
    diags
        .into_iter()
        .map(|d| Diagnostic {
            path: format!("{file}: {}", d.path),
            message: d.message,
        })
        .collect()
}

/// Parses and validates the three input files. Any problem in any file rejects all of them.
pub fn ingest(
    cases_text: &str,
    watchlist_text: &str,
    registry_text: &str,
    schema: &FeatureSchema,
    current_year: Option<i32>,
) -> Result<Ingested, DomainError> {
    let mut diags = Vec::new();
    let cases = match read_cases_jsonl(cases_text) {
        Ok(cases) => {
            diags.extend(prefixed(
                "cases",
                validate_corpus(&cases, schema, current_year),
            ));
            cases
        }
        Err(DomainError::Rejected(d)) => {
            diags.extend(prefixed("cases", d));
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let registry = parse_registry(registry_text).unwrap_or_else(|d| {
        diags.extend(d);
        RegistryStore::default()
    });
    let watchlist = parse_watchlist(watchlist_text, Some(&registry)).unwrap_or_else(|d| {
        diags.extend(d);
        WatchlistStore::default()
    });
    if !diags.is_empty() {
        return Err(DomainError::Rejected(diags));
    }
    let summary = LoadSummary {
        cases: cases.len(),
        watchlist_links: watchlist.len(),
        watchlist_companies: watchlist.companies().count(),
        registry_companies: registry.len(),
        addresses_in_use: {
            let mut a: Vec<&str> = cases.iter().map(|c| c.address_id.as_str()).collect();
            a.sort_unstable();
            a.dedup();
            a.len()
        },
    };
    Ok(Ingested {
        cases,
        watchlist,
        registry,
        summary,
    })
}
