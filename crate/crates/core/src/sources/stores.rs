use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use crate::domain::Diagnostic;

/// Companies on the watchlist and the persons linked to them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WatchlistStore {
    companies: BTreeSet<String>,
    person_links: BTreeMap<String, BTreeSet<String>>,
    rows: usize,
}

impl WatchlistStore {
    pub fn insert(&mut self, company_id: &str, person_id: &str) {
        self.companies.insert(company_id.to_string());
        if self
            .person_links
            .entry(person_id.to_string())
            .or_default()
            .insert(company_id.to_string())
        {
            self.rows += 1;
        }
    }

    pub fn is_watchlisted(&self, company_id: &str) -> bool {
        self.companies.contains(company_id)
    }

    pub fn companies(&self) -> impl Iterator<Item = &str> {
        self.companies.iter().map(String::as_str)
    }

    /// Watchlisted companies a person is linked to.
    pub fn links_of(&self, person_id: &str) -> impl Iterator<Item = &str> {
        self.person_links
            .get(person_id)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    /// Distinct (company, person) links.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Persons of `company_id` linked to some other watchlisted company.
    pub fn linked_persons(&self, company_id: &str, persons: &[String]) -> usize {
        persons
            .iter()
            .filter(|p| self.links_of(p).any(|c| c != company_id))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub address_id: String,
    pub member_state: String,
}

/// Company registry with a reverse address index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistryStore {
    companies: BTreeMap<String, RegistryEntry>,
    by_address: BTreeMap<String, BTreeSet<String>>,
}

impl RegistryStore {
    /// Adds a company; an already registered id is refused.
    pub fn insert(&mut self, company_id: &str, address_id: &str, member_state: &str) -> bool {
        if self.companies.contains_key(company_id) {
            return false;
        }
        self.companies.insert(
            company_id.to_string(),
            RegistryEntry {
                address_id: address_id.to_string(),
                member_state: member_state.to_string(),
            },
        );
        self.by_address
            .entry(address_id.to_string())
            .or_default()
            .insert(company_id.to_string());
        true
    }

    pub fn get(&self, company_id: &str) -> Option<&RegistryEntry> {
        self.companies.get(company_id)
    }

    pub fn contains(&self, company_id: &str) -> bool {
        self.companies.contains_key(company_id)
    }

    pub fn companies_at(&self, address_id: &str) -> usize {
        self.by_address.get(address_id).map_or(0, BTreeSet::len)
    }

    pub fn len(&self) -> usize {
        self.companies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.companies.is_empty()
    }

    /// Checks that the reverse index matches the forward map exactly.
    pub fn index_consistent(&self) -> bool {
        let forward: usize = self.by_address.values().map(BTreeSet::len).sum();
        forward == self.companies.len()
            && self.by_address.iter().all(|(a, ids)| {
                ids.iter()
                    .all(|id| self.companies.get(id).is_some_and(|e| &e.address_id == a))
            })
    }
}

#[derive(Debug, Deserialize)]
struct WatchlistRow {
    company_id: String,
    person_id: String,
}

#[derive(Debug, Deserialize)]
struct RegistryRow {
    company_id: String,
    address_id: String,
    member_state: String,
}

#[derive(Debug, Deserialize)]
struct UidRow {
    company_id: String,
    valid: bool,
}

fn read_csv<T: for<'de> Deserialize<'de>>(
    text: &str,
    file: &str,
    header: &[&str],
    diags: &mut Vec<Diagnostic>,
) -> Vec<(usize, T)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    if text.trim().is_empty() {
        return Vec::new();
    }
    match reader.headers() {
        Ok(h) if h.iter().eq(header.iter().copied()) => {}
        Ok(h) => {
            diags.push(Diagnostic {
                path: format!("{file} line 1"),
                message: format!(
                    "expected header {:?}, found {:?}",
                    header.join(","),
                    h.iter().collect::<Vec<_>>().join(",")
                ),
            });
            return Vec::new();
        }
        Err(e) => {
            diags.push(Diagnostic {
                path: format!("{file} line 1"),
                message: e.to_string(),
            });
            return Vec::new();
        }
    }
    let mut rows = Vec::new();
    for record in reader.deserialize::<T>() {
        match record {
            Ok(row) => rows.push((rows.len() + 2, row)),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                diags.push(Diagnostic {
                    path: format!("{file} line {line}"),
                    message: e.to_string(),
                });
            }
        }
    }
    rows
}

fn non_empty(
    fields: &[(&str, &str)],
    file: &str,
    line: usize,
    diags: &mut Vec<Diagnostic>,
) -> bool {
    let mut ok = true;
    for (name, value) in fields {
        if value.is_empty() {
            diags.push(Diagnostic {
                path: format!("{file} line {line}"),
                message: format!("empty {name}"),
            });
            ok = false;
        }
    }
    ok
}

/// Parses a `company_id,address_id,member_state` file; duplicate ids are rejected.
pub fn parse_registry(text: &str) -> Result<RegistryStore, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let rows: Vec<(usize, RegistryRow)> = read_csv(
        text,
        "registry",
        &["company_id", "address_id", "member_state"],
        &mut diags,
    );
    let mut store = RegistryStore::default();
    for (line, r) in rows {
        let fields = [
            ("company_id", r.company_id.as_str()),
            ("address_id", &r.address_id),
            ("member_state", &r.member_state),
        ];
        if !non_empty(&fields, "registry", line, &mut diags) {
            continue;
        }
        if !store.insert(&r.company_id, &r.address_id, &r.member_state) {
            diags.push(Diagnostic {
                path: format!("registry line {line}"),
                message: format!("duplicate company id {}", r.company_id),
            });
        }
    }
    if diags.is_empty() {
        Ok(store)
    } else {
        Err(diags)
    }
}

/// Parses a `company_id,person_id` file. When a registry is given, every company must be in it.
pub fn parse_watchlist(
    text: &str,
    registry: Option<&RegistryStore>,
) -> Result<WatchlistStore, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let rows: Vec<(usize, WatchlistRow)> =
        read_csv(text, "watchlist", &["company_id", "person_id"], &mut diags);
    let mut store = WatchlistStore::default();
    for (line, r) in rows {
        if !non_empty(
            &[("company_id", &r.company_id), ("person_id", &r.person_id)],
            "watchlist",
            line,
            &mut diags,
        ) {
            continue;
        }
        if registry.is_some_and(|reg| !reg.contains(&r.company_id)) {
            diags.push(Diagnostic {
                path: format!("watchlist line {line}"),
                message: format!("unknown company id {}", r.company_id),
            });
            continue;
        }
        store.insert(&r.company_id, &r.person_id);
    }
    if diags.is_empty() {
        Ok(store)
    } else {
        Err(diags)
    }
}

/// Parses the mock cross-border validation register (`company_id,valid`).
pub fn parse_uid_register(text: &str) -> Result<BTreeMap<String, bool>, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let rows: Vec<(usize, UidRow)> =
        read_csv(text, "uid register", &["company_id", "valid"], &mut diags);
    let mut out = BTreeMap::new();
    for (line, r) in rows {
        if out.insert(r.company_id.clone(), r.valid).is_some() {
            diags.push(Diagnostic {
                path: format!("uid register line {line}"),
                message: format!("duplicate company id {}", r.company_id),
            });
        }
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(diags)
    }
}

pub fn write_registry(store: &RegistryStore) -> String {
    let mut out = String::from("company_id,address_id,member_state\n");
    for (id, e) in &store.companies {
        out.push_str(&format!("{id},{},{}\n", e.address_id, e.member_state));
    }
    out
}

pub fn write_watchlist(store: &WatchlistStore) -> String {
    let mut pairs: Vec<(&str, &str)> = store
        .person_links
        .iter()
        .flat_map(|(p, cs)| cs.iter().map(move |c| (c.as_str(), p.as_str())))
        .collect();
    pairs.sort_unstable();
    let mut out = String::from("company_id,person_id\n");
    for (c, p) in pairs {
        out.push_str(&format!("{c},{p}\n"));
    }
    out
}

pub fn write_uid_register(register: &BTreeMap<String, bool>) -> String {
    let mut out = String::from("company_id,valid\n");
    for (id, valid) in register {
        out.push_str(&format!("{id},{valid}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_counts_and_index() {
        let reg =
            parse_registry("company_id,address_id,member_state\nA,X,AT\nB,X,AT\nC,Y,DE\n").unwrap();
        assert_eq!(reg.companies_at("X"), 2);
        assert_eq!(reg.companies_at("Y"), 1);
        assert_eq!(reg.companies_at("nowhere"), 0);
        assert!(reg.index_consistent());
        assert_eq!(parse_registry(&write_registry(&reg)).unwrap(), reg);
    }

    #[test]
    fn registry_duplicate_rejected() {
        let err =
            parse_registry("company_id,address_id,member_state\nA,X,AT\nA,Y,AT\n").unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].path, "registry line 3");
        assert!(err[0].message.contains("duplicate company id A"));
    }

    #[test]
    fn malformed_rows_and_headers() {
        let err = parse_registry("company_id,address_id,member_state\nA,X\n").unwrap_err();
        assert_eq!(err[0].path, "registry line 2");
        let err = parse_watchlist("company,person\nA,P\n", None).unwrap_err();
        assert!(err[0].message.contains("expected header"));
        let err = parse_uid_register("company_id,valid\nA,maybe\n").unwrap_err();
        assert_eq!(err.len(), 1);
    }

    #[test]
    fn empty_files_are_empty_stores() {
        assert!(parse_registry("").unwrap().is_empty());
        assert!(parse_watchlist("company_id,person_id\n", None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn watchlist_links_exclude_own_company() {
        let mut w = WatchlistStore::default();
        w.insert("W1", "P1");
        w.insert("SELF", "P2");
        let persons = vec!["P1".to_string(), "P2".to_string(), "P3".to_string()];
        assert_eq!(w.linked_persons("SELF", &persons), 1);
        assert_eq!(w.linked_persons("SELF", &[]), 0);
        assert_eq!(parse_watchlist(&write_watchlist(&w), None).unwrap(), w);
    }

    #[test]
    fn watchlist_requires_known_companies() {
        let reg = parse_registry("company_id,address_id,member_state\nA,X,AT\n").unwrap();
        let err = parse_watchlist("company_id,person_id\nB,P1\n", Some(&reg)).unwrap_err();
        assert!(err[0].message.contains("unknown company id B"));
    }
}
