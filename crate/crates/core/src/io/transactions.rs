//! Per-user purchase sequences and their text format.
//!
//! One basket per line: `user_id t_index item_id [item_id ...]`, with
//! `t_index` consecutive from 0 for each user. `#` starts a comment line.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::taxonomy::{NodeId, Taxonomy};
use crate::DataError;

pub type UserId = usize;

/// The set of leaf items bought in one transaction. Sorted, no duplicates,
/// never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Basket(Vec<NodeId>);

impl Basket {
    /// Collapses duplicates. Returns `None` for an empty item list.
    pub fn new(mut items: Vec<NodeId>) -> Option<Self> {
        items.sort_unstable();
        items.dedup();
        (!items.is_empty()).then_some(Basket(items))
    }

    pub fn items(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, item: NodeId) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    /// Removes the given items; `None` if nothing is left.
    pub fn without(&self, drop: &BTreeSet<NodeId>) -> Option<Basket> {
        Basket::new(self.0.iter().copied().filter(|i| !drop.contains(i)).collect())
    }
}

/// A positive `(user, transaction, item)` observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub t: u32,
    pub item: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransactionLog {
    users: Vec<Vec<Basket>>,
    triples: Vec<Triple>,
}

impl TransactionLog {
    pub fn from_users(users: Vec<Vec<Basket>>) -> Self {
        let mut triples = Vec::new();
        for (u, baskets) in users.iter().enumerate() {
            for (t, b) in baskets.iter().enumerate() {
                for &item in b.items() {
                    triples.push(Triple { user: u as u32, t: t as u32, item: item as u32 });
                }
            }
        }
        TransactionLog { users, triples }
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn transactions(&self, user: UserId) -> &[Basket] {
        self.users.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn users(&self) -> &[Vec<Basket>] {
        &self.users
    }

    pub fn into_users(self) -> Vec<Vec<Basket>> {
        self.users
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn transaction_count(&self) -> usize {
        self.users.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Up to `n` baskets preceding transaction `t`, most recent first
    /// (`[B_{t-1}, B_{t-2}, ...]`).
    pub fn history(&self, user: UserId, t: usize, n: usize) -> Vec<&Basket> {
        let txs = self.transactions(user);
        let end = t.min(txs.len());
        txs[end.saturating_sub(n)..end].iter().rev().collect()
    }

    /// Last `n` baskets of the user's sequence, most recent first.
    pub fn recent(&self, user: UserId, n: usize) -> Vec<&Basket> {
        self.history(user, self.transactions(user).len(), n)
    }

    pub fn purchased(&self, user: UserId) -> BTreeSet<NodeId> {
        self.transactions(user).iter().flat_map(|b| b.items().iter().copied()).collect()
    }

    /// Every leaf bought by any user.
    pub fn purchased_anywhere(&self) -> BTreeSet<NodeId> {
        self.triples.iter().map(|t| t.item as NodeId).collect()
    }

    /// Text form using the taxonomy's external item ids.
    pub fn to_text(&self, taxonomy: &Taxonomy) -> String {
        let mut out = String::from("# user_id t_index item_id...\n");
        for (u, baskets) in self.users.iter().enumerate() {
            for (t, b) in baskets.iter().enumerate() {
                let _ = write!(out, "{u} {t}");
                for &item in b.items() {
                    let ext = taxonomy.nodes()[item].external_id.unwrap_or(item as u64);
                    let _ = write!(out, " {ext}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>, taxonomy: &Taxonomy) -> std::io::Result<()> {
        std::fs::write(path, self.to_text(taxonomy))
    }
}

/// Result of parsing a transactions file against a taxonomy.
#[derive(Debug, Clone)]
pub struct LoadedLog {
    pub log: TransactionLog,
    /// The input taxonomy, extended with an UNCATEGORIZED branch when the
    /// file mentions items it does not contain.
    pub taxonomy: Taxonomy,
    pub unknown_items: usize,
}

pub fn parse_transactions<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<LoadedLog, DataError> {
    let mut rows: Vec<(usize, usize, Vec<u64>)> = Vec::new();
    let mut next_t: Vec<usize> = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let parse = |f: Option<&str>, what: &str| -> Result<u64, DataError> {
            let f = f.ok_or_else(|| DataError::parse(lineno, format!("missing {what}")))?;
            f.parse().map_err(|_| DataError::parse(lineno, format!("invalid {what} {f:?}")))
        };
        let user = parse(fields.next(), "user_id")? as usize;
        let t = parse(fields.next(), "t_index")? as usize;
        let items = fields
            .map(|f| f.parse::<u64>().map_err(|_| DataError::parse(lineno, format!("invalid item id {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err(DataError::parse(lineno, "basket has no items"));
        }
        if next_t.len() <= user {
            next_t.resize(user + 1, 0);
        }
        if t != next_t[user] {
            return Err(DataError::parse(
                lineno,
                format!("user {user}: expected t_index {}, found {t}", next_t[user]),
            ));
        }
        next_t[user] += 1;
        rows.push((lineno, user, items));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    let mut unknown: Vec<u64> =
        rows.iter().flat_map(|(_, _, items)| items.iter().copied()).filter(|e| taxonomy.resolve_external(*e).is_none()).collect();
    unknown.sort_unstable();
    unknown.dedup();
    let taxonomy = if unknown.is_empty() {
        taxonomy.clone()
    } else {
        log::warn!("{} item ids missing from the taxonomy; filed under UNCATEGORIZED", unknown.len());
        taxonomy.with_uncategorized(&unknown)?
    };

    let mut users: Vec<Vec<Basket>> = vec![Vec::new(); next_t.len()];
    for (lineno, user, items) in rows {
        let mut ids = Vec::with_capacity(items.len());
        for ext in items {
            let id = taxonomy.resolve_external(ext).expect("unknown ids were attached");
            if !taxonomy.is_leaf(id) {
                return Err(DataError::parse(lineno, format!("item {ext} is a category, not a leaf")));
            }
            ids.push(id);
        }
        users[user].push(Basket::new(ids).expect("non-empty"));
    }
    Ok(LoadedLog { log: TransactionLog::from_users(users), taxonomy, unknown_items: unknown.len() })
}

pub fn load_transactions(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<LoadedLog, DataError> {
    parse_transactions(std::fs::File::open(path)?, taxonomy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tax() -> Taxonomy {
        Taxonomy::parse("0\t-1\tr\n1\t0\tc\n2\t0\td\n10\t1\ta\n11\t1\tb\n12\t2\te\n".as_bytes()).unwrap()
    }

    #[test]
    fn parses_in_file_order_with_set_semantics() {
        let t = tax();
        let loaded = parse_transactions("0 0 10 10 11\n0 1 12\n".as_bytes(), &t).unwrap();
        let log = &loaded.log;
        assert_eq!(log.user_count(), 1);
        assert_eq!(log.transactions(0).len(), 2);
        let a = t.resolve_external(10).unwrap();
        let b = t.resolve_external(11).unwrap();
        assert_eq!(log.transactions(0)[0].items(), &[a, b]);
        assert_eq!(log.triple_count(), 3);
        assert_eq!(loaded.unknown_items, 0);
    }

    #[test]
    fn unknown_items_become_uncategorized() {
        let t = tax();
        let loaded = parse_transactions("0 0 10 999\n".as_bytes(), &t).unwrap();
        assert_eq!(loaded.unknown_items, 1);
        let id = loaded.taxonomy.resolve_external(999).unwrap();
        assert!(loaded.taxonomy.is_leaf(id));
        assert!(loaded.log.transactions(0)[0].contains(id));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let t = tax();
        let err = parse_transactions("# c\n0 0 10\n0 x 11\n".as_bytes(), &t).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        let err = parse_transactions("0 0 10\n0 2 11\n".as_bytes(), &t).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
        let err = parse_transactions("0 0\n".as_bytes(), &t).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
        let err = parse_transactions("0 0 1\n".as_bytes(), &t).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
        assert!(matches!(parse_transactions("# only\n".as_bytes(), &t), Err(DataError::Empty)));
    }

    #[test]
    fn history_is_most_recent_first() {
        let b = |i| Basket::new(vec![i]).unwrap();
        let log = TransactionLog::from_users(vec![vec![b(3), b(4), b(5), b(6)]]);
        let h: Vec<_> = log.history(0, 3, 2).iter().map(|b| b.items()[0]).collect();
        assert_eq!(h, vec![5, 4]);
        assert!(log.history(0, 0, 3).is_empty());
        assert_eq!(log.history(0, 1, 3).len(), 1);
        assert_eq!(log.recent(0, 1)[0].items(), &[6]);
    }

    proptest! {
        #[test]
        fn text_round_trip(users in prop::collection::vec(
            prop::collection::vec(prop::collection::vec(0usize..3, 1..4), 0..4), 1..5)) {
            let t = tax();
            let leaves = t.leaves().to_vec();
            let users: Vec<Vec<Basket>> = users.into_iter().map(|txs| {
                txs.into_iter().map(|items| Basket::new(items.into_iter().map(|i| leaves[i]).collect()).unwrap()).collect()
            }).collect();
            let log = TransactionLog::from_users(users);
            prop_assume!(!log.is_empty());
            let back = parse_transactions(log.to_text(&t).as_bytes(), &t).unwrap().log;
            // Trailing users without baskets are not representable in the file.
            let mut expect = log.into_users();
            while expect.last().is_some_and(Vec::is_empty) { expect.pop(); }
            prop_assert_eq!(back.into_users(), expect);
        }
    }
}
