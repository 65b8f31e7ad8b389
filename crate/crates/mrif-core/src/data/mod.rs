//! Interaction-log ingestion and k-core filtering.
//!
//! Input formats: tab-separated `user \t item \t timestamp[ \t rating]`
//! lines, or JSON-lines review records with `reviewerID`, `asin`,
//! `unixReviewTime` fields. Exact duplicate (user, item, timestamp) triples
//! are stored once. Vocabularies are assigned by first appearance, items
//! starting at dense index 1 (0 is the reserved padding id).

mod split;
mod synthetic;

pub use split::{
    build_split, sample_train_negative, Provenance, SequenceDataset, UserRecord,
};
pub use synthetic::{generate_synthetic, to_tsv, SyntheticConfig};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    MalformedLine {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("no interactions found in input")]
    EmptyLog,

    #[error("{k}-core filtering removed every interaction")]
    EmptyCore { k: usize },

    #[error("user {user} has fewer than 2 interactions; cannot split")]
    UserTooShort { user: String },

    #[error("user {user}: vocabulary too small to sample {needed} negatives outside the sequence")]
    InsufficientNegatives { user: String, needed: usize },

    #[error("malformed split file: {0}")]
    BadSplitFile(String),
}

/// One (user, item, timestamp) event, in dense index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// Raw events plus the id vocabularies. `items[i]` is the external id of
/// dense item index `i + 1`; index 0 is reserved for padding.
#[derive(Debug, Clone, Default)]
pub struct InteractionLog {
    pub users: Vec<String>,
    pub items: Vec<String>,
    /// Input order; per-user chronological order is established at split time.
    pub interactions: Vec<Interaction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Tsv,
    JsonLines,
}

impl LogFormat {
    /// Pick a format from the file extension: `.json`/`.jsonl` parse as
    /// JSON-lines, everything else as TSV.
    pub fn detect(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") | Some("jsonl") => Self::JsonLines,
            _ => Self::Tsv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogStats {
    pub users: usize,
    pub items: usize,
    pub actions: usize,
}

impl fmt::Display for LogStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "# Users {:>10}\n# Items {:>10}\n# Actions {:>8}",
            self.users, self.items, self.actions
        )
    }
}

impl InteractionLog {
    pub fn stats(&self) -> LogStats {
        LogStats {
            users: self.users.len(),
            items: self.items.len(),
            actions: self.interactions.len(),
        }
    }
}

#[derive(Deserialize)]
struct ReviewLine {
    #[serde(rename = "reviewerID")]
    reviewer_id: String,
    asin: String,
    #[serde(rename = "unixReviewTime")]
    unix_review_time: i64,
}

/// Parse an interaction file into a deduplicated [`InteractionLog`].
pub fn ingest(path: &Path, format: LogFormat) -> Result<InteractionLog, DataError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let display_path = path.display().to_string();

    let mut log = InteractionLog::default();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut seen: HashSet<(u32, u32, i64)> = HashSet::new();

    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        let number = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (user, item, timestamp) = match format {
            LogFormat::Tsv => parse_tsv_line(&line).map_err(|msg| DataError::MalformedLine {
                path: display_path.clone(),
                line: number,
                msg,
            })?,
            LogFormat::JsonLines => {
                let review: ReviewLine =
                    serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
                        path: display_path.clone(),
                        line: number,
                        msg: e.to_string(),
                    })?;
                (review.reviewer_id, review.asin, review.unix_review_time)
            }
        };

        let next_user = user_index.len() as u32;
        let user_id = *user_index.entry(user.clone()).or_insert_with(|| {
            log.users.push(user);
            next_user
        });
        let next_item = item_index.len() as u32 + 1;
        let item_id = *item_index.entry(item.clone()).or_insert_with(|| {
            log.items.push(item);
            next_item
        });

        if seen.insert((user_id, item_id, timestamp)) {
            log.interactions.push(Interaction {
                user: user_id,
                item: item_id,
                timestamp,
            });
        }
    }

    if log.interactions.is_empty() {
        return Err(DataError::EmptyLog);
    }
    Ok(log)
}

fn parse_tsv_line(line: &str) -> Result<(String, String, i64), String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 && fields.len() != 4 {
        return Err(format!(
            "expected 3 or 4 tab-separated fields, got {}",
            fields.len()
        ));
    }
    let timestamp: i64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| format!("timestamp `{}` is not an integer", fields[2]))?;
    Ok((fields[0].to_string(), fields[1].to_string(), timestamp))
}

/// Iteratively remove users and items with fewer than `k` interactions until
/// both sides sit at a fixed point, then reassign dense vocabularies by
/// first appearance among the survivors.
pub fn k_core_filter(log: &InteractionLog, k: usize) -> Result<InteractionLog, DataError> {
    let mut alive = vec![true; log.interactions.len()];
    loop {
        let mut user_deg = vec![0usize; log.users.len()];
        let mut item_deg = vec![0usize; log.items.len() + 1];
        for (event, &keep) in log.interactions.iter().zip(&alive) {
            if keep {
                user_deg[event.user as usize] += 1;
                item_deg[event.item as usize] += 1;
            }
        }
        let mut changed = false;
        for (event, keep) in log.interactions.iter().zip(alive.iter_mut()) {
            if *keep
                && (user_deg[event.user as usize] < k || item_deg[event.item as usize] < k)
            {
                *keep = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut filtered = InteractionLog::default();
    let mut user_map: HashMap<u32, u32> = HashMap::new();
    let mut item_map: HashMap<u32, u32> = HashMap::new();
    for (event, &keep) in log.interactions.iter().zip(&alive) {
        if !keep {
            continue;
        }
        let next_user = user_map.len() as u32;
        let user = *user_map.entry(event.user).or_insert_with(|| {
            filtered.users.push(log.users[event.user as usize].clone());
            next_user
        });
        let next_item = item_map.len() as u32 + 1;
        let item = *item_map.entry(event.item).or_insert_with(|| {
            filtered.items.push(log.items[event.item as usize - 1].clone());
            next_item
        });
        filtered.interactions.push(Interaction {
            user,
            item,
            timestamp: event.timestamp,
        });
    }

    if filtered.interactions.is_empty() {
        return Err(DataError::EmptyCore { k });
    }
    Ok(filtered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write_file(contents: &str, suffix: &str) -> NamedTempFile {
        let mut file = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    #[test]
    fn ingest_tsv_counts_users_and_items() {
        let file = write_file("alice\ti1\t10\nbob\ti1\t11\nalice\ti2\t12\n", ".tsv");
        let log = ingest(file.path(), LogFormat::Tsv).unwrap();
        assert_eq!(log.stats(), LogStats { users: 2, items: 2, actions: 3 });
        // vocabularies by first appearance; items start at 1
        assert_eq!(log.users, vec!["alice", "bob"]);
        assert_eq!(log.interactions[0].item, 1);
        assert_eq!(log.interactions[2].item, 2);
    }

    #[test]
    fn ingest_accepts_optional_rating_column() {
        let file = write_file("u\ti\t10\t5.0\n", ".tsv");
        let log = ingest(file.path(), LogFormat::Tsv).unwrap();
        assert_eq!(log.interactions.len(), 1);
    }

    #[test]
    fn ingest_deduplicates_exact_triples() {
        let file = write_file("u\ti\t10\nu\ti\t10\nu\ti\t11\n", ".tsv");
        let log = ingest(file.path(), LogFormat::Tsv).unwrap();
        assert_eq!(log.interactions.len(), 2);
    }

    #[test]
    fn ingest_reports_line_number_on_malformed_input() {
        let file = write_file("u\ti\t10\nbroken line\n", ".tsv");
        let err = ingest(file.path(), LogFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn ingest_rejects_empty_file() {
        let file = write_file("", ".tsv");
        assert!(matches!(
            ingest(file.path(), LogFormat::Tsv),
            Err(DataError::EmptyLog)
        ));
    }

    #[test]
    fn ingest_json_lines() {
        let file = write_file(
            r#"{"reviewerID":"u1","asin":"b001","unixReviewTime":1400000000}
{"reviewerID":"u2","asin":"b001","unixReviewTime":1400000001}
"#,
            ".jsonl",
        );
        let log = ingest(file.path(), LogFormat::detect(file.path())).unwrap();
        assert_eq!(log.stats(), LogStats { users: 2, items: 1, actions: 2 });
    }

    fn toy_log(edges: &[(&str, &str)]) -> InteractionLog {
        let mut log = InteractionLog::default();
        let mut users: HashMap<String, u32> = HashMap::new();
        let mut items: HashMap<String, u32> = HashMap::new();
        for (t, (u, i)) in edges.iter().enumerate() {
            let next = users.len() as u32;
            let user = *users.entry(u.to_string()).or_insert_with(|| {
                log.users.push(u.to_string());
                next
            });
            let next = items.len() as u32 + 1;
            let item = *items.entry(i.to_string()).or_insert_with(|| {
                log.items.push(i.to_string());
                next
            });
            log.interactions.push(Interaction {
                user,
                item,
                timestamp: t as i64,
            });
        }
        log
    }

    /// Brute-force oracle: delete one under-degree user or item at a time
    /// (always the lowest-index violator) until none remain.
    fn k_core_oracle(log: &InteractionLog, k: usize) -> Vec<(String, String)> {
        let mut edges: Vec<(String, String)> = log
            .interactions
            .iter()
            .map(|e| {
                (
                    log.users[e.user as usize].clone(),
                    log.items[e.item as usize - 1].clone(),
                )
            })
            .collect();
        loop {
            let mut user_deg: HashMap<&str, usize> = HashMap::new();
            let mut item_deg: HashMap<&str, usize> = HashMap::new();
            for (u, i) in &edges {
                *user_deg.entry(u).or_default() += 1;
                *item_deg.entry(i).or_default() += 1;
            }
            let bad_user = user_deg
                .iter()
                .filter(|(_, &d)| d < k)
                .map(|(u, _)| u.to_string())
                .min();
            if let Some(u) = bad_user {
                edges.retain(|(eu, _)| *eu != u);
                continue;
            }
            let bad_item = item_deg
                .iter()
                .filter(|(_, &d)| d < k)
                .map(|(i, _)| i.to_string())
                .min();
            if let Some(i) = bad_item {
                edges.retain(|(_, ei)| *ei != i);
                continue;
            }
            break;
        }
        edges
    }

    #[test]
    fn k_core_is_identity_when_already_satisfied() {
        // 2 users × 2 items, every user and item has exactly 2 interactions
        let log = toy_log(&[("u1", "a"), ("u1", "b"), ("u2", "a"), ("u2", "b")]);
        let out = k_core_filter(&log, 2).unwrap();
        assert_eq!(out.interactions.len(), 4);
        assert_eq!(out.users.len(), 2);
        assert_eq!(out.items.len(), 2);
    }

    #[test]
    fn k_core_removes_short_users_and_cascades() {
        // u3 has a single interaction with item c; dropping u3 starves c
        let log = toy_log(&[
            ("u1", "a"),
            ("u1", "b"),
            ("u2", "a"),
            ("u2", "b"),
            ("u3", "c"),
        ]);
        let out = k_core_filter(&log, 2).unwrap();
        assert_eq!(out.users.len(), 2);
        assert_eq!(out.items.len(), 2);
        assert_eq!(out.interactions.len(), 4);
    }

    #[test]
    fn k_core_matches_iterative_deletion_oracle() {
        // 6 users × 6 items with an uneven degree profile
        let log = toy_log(&[
            ("u1", "a"), ("u1", "b"), ("u1", "c"),
            ("u2", "a"), ("u2", "b"), ("u2", "d"),
            ("u3", "a"), ("u3", "c"), ("u3", "d"),
            ("u4", "b"), ("u4", "c"), ("u4", "d"),
            ("u5", "e"), ("u5", "a"),
            ("u6", "f"),
        ]);
        let ours = k_core_filter(&log, 3).unwrap();
        let oracle = k_core_oracle(&log, 3);

        let mut ours_edges: Vec<(String, String)> = ours
            .interactions
            .iter()
            .map(|e| {
                (
                    ours.users[e.user as usize].clone(),
                    ours.items[e.item as usize - 1].clone(),
                )
            })
            .collect();
        let mut oracle_edges = oracle;
        ours_edges.sort();
        oracle_edges.sort();
        assert_eq!(ours_edges, oracle_edges);

        // fixed point: every surviving user and item has >= k interactions
        let mut user_deg: HashMap<u32, usize> = HashMap::new();
        let mut item_deg: HashMap<u32, usize> = HashMap::new();
        for e in &ours.interactions {
            *user_deg.entry(e.user).or_default() += 1;
            *item_deg.entry(e.item).or_default() += 1;
        }
        assert!(user_deg.values().all(|&d| d >= 3));
        assert!(item_deg.values().all(|&d| d >= 3));
    }

    #[test]
    fn k_core_can_empty_the_log() {
        let log = toy_log(&[("u1", "a"), ("u2", "b")]);
        assert!(matches!(
            k_core_filter(&log, 10),
            Err(DataError::EmptyCore { k: 10 })
        ));
    }
}
