use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::text::{tokenize, Vocabulary};
use super::{AdoptionEvent, Corpus, CorpusParts, FollowEdge, ItemId, UserId, SECONDS_PER_DAY};
use crate::error::{Error, Result};

pub const EDGES_FILE: &str = "edges.tsv";
pub const ADOPTIONS_FILE: &str = "adoptions.jsonl";
pub const ITEMS_FILE: &str = "items.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Observation window Δt in days, measured from the earliest adoption.
    /// `None` uses the span between earliest and latest adoption.
    pub window_days: Option<f64>,
    pub min_count: usize,
    /// Drop items adopted by fewer users than this (0 disables).
    pub min_item_adopters: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            window_days: None,
            min_count: 5,
            min_item_adopters: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FileReport {
    pub lines: usize,
    pub kept: usize,
    pub dropped: BTreeMap<String, usize>,
}

impl FileReport {
    fn drop(&mut self, reason: &str) {
        *self.dropped.entry(reason.to_string()).or_default() += 1;
    }

    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub edges: FileReport,
    pub adoptions: FileReport,
    pub items: FileReport,
    pub num_users: usize,
    pub num_items: usize,
    pub num_edges: usize,
    pub num_adoptions: usize,
    pub vocab_size: usize,
    pub empty_text_items: usize,
    pub window_days: f64,
}

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub adoptions: PathBuf,
    pub items: PathBuf,
}

impl DatasetPaths {
    /// The three standard filenames inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            edges: dir.join(EDGES_FILE),
            adoptions: dir.join(ADOPTIONS_FILE),
            items: dir.join(ITEMS_FILE),
        }
    }
}

#[derive(Deserialize)]
struct AdoptionLine {
    user: String,
    item: String,
    t: i64,
    orig: bool,
}

#[derive(Deserialize)]
struct ItemLine {
    item: String,
    text: String,
}

struct RawAdoption {
    user: String,
    item: String,
    time: i64,
    is_original: bool,
}

/// Accumulates string-keyed records, then reindexes them into a [`Corpus`].
pub struct CorpusBuilder {
    options: IngestOptions,
    report: IngestReport,
    edges: Vec<(String, String)>,
    edge_seen: HashSet<(String, String)>,
    items: Vec<(String, String)>,
    item_seen: HashSet<String>,
    adoptions: Vec<RawAdoption>,
    adoption_seen: HashSet<(String, String)>,
}

impl CorpusBuilder {
    pub fn new(options: IngestOptions) -> Self {
        CorpusBuilder {
            options,
            report: IngestReport::default(),
            edges: Vec::new(),
            edge_seen: HashSet::new(),
            items: Vec::new(),
            item_seen: HashSet::new(),
            adoptions: Vec::new(),
            adoption_seen: HashSet::new(),
        }
    }

    pub fn add_edge(&mut self, follower: &str, friend: &str) {
        let r = &mut self.report.edges;
        r.lines += 1;
        if follower == friend {
            r.drop("self_loop");
            return;
        }
        let key = (follower.to_string(), friend.to_string());
        if !self.edge_seen.insert(key.clone()) {
            r.drop("duplicate");
            return;
        }
        r.kept += 1;
        self.edges.push(key);
    }

    pub fn add_item(&mut self, item: &str, text: &str) {
        let r = &mut self.report.items;
        r.lines += 1;
        if !self.item_seen.insert(item.to_string()) {
            r.drop("duplicate");
            return;
        }
        r.kept += 1;
        self.items.push((item.to_string(), text.to_string()));
    }

    /// Items must be registered before adoptions reference them.
    pub fn add_adoption(&mut self, user: &str, item: &str, time: i64, is_original: bool) -> Result<()> {
        if !self.item_seen.contains(item) {
            return Err(Error::UnknownId {
                kind: "item",
                id: item.to_string(),
            });
        }
        let r = &mut self.report.adoptions;
        r.lines += 1;
        if !self.adoption_seen.insert((user.to_string(), item.to_string())) {
            r.drop("duplicate");
            return Ok(());
        }
        r.kept += 1;
        self.adoptions.push(RawAdoption {
            user: user.to_string(),
            item: item.to_string(),
            time,
            is_original,
        });
        Ok(())
    }

    fn count_blank(report: &mut FileReport) {
        report.lines += 1;
        report.drop("blank");
    }

    pub fn finish(mut self) -> Result<(Corpus, IngestReport)> {
        if self.adoptions.is_empty() {
            return Err(Error::EmptyDataset("no adoption events".into()));
        }
        let t_min = self.adoptions.iter().map(|a| a.time).min().unwrap();
        let t_max = self.adoptions.iter().map(|a| a.time).max().unwrap();
        let window_days = match self.options.window_days {
            Some(w) if w > 0.0 && w.is_finite() => w,
            Some(w) => {
                return Err(Error::InvalidParam(format!("window must be positive, got {w}")))
            }
            None => {
                let span = (t_max - t_min) as f64 / SECONDS_PER_DAY;
                if span > 0.0 {
                    span
                } else {
                    1.0
                }
            }
        };
        if self.options.window_days.is_some() {
            let limit = t_min as f64 + window_days * SECONDS_PER_DAY;
            let before = self.adoptions.len();
            self.adoptions.retain(|a| a.time as f64 <= limit);
            let removed = before - self.adoptions.len();
            for _ in 0..removed {
                self.report.adoptions.drop("outside_window");
            }
            self.report.adoptions.kept -= removed;
        }

        if self.options.min_item_adopters > 1 {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for a in &self.adoptions {
                *counts.entry(a.item.as_str()).or_default() += 1;
            }
            let low: HashSet<String> = self
                .items
                .iter()
                .filter(|(id, _)| counts.get(id.as_str()).copied().unwrap_or(0) < self.options.min_item_adopters)
                .map(|(id, _)| id.clone())
                .collect();
            let before = self.adoptions.len();
            self.adoptions.retain(|a| !low.contains(&a.item));
            let removed = before - self.adoptions.len();
            for _ in 0..removed {
                self.report.adoptions.drop("low_item_adopters");
            }
            self.report.adoptions.kept -= removed;
            let before = self.items.len();
            self.items.retain(|(id, _)| !low.contains(id));
            let removed = before - self.items.len();
            for _ in 0..removed {
                self.report.items.drop("low_item_adopters");
            }
            self.report.items.kept -= removed;
        }
        if self.adoptions.is_empty() {
            return Err(Error::EmptyDataset("no adoption events left after filtering".into()));
        }

        let users: BTreeSet<&str> = self
            .edges
            .iter()
            .flat_map(|(a, b)| [a.as_str(), b.as_str()])
            .chain(self.adoptions.iter().map(|a| a.user.as_str()))
            .collect();
        let user_ids: Vec<String> = users.into_iter().map(str::to_string).collect();
        let user_index: HashMap<&str, UserId> = user_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), UserId(i as u32)))
            .collect();

        self.items.sort_by(|a, b| a.0.cmp(&b.0));
        let item_ids: Vec<String> = self.items.iter().map(|(id, _)| id.clone()).collect();
        let item_index: HashMap<&str, ItemId> = item_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), ItemId(i as u32)))
            .collect();

        let tokenized: Vec<Vec<String>> = self.items.iter().map(|(_, text)| tokenize(text)).collect();
        let vocab = Vocabulary::build(tokenized.iter().map(|t| t.as_slice()), self.options.min_count);
        let item_tokens: Vec<Vec<u32>> = tokenized.iter().map(|t| vocab.encode(t)).collect();

        let edges = self
            .edges
            .iter()
            .map(|(a, b)| FollowEdge {
                follower: user_index[a.as_str()],
                friend: user_index[b.as_str()],
            })
            .collect();
        let adoptions = self
            .adoptions
            .iter()
            .map(|a| AdoptionEvent {
                user: user_index[a.user.as_str()],
                item: item_index[a.item.as_str()],
                time: a.time,
                is_original: a.is_original,
            })
            .collect();

        let corpus = Corpus::from_parts(CorpusParts {
            user_ids,
            item_ids,
            edges,
            adoptions,
            vocab,
            item_tokens,
            window_days,
        })?;
        let mut report = self.report;
        report.num_users = corpus.num_users();
        report.num_items = corpus.num_items();
        report.num_edges = corpus.edges().len();
        report.num_adoptions = corpus.adoptions().len();
        report.vocab_size = corpus.vocab_size();
        report.empty_text_items = corpus.all_item_tokens().iter().filter(|t| t.is_empty()).count();
        report.window_days = window_days;
        Ok((corpus, report))
    }
}

fn open_lines(path: &Path) -> Result<std::io::Lines<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines())
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads the three dataset files. Items are read first so that adoptions
/// can be checked against them.
pub fn ingest(paths: &DatasetPaths, options: IngestOptions) -> Result<(Corpus, IngestReport)> {
    let mut builder = CorpusBuilder::new(options);

    for (n, line) in open_lines(&paths.items)?.enumerate() {
        let line = line.map_err(|e| Error::io(&paths.items, e))?;
        if line.trim().is_empty() {
            CorpusBuilder::count_blank(&mut builder.report.items);
            continue;
        }
        let rec: ItemLine =
            serde_json::from_str(&line).map_err(|e| parse_error(&paths.items, n + 1, e.to_string()))?;
        builder.add_item(&rec.item, &rec.text);
    }

    for (n, line) in open_lines(&paths.edges)?.enumerate() {
        let line = line.map_err(|e| Error::io(&paths.edges, e))?;
        if line.trim().is_empty() {
            CorpusBuilder::count_blank(&mut builder.report.edges);
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) if !a.trim().is_empty() && !b.trim().is_empty() => {
                builder.add_edge(a.trim(), b.trim())
            }
            _ => {
                return Err(parse_error(
                    &paths.edges,
                    n + 1,
                    "expected `follower<TAB>friend`",
                ))
            }
        }
    }

    for (n, line) in open_lines(&paths.adoptions)?.enumerate() {
        let line = line.map_err(|e| Error::io(&paths.adoptions, e))?;
        if line.trim().is_empty() {
            CorpusBuilder::count_blank(&mut builder.report.adoptions);
            continue;
        }
        let rec: AdoptionLine = serde_json::from_str(&line)
            .map_err(|e| parse_error(&paths.adoptions, n + 1, e.to_string()))?;
        builder.add_adoption(&rec.user, &rec.item, rec.t, rec.orig)?;
    }

    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, edges: &str, adoptions: &str, items: &str) -> DatasetPaths {
        fs::write(dir.join(EDGES_FILE), edges).unwrap();
        fs::write(dir.join(ADOPTIONS_FILE), adoptions).unwrap();
        fs::write(dir.join(ITEMS_FILE), items).unwrap();
        DatasetPaths::in_dir(dir)
    }

    const ITEMS: &str = r#"{"item":"i1","text":"yoga class"}
{"item":"i2","text":"cat photo"}
{"item":"i3","text":"dog"}
{"item":"i4","text":""}
"#;

    #[test]
    fn counts_users_and_items() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write(
            dir.path(),
            "a\tb\nb\tc\n",
            r#"{"user":"a","item":"i1","t":0,"orig":true}
{"user":"b","item":"i2","t":86400,"orig":true}
{"user":"c","item":"i3","t":100,"orig":false}
{"user":"c","item":"i4","t":200,"orig":true}
"#,
            ITEMS,
        );
        let (c, report) = ingest(&paths, IngestOptions::default()).unwrap();
        assert_eq!(c.num_users(), 3);
        assert_eq!(c.num_items(), 4);
        assert_eq!(report.num_edges, 2);
        assert_eq!(report.num_adoptions, 4);
        assert!((c.window_days() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_adoptions_are_collapsed_and_reported() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write(
            dir.path(),
            "a\tb\na\tb\nb\tb\n",
            r#"{"user":"a","item":"i1","t":0,"orig":true}
{"user":"a","item":"i1","t":5,"orig":true}

{"user":"b","item":"i2","t":10,"orig":false}
"#,
            ITEMS,
        );
        let (c, report) = ingest(&paths, IngestOptions::default()).unwrap();
        assert_eq!(c.adoptions().len(), 2);
        assert_eq!(report.adoptions.dropped["duplicate"], 1);
        assert_eq!(report.adoptions.dropped["blank"], 1);
        assert_eq!(report.edges.dropped["duplicate"], 1);
        assert_eq!(report.edges.dropped["self_loop"], 1);
        for r in [&report.edges, &report.adoptions, &report.items] {
            assert_eq!(r.kept + r.dropped_total(), r.lines);
        }
    }

    #[test]
    fn unknown_item_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write(
            dir.path(),
            "a\tb\n",
            r#"{"user":"a","item":"ghost","t":0,"orig":true}"#,
            ITEMS,
        );
        let err = ingest(&paths, IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write(
            dir.path(),
            "a\tb\n",
            "{\"user\":\"a\",\"item\":\"i1\",\"t\":0,\"orig\":true}\n{not json}\n",
            ITEMS,
        );
        match ingest(&paths, IngestOptions::default()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let paths = write(dir.path(), "a b\n", "", ITEMS);
        assert!(matches!(
            ingest(&paths, IngestOptions::default()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write(dir.path(), "", "", "");
        assert!(matches!(
            ingest(&paths, IngestOptions::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let paths = DatasetPaths::in_dir(dir.path());
        let err = ingest(&paths, IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains(ITEMS_FILE));
    }

    #[test]
    fn window_and_item_filters() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write(
            dir.path(),
            "a\tb\n",
            r#"{"user":"a","item":"i1","t":0,"orig":true}
{"user":"b","item":"i1","t":10,"orig":false}
{"user":"b","item":"i2","t":172800,"orig":true}
"#,
            ITEMS,
        );
        let opts = IngestOptions {
            window_days: Some(1.0),
            ..Default::default()
        };
        let (c, report) = ingest(&paths, opts).unwrap();
        assert_eq!(c.adoptions().len(), 2);
        assert_eq!(report.adoptions.dropped["outside_window"], 1);
        assert_eq!(report.adoptions.kept + report.adoptions.dropped_total(), 3);

        let opts = IngestOptions {
            min_item_adopters: 2,
            ..Default::default()
        };
        let (c, report) = ingest(&paths, opts).unwrap();
        assert_eq!(c.num_items(), 1);
        assert_eq!(c.adoptions().len(), 2);
        assert_eq!(report.items.dropped["low_item_adopters"], 3);
    }
}
