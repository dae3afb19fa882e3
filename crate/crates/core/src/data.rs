//! Implicit-feedback interaction data: parsing, holdout splitting and
//! pairwise batch sampling.
//!
//! Users and items live in separate contiguous 0-based index spaces. An edge
//! `(u, i)` means user `u` interacted with item `i`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};

pub type Edge = (usize, usize);

/// Retry budget for rejection sampling of negatives before falling back to a scan.
const NEGATIVE_RETRIES: usize = 100;

pub const TRAIN_FILE: &str = "train.txt";
pub const TEST_FILE: &str = "test.txt";
pub const MANIFEST_FILE: &str = "split_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// One `user item` pair per line.
    PairLines,
    /// One `user item item ...` adjacency list per line.
    PerUserAdjacency,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pair-lines" | "pairs" => Ok(InputFormat::PairLines),
            "per-user-adjacency" | "adjacency" => Ok(InputFormat::PerUserAdjacency),
            other => Err(format!(
                "unknown format `{other}` (expected pair-lines or per-user-adjacency)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    train_edges: Vec<Edge>,
    test_edges: Vec<Edge>,
    /// Sorted train items per user.
    user_pos: Vec<Vec<usize>>,
    /// Sorted test items per user.
    user_test: Vec<Vec<usize>>,
}

impl InteractionDataset {
    /// Builds a dataset, validating index ranges, per-split uniqueness and
    /// disjointness of the two splits.
    pub fn new(
        num_users: usize,
        num_items: usize,
        train_edges: Vec<Edge>,
        test_edges: Vec<Edge>,
    ) -> Result<Self> {
        let user_pos = group_by_user(num_users, num_items, &train_edges, "train")?;
        let user_test = group_by_user(num_users, num_items, &test_edges, "test")?;
        for (u, test) in user_test.iter().enumerate() {
            if let Some(&i) = test.iter().find(|i| user_pos[u].binary_search(i).is_ok()) {
                return Err(Error::InvalidDataset(format!(
                    "edge ({u}, {i}) appears in both train and test"
                )));
            }
        }
        Ok(Self {
            num_users,
            num_items,
            train_edges,
            test_edges,
            user_pos,
            user_test,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn train_edges(&self) -> &[Edge] {
        &self.train_edges
    }

    pub fn test_edges(&self) -> &[Edge] {
        &self.test_edges
    }

    /// Sorted train items of user `u`.
    pub fn user_train_items(&self, u: usize) -> &[usize] {
        &self.user_pos[u]
    }

    /// Sorted test items of user `u`.
    pub fn user_test_items(&self, u: usize) -> &[usize] {
        &self.user_test[u]
    }

    pub fn is_train_edge(&self, u: usize, i: usize) -> bool {
        self.user_pos[u].binary_search(&i).is_ok()
    }

    /// Train interaction count per user.
    pub fn user_degrees(&self) -> Vec<usize> {
        self.user_pos.iter().map(Vec::len).collect()
    }

    /// Train interaction count per item.
    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items];
        for &(_, i) in &self.train_edges {
            deg[i] += 1;
        }
        deg
    }

    /// All edges of both splits merged back into the train side.
    pub fn merged(&self) -> Self {
        let mut edges = self.train_edges.clone();
        edges.extend_from_slice(&self.test_edges);
        edges.sort_unstable();
        Self::new(self.num_users, self.num_items, edges, Vec::new())
            .expect("merging disjoint splits keeps the dataset valid")
    }
}

fn group_by_user(
    num_users: usize,
    num_items: usize,
    edges: &[Edge],
    split: &str,
) -> Result<Vec<Vec<usize>>> {
    let mut by_user = vec![Vec::new(); num_users];
    for &(u, i) in edges {
        if u >= num_users || i >= num_items {
            return Err(Error::InvalidDataset(format!(
                "{split} edge ({u}, {i}) outside {num_users} users x {num_items} items"
            )));
        }
        by_user[u].push(i);
    }
    for (u, items) in by_user.iter_mut().enumerate() {
        items.sort_unstable();
        if let Some(w) = items.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidDataset(format!(
                "duplicate {split} edge ({u}, {})",
                w[0]
            )));
        }
    }
    Ok(by_user)
}

/// Result of parsing an interaction file.
#[derive(Debug, Clone)]
pub struct ParsedInteractions {
    pub dataset: InteractionDataset,
    pub duplicates_dropped: usize,
}

/// Reads an interaction file; all edges land in the train split.
///
/// A header comment of the form `# num_users=N num_items=M` fixes the index
/// spaces; otherwise each side spans `0..=max index`. Other lines starting
/// with `#` are ignored. Fields may be separated by spaces, tabs or commas.
pub fn read_interactions(path: &Path, format: InputFormat) -> Result<ParsedInteractions> {
    let display = path.display().to_string();
    let file = fs::File::open(path)?;
    parse_interactions(BufReader::new(file), format, &display)
}

pub fn parse_interactions<R: BufRead>(
    reader: R,
    format: InputFormat,
    origin: &str,
) -> Result<ParsedInteractions> {
    let mut declared: Option<(usize, usize)> = None;
    let mut seen = BTreeSet::new();
    let mut duplicates = 0usize;
    let mut max_user = None::<usize>;
    let mut max_item = None::<usize>;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(sizes) = parse_size_header(comment) {
                declared = Some(sizes);
            }
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parse_index = |field: &str| {
            field.parse::<usize>().map_err(|_| Error::Parse {
                path: origin.to_string(),
                line: lineno,
                message: format!("`{field}` is not a nonnegative integer"),
            })
        };
        let (user, items) = match format {
            InputFormat::PairLines => {
                if fields.len() != 2 {
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line: lineno,
                        message: format!("expected `user item`, found {} fields", fields.len()),
                    });
                }
                (parse_index(fields[0])?, vec![parse_index(fields[1])?])
            }
            InputFormat::PerUserAdjacency => {
                let user = parse_index(fields[0])?;
                let items = fields[1..]
                    .iter()
                    .map(|f| parse_index(f))
                    .collect::<Result<Vec<_>>>()?;
                (user, items)
            }
        };
        if let Some((n, m)) = declared {
            let out_of_range = |side, index, bound| Error::IndexOutOfRange {
                path: origin.to_string(),
                line: lineno,
                side,
                index,
                bound,
            };
            if user >= n {
                return Err(out_of_range(Side::User, user, n));
            }
            if let Some(&i) = items.iter().find(|&&i| i >= m) {
                return Err(out_of_range(Side::Item, i, m));
            }
        }
        max_user = max_user.max(Some(user));
        for i in items {
            max_item = max_item.max(Some(i));
            if !seen.insert((user, i)) {
                duplicates += 1;
            }
        }
    }

    if seen.is_empty() {
        return Err(Error::EmptyFile(origin.to_string()));
    }
    if duplicates > 0 {
        log::warn!("{origin}: dropped {duplicates} duplicate interaction(s)");
    }
    let (num_users, num_items) =
        declared.unwrap_or((max_user.map_or(0, |u| u + 1), max_item.map_or(0, |i| i + 1)));
    let edges: Vec<Edge> = seen.into_iter().collect();
    let dataset = InteractionDataset::new(num_users, num_items, edges, Vec::new())?;
    Ok(ParsedInteractions {
        dataset,
        duplicates_dropped: duplicates,
    })
}

fn parse_size_header(comment: &str) -> Option<(usize, usize)> {
    let mut users = None;
    let mut items = None;
    for token in comment.split_whitespace() {
        if let Some(v) = token.strip_prefix("num_users=") {
            users = v.parse().ok();
        } else if let Some(v) = token.strip_prefix("num_items=") {
            items = v.parse().ok();
        }
    }
    Some((users?, items?))
}

pub fn load_interactions(path: &Path, format: InputFormat) -> Result<InteractionDataset> {
    read_interactions(path, format).map(|p| p.dataset)
}

/// Writes edges as pair-lines with a size header.
pub fn write_pairs(path: &Path, num_users: usize, num_items: usize, edges: &[Edge]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# num_users={num_users} num_items={num_items}")?;
    for &(u, i) in edges {
        writeln!(out, "{u} {i}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reproducibility record written beside every prepared split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub num_users: usize,
    pub num_items: usize,
    pub train_edges: usize,
    pub test_edges: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl SplitManifest {
    pub fn describe(ds: &InteractionDataset, seed: u64, ratio: f64) -> Self {
        Self {
            seed,
            ratio,
            num_users: ds.num_users(),
            num_items: ds.num_items(),
            train_edges: ds.train_edges().len(),
            test_edges: ds.test_edges().len(),
            source: None,
        }
    }
}

/// Per-user random holdout.
///
/// Each user with degree `n >= 2` sends `min(ceil(ratio * n), n - 1)` randomly
/// chosen edges to test; single-edge users keep their edge in train. Any
/// existing test edges are merged back before splitting.
pub fn split_holdout(ds: &InteractionDataset, ratio: f64, seed: u64) -> Result<InteractionDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let merged = ds.merged();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(merged.train_edges.len());
    let mut test = Vec::new();
    for u in 0..merged.num_users {
        let mut items = merged.user_pos[u].clone();
        let deg = items.len();
        let n_test = if deg <= 1 {
            0
        } else {
            ((ratio * deg as f64).ceil() as usize).min(deg - 1)
        };
        items.shuffle(&mut rng);
        let (held, kept) = items.split_at(n_test);
        let mut held = held.to_vec();
        let mut kept = kept.to_vec();
        held.sort_unstable();
        kept.sort_unstable();
        test.extend(held.into_iter().map(|i| (u, i)));
        train.extend(kept.into_iter().map(|i| (u, i)));
    }
    InteractionDataset::new(merged.num_users, merged.num_items, train, test)
}

/// Writes `train.txt`, `test.txt` and the manifest into `dir`.
pub fn save_split(dir: &Path, ds: &InteractionDataset, manifest: &SplitManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_pairs(
        &dir.join(TRAIN_FILE),
        ds.num_users,
        ds.num_items,
        &ds.train_edges,
    )?;
    write_pairs(
        &dir.join(TEST_FILE),
        ds.num_users,
        ds.num_items,
        &ds.test_edges,
    )?;
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

/// Loads a split previously written by [`save_split`].
pub fn load_split(dir: &Path) -> Result<(InteractionDataset, SplitManifest)> {
    let manifest: SplitManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let train = read_interactions(&dir.join(TRAIN_FILE), InputFormat::PairLines)?.dataset;
    let test_path = dir.join(TEST_FILE);
    let test_edges = match read_interactions(&test_path, InputFormat::PairLines) {
        Ok(parsed) => parsed.dataset.train_edges,
        Err(Error::EmptyFile(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    if (train.num_users, train.num_items) != (manifest.num_users, manifest.num_items) {
        return Err(Error::InvalidDataset(format!(
            "{} declares {}x{} but manifest says {}x{}",
            dir.display(),
            train.num_users,
            train.num_items,
            manifest.num_users,
            manifest.num_items
        )));
    }
    let ds = InteractionDataset::new(
        manifest.num_users,
        manifest.num_items,
        train.train_edges,
        test_edges,
    )?;
    Ok((ds, manifest))
}

/// A minibatch of (user, positive item, negative item) triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub triples: Vec<(usize, usize, usize)>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Draws `batch_size` triples: `(u, i)` uniformly over train edges and `j`
/// uniformly over items the user has not interacted with in train.
pub fn sample_batch<R: Rng + ?Sized>(
    ds: &InteractionDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<TrainBatch> {
    if batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    if ds.train_edges.is_empty() {
        return Err(Error::NoTrainEdges);
    }
    let mut triples = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (u, i) = ds.train_edges[rng.random_range(0..ds.train_edges.len())];
        let j = sample_negative(ds, u, rng)?;
        triples.push((u, i, j));
    }
    Ok(TrainBatch { triples })
}

fn sample_negative<R: Rng + ?Sized>(
    ds: &InteractionDataset,
    u: usize,
    rng: &mut R,
) -> Result<usize> {
    let m = ds.num_items;
    let pos = &ds.user_pos[u];
    if pos.len() >= m {
        return Err(Error::NoValidNegative {
            user: u,
            num_items: m,
        });
    }
    for _ in 0..NEGATIVE_RETRIES {
        let j = rng.random_range(0..m);
        if pos.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
    let start = rng.random_range(0..m);
    (0..m)
        .map(|off| (start + off) % m)
        .find(|j| pos.binary_search(j).is_err())
        .ok_or(Error::NoValidNegative {
            user: u,
            num_items: m,
        })
}
