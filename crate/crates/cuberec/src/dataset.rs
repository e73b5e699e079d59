//! Interaction, group, and social data: flat-file ingestion, deterministic
//! splits, and negative-sampled triplet batches.
//!
//! Input is four tab-separated UTF-8 files (`#` lines are comments):
//!
//! ```text
//! user_item.tsv      user_id <TAB> item_id
//! group_members.tsv  group_id <TAB> user_id      (one membership per line)
//! group_item.tsv     group_id <TAB> item_id
//! social.tsv         user_id <TAB> user_id
//! ```
//!
//! Ids are arbitrary strings; they are densely re-indexed to `0..N-1` per
//! entity class in order of first appearance, and the original ids are kept
//! for writing results back out.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = usize;
pub type ItemId = usize;
pub type GroupId = usize;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One group-item interaction with its split tag.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct GroupItemPair {
    pub group: GroupId,
    pub item: ItemId,
    pub split: Split,
}

/// The full dataset after re-indexing. Immutable once loaded; sampling
/// operations take an explicit seeded generator and are otherwise pure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub group_ids: Vec<String>,
    /// Members per group, first-appearance order, no duplicates.
    pub groups: Vec<Vec<UserId>>,
    /// Deduplicated items per user (implicit feedback).
    pub user_items: Vec<BTreeSet<ItemId>>,
    /// Group-item interactions in load order, tagged by split.
    pub group_item: Vec<GroupItemPair>,
    /// All interacted items per group regardless of split.
    pub group_item_sets: Vec<BTreeSet<ItemId>>,
    /// Symmetric social adjacency, no self-loops.
    pub social: Vec<BTreeSet<UserId>>,
    /// Groups each user belongs to, in group-index order.
    pub user_groups: Vec<Vec<GroupId>>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_ids.len()
    }

    pub fn n_user_item(&self) -> usize {
        self.user_items.iter().map(BTreeSet::len).sum()
    }

    pub fn n_social_edges(&self) -> usize {
        self.social.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Items of a group restricted to one split.
    pub fn group_items_in(&self, group: GroupId, split: Split) -> BTreeSet<ItemId> {
        self.group_item
            .iter()
            .filter(|p| p.group == group && p.split == split)
            .map(|p| p.item)
            .collect()
    }

    /// Construct from already-indexed parts; validates every type invariant.
    pub fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        group_ids: Vec<String>,
        groups: Vec<Vec<UserId>>,
        user_items: Vec<BTreeSet<ItemId>>,
        group_item: Vec<GroupItemPair>,
        social: Vec<BTreeSet<UserId>>,
    ) -> Result<Dataset> {
        let n_users = user_ids.len();
        let n_items = item_ids.len();
        let n_groups = group_ids.len();
        if groups.len() != n_groups || user_items.len() != n_users || social.len() != n_users {
            return Err(Error::Dimension("dataset part lengths disagree".into()));
        }
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Validation(format!(
                    "group {} has no members",
                    group_ids[g]
                )));
            }
            let mut seen = BTreeSet::new();
            for &m in members {
                if m >= n_users {
                    return Err(Error::Validation(format!(
                        "group {} references unknown user index {m}",
                        group_ids[g]
                    )));
                }
                if !seen.insert(m) {
                    return Err(Error::Validation(format!(
                        "group {} has duplicate member",
                        group_ids[g]
                    )));
                }
            }
        }
        for (u, items) in user_items.iter().enumerate() {
            if items.iter().any(|&i| i >= n_items) {
                return Err(Error::Validation(format!(
                    "user {} references unknown item",
                    user_ids[u]
                )));
            }
        }
        for p in &group_item {
            if p.group >= n_groups || p.item >= n_items {
                return Err(Error::Validation("group_item references unknown id".into()));
            }
        }
        for (u, neighbors) in social.iter().enumerate() {
            for &v in neighbors {
                if v == u {
                    return Err(Error::Validation(format!(
                        "social self-loop on user {}",
                        user_ids[u]
                    )));
                }
                if v >= n_users || !social[v].contains(&u) {
                    return Err(Error::Validation("social edges not symmetric".into()));
                }
            }
        }

        let mut group_item_sets = vec![BTreeSet::new(); n_groups];
        for p in &group_item {
            group_item_sets[p.group].insert(p.item);
        }
        let mut user_groups = vec![Vec::new(); n_users];
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                user_groups[m].push(g);
            }
        }
        Ok(Dataset {
            user_ids,
            item_ids,
            group_ids,
            groups,
            user_items,
            group_item,
            group_item_sets,
            social,
            user_groups,
        })
    }
}

/// Interner assigning dense indices in order of first appearance.
#[derive(Default)]
struct Index {
    ids: Vec<String>,
    by_name: HashMap<String, usize>,
}

impl Index {
    fn preset(ids: &[String]) -> Index {
        let mut ix = Index::default();
        for id in ids {
            ix.intern(id);
        }
        ix
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.by_name.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.by_name.insert(id.to_string(), i);
        i
    }

    fn get(&self, id: &str) -> Option<usize> {
        self.by_name.get(id).copied()
    }
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String, usize)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                out.push((a.to_string(), b.to_string(), lineno + 1));
            }
            _ => {
                return Err(Error::Parse {
                    file: name,
                    line: lineno + 1,
                    msg: format!("expected two tab-separated fields, got {trimmed:?}"),
                });
            }
        }
    }
    Ok(out)
}

/// Load a dataset from the four flat files. `social_path` may be `None` for
/// data without social ties (the adjacency then has an empty user-user
/// block). All group-item pairs start tagged `train`; call
/// [`split_group_interactions`] to assign splits.
pub fn load_dataset(
    user_item_path: &Path,
    group_member_path: &Path,
    group_item_path: &Path,
    social_path: Option<&Path>,
) -> Result<Dataset> {
    load_dataset_with(
        user_item_path,
        group_member_path,
        group_item_path,
        social_path,
        None,
    )
}

/// [`load_dataset`] with optionally pre-seeded index assignments (used when
/// reloading a prepared directory, so indices survive the round trip).
fn load_dataset_with(
    user_item_path: &Path,
    group_member_path: &Path,
    group_item_path: &Path,
    social_path: Option<&Path>,
    preset: Option<(&[String], &[String], &[String])>,
) -> Result<Dataset> {
    let (mut users, mut items, mut groups_ix) = match preset {
        Some((u, i, g)) => (Index::preset(u), Index::preset(i), Index::preset(g)),
        None => (Index::default(), Index::default(), Index::default()),
    };

    let mut user_item_pairs: Vec<(usize, usize)> = Vec::new();
    for (u, i, _) in read_pairs(user_item_path)? {
        user_item_pairs.push((users.intern(&u), items.intern(&i)));
    }

    let mut social_edges: Vec<(usize, usize)> = Vec::new();
    if let Some(path) = social_path {
        for (a, b, lineno) in read_pairs(path)? {
            if a == b {
                return Err(Error::Parse {
                    file: path.display().to_string(),
                    line: lineno,
                    msg: format!("social self-loop on user {a:?}"),
                });
            }
            social_edges.push((users.intern(&a), users.intern(&b)));
        }
    }

    let mut members: Vec<Vec<usize>> = Vec::new();
    for (g, u, lineno) in read_pairs(group_member_path)? {
        let Some(user) = users.get(&u) else {
            return Err(Error::Parse {
                file: group_member_path.display().to_string(),
                line: lineno,
                msg: format!("group {g:?} references unknown user {u:?}"),
            });
        };
        let gi = groups_ix.intern(&g);
        if gi >= members.len() {
            members.resize(gi + 1, Vec::new());
        }
        if !members[gi].contains(&user) {
            members[gi].push(user);
        }
    }

    let mut group_item = Vec::new();
    let mut seen_pairs = BTreeSet::new();
    for (g, i, lineno) in read_pairs(group_item_path)? {
        let Some(group) = groups_ix.get(&g) else {
            return Err(Error::Parse {
                file: group_item_path.display().to_string(),
                line: lineno,
                msg: format!("interaction references unknown group {g:?}"),
            });
        };
        let item = items.intern(&i);
        if seen_pairs.insert((group, item)) {
            group_item.push(GroupItemPair {
                group,
                item,
                split: Split::Train,
            });
        }
    }

    let n_users = users.ids.len();
    let mut user_items = vec![BTreeSet::new(); n_users];
    for (u, i) in user_item_pairs {
        user_items[u].insert(i);
    }
    let mut social = vec![BTreeSet::new(); n_users];
    for (a, b) in social_edges {
        social[a].insert(b);
        social[b].insert(a);
    }
    members.resize(groups_ix.ids.len(), Vec::new());

    Dataset::from_parts(
        users.ids,
        items.ids,
        groups_ix.ids,
        members,
        user_items,
        group_item,
        social,
    )
}

/// Tag each group-item pair train/val/test by a seeded uniform shuffle.
///
/// Val and test sizes are `round(n * ratio)`; train absorbs the rounding
/// remainder. Deterministic for a fixed seed.
pub fn split_group_interactions(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Dataset> {
    let (r_train, r_val, r_test) = ratios;
    for r in [r_train, r_val, r_test] {
        if r < 0.0 {
            return Err(Error::Validation(format!("negative split ratio {r}")));
        }
    }
    if ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(Error::Validation("split ratios must sum to 1".into()));
    }

    let n = dataset.group_item.len();
    let n_val = ((n as f64 * r_val).round() as usize).min(n);
    let n_test = ((n as f64 * r_test).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut out = dataset.clone();
    for (rank, &pair_idx) in order.iter().enumerate() {
        out.group_item[pair_idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TripletLevel {
    User,
    Group,
}

/// `(anchor, positive, negative)` ranking triples. At user level the anchor
/// is a user index; at group level a group index.
#[derive(Clone, Debug)]
pub struct TripletBatch {
    pub level: TripletLevel,
    pub triples: Vec<(usize, ItemId, ItemId)>,
}

/// Draw `negatives_per_positive` triples for every training positive at the
/// given level. Negatives are uniform over items the anchor never interacted
/// with (any split), rejection-resampled on collision; deterministic per
/// seed.
pub fn sample_triplets(
    dataset: &Dataset,
    level: TripletLevel,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<TripletBatch> {
    if negatives_per_positive == 0 {
        return Err(Error::Validation("negatives_per_positive must be >= 1".into()));
    }
    let n_items = dataset.n_items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();

    let positives: Vec<(usize, ItemId)> = match level {
        TripletLevel::User => (0..dataset.n_users())
            .flat_map(|u| dataset.user_items[u].iter().map(move |&i| (u, i)))
            .collect(),
        TripletLevel::Group => dataset
            .group_item
            .iter()
            .filter(|p| p.split == Split::Train)
            .map(|p| (p.group, p.item))
            .collect(),
    };

    for (anchor, positive) in positives {
        let observed: &BTreeSet<ItemId> = match level {
            TripletLevel::User => &dataset.user_items[anchor],
            TripletLevel::Group => &dataset.group_item_sets[anchor],
        };
        if observed.len() >= n_items {
            let name = match level {
                TripletLevel::User => &dataset.user_ids[anchor],
                TripletLevel::Group => &dataset.group_ids[anchor],
            };
            return Err(Error::Validation(format!(
                "anchor {name} has interacted with every item; no negative exists"
            )));
        }
        for _ in 0..negatives_per_positive {
            let negative = loop {
                let cand = rng.gen_range(0..n_items);
                if !observed.contains(&cand) {
                    break cand;
                }
            };
            triples.push((anchor, positive, negative));
        }
    }
    Ok(TripletBatch { level, triples })
}

/// Table-1 style dataset statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_groups: usize,
    pub n_items: usize,
    pub n_user_item: usize,
    pub n_group_item: usize,
    pub avg_items_per_user: f64,
    pub avg_items_per_group: f64,
    pub avg_groups_per_user: f64,
    pub avg_group_size: f64,
}

impl DatasetStats {
    pub fn of(ds: &Dataset) -> DatasetStats {
        let n_users = ds.n_users();
        let n_groups = ds.n_groups();
        let n_user_item = ds.n_user_item();
        let n_group_item = ds.group_item.len();
        let memberships: usize = ds.groups.iter().map(Vec::len).sum();
        DatasetStats {
            n_users,
            n_groups,
            n_items: ds.n_items(),
            n_user_item,
            n_group_item,
            avg_items_per_user: n_user_item as f64 / n_users.max(1) as f64,
            avg_items_per_group: n_group_item as f64 / n_groups.max(1) as f64,
            avg_groups_per_user: memberships as f64 / n_users.max(1) as f64,
            avg_group_size: memberships as f64 / n_groups.max(1) as f64,
        }
    }

    /// Rows of the statistics table, in print order.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("#users", self.n_users.to_string()),
            ("#groups", self.n_groups.to_string()),
            ("#items", self.n_items.to_string()),
            ("#user-item interactions", self.n_user_item.to_string()),
            ("#group-item interactions", self.n_group_item.to_string()),
            (
                "average #items per user",
                format!("{:.2}", self.avg_items_per_user),
            ),
            (
                "average #items per group",
                format!("{:.2}", self.avg_items_per_group),
            ),
            (
                "average #groups per user",
                format!("{:.2}", self.avg_groups_per_user),
            ),
            ("average group size", format!("{:.2}", self.avg_group_size)),
        ]
    }
}

/// Write a dataset to `dir` in the canonical prepared layout: the four
/// input TSVs re-emitted with original ids in index order, `split.tsv` with
/// one `group<TAB>item<TAB>tag` line per group-item pair, and the id maps
/// (`users.tsv`, `items.tsv`, `groups.tsv`, one original id per line in
/// dense-index order) so reloading assigns identical indices.
pub fn save_prepared(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))
    };

    for (name, ids) in [
        ("users.tsv", &ds.user_ids),
        ("items.tsv", &ds.item_ids),
        ("groups.tsv", &ds.group_ids),
    ] {
        let mut body = String::new();
        for id in ids {
            body.push_str(id);
            body.push('\n');
        }
        write(name, body)?;
    }

    let mut body = String::new();
    for (u, items) in ds.user_items.iter().enumerate() {
        for &i in items {
            body.push_str(&format!("{}\t{}\n", ds.user_ids[u], ds.item_ids[i]));
        }
    }
    write("user_item.tsv", body)?;

    let mut body = String::new();
    for (g, members) in ds.groups.iter().enumerate() {
        for &m in members {
            body.push_str(&format!("{}\t{}\n", ds.group_ids[g], ds.user_ids[m]));
        }
    }
    write("group_members.tsv", body)?;

    let mut body = String::new();
    for p in &ds.group_item {
        body.push_str(&format!(
            "{}\t{}\n",
            ds.group_ids[p.group], ds.item_ids[p.item]
        ));
    }
    write("group_item.tsv", body)?;

    let mut body = String::new();
    for (u, neighbors) in ds.social.iter().enumerate() {
        for &v in neighbors {
            if u < v {
                body.push_str(&format!("{}\t{}\n", ds.user_ids[u], ds.user_ids[v]));
            }
        }
    }
    write("social.tsv", body)?;

    let mut body = String::new();
    for p in &ds.group_item {
        body.push_str(&format!(
            "{}\t{}\t{}\n",
            ds.group_ids[p.group],
            ds.item_ids[p.item],
            p.split.as_str()
        ));
    }
    write("split.tsv", body)?;
    Ok(())
}

/// Load a dataset previously written by [`save_prepared`], including split
/// tags. Round-trips to an identical `Dataset`.
pub fn load_prepared(dir: &Path) -> Result<Dataset> {
    let read_ids = |name: &str| -> Result<Vec<String>> {
        let path = dir.join(name);
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(body.lines().map(str::to_string).collect())
    };
    let user_ids = read_ids("users.tsv")?;
    let item_ids = read_ids("items.tsv")?;
    let group_ids = read_ids("groups.tsv")?;

    let social = dir.join("social.tsv");
    let mut ds = load_dataset_with(
        &dir.join("user_item.tsv"),
        &dir.join("group_members.tsv"),
        &dir.join("group_item.tsv"),
        social.exists().then_some(social.as_path()),
        Some((&user_ids, &item_ids, &group_ids)),
    )?;

    let split_path = dir.join("split.tsv");
    let file = fs::File::open(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let mut tag_of: HashMap<(String, String), Split> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&split_path, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let parsed = (fields.len() == 3)
            .then(|| Split::parse(fields[2]))
            .flatten();
        let Some(split) = parsed else {
            return Err(Error::Parse {
                file: split_path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected group<TAB>item<TAB>train|val|test, got {trimmed:?}"),
            });
        };
        tag_of.insert((fields[0].to_string(), fields[1].to_string()), split);
    }
    for p in &mut ds.group_item {
        let key = (
            ds.group_ids[p.group].clone(),
            ds.item_ids[p.item].clone(),
        );
        let Some(&split) = tag_of.get(&key) else {
            return Err(Error::Validation(format!(
                "split.tsv is missing pair {} / {}",
                key.0, key.1
            )));
        };
        p.split = split;
    }
    // Rebuild derived sets (splits do not affect them, but keep the
    // invariant check in one place).
    Dataset::from_parts(
        ds.user_ids,
        ds.item_ids,
        ds.group_ids,
        ds.groups,
        ds.user_items,
        ds.group_item,
        ds.social,
    )
}
