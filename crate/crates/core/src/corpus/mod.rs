//! The social-stream dataset: users, follow edges, items with text, and
//! timestamped adoption events.
//!
//! External ids are strings. At load time users and items are sorted by
//! external id and assigned dense indices, so every parameter table downstream
//! can be indexed by position.

mod ingest;
pub mod text;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use ingest::{
    ingest, CorpusBuilder, DatasetPaths, FileReport, IngestOptions, IngestReport, ADOPTIONS_FILE, EDGES_FILE, ITEMS_FILE,
};
pub use text::{tokenize, Vocabulary};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u#{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i#{}", self.0)
    }
}

/// `follower` receives `friend`'s posts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FollowEdge {
    pub follower: UserId,
    pub friend: UserId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdoptionEvent {
    pub user: UserId,
    pub item: ItemId,
    /// Seconds since the epoch.
    pub time: i64,
    /// Authored post rather than a repost of a friend's item.
    pub is_original: bool,
}

/// Immutable, indexed dataset.
#[derive(Debug, Clone)]
pub struct Corpus {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, UserId>,
    item_index: HashMap<String, ItemId>,
    edges: Vec<FollowEdge>,
    friends: Vec<Vec<UserId>>,
    followers: Vec<Vec<UserId>>,
    adoptions: Vec<AdoptionEvent>,
    by_user: Vec<Vec<usize>>,
    by_item: Vec<Vec<usize>>,
    vocab: Vocabulary,
    item_tokens: Vec<Vec<u32>>,
    window_days: f64,
}

/// Flat, index-free form used for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusParts {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub edges: Vec<FollowEdge>,
    pub adoptions: Vec<AdoptionEvent>,
    pub vocab: Vocabulary,
    pub item_tokens: Vec<Vec<u32>>,
    pub window_days: f64,
}

pub const CORPUS_MAGIC: &str = "VISTOPIC-CORPUS";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    magic: String,
    version: u32,
    corpus: CorpusParts,
}

impl Corpus {
    /// Builds the indexes, validating every cross reference.
    pub fn from_parts(parts: CorpusParts) -> Result<Self> {
        let CorpusParts {
            user_ids,
            item_ids,
            mut edges,
            mut adoptions,
            mut vocab,
            item_tokens,
            window_days,
        } = parts;
        vocab.rebuild_index();
        let n = user_ids.len();
        let d = item_ids.len();
        if item_tokens.len() != d {
            return Err(Error::Format(format!(
                "{} token lists for {} items",
                item_tokens.len(),
                d
            )));
        }
        if !(window_days > 0.0 && window_days.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "observation window must be positive, got {window_days}"
            )));
        }
        let m = vocab.len() as u32;
        if let Some(bad) = item_tokens.iter().flatten().find(|&&w| w >= m) {
            return Err(Error::Format(format!("token index {bad} outside vocabulary of {m}")));
        }
        let user_index: HashMap<String, UserId> = user_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), UserId(i as u32)))
            .collect();
        let item_index: HashMap<String, ItemId> = item_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), ItemId(i as u32)))
            .collect();
        if user_index.len() != n || item_index.len() != d {
            return Err(Error::Format("duplicate external id".into()));
        }

        edges.sort();
        edges.dedup();
        let mut friends = vec![Vec::new(); n];
        let mut followers = vec![Vec::new(); n];
        for e in &edges {
            if e.follower.index() >= n || e.friend.index() >= n {
                return Err(Error::UnknownId {
                    kind: "user",
                    id: format!("{}", e.follower.max(e.friend)),
                });
            }
            if e.follower == e.friend {
                return Err(Error::Format(format!("self-loop on {}", e.follower)));
            }
            friends[e.follower.index()].push(e.friend);
            followers[e.friend.index()].push(e.follower);
        }
        for list in followers.iter_mut() {
            list.sort();
        }

        adoptions.sort_by_key(|a| (a.user, a.item));
        if adoptions
            .windows(2)
            .any(|w| w[0].user == w[1].user && w[0].item == w[1].item)
        {
            return Err(Error::Format("duplicate (user, item) adoption".into()));
        }
        let mut by_user = vec![Vec::new(); n];
        let mut by_item = vec![Vec::new(); d];
        for (idx, a) in adoptions.iter().enumerate() {
            if a.user.index() >= n {
                return Err(Error::UnknownId {
                    kind: "user",
                    id: a.user.to_string(),
                });
            }
            if a.item.index() >= d {
                return Err(Error::UnknownId {
                    kind: "item",
                    id: a.item.to_string(),
                });
            }
            by_user[a.user.index()].push(idx);
            by_item[a.item.index()].push(idx);
        }

        Ok(Corpus {
            user_ids,
            item_ids,
            user_index,
            item_index,
            edges,
            friends,
            followers,
            adoptions,
            by_user,
            by_item,
            vocab,
            item_tokens,
            window_days,
        })
    }

    pub fn to_parts(&self) -> CorpusParts {
        CorpusParts {
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            edges: self.edges.clone(),
            adoptions: self.adoptions.clone(),
            vocab: self.vocab.clone(),
            item_tokens: self.item_tokens.clone(),
            window_days: self.window_days,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CorpusFile {
            magic: CORPUS_MAGIC.to_string(),
            version: CORPUS_VERSION,
            corpus: self.to_parts(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CorpusFile = serde_json::from_str(s)?;
        if file.magic != CORPUS_MAGIC {
            return Err(Error::Format(format!("not a corpus bundle (magic `{}`)", file.magic)));
        }
        if file.version != CORPUS_VERSION {
            return Err(Error::Format(format!(
                "unsupported corpus bundle version {}",
                file.version
            )));
        }
        Corpus::from_parts(file.corpus)
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Observation window Δt in days.
    pub fn window_days(&self) -> f64 {
        self.window_days
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        (0..self.num_users() as u32).map(UserId)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        (0..self.num_items() as u32).map(ItemId)
    }

    pub fn user_external(&self, user: UserId) -> &str {
        &self.user_ids[user.index()]
    }

    pub fn item_external(&self, item: ItemId) -> &str {
        &self.item_ids[item.index()]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn lookup_user(&self, external: &str) -> Result<UserId> {
        self.user_index.get(external).copied().ok_or_else(|| Error::UnknownId {
            kind: "user",
            id: external.to_string(),
        })
    }

    pub fn lookup_item(&self, external: &str) -> Result<ItemId> {
        self.item_index.get(external).copied().ok_or_else(|| Error::UnknownId {
            kind: "item",
            id: external.to_string(),
        })
    }

    pub fn edges(&self) -> &[FollowEdge] {
        &self.edges
    }

    pub fn adoptions(&self) -> &[AdoptionEvent] {
        &self.adoptions
    }

    pub fn item_tokens(&self, item: ItemId) -> &[u32] {
        &self.item_tokens[item.index()]
    }

    pub fn all_item_tokens(&self) -> &[Vec<u32>] {
        &self.item_tokens
    }

    fn check_user(&self, user: UserId) -> Result<()> {
        if user.index() < self.num_users() {
            Ok(())
        } else {
            Err(Error::UnknownId {
                kind: "user",
                id: user.to_string(),
            })
        }
    }

    fn check_item(&self, item: ItemId) -> Result<()> {
        if item.index() < self.num_items() {
            Ok(())
        } else {
            Err(Error::UnknownId {
                kind: "item",
                id: item.to_string(),
            })
        }
    }

    /// Users `user` follows, sorted.
    pub fn friends(&self, user: UserId) -> &[UserId] {
        &self.friends[user.index()]
    }

    pub fn followers(&self, user: UserId) -> &[UserId] {
        &self.followers[user.index()]
    }

    /// Adoption events of `user`, sorted by item.
    pub fn user_events(&self, user: UserId) -> impl Iterator<Item = &AdoptionEvent> + '_ {
        self.by_user[user.index()].iter().map(move |&i| &self.adoptions[i])
    }

    pub fn item_events(&self, item: ItemId) -> impl Iterator<Item = &AdoptionEvent> + '_ {
        self.by_item[item.index()].iter().map(move |&i| &self.adoptions[i])
    }

    pub fn num_adoptions(&self, user: UserId) -> usize {
        self.by_user[user.index()].len()
    }

    pub fn num_adopters(&self, item: ItemId) -> usize {
        self.by_item[item.index()].len()
    }

    /// Items adopted (posted or reposted) by `user`, ascending.
    pub fn adopted_items(&self, user: UserId) -> Vec<ItemId> {
        self.user_events(user).map(|a| a.item).collect()
    }

    pub fn friends_of(&self, user: UserId) -> Result<BTreeSet<UserId>> {
        self.check_user(user)?;
        Ok(self.friends(user).iter().copied().collect())
    }

    pub fn adopters_of(&self, item: ItemId) -> Result<BTreeSet<UserId>> {
        self.check_item(item)?;
        Ok(self.item_events(item).map(|a| a.user).collect())
    }

    /// Union of the items adopted or authored by `user`'s friends.
    pub fn stream_of(&self, user: UserId) -> Result<BTreeSet<ItemId>> {
        self.check_user(user)?;
        Ok(self
            .friends(user)
            .iter()
            .flat_map(|&f| self.user_events(f).map(|a| a.item))
            .collect())
    }
}
