//! User-item interaction tables with dense index maps.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Deduplicated (user, item) pairs over dense indices, with maps back to the
/// raw string ids. Indices are assigned in first-appearance order.
#[derive(Clone, Debug)]
pub struct InteractionTable {
    pairs: Vec<(usize, usize)>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl InteractionTable {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            user_index: HashMap::new(),
            item_index: HashMap::new(),
        }
    }

    /// Build from raw id pairs: indices assigned in first-appearance order,
    /// duplicate pairs collapsed silently (first occurrence kept).
    pub fn from_raw_pairs<I, S>(raw: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut table = Self::empty();
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        for (u, i) in raw {
            let u = table.intern_user(u.into());
            let i = table.intern_item(i.into());
            if seen.insert((u, i)) {
                table.pairs.push((u, i));
            }
        }
        table
    }

    /// Build over an explicit indexing (e.g. map files from a prepared
    /// directory) instead of first-appearance order.
    pub fn from_indexed(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        pairs: Vec<(usize, usize)>,
    ) -> Self {
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(idx, id)| (id.clone(), idx))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(idx, id)| (id.clone(), idx))
            .collect();
        Self {
            pairs,
            user_ids,
            item_ids,
            user_index,
            item_index,
        }
    }

    /// Sibling table over the same id maps but a subset of pairs. Used by
    /// dataset splits so that train/val/test share one indexing.
    pub fn with_pairs(&self, pairs: Vec<(usize, usize)>) -> Self {
        Self {
            pairs,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            user_index: self.user_index.clone(),
            item_index: self.item_index.clone(),
        }
    }

    fn intern_user(&mut self, id: String) -> usize {
        match self.user_index.get(&id) {
            Some(&idx) => idx,
            None => {
                let idx = self.user_ids.len();
                self.user_ids.push(id.clone());
                self.user_index.insert(id, idx);
                idx
            }
        }
    }

    fn intern_item(&mut self, id: String) -> usize {
        match self.item_index.get(&id) {
            Some(&idx) => idx,
            None => {
                let idx = self.item_ids.len();
                self.item_ids.push(id.clone());
                self.item_index.insert(id, idx);
                idx
            }
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn user_id(&self, idx: usize) -> &str {
        &self.user_ids[idx]
    }

    pub fn item_id(&self, idx: usize) -> &str {
        &self.item_ids[idx]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.user_index.get(raw).copied()
    }

    pub fn item_index(&self, raw: &str) -> Option<usize> {
        self.item_index.get(raw).copied()
    }

    /// Items of each user, in pair order.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut by_user = vec![Vec::new(); self.n_users()];
        for &(u, i) in &self.pairs {
            by_user[u].push(i);
        }
        by_user
    }

    /// Users of each item, in pair order.
    pub fn users_by_item(&self) -> Vec<Vec<usize>> {
        let mut by_item = vec![Vec::new(); self.n_items()];
        for &(u, i) in &self.pairs {
            by_item[i].push(u);
        }
        by_item
    }

    pub fn pair_set(&self) -> HashSet<(usize, usize)> {
        self.pairs.iter().copied().collect()
    }

    /// Raw-id view of the pair set, stable under index relabeling.
    pub fn raw_pair_set(&self) -> HashSet<(String, String)> {
        self.pairs
            .iter()
            .map(|&(u, i)| (self.user_ids[u].clone(), self.item_ids[i].clone()))
            .collect()
    }
}

/// Load a UTF-8 TSV of `user_id \t item_id [\t ignored...]` lines.
///
/// Dense indices follow first appearance; duplicate pairs collapse. A line
/// with fewer than two fields is a parse error naming the 1-based line.
pub fn load_interactions(path: &Path) -> Result<InteractionTable> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut raw = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split('\t');
        let user = fields.next().filter(|s| !s.is_empty());
        let item = fields.next().filter(|s| !s.is_empty());
        match (user, item) {
            (Some(u), Some(i)) => raw.push((u.to_string(), i.to_string())),
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: "expected at least 2 tab-separated fields".into(),
                })
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    Ok(InteractionTable::from_raw_pairs(raw))
}
