//! Iterative k-core filtering of the bipartite interaction graph.

use super::InteractionTable;

pub struct KcoreResult {
    pub table: InteractionTable,
    /// Set when filtering removed everything; callers should warn, not fail.
    pub emptied: bool,
}

/// Maximal k-core: repeatedly drop users and items with degree < k until a
/// fixed point, then re-densify index maps in first-appearance order over the
/// surviving pairs.
pub fn kcore_filter(table: &InteractionTable, k: usize) -> KcoreResult {
    assert!(k >= 1, "k-core requires k >= 1");

    let n_users = table.n_users();
    let n_items = table.n_items();
    let mut user_deg = vec![0usize; n_users];
    let mut item_deg = vec![0usize; n_items];
    for &(u, i) in table.pairs() {
        user_deg[u] += 1;
        item_deg[i] += 1;
    }
    let by_user = table.items_by_user();
    let by_item = table.users_by_item();

    let mut user_gone = vec![false; n_users];
    let mut item_gone = vec![false; n_items];
    let mut queue: Vec<(bool, usize)> = Vec::new();
    for u in 0..n_users {
        if user_deg[u] < k {
            user_gone[u] = true;
            queue.push((true, u));
        }
    }
    for i in 0..n_items {
        if item_deg[i] < k {
            item_gone[i] = true;
            queue.push((false, i));
        }
    }

    while let Some((is_user, idx)) = queue.pop() {
        if is_user {
            for &i in &by_user[idx] {
                if !item_gone[i] {
                    item_deg[i] -= 1;
                    if item_deg[i] < k {
                        item_gone[i] = true;
                        queue.push((false, i));
                    }
                }
            }
        } else {
            for &u in &by_item[idx] {
                if !user_gone[u] {
                    user_deg[u] -= 1;
                    if user_deg[u] < k {
                        user_gone[u] = true;
                        queue.push((true, u));
                    }
                }
            }
        }
    }

    let surviving: Vec<(String, String)> = table
        .pairs()
        .iter()
        .filter(|&&(u, i)| !user_gone[u] && !item_gone[i])
        .map(|&(u, i)| (table.user_id(u).to_string(), table.item_id(i).to_string()))
        .collect();

    let emptied = surviving.is_empty();
    if emptied {
        log::warn!("k-core filter with k={k} removed every interaction");
    }
    KcoreResult {
        table: InteractionTable::from_raw_pairs(surviving),
        emptied,
    }
}
