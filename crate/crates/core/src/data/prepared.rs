//! On-disk layout of a prepared dataset directory.
//!
//! ```text
//! out/
//!   train.tsv, val.tsv, test.tsv    raw-id interaction pairs
//!   user_map.tsv, item_map.tsv      raw id -> dense index
//!   split_manifest.json             seed, ratios, counts
//!   features_textual.cmf            optional, aligned to item_map
//!   features_visual.cmf             optional
//! ```
//!
//! The map files pin one indexing for all three splits, so reloading never
//! depends on line order the way first-appearance indexing does.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_features, save_features, DatasetSplit, FeatureMatrix, InteractionTable, Modality};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub kcore: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub features: Vec<Modality>,
}

pub struct PreparedDataset {
    pub split: DatasetSplit,
    pub features: Vec<FeatureMatrix>,
    pub manifest: SplitManifest,
}

const SPLIT_FILES: [(&str, &str); 3] = [
    ("train", "train.tsv"),
    ("val", "val.tsv"),
    ("test", "test.tsv"),
];

pub fn feature_file_name(m: Modality) -> String {
    format!("features_{}.cmf", m.name())
}

fn write_pairs_tsv(path: &Path, table: &InteractionTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &(u, i) in table.pairs() {
        writeln!(w, "{}\t{}", table.user_id(u), table.item_id(i))?;
    }
    w.flush()?;
    Ok(())
}

fn write_map_tsv(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (idx, id) in ids.iter().enumerate() {
        writeln!(w, "{id}\t{idx}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_map_tsv(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries: Vec<(String, usize)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split('\t');
        let (Some(id), Some(idx)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: "expected `raw_id \\t index`".into(),
            });
        };
        let idx: usize = idx.parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: format!("bad index {idx:?}"),
        })?;
        entries.push((id.to_string(), idx));
    }
    entries.sort_by_key(|&(_, idx)| idx);
    for (pos, &(_, idx)) in entries.iter().enumerate() {
        if pos != idx {
            return Err(Error::Data(format!(
                "{}: indices are not dense (missing {pos})",
                path.display()
            )));
        }
    }
    Ok(entries.into_iter().map(|(id, _)| id).collect())
}

fn read_pairs_tsv(path: &Path, base: &InteractionTable) -> Result<Vec<(usize, usize)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split('\t');
        let (Some(u), Some(i)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: "expected at least 2 tab-separated fields".into(),
            });
        };
        let u = base.user_index(u).ok_or_else(|| Error::Data(format!(
            "{}: user {u:?} not in user_map.tsv",
            path.display()
        )))?;
        let i = base.item_index(i).ok_or_else(|| Error::Data(format!(
            "{}: item {i:?} not in item_map.tsv",
            path.display()
        )))?;
        pairs.push((u, i));
    }
    Ok(pairs)
}

/// Write a split plus any re-aligned feature matrices into `dir`.
pub fn write_prepared(
    dir: &Path,
    split: &DatasetSplit,
    features: &[FeatureMatrix],
    kcore: usize,
) -> Result<SplitManifest> {
    std::fs::create_dir_all(dir)?;
    let union = split.train.pairs().len() + split.val.pairs().len() + split.test.pairs().len();
    for (table, (_, file)) in [&split.train, &split.val, &split.test]
        .iter()
        .zip(SPLIT_FILES)
    {
        write_pairs_tsv(&dir.join(file), table)?;
    }
    write_map_tsv(&dir.join("user_map.tsv"), split.train.user_ids())?;
    write_map_tsv(&dir.join("item_map.tsv"), split.train.item_ids())?;
    for f in features {
        if f.rows() != split.train.n_items() {
            return Err(Error::Alignment(format!(
                "{} features have {} rows but the split has {} items",
                f.modality,
                f.rows(),
                split.train.n_items()
            )));
        }
        save_features(&dir.join(feature_file_name(f.modality)), f)?;
    }
    let manifest = SplitManifest {
        seed: split.seed,
        ratios: split.ratios,
        kcore,
        n_users: split.train.n_users(),
        n_items: split.train.n_items(),
        n_interactions: union,
        train_pairs: split.train.pairs().len(),
        val_pairs: split.val.pairs().len(),
        test_pairs: split.test.pairs().len(),
        features: features.iter().map(|f| f.modality).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("split_manifest.json"), json)?;
    Ok(manifest)
}

pub fn load_prepared(dir: &Path) -> Result<PreparedDataset> {
    let manifest: SplitManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("split_manifest.json"))?)?;
    let user_ids = read_map_tsv(&dir.join("user_map.tsv"))?;
    let item_ids = read_map_tsv(&dir.join("item_map.tsv"))?;
    let base = InteractionTable::from_indexed(user_ids, item_ids, Vec::new());

    let mut tables = Vec::with_capacity(3);
    for (_, file) in SPLIT_FILES {
        let pairs = read_pairs_tsv(&dir.join(file), &base)?;
        tables.push(base.with_pairs(pairs));
    }
    let test = tables.pop().unwrap();
    let val = tables.pop().unwrap();
    let train = tables.pop().unwrap();

    let mut features = Vec::new();
    for &m in &manifest.features {
        let path = dir.join(feature_file_name(m));
        features.push(load_features(&path, base.n_items(), m)?);
    }

    Ok(PreparedDataset {
        split: DatasetSplit {
            train,
            val,
            test,
            seed: manifest.seed,
            ratios: manifest.ratios,
        },
        features,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_dataset};

    #[test]
    fn round_trip_preserves_split_and_features() {
        let (table, features) = generate_synthetic(40, 25, 5, &[6, 4], 8, 0.1, 9).unwrap();
        let split = split_dataset(&table, (0.8, 0.1, 0.1), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_prepared(dir.path(), &split, &features, 1).unwrap();
        let loaded = load_prepared(dir.path()).unwrap();
        assert_eq!(loaded.split.train.pairs(), split.train.pairs());
        assert_eq!(loaded.split.val.pairs(), split.val.pairs());
        assert_eq!(loaded.split.test.pairs(), split.test.pairs());
        assert_eq!(loaded.features.len(), 2);
        for (a, b) in loaded.features.iter().zip(&features) {
            assert_eq!(a.modality, b.modality);
            // values pass through f32 on disk
            for (x, y) in a.matrix.as_slice().iter().zip(b.matrix.as_slice()) {
                assert_eq!(*x, (*y as f32) as f64);
            }
        }
        assert_eq!(loaded.manifest.n_interactions, table.pairs().len());
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let (table, _) = generate_synthetic(20, 15, 3, &[], 6, 0.0, 2).unwrap();
        let split = split_dataset(&table, (0.8, 0.1, 0.1), 7).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_prepared(d1.path(), &split, &[], 1).unwrap();
        write_prepared(d2.path(), &split, &[], 1).unwrap();
        for f in ["train.tsv", "val.tsv", "test.tsv", "split_manifest.json"] {
            assert_eq!(
                std::fs::read(d1.path().join(f)).unwrap(),
                std::fs::read(d2.path().join(f)).unwrap(),
                "{f} differs between identical writes"
            );
        }
    }
}
