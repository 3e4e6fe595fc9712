//! Sample pools, labeled sets, budgets and pool ingestion.
//!
//! A pool is an immutable, id-sorted collection of feature vectors. Pools come
//! either from a JSON manifest pointing at a CSV file or from the synthetic
//! two-blob generator.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type ItemId = u64;

/// Binary label: `1` is change, `0` is no-change.
pub type Label = u8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRefs {
    pub before: PathBuf,
    pub after: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub id: ItemId,
    pub features: Vec<f64>,
    pub truth: Option<Label>,
    pub image_refs: Option<ImageRefs>,
}

/// Provenance of a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub name: String,
    pub seed: Option<u64>,
    pub source: String,
}

/// On-disk pool manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub d: usize,
    pub csv: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Pool {
    items: Vec<PoolItem>,
    d: usize,
    provenance: Provenance,
    index: HashMap<ItemId, usize>,
}

impl Pool {
    /// Builds a pool, validating dimensions, finiteness and id uniqueness.
    /// Items are stored in ascending id order. Row numbers in errors are the
    /// 1-based positions in `items`.
    pub fn new(items: Vec<PoolItem>, d: usize, provenance: Provenance) -> Result<Self> {
        if items.len() < 2 {
            return Err(Error::param(format!(
                "a pool needs at least 2 items, got {}",
                items.len()
            )));
        }
        if d == 0 {
            return Err(Error::param("feature dimension must be positive"));
        }
        let mut seen = HashMap::with_capacity(items.len());
        for (row, item) in items.iter().enumerate() {
            let row = row + 1;
            if item.features.len() != d {
                return Err(Error::DimensionMismatch {
                    row,
                    expected: d,
                    found: item.features.len(),
                });
            }
            if item.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row });
            }
            if let Some(t) = item.truth {
                if t > 1 {
                    return Err(Error::Row {
                        row,
                        message: format!("truth must be 0 or 1, got {t}"),
                    });
                }
            }
            if seen.insert(item.id, row).is_some() {
                return Err(Error::DuplicateId { row, id: item.id });
            }
        }
        let mut items = items;
        items.sort_by_key(|it| it.id);
        let index = items.iter().enumerate().map(|(i, it)| (it.id, i)).collect();
        Ok(Self {
            items,
            d,
            provenance,
            index,
        })
    }

    pub fn items(&self) -> &[PoolItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|it| it.id).collect()
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: ItemId) -> Result<&PoolItem> {
        self.index
            .get(&id)
            .map(|&i| &self.items[i])
            .ok_or(Error::UnknownId(id))
    }

    pub fn features(&self, id: ItemId) -> Result<&[f64]> {
        self.get(id).map(|it| it.features.as_slice())
    }

    pub fn position(&self, id: ItemId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn has_truths(&self) -> bool {
        self.items.iter().all(|it| it.truth.is_some())
    }

    /// (negatives, positives) among items carrying a truth.
    pub fn class_counts(&self) -> (usize, usize) {
        self.items
            .iter()
            .filter_map(|it| it.truth)
            .fold(
                (0, 0),
                |(n, p), t| if t == 1 { (n, p + 1) } else { (n + 1, p) },
            )
    }

    /// Truth labels in ascending id order, if every item has one.
    pub fn truths(&self) -> Option<Vec<Label>> {
        self.items.iter().map(|it| it.truth).collect()
    }

    /// Hex SHA-256 over ids, feature bits and truths. Two pools with equal
    /// digests hold the same data regardless of provenance.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.d as u64).to_le_bytes());
        for it in &self.items {
            h.update(it.id.to_le_bytes());
            for v in &it.features {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update([it.truth.map_or(2, |t| t)]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Subset of this pool with the given ids.
    pub fn subset(&self, ids: &[ItemId], name: &str) -> Result<Pool> {
        let items = ids
            .iter()
            .map(|&id| self.get(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        Pool::new(
            items,
            self.d,
            Provenance {
                name: name.to_string(),
                seed: self.provenance.seed,
                source: self.provenance.source.clone(),
            },
        )
    }

    /// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`; returns the manifest path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_name = format!("{stem}.csv");
        let csv_path = dir.join(&csv_name);
        fs::write(&csv_path, self.to_csv_string()).map_err(|e| Error::io(&csv_path, e))?;
        let manifest = ManifestFile {
            name: self.provenance.name.clone(),
            d: self.d,
            csv: PathBuf::from(csv_name),
            images_dir: None,
        };
        let manifest_path = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, body + "\n").map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest_path)
    }

    pub fn to_csv_string(&self) -> String {
        let with_truth = self.items.iter().any(|it| it.truth.is_some());
        let mut out = String::from("id");
        for j in 0..self.d {
            out.push_str(&format!(",f{j}"));
        }
        if with_truth {
            out.push_str(",truth");
        }
        out.push('\n');
        for it in &self.items {
            out.push_str(&it.id.to_string());
            for v in &it.features {
                out.push(',');
                out.push_str(&v.to_string());
            }
            if with_truth {
                out.push(',');
                if let Some(t) = it.truth {
                    out.push_str(&t.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Loads a pool from a JSON manifest. Relative `csv` and `images_dir` paths
/// resolve against the manifest's directory.
pub fn load_pool(manifest_path: &Path) -> Result<Pool> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_pool_from_manifest(&manifest, base)
}

pub fn load_pool_from_manifest(manifest: &ManifestFile, base: &Path) -> Result<Pool> {
    let csv_path = base.join(&manifest.csv);
    let file = fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let images_dir = manifest.images_dir.as_ref().map(|p| base.join(p));
    let provenance = Provenance {
        name: manifest.name.clone(),
        seed: None,
        source: csv_path.display().to_string(),
    };
    parse_pool_csv(file, manifest.d, images_dir.as_deref(), provenance)
}

/// Parses the pool CSV format: header `id,f0..f{d-1}[,truth]`.
/// Data rows are numbered from 1 in error messages.
pub fn parse_pool_csv<R: Read>(
    reader: R,
    d: usize,
    images_dir: Option<&Path>,
    provenance: Provenance,
) -> Result<Pool> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Row {
            row: 0,
            message: format!("unreadable header: {e}"),
        })?
        .clone();
    let has_truth = check_header(&header, d)?;
    let width = 1 + d + usize::from(has_truth);

    let mut items = Vec::new();
    let mut seen: HashMap<ItemId, usize> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        if record.len() != width {
            let found = record.len().saturating_sub(1 + usize::from(has_truth));
            return Err(Error::DimensionMismatch {
                row,
                expected: d,
                found,
            });
        }
        let id: ItemId = record[0].parse().map_err(|_| Error::Row {
            row,
            message: format!("invalid id {:?}", &record[0]),
        })?;
        if seen.insert(id, row).is_some() {
            return Err(Error::DuplicateId { row, id });
        }
        let mut features = Vec::with_capacity(d);
        for j in 0..d {
            let raw = &record[1 + j];
            let v: f64 = raw.parse().map_err(|_| Error::Row {
                row,
                message: format!("invalid feature f{j} {raw:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row });
            }
            features.push(v);
        }
        let truth = if has_truth {
            match &record[1 + d] {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(Error::Row {
                        row,
                        message: format!("truth must be 0, 1 or empty, got {other:?}"),
                    })
                }
            }
        } else {
            None
        };
        let image_refs = images_dir.and_then(|dir| {
            let before = dir.join(format!("{id}_before.png"));
            let after = dir.join(format!("{id}_after.png"));
            (before.is_file() && after.is_file()).then_some(ImageRefs { before, after })
        });
        items.push(PoolItem {
            id,
            features,
            truth,
            image_refs,
        });
    }
    Pool::new(items, d, provenance)
}

fn check_header(header: &csv::StringRecord, d: usize) -> Result<bool> {
    let bad = |message: String| Error::Row { row: 0, message };
    if header.get(0) != Some("id") {
        return Err(bad("header must start with `id`".into()));
    }
    for j in 0..d {
        let want = format!("f{j}");
        if header.get(1 + j) != Some(want.as_str()) {
            return Err(bad(format!(
                "header column {} must be `{want}`, got {:?}",
                1 + j,
                header.get(1 + j)
            )));
        }
    }
    match header.len() - 1 - d.min(header.len() - 1) {
        0 => Ok(false),
        1 if header.get(1 + d) == Some("truth") => Ok(true),
        _ => Err(bad(format!(
            "expected {d} feature columns and an optional `truth` column"
        ))),
    }
}

/// Parameters of the two-blob synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub pos_fraction: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 2200,
            d: 8,
            pos_fraction: 0.0177,
            separation: 5.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn positives(&self) -> usize {
        (self.n as f64 * self.pos_fraction).round() as usize
    }

    pub fn generate(&self) -> Result<Pool> {
        generate_synthetic(
            self.n,
            self.d,
            self.pos_fraction,
            self.separation,
            self.seed,
        )
    }
}

/// Two isotropic unit-variance Gaussian blobs whose means are `separation`
/// apart along the first axis. Exactly `round(n * pos_fraction)` items are
/// positive; ids are `0..n`.
pub fn generate_synthetic(
    n: usize,
    d: usize,
    pos_fraction: f64,
    separation: f64,
    seed: u64,
) -> Result<Pool> {
    if n < 4 {
        return Err(Error::param(format!("n must be at least 4, got {n}")));
    }
    if d == 0 {
        return Err(Error::param("dimension must be positive"));
    }
    if !(pos_fraction > 0.0 && pos_fraction < 1.0) {
        return Err(Error::param(format!(
            "pos_fraction must lie in (0, 1), got {pos_fraction}"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::param(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let positives = (n as f64 * pos_fraction).round() as usize;
    if positives < 2 || positives > n - 1 {
        return Err(Error::param(format!(
            "round(n * pos_fraction) = {positives} must be in [2, n-1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth: Vec<Label> = (0..n).map(|i| u8::from(i < positives)).collect();
    truth.shuffle(&mut rng);

    let items = truth
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut features: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            if t == 1 {
                features[0] += separation;
            }
            PoolItem {
                id: i as ItemId,
                features,
                truth: Some(t),
                image_refs: None,
            }
        })
        .collect();

    Pool::new(
        items,
        d,
        Provenance {
            name: format!("synthetic-n{n}-d{d}-s{seed}"),
            seed: Some(seed),
            source: format!(
                "synthetic(n={n}, d={d}, pos_fraction={pos_fraction}, separation={separation})"
            ),
        },
    )
}

#[derive(Debug, Clone)]
pub struct TrainTestSplit {
    pub train: Pool,
    pub test: Pool,
    /// Set when stratification was requested by the data but impossible.
    pub warning: Option<String>,
}

/// Splits a pool into halves of sizes `ceil(n/2)` and `floor(n/2)`,
/// stratified by truth label when every class present has at least two
/// members.
pub fn split_train_test(pool: &Pool, seed: u64) -> Result<TrainTestSplit> {
    let n = pool.len();
    if n < 4 {
        return Err(Error::param(format!(
            "pool too small to split: {n} items, need at least 4"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = n.div_ceil(2);

    // strata: positives, negatives, unlabeled
    let mut strata: [Vec<ItemId>; 3] = Default::default();
    for it in pool.items() {
        let k = match it.truth {
            Some(1) => 0,
            Some(_) => 1,
            None => 2,
        };
        strata[k].push(it.id);
    }
    let any_truth = !strata[0].is_empty() || !strata[1].is_empty();
    let tiny_class = strata[..2].iter().any(|s| s.len() == 1);

    let mut warning = None;
    let mut train: Vec<ItemId> = Vec::with_capacity(target);
    if any_truth && !tiny_class {
        let mut extra = target - strata.iter().map(|s| s.len() / 2).sum::<usize>();
        for stratum in strata.iter_mut() {
            stratum.shuffle(&mut rng);
            let mut take = stratum.len() / 2;
            if stratum.len() % 2 == 1 && extra > 0 {
                take += 1;
                extra -= 1;
            }
            train.extend_from_slice(&stratum[..take]);
        }
    } else {
        if tiny_class {
            warning = Some(
                "a class has fewer than 2 members; fell back to an unstratified split".to_string(),
            );
        }
        let mut all = pool.ids();
        all.shuffle(&mut rng);
        train.extend_from_slice(&all[..target]);
    }
    train.sort_unstable();
    let in_train: BTreeSet<ItemId> = train.iter().copied().collect();
    let test: Vec<ItemId> = pool
        .ids()
        .into_iter()
        .filter(|id| !in_train.contains(id))
        .collect();
    let name = &pool.provenance().name;
    Ok(TrainTestSplit {
        train: pool.subset(&train, &format!("{name}/train"))?,
        test: pool.subset(&test, &format!("{name}/test"))?,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub id: ItemId,
    pub label: Label,
    pub iteration: usize,
}

/// Oracle-labeled items in acquisition order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LabeledSet {
    entries: Vec<LabeledEntry>,
    #[serde(skip)]
    ids: BTreeSet<ItemId>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LabeledEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.ids.contains(&id)
    }

    pub fn ids(&self) -> &BTreeSet<ItemId> {
        &self.ids
    }

    pub fn insert(&mut self, id: ItemId, label: Label, iteration: usize) -> Result<()> {
        if label > 1 {
            return Err(Error::param(format!("label must be 0 or 1, got {label}")));
        }
        if self.ids.contains(&id) {
            return Err(Error::param(format!("id {id} is already labeled")));
        }
        if let Some(last) = self.entries.last() {
            if iteration < last.iteration {
                return Err(Error::param(format!(
                    "iteration {iteration} precedes last acquisition {}",
                    last.iteration
                )));
            }
        }
        self.ids.insert(id);
        self.entries.push(LabeledEntry {
            id,
            label,
            iteration,
        });
        Ok(())
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.entries.iter().filter(|e| e.label == 1).count();
        pos > 0 && pos < self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    max_labels: usize,
    used: usize,
}

impl Budget {
    pub fn new(max_labels: usize) -> Result<Self> {
        if max_labels == 0 {
            return Err(Error::param("budget must be positive"));
        }
        Ok(Self {
            max_labels,
            used: 0,
        })
    }

    /// `ceil(fraction * train_size)`, at least 1.
    pub fn from_fraction(fraction: f64, train_size: usize) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::param(format!(
                "budget fraction must lie in (0, 1], got {fraction}"
            )));
        }
        // Guard against 0.1163 * 1100 landing a hair above 127.93 etc.
        let raw = fraction * train_size as f64;
        let labels = (raw - 1e-9).ceil().max(1.0) as usize;
        Self::new(labels.min(train_size))
    }

    pub fn max_labels(&self) -> usize {
        self.max_labels
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.max_labels - self.used
    }

    pub fn is_exhausted(&self) -> bool {
        self.used == self.max_labels
    }

    pub fn debit(&mut self, labels: usize) -> Result<()> {
        if labels > self.remaining() {
            return Err(Error::param(format!(
                "debit of {labels} exceeds remaining budget {}",
                self.remaining()
            )));
        }
        self.used += labels;
        Ok(())
    }
}

/// Cumulative labeled fraction of the training half, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingRate {
    pub labels: usize,
    pub train_size: usize,
}

impl SamplingRate {
    pub fn raw(&self) -> f64 {
        100.0 * self.labels as f64 / self.train_size as f64
    }

    /// Two-decimal reporting value, truncated toward zero (16/1100 -> 1.45,
    /// 128/1100 -> 11.63). Integer arithmetic, so no float drift.
    pub fn reported(&self) -> f64 {
        let hundredths = (10_000u128 * self.labels as u128) / self.train_size as u128;
        hundredths as f64 / 100.0
    }

    pub fn to_string_2dp(&self) -> String {
        let hundredths = (10_000u128 * self.labels as u128) / self.train_size as u128;
        format!("{}.{:02}", hundredths / 100, hundredths % 100)
    }
}

pub fn sampling_rate(display_sizes: &[usize], train_size: usize) -> Result<SamplingRate> {
    if train_size == 0 {
        return Err(Error::param("train_size must be positive"));
    }
    Ok(SamplingRate {
        labels: display_sizes.iter().sum(),
        train_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_manifest(dir: &Path, csv: &str, d: usize) -> PathBuf {
        let csv_path = dir.join("p.csv");
        fs::File::create(&csv_path)
            .unwrap()
            .write_all(csv.as_bytes())
            .unwrap();
        let m = dir.join("p.json");
        fs::write(&m, format!(r#"{{"name":"toy","d":{d},"csv":"p.csv"}}"#)).unwrap();
        m
    }

    #[test]
    fn loads_four_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(
            dir.path(),
            "id,f0,f1,truth\n3,0.5,1,1\n1,0,0,0\n2,1e-3,-2,\n0,4,4,0\n",
            2,
        );
        let pool = load_pool(&m).unwrap();
        assert_eq!(pool.len(), 4);
        assert_eq!(pool.dim(), 2);
        assert_eq!(pool.ids(), vec![0, 1, 2, 3]);
        assert_eq!(pool.get(2).unwrap().truth, None);
        assert_eq!(pool.get(3).unwrap().truth, Some(1));
    }

    #[test]
    fn dimension_mismatch_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "id,f0,f1\n0,1,2\n1,1,2,3\n", 2);
        match load_pool(&m) {
            Err(Error::DimensionMismatch {
                row,
                expected,
                found,
            }) => {
                assert_eq!((row, expected, found), (2, 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "id,f0\n7,1\n3,2\n7,3\n", 1);
        match load_pool(&m) {
            Err(Error::DuplicateId { row, id }) => assert_eq!((row, id), (3, 7)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "id,f0\n0,1\n1,NaN\n", 1);
        assert!(matches!(load_pool(&m), Err(Error::NonFinite { row: 2 })));
        assert!(matches!(
            load_pool(&dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn image_refs_resolved_when_present() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("p.csv"), "id,f0\n0,1\n1,2\n").unwrap();
        let img = dir.path().join("img");
        fs::create_dir(&img).unwrap();
        fs::write(img.join("1_before.png"), b"x").unwrap();
        fs::write(img.join("1_after.png"), b"y").unwrap();
        let m = dir.path().join("p.json");
        fs::write(&m, r#"{"name":"t","d":1,"csv":"p.csv","images_dir":"img"}"#).unwrap();
        let pool = load_pool(&m).unwrap();
        assert!(pool.get(0).unwrap().image_refs.is_none());
        let refs = pool.get(1).unwrap().image_refs.clone().unwrap();
        assert!(refs.before.ends_with("img/1_before.png"));
    }

    #[test]
    fn synthetic_counts_match_imbalance() {
        let pool = generate_synthetic(2200, 4, 0.0177, 5.0, 1).unwrap();
        assert_eq!(pool.class_counts(), (2161, 39));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(50, 3, 0.2, 2.0, 9).unwrap();
        let b = generate_synthetic(50, 3, 0.2, 2.0, 9).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let c = generate_synthetic(50, 3, 0.2, 2.0, 10).unwrap();
        assert_ne!(a.to_csv_string(), c.to_csv_string());
    }

    #[test]
    fn synthetic_parameter_errors() {
        assert!(generate_synthetic(3, 2, 0.5, 1.0, 0).is_err());
        assert!(generate_synthetic(100, 2, 0.0, 1.0, 0).is_err());
        assert!(generate_synthetic(100, 2, 1.0, 1.0, 0).is_err());
        assert!(generate_synthetic(100, 2, 0.01, 1.0, 0).is_err());
        assert!(generate_synthetic(100, 2, 0.5, 0.0, 0).is_err());
    }

    #[test]
    fn csv_roundtrip_through_manifest() {
        let pool = generate_synthetic(20, 3, 0.25, 3.0, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = pool.write(dir.path(), "pool").unwrap();
        let back = load_pool(&m).unwrap();
        assert_eq!(back.digest(), pool.digest());
    }

    #[test]
    fn split_sizes() {
        let pool = generate_synthetic(2200, 2, 0.0177, 5.0, 3).unwrap();
        let s = split_train_test(&pool, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1100, 1100));
        let train_pos = s.train.class_counts().1;
        assert!(train_pos == 19 || train_pos == 20, "{train_pos}");
        assert!(s.warning.is_none());

        let five = generate_synthetic(5, 1, 0.4, 1.0, 0).unwrap();
        let s = split_train_test(&five, 2).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 2));
        for id in s.test.ids() {
            assert!(!s.train.contains(id));
        }
    }

    #[test]
    fn split_falls_back_with_warning() {
        let mut items: Vec<PoolItem> = (0..6)
            .map(|i| PoolItem {
                id: i,
                features: vec![i as f64],
                truth: Some(0),
                image_refs: None,
            })
            .collect();
        items[2].truth = Some(1);
        let pool = Pool::new(
            items,
            1,
            Provenance {
                name: "x".into(),
                seed: None,
                source: "test".into(),
            },
        )
        .unwrap();
        let s = split_train_test(&pool, 0).unwrap();
        assert!(s.warning.is_some());
        assert_eq!((s.train.len(), s.test.len()), (3, 3));
        assert!(split_train_test(&pool.subset(&[0, 1, 2], "y").unwrap(), 0).is_err());
    }

    #[test]
    fn sampling_rate_matches_table_rows() {
        let r = sampling_rate(&[8; 16], 1100).unwrap();
        assert_eq!(r.to_string_2dp(), "11.63");
        assert_eq!(r.reported(), 11.63);
        assert_eq!(
            sampling_rate(&[16, 16], 1100).unwrap().to_string_2dp(),
            "2.90"
        );
        assert_eq!(sampling_rate(&[], 1100).unwrap().reported(), 0.0);
        assert!(sampling_rate(&[1], 0).is_err());
    }

    #[test]
    fn budget_never_overshoots() {
        let mut b = Budget::new(10).unwrap();
        b.debit(7).unwrap();
        assert!(b.debit(4).is_err());
        assert_eq!(b.used(), 7);
        b.debit(3).unwrap();
        assert!(b.is_exhausted());
        assert_eq!(
            Budget::from_fraction(0.1163, 1100).unwrap().max_labels(),
            128
        );
        assert!(Budget::new(0).is_err());
    }

    #[test]
    fn labeled_set_rejects_duplicates_and_regressions() {
        let mut s = LabeledSet::new();
        s.insert(4, 1, 0).unwrap();
        assert!(s.insert(4, 0, 1).is_err());
        s.insert(2, 0, 2).unwrap();
        assert!(s.insert(9, 0, 1).is_err());
        assert!(s.insert(9, 3, 2).is_err());
        assert!(s.has_both_classes());
    }

    proptest::proptest! {
        #[test]
        fn sampling_rate_is_additive(
            a in proptest::collection::vec(0usize..100, 0..20),
            b in proptest::collection::vec(0usize..100, 0..20),
            train in 1usize..5000,
        ) {
            let ab: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
            let lhs = sampling_rate(&ab, train).unwrap().raw();
            let rhs = sampling_rate(&a, train).unwrap().raw() + sampling_rate(&b, train).unwrap().raw();
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0));
        }

        #[test]
        fn split_is_deterministic_and_disjoint(n in 4usize..60, seed in 0u64..1000) {
            let pool = generate_synthetic(n, 2, 0.5, 1.0, seed).unwrap();
            let s1 = split_train_test(&pool, seed).unwrap();
            let s2 = split_train_test(&pool, seed).unwrap();
            proptest::prop_assert_eq!(s1.train.ids(), s2.train.ids());
            proptest::prop_assert_eq!(s1.train.len(), n.div_ceil(2));
            proptest::prop_assert_eq!(s1.test.len(), n / 2);
            for id in s1.test.ids() {
                proptest::prop_assert!(!s1.train.contains(id));
            }
        }
    }
}
