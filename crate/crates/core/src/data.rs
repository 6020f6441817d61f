//! Rating matrices, triplet-file ingestion, dataset statistics and
//! per-user leave-one-out fold generation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("no records")]
    NoRecords,
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate (user, item) pair ({user}, {item})")]
    Duplicate { line: usize, user: i64, item: i64 },
    #[error("line {line}: rating must be strictly positive, got {value}")]
    NonPositive { line: usize, value: f64 },
    #[error("matrix dimensions must be positive, got {users}x{items}")]
    EmptyShape { users: usize, items: usize },
    #[error("entry ({user}, {item}) out of range for a {users}x{items} matrix")]
    OutOfRange {
        user: usize,
        item: usize,
        users: usize,
        items: usize,
    },
    #[error("duplicate entry at ({user}, {item})")]
    DuplicateIndex { user: usize, item: usize },
    #[error("entry ({user}, {item}) has non-positive or non-finite value {value}")]
    InvalidValue { user: usize, item: usize, value: f64 },
    #[error("matrix has no observed entries")]
    EmptyMatrix,
    #[error("fold count must be at least 1, got {0}")]
    InvalidFoldCount(usize),
    #[error("unknown triplet format {0:?} (expected tsv-rating or tsv-binary)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One observed cell of the user-item matrix, in internal 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// Sparse set of observed user-item values.
///
/// Entries are kept sorted by `(user, item)` with a row-offset table, so a
/// user's observed items are a contiguous slice. Every stored value is
/// strictly positive; absent cells are unobserved. External ids are kept
/// alongside so results can be reported in the source file's id space.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    num_users: usize,
    num_items: usize,
    entries: Vec<Entry>,
    row_ptr: Vec<usize>,
    user_ids: Vec<i64>,
    item_ids: Vec<i64>,
}

impl RatingMatrix {
    /// Builds a matrix with identity id maps (external id == internal index).
    pub fn new(num_users: usize, num_items: usize, entries: Vec<Entry>) -> Result<Self, DataError> {
        let user_ids = (0..num_users as i64).collect();
        let item_ids = (0..num_items as i64).collect();
        Self::with_ids(entries, user_ids, item_ids)
    }

    pub fn with_ids(
        mut entries: Vec<Entry>,
        user_ids: Vec<i64>,
        item_ids: Vec<i64>,
    ) -> Result<Self, DataError> {
        let (num_users, num_items) = (user_ids.len(), item_ids.len());
        if num_users == 0 || num_items == 0 {
            return Err(DataError::EmptyShape {
                users: num_users,
                items: num_items,
            });
        }
        for e in &entries {
            if e.user >= num_users || e.item >= num_items {
                return Err(DataError::OutOfRange {
                    user: e.user,
                    item: e.item,
                    users: num_users,
                    items: num_items,
                });
            }
            if !(e.value.is_finite() && e.value > 0.0) {
                return Err(DataError::InvalidValue {
                    user: e.user,
                    item: e.item,
                    value: e.value,
                });
            }
        }
        entries.sort_by_key(|e| (e.user, e.item));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].user == w[1].user && w[0].item == w[1].item)
        {
            return Err(DataError::DuplicateIndex {
                user: w[0].user,
                item: w[0].item,
            });
        }
        Ok(Self::from_sorted(num_users, num_items, entries, user_ids, item_ids))
    }

    // `entries` must already be sorted, deduplicated and validated.
    fn from_sorted(
        num_users: usize,
        num_items: usize,
        entries: Vec<Entry>,
        user_ids: Vec<i64>,
        item_ids: Vec<i64>,
    ) -> Self {
        let mut row_ptr = vec![0usize; num_users + 1];
        for e in &entries {
            row_ptr[e.user + 1] += 1;
        }
        for u in 0..num_users {
            row_ptr[u + 1] += row_ptr[u];
        }
        Self {
            num_users,
            num_items,
            entries,
            row_ptr,
            user_ids,
            item_ids,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_users, self.num_items)
    }

    /// Number of observed entries, |Ω|.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Observed entries of one user, sorted by item.
    pub fn user_row(&self, user: usize) -> &[Entry] {
        &self.entries[self.row_ptr[user]..self.row_ptr[user + 1]]
    }

    pub fn get(&self, user: usize, item: usize) -> Option<f64> {
        let row = self.user_row(user);
        row.binary_search_by_key(&item, |e| e.item)
            .ok()
            .map(|k| row[k].value)
    }

    pub fn user_ids(&self) -> &[i64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[i64] {
        &self.item_ids
    }

    /// Dense copy with zeros at unobserved cells, i.e. P_Ω(M).
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_users, self.num_items));
        for e in &self.entries {
            out[[e.user, e.item]] = e.value;
        }
        out
    }

    /// Boolean observation mask for Ω.
    pub fn mask(&self) -> Array2<bool> {
        let mut out = Array2::from_elem((self.num_users, self.num_items), false);
        for e in &self.entries {
            out[[e.user, e.item]] = true;
        }
        out
    }

    /// Same id space and shape, different entry set. Caller guarantees the
    /// entries are a sorted subset of `self.entries`.
    fn subset(&self, entries: Vec<Entry>) -> Self {
        Self::from_sorted(
            self.num_users,
            self.num_items,
            entries,
            self.user_ids.clone(),
            self.item_ids.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TripletFormat {
    /// `user item value [extra...]`
    #[serde(rename = "tsv-rating")]
    Rating,
    /// `user item [extra...]`, every value is 1.
    #[serde(rename = "tsv-binary")]
    Binary,
}

impl FromStr for TripletFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv-rating" | "rating" => Ok(Self::Rating),
            "tsv-binary" | "binary" => Ok(Self::Binary),
            other => Err(DataError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for TripletFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rating => "tsv-rating",
            Self::Binary => "tsv-binary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    Tab,
    Comma,
    /// Tab if the line has one, else comma, else runs of whitespace.
    #[default]
    Auto,
}

impl Delimiter {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Self::Tab => line.split('\t').collect(),
            Self::Comma => line.split(',').collect(),
            Self::Auto if line.contains('\t') => line.split('\t').collect(),
            Self::Auto if line.contains(',') => line.split(',').collect(),
            Self::Auto => line.split_whitespace().collect(),
        }
    }
}

struct RawRecord {
    line: usize,
    user: i64,
    item: i64,
    value: f64,
}

fn parse_record(
    line_no: usize,
    line: &str,
    format: TripletFormat,
    delimiter: Delimiter,
) -> Result<RawRecord, DataError> {
    let malformed = |reason: String| DataError::Malformed {
        line: line_no,
        reason,
    };
    let fields = delimiter.split(line);
    let need = match format {
        TripletFormat::Rating => 3,
        TripletFormat::Binary => 2,
    };
    if fields.len() < need {
        return Err(malformed(format!(
            "expected at least {need} fields, found {}",
            fields.len()
        )));
    }
    let user = fields[0]
        .trim()
        .parse::<i64>()
        .map_err(|e| malformed(format!("user id {:?}: {e}", fields[0])))?;
    let item = fields[1]
        .trim()
        .parse::<i64>()
        .map_err(|e| malformed(format!("item id {:?}: {e}", fields[1])))?;
    let value = match format {
        TripletFormat::Binary => 1.0,
        TripletFormat::Rating => {
            let v = fields[2]
                .trim()
                .parse::<f64>()
                .map_err(|e| malformed(format!("value {:?}: {e}", fields[2])))?;
            if v.is_nan() || v.is_infinite() {
                return Err(malformed(format!("non-finite value {v}")));
            }
            if v <= 0.0 {
                return Err(DataError::NonPositive {
                    line: line_no,
                    value: v,
                });
            }
            v
        }
    };
    Ok(RawRecord {
        line: line_no,
        user,
        item,
        value,
    })
}

/// Reads a triplet file and re-indexes users and items densely.
///
/// Internal indices follow ascending external id, so the result does not
/// depend on record order. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn load_triplets<R: BufRead>(
    source: R,
    format: TripletFormat,
    delimiter: Delimiter,
) -> Result<RatingMatrix, DataError> {
    let mut records = Vec::new();
    for (k, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        records.push(parse_record(k + 1, trimmed, format, delimiter)?);
    }
    if records.is_empty() {
        return Err(DataError::NoRecords);
    }

    records.sort_by_key(|r| (r.user, r.item, r.line));
    if let Some(w) = records
        .windows(2)
        .find(|w| w[0].user == w[1].user && w[0].item == w[1].item)
    {
        return Err(DataError::Duplicate {
            line: w[1].line,
            user: w[1].user,
            item: w[1].item,
        });
    }

    let mut user_ids: Vec<i64> = records.iter().map(|r| r.user).collect();
    user_ids.dedup();
    let mut item_ids: Vec<i64> = records.iter().map(|r| r.item).collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let item_index: HashMap<i64, usize> = item_ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();

    let mut entries = Vec::with_capacity(records.len());
    let mut user = 0usize;
    for r in &records {
        while user_ids[user] != r.user {
            user += 1;
        }
        entries.push(Entry {
            user,
            item: item_index[&r.item],
            value: r.value,
        });
    }
    // Records were sorted by external (user, item), and the index maps are
    // monotone, so entries are already in internal (user, item) order.
    Ok(RatingMatrix::from_sorted(
        user_ids.len(),
        item_ids.len(),
        entries,
        user_ids,
        item_ids,
    ))
}

/// Writes `user_id<d>item_id<d>value` lines in external ids. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_triplets<W: Write>(m: &RatingMatrix, mut out: W, delimiter: char) -> Result<(), DataError> {
    for e in m.entries() {
        writeln!(
            out,
            "{}{delimiter}{}{delimiter}{}",
            m.user_ids[e.user], m.item_ids[e.item], e.value
        )?;
    }
    Ok(())
}

/// Persists the external-id to internal-index mapping as CSV
/// (`axis,external_id,index`).
pub fn write_id_map<W: Write>(m: &RatingMatrix, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis", "external_id", "index"])?;
    for (k, id) in m.user_ids.iter().enumerate() {
        w.write_record(["user", &id.to_string(), &k.to_string()])?;
    }
    for (k, id) in m.item_ids.iter().enumerate() {
        w.write_record(["item", &id.to_string(), &k.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary statistics in the layout of a dataset-description table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetMeta {
    #[serde(rename = "#users")]
    pub users: usize,
    #[serde(rename = "#items")]
    pub items: usize,
    #[serde(rename = "#trns")]
    pub transactions: usize,
    pub rsize: f64,
    pub csize: f64,
    pub density: f64,
    #[serde(rename = "ratings", serialize_with = "serialize_range")]
    pub rating_range: Option<(f64, f64)>,
}

fn serialize_range<S: Serializer>(range: &Option<(f64, f64)>, s: S) -> Result<S::Ok, S::Error> {
    match range {
        Some((lo, hi)) => s.serialize_str(&format!("{lo}-{hi}")),
        None => s.serialize_str("-"),
    }
}

impl DatasetMeta {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("DatasetMeta serializes")
    }

    /// Header plus one data row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(self)?;
        w.flush()?;
        Ok(())
    }
}

/// Counts, average row/column fill and density. `rating_range` is `None`
/// for implicit (all-ones) data.
pub fn dataset_stats(m: &RatingMatrix) -> Result<DatasetMeta, DataError> {
    if m.is_empty() {
        return Err(DataError::EmptyMatrix);
    }
    let trns = m.len();
    let (lo, hi) = m
        .entries()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.value), hi.max(e.value))
        });
    let binary = lo == 1.0 && hi == 1.0;
    Ok(DatasetMeta {
        users: m.num_users(),
        items: m.num_items(),
        transactions: trns,
        rsize: trns as f64 / m.num_users() as f64,
        csize: trns as f64 / m.num_items() as f64,
        density: trns as f64 / (m.num_users() as f64 * m.num_items() as f64),
        rating_range: (!binary).then_some((lo, hi)),
    })
}

/// One train/test partition: a single held-out item per tested user.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub train: RatingMatrix,
    pub test: BTreeMap<usize, usize>,
}

/// Per-user leave-one-out folds.
///
/// Fold `f` draws from its own ChaCha stream `(seed, f)`, so any fold can be
/// regenerated on its own. Users with fewer than two observed entries are
/// never tested and keep their entry in train.
pub fn make_folds(m: &RatingMatrix, k: usize, seed: u64) -> Result<Vec<FoldSplit>, DataError> {
    if k == 0 {
        return Err(DataError::InvalidFoldCount(k));
    }
    Ok((0..k).map(|f| make_fold(m, seed, f as u64)).collect())
}

pub fn make_fold(m: &RatingMatrix, seed: u64, fold: u64) -> FoldSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold);
    let mut train = Vec::with_capacity(m.len());
    let mut test = BTreeMap::new();
    for user in 0..m.num_users() {
        let row = m.user_row(user);
        if row.len() < 2 {
            train.extend_from_slice(row);
            continue;
        }
        let held = rng.random_range(0..row.len());
        test.insert(user, row[held].item);
        train.extend(row.iter().enumerate().filter(|&(k, _)| k != held).map(|(_, e)| *e));
    }
    FoldSplit {
        train: m.subset(train),
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, format: TripletFormat) -> Result<RatingMatrix, DataError> {
        load_triplets(text.as_bytes(), format, Delimiter::Auto)
    }

    #[test]
    fn parses_movielens_line() {
        let m = load("196\t242\t3\t881250949\n", TripletFormat::Rating).unwrap();
        assert_eq!(m.shape(), (1, 1));
        assert_eq!(m.user_ids(), &[196]);
        assert_eq!(m.item_ids(), &[242]);
        assert_eq!(m.entries()[0], Entry { user: 0, item: 0, value: 3.0 });
    }

    #[test]
    fn empty_stream_has_no_records() {
        assert!(matches!(load("", TripletFormat::Rating), Err(DataError::NoRecords)));
        assert!(matches!(load("\n\n", TripletFormat::Binary), Err(DataError::NoRecords)));
    }

    #[test]
    fn duplicate_pair_rejected_with_line() {
        let err = load("1,2,3\n5,5,1\n1,2,4\n", TripletFormat::Rating).unwrap_err();
        match err {
            DataError::Duplicate { line, user, item } => {
                assert_eq!((line, user, item), (3, 1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_nonpositive_report_line() {
        let err = load("1\t2\t3\n1\tx\t3\n", TripletFormat::Rating).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
        let err = load("1\t2\n", TripletFormat::Rating).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }));
        let err = load("1\t2\t0\n", TripletFormat::Rating).unwrap_err();
        assert!(matches!(err, DataError::NonPositive { line: 1, .. }));
        let err = load("1\t2\t-2.5\n", TripletFormat::Rating).unwrap_err();
        assert!(matches!(err, DataError::NonPositive { line: 1, .. }));
    }

    #[test]
    fn binary_format_ignores_extra_columns() {
        let m = load("10 20\n10 30 7\n11 20\n", TripletFormat::Binary).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert!(m.entries().iter().all(|e| e.value == 1.0));
        assert_eq!(m.get(0, 1), Some(1.0));
        assert_eq!(m.get(1, 1), None);
    }

    #[test]
    fn reindexing_is_order_independent() {
        let a = load("5,9,1\n2,7,2\n5,7,3\n", TripletFormat::Rating).unwrap();
        let b = load("5,7,3\n5,9,1\n2,7,2\n", TripletFormat::Rating).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.user_ids(), &[2, 5]);
        assert_eq!(a.get(1, 0), Some(3.0));
    }

    #[test]
    fn stats_small_cases() {
        let one = RatingMatrix::new(1, 1, vec![Entry { user: 0, item: 0, value: 1.0 }]).unwrap();
        let s = dataset_stats(&one).unwrap();
        assert_eq!((s.density, s.rsize, s.csize), (1.0, 1.0, 1.0));
        assert_eq!(s.rating_range, None);

        let sparse = RatingMatrix::new(2, 2, vec![Entry { user: 1, item: 0, value: 4.0 }]).unwrap();
        assert_eq!(dataset_stats(&sparse).unwrap().density, 0.25);

        let empty = RatingMatrix::new(2, 2, vec![]).unwrap();
        assert!(matches!(dataset_stats(&empty), Err(DataError::EmptyMatrix)));
    }

    #[test]
    fn stats_serialize_with_table_columns() {
        let m = load("1\t1\t1\n1\t2\t5\n2\t1\t3\n", TripletFormat::Rating).unwrap();
        let meta = dataset_stats(&m).unwrap();
        let json: serde_json::Value = serde_json::from_str(&meta.to_json()).unwrap();
        assert_eq!(json["#users"], 2);
        assert_eq!(json["#trns"], 3);
        assert_eq!(json["ratings"], "1-5");
        let mut buf = Vec::new();
        meta.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "#users,#items,#trns,rsize,csize,density,ratings");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn folds_hold_out_one_per_eligible_user() {
        let mut entries = Vec::new();
        for item in 0..5 {
            entries.push(Entry { user: 0, item, value: 1.0 + item as f64 });
        }
        entries.push(Entry { user: 1, item: 2, value: 2.0 });
        let m = RatingMatrix::new(2, 5, entries).unwrap();
        let folds = make_folds(&m, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.test.len(), 1);
            assert_eq!(f.train.user_row(0).len(), 4);
            assert_eq!(f.train.user_row(1).len(), 1);
            let held = f.test[&0];
            assert!(m.get(0, held).is_some());
            assert!(f.train.get(0, held).is_none());
        }
        assert_eq!(folds, make_folds(&m, 5, 7).unwrap());
        assert!(matches!(make_folds(&m, 0, 7), Err(DataError::InvalidFoldCount(0))));
    }

    #[test]
    fn constructor_validates() {
        assert!(RatingMatrix::new(0, 3, vec![]).is_err());
        let dup = vec![
            Entry { user: 0, item: 1, value: 1.0 },
            Entry { user: 0, item: 1, value: 2.0 },
        ];
        assert!(matches!(
            RatingMatrix::new(1, 2, dup),
            Err(DataError::DuplicateIndex { user: 0, item: 1 })
        ));
        let bad = vec![Entry { user: 0, item: 0, value: 0.0 }];
        assert!(RatingMatrix::new(1, 1, bad).is_err());
        let oob = vec![Entry { user: 0, item: 3, value: 1.0 }];
        assert!(RatingMatrix::new(1, 2, oob).is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::testutil::arb_matrix;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn folds_partition_the_entries(m in arb_matrix(12, 10), seed in any::<u64>(), k in 1usize..4) {
            for split in make_folds(&m, k, seed).unwrap() {
                prop_assert_eq!(split.train.len() + split.test.len(), m.len());
                for (&user, &item) in &split.test {
                    prop_assert!(m.user_row(user).len() >= 2);
                    prop_assert!(m.get(user, item).is_some());
                    prop_assert!(split.train.get(user, item).is_none());
                }
                for e in split.train.entries() {
                    prop_assert_eq!(m.get(e.user, e.item), Some(e.value));
                }
            }
        }

        #[test]
        fn write_then_load_round_trips(m in arb_matrix(10, 10)) {
            let mut buf = Vec::new();
            write_triplets(&m, &mut buf, '\t').unwrap();
            let back = load_triplets(buf.as_slice(), TripletFormat::Rating, Delimiter::Auto).unwrap();
            let triples = |x: &RatingMatrix| -> Vec<(i64, i64, u64)> {
                x.entries()
                    .iter()
                    .map(|e| (x.user_ids()[e.user], x.item_ids()[e.item], e.value.to_bits()))
                    .collect()
            };
            prop_assert_eq!(triples(&back), triples(&m));
        }

        #[test]
        fn stats_are_consistent(m in arb_matrix(15, 15)) {
            let s = dataset_stats(&m).unwrap();
            prop_assert_eq!(s.transactions, m.len());
            let (users, items) = (s.users as f64, s.items as f64);
            prop_assert!((s.density - s.transactions as f64 / (users * items)).abs() < 1e-15);
            prop_assert!((s.rsize * users - s.csize * items).abs() < 1e-9);
            prop_assert!(s.density > 0.0 && s.density <= 1.0);
        }
    }
}
