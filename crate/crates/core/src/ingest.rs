//! MovieLens ingestion, binarization, and descriptive log statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::LoggedDataset;
use crate::error::{Error, Result};

/// One explicit rating as it appears in the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user: u64,
    pub item: u64,
    pub rating: u8,
    pub timestamp: u64,
}

/// Source file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MovieLensFormat {
    /// `u.data`: `user \t item \t rating \t timestamp`
    #[default]
    Ml100k,
    /// `ratings.dat`: `user::item::rating::timestamp`
    Ml1m,
}

impl MovieLensFormat {
    fn split_line(self, line: &str) -> Vec<&str> {
        match self {
            MovieLensFormat::Ml100k => line.split('\t').collect(),
            MovieLensFormat::Ml1m => line.split("::").collect(),
        }
    }
}

impl std::str::FromStr for MovieLensFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "100k" | "ml100k" | "ml-100k" => Ok(Self::Ml100k),
            "1m" | "ml1m" | "ml-1m" => Ok(Self::Ml1m),
            other => Err(Error::config(
                "format",
                format!("unknown MovieLens format `{other}` (expected 100k or 1m)"),
            )),
        }
    }
}

fn parse_line(line: &str, lineno: usize, format: MovieLensFormat) -> Result<RatingRecord> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let fields = format.split_line(line.trim_end_matches('\r'));
    if fields.len() != 4 {
        return Err(err(format!(
            "expected 4 fields for {format:?} format, found {}",
            fields.len()
        )));
    }
    let num = |idx: usize, name: &str| -> Result<u64> {
        fields[idx]
            .trim()
            .parse::<u64>()
            .map_err(|e| err(format!("{name} `{}`: {e}", fields[idx])))
    };
    let user = num(0, "user id")?;
    let item = num(1, "item id")?;
    let rating = num(2, "rating")?;
    let timestamp = num(3, "timestamp")?;
    if !(1..=5).contains(&rating) {
        return Err(err(format!("rating {rating} outside 1..=5")));
    }
    Ok(RatingRecord {
        user,
        item,
        rating: rating as u8,
        timestamp,
    })
}

/// Parses MovieLens ratings from a reader. Blank lines are skipped.
pub fn parse_movielens<R: BufRead>(input: R, format: MovieLensFormat) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, idx + 1, format)?);
    }
    Ok(out)
}

pub fn parse_movielens_100k(path: &Path) -> Result<Vec<RatingRecord>> {
    parse_movielens(BufReader::new(File::open(path)?), MovieLensFormat::Ml100k)
}

pub fn parse_movielens_1m(path: &Path) -> Result<Vec<RatingRecord>> {
    parse_movielens(BufReader::new(File::open(path)?), MovieLensFormat::Ml1m)
}

/// Binary user-item preferences over dense 0-based indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMatrix {
    pub num_users: usize,
    pub num_items: usize,
    /// Sorted positive items per user.
    positives: Vec<Vec<usize>>,
    /// Every observed pair with its binarized label, sorted by (user, item).
    observed: Vec<(usize, usize, bool)>,
}

impl PreferenceMatrix {
    /// Builds a matrix where the given pairs are positive and observed;
    /// duplicates are merged.
    pub fn from_positive_pairs(num_users: usize, num_items: usize, pairs: Vec<(usize, usize)>) -> Self {
        Self::from_observed(
            num_users,
            num_items,
            pairs.into_iter().map(|(u, i)| (u, i, true)).collect(),
        )
    }

    /// Builds from labelled observed pairs. A pair seen more than once is
    /// positive if any occurrence is.
    pub fn from_observed(num_users: usize, num_items: usize, mut observed: Vec<(usize, usize, bool)>) -> Self {
        observed.sort_unstable();
        // Sorting puts `true` after `false` for the same pair, so keep the last.
        let mut merged: Vec<(usize, usize, bool)> = Vec::with_capacity(observed.len());
        for obs in observed {
            match merged.last_mut() {
                Some(last) if last.0 == obs.0 && last.1 == obs.1 => last.2 |= obs.2,
                _ => merged.push(obs),
            }
        }
        let mut positives = vec![Vec::new(); num_users];
        for &(u, i, pos) in &merged {
            if pos {
                positives[u].push(i);
            }
        }
        Self {
            num_users,
            num_items,
            positives,
            observed: merged,
        }
    }

    pub fn is_positive(&self, user: usize, item: usize) -> bool {
        self.positives[user].binary_search(&item).is_ok()
    }

    pub fn positives_of(&self, user: usize) -> &[usize] {
        &self.positives[user]
    }

    pub fn num_positives(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn observed(&self) -> &[(usize, usize, bool)] {
        &self.observed
    }

    /// Positive-interaction count per item.
    pub fn item_popularity(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_items];
        for row in &self.positives {
            for &i in row {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Writes `user,item,label` for every observed pair.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "item", "label"])?;
        for &(u, i, pos) in &self.observed {
            w.write_record([u.to_string(), i.to_string(), (pos as u8).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            user: usize,
            item: usize,
            label: u8,
        }
        let mut rdr = csv::Reader::from_reader(input);
        let mut obs = Vec::new();
        for (idx, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                line: idx + 2,
                msg: e.to_string(),
            })?;
            obs.push((row.user, row.item, row.label == 1));
        }
        let num_users = obs.iter().map(|o| o.0 + 1).max().unwrap_or(0);
        let num_items = obs.iter().map(|o| o.1 + 1).max().unwrap_or(0);
        Ok(Self::from_observed(num_users, num_items, obs))
    }
}

/// Dense-index to raw-id tables produced by [`binarize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdRemap {
    /// `users[dense] = raw`
    pub users: Vec<u64>,
    /// `items[dense] = raw`
    pub items: Vec<u64>,
}

impl IdRemap {
    pub fn write_csv<W: Write>(ids: &[u64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dense", "raw"])?;
        for (dense, raw) in ids.iter().enumerate() {
            w.write_record([dense.to_string(), raw.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub prefs: PreferenceMatrix,
    pub remap: IdRemap,
}

pub const DEFAULT_CLICK_THRESHOLD: u8 = 4;

/// Marks a pair positive iff its highest rating is `>= threshold`. Users and
/// items are remapped to dense indices in ascending raw-id order.
pub fn binarize(records: &[RatingRecord], threshold: u8) -> Binarized {
    let mut user_ix: BTreeMap<u64, usize> = BTreeMap::new();
    let mut item_ix: BTreeMap<u64, usize> = BTreeMap::new();
    for r in records {
        user_ix.entry(r.user).or_insert(0);
        item_ix.entry(r.item).or_insert(0);
    }
    for (dense, v) in user_ix.values_mut().enumerate() {
        *v = dense;
    }
    for (dense, v) in item_ix.values_mut().enumerate() {
        *v = dense;
    }
    let observed = records
        .iter()
        .map(|r| (user_ix[&r.user], item_ix[&r.item], r.rating >= threshold))
        .collect();
    let prefs = PreferenceMatrix::from_observed(user_ix.len(), item_ix.len(), observed);
    Binarized {
        prefs,
        remap: IdRemap {
            users: user_ix.into_keys().collect(),
            items: item_ix.into_keys().collect(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemStat {
    pub item: usize,
    pub exposures: usize,
    pub clicks: usize,
    /// `clicks / exposures`, or `None` for an item that was never exposed.
    pub ctr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptiveStats {
    pub items: Vec<ItemStat>,
    /// Logged events per user.
    pub user_interactions: Vec<usize>,
}

impl DescriptiveStats {
    pub fn from_events(
        num_users: usize,
        num_items: usize,
        events: impl IntoIterator<Item = (usize, usize, bool)>,
    ) -> Self {
        let mut exposures = vec![0usize; num_items];
        let mut clicks = vec![0usize; num_items];
        let mut per_user = vec![0usize; num_users];
        for (u, i, click) in events {
            exposures[i] += 1;
            clicks[i] += click as usize;
            per_user[u] += 1;
        }
        let items = (0..num_items)
            .map(|i| ItemStat {
                item: i,
                exposures: exposures[i],
                clicks: clicks[i],
                ctr: (exposures[i] > 0).then(|| clicks[i] as f64 / exposures[i] as f64),
            })
            .collect();
        Self {
            items,
            user_interactions: per_user,
        }
    }

    pub fn total_exposures(&self) -> usize {
        self.items.iter().map(|s| s.exposures).sum()
    }

    /// `item,exposures,clicks,ctr`; an empty `ctr` field means never exposed.
    pub fn write_item_ctr<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["item", "exposures", "clicks", "ctr"])?;
        for s in &self.items {
            w.write_record([
                s.item.to_string(),
                s.exposures.to_string(),
                s.clicks.to_string(),
                s.ctr.map(crate::formats::fmt_f64).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_item_exposure<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["item", "exposures"])?;
        for s in &self.items {
            w.write_record([s.item.to_string(), s.exposures.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_user_activity<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "interactions"])?;
        for (u, n) in self.user_interactions.iter().enumerate() {
            w.write_record([u.to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `item_ctr.csv`, `item_exposure.csv` and `user_activity.csv`
    /// into `dir`, returning the paths written.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let paths = [
            dir.join("item_ctr.csv"),
            dir.join("item_exposure.csv"),
            dir.join("user_activity.csv"),
        ];
        self.write_item_ctr(File::create(&paths[0])?)?;
        self.write_item_exposure(File::create(&paths[1])?)?;
        self.write_user_activity(File::create(&paths[2])?)?;
        Ok(paths.to_vec())
    }
}

/// Per-item exposure/click counts and per-user activity of a log.
pub fn descriptive_stats(dataset: &LoggedDataset) -> DescriptiveStats {
    DescriptiveStats::from_events(
        dataset.num_users,
        dataset.num_items,
        dataset.records.iter().map(|r| (r.user, r.item, r.clicked())),
    )
}

/// Same statistics for a rating matrix: every rated pair counts as an
/// exposure and every positive as a click.
pub fn preference_stats(prefs: &PreferenceMatrix) -> DescriptiveStats {
    DescriptiveStats::from_events(prefs.num_users, prefs.num_items, prefs.observed().iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LoggedInteraction;
    use proptest::prelude::*;

    fn rec(user: u64, item: u64, rating: u8) -> RatingRecord {
        RatingRecord {
            user,
            item,
            rating,
            timestamp: 0,
        }
    }

    #[test]
    fn parses_first_udata_line() {
        let recs = parse_movielens("196\t242\t3\t881250949\n".as_bytes(), MovieLensFormat::Ml100k).unwrap();
        assert_eq!(
            recs,
            vec![RatingRecord {
                user: 196,
                item: 242,
                rating: 3,
                timestamp: 881250949
            }]
        );
    }

    #[test]
    fn parses_1m_line() {
        let recs = parse_movielens("1::1193::5::978300760\n".as_bytes(), MovieLensFormat::Ml1m).unwrap();
        assert_eq!(recs[0].item, 1193);
        assert_eq!(recs[0].rating, 5);
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_movielens("".as_bytes(), MovieLensFormat::Ml100k).unwrap().is_empty());
    }

    #[test]
    fn rating_out_of_range_names_line() {
        let data = "1\t2\t3\t4\n1\t3\t6\t5\n";
        let err = parse_movielens(data.as_bytes(), MovieLensFormat::Ml100k).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn wrong_delimiter_is_a_parse_error() {
        let err = parse_movielens("196\t242\t3\t881250949\n".as_bytes(), MovieLensFormat::Ml1m).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_ratings_take_max() {
        let b = binarize(&[rec(1, 1, 3), rec(1, 1, 5)], 4);
        assert!(b.prefs.is_positive(0, 0));
        assert_eq!(b.prefs.observed().len(), 1);
    }

    #[test]
    fn all_threes_have_no_positives() {
        let b = binarize(&[rec(1, 1, 3), rec(2, 1, 3), rec(2, 7, 3)], 4);
        assert_eq!(b.prefs.num_positives(), 0);
        assert_eq!(b.prefs.observed().len(), 3);
    }

    #[test]
    fn threshold_one_marks_every_pair() {
        let recs = [rec(1, 1, 1), rec(1, 1, 2), rec(2, 9, 1), rec(5, 9, 4)];
        let b = binarize(&recs, 1);
        assert_eq!(b.prefs.num_positives(), 3);
    }

    #[test]
    fn remap_is_sorted_by_raw_id() {
        let b = binarize(&[rec(50, 9, 5), rec(3, 20, 4), rec(50, 20, 1)], 4);
        assert_eq!(b.remap.users, vec![3, 50]);
        assert_eq!(b.remap.items, vec![9, 20]);
        assert!(b.prefs.is_positive(1, 0));
        assert!(b.prefs.is_positive(0, 1));
        assert!(!b.prefs.is_positive(1, 1));
        assert_eq!(b.prefs.item_popularity(), vec![1, 1]);
    }

    #[test]
    fn item_ctr_and_null_guard() {
        let ds = LoggedDataset::new(
            2,
            3,
            vec![
                LoggedInteraction::new(0, 0, 1, 0.5),
                LoggedInteraction::new(1, 0, 0, 0.5),
                LoggedInteraction::new(1, 1, 1, 0.5),
            ],
        );
        let stats = descriptive_stats(&ds);
        assert_eq!(stats.items[0].ctr, Some(0.5));
        assert_eq!(stats.items[2].ctr, None);
        assert_eq!(stats.user_interactions, vec![1, 2]);
        let mut buf = Vec::new();
        stats.write_item_ctr(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("2,0,0,\n"), "{text}");
    }

    #[test]
    fn toy_exposures_sum_to_5000() {
        let (ds, _) = crate::synthgen::generate_toy(&Default::default()).unwrap();
        assert_eq!(descriptive_stats(&ds).total_exposures(), 5000);
    }

    #[test]
    fn preference_csv_round_trip() {
        let b = binarize(&[rec(1, 1, 5), rec(2, 2, 2), rec(2, 1, 4)], 4);
        let mut buf = Vec::new();
        b.prefs.write_csv(&mut buf).unwrap();
        assert_eq!(PreferenceMatrix::read_csv(buf.as_slice()).unwrap(), b.prefs);
    }

    fn ratings() -> impl Strategy<Value = Vec<RatingRecord>> {
        prop::collection::vec((0u64..40, 0u64..25, 1u8..=5), 1..120)
            .prop_map(|v| v.into_iter().map(|(u, i, r)| rec(u * 7 + 1, i * 3 + 2, r)).collect())
    }

    proptest! {
        #[test]
        fn remap_is_bijective(recs in ratings()) {
            let b = binarize(&recs, 4);
            let mut users = b.remap.users.clone();
            users.dedup();
            prop_assert_eq!(users.len(), b.prefs.num_users);
            let mut items = b.remap.items.clone();
            items.dedup();
            prop_assert_eq!(items.len(), b.prefs.num_items);
            for r in &recs {
                let du = b.remap.users.binary_search(&r.user).unwrap();
                let di = b.remap.items.binary_search(&r.item).unwrap();
                prop_assert_eq!(b.remap.users[du], r.user);
                prop_assert_eq!(b.remap.items[di], r.item);
            }
        }

        #[test]
        fn binarization_is_monotone(recs in ratings()) {
            let counts: Vec<usize> = (1..=6).map(|t| binarize(&recs, t).prefs.num_positives()).collect();
            prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
