//! Foreground-to-background pairing tables, class splits and curation.
//!
//! Table text format, one record per line:
//!
//! ```text
//! # comment
//! variant: standard
//! pig -> church bells, engine idling, rain, siren
//! ```

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::{Error, Result};

pub const BACKGROUNDS_PER_CLASS: usize = 4;
/// Default cap above which a background's reuse is reported.
pub const DEFAULT_OVERUSE_CAP: usize = 12;

const STANDARD_TEXT: &str = include_str!("../assets/standard.pairs");
const HARD_TEXT: &str = include_str!("../assets/hard.pairs");

/// Canonical split members that appear under a different name in the tables.
const ALIASES: &[(&str, &str)] = &[("coughing", "cough"), ("clearing throat", "throat clearing")];

pub const CANONICAL_TEST: &[&str] =
    &["crackling fire", "crow", "chainsaw", "coughing", "sneezing", "blender", "phone", "pig"];
pub const CANONICAL_VAL: &[&str] = &["page turn", "keys drop", "door slam", "clearing throat", "drawer"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    Standard,
    Hard,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Hard => "hard",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(Variant::Standard),
            "hard" => Ok(Variant::Hard),
            _ => Err(Error::Parse { line: 0, message: alloc::format!("unknown variant `{s}`") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingTable {
    variant: Variant,
    rows: Vec<(String, [String; BACKGROUNDS_PER_CLASS])>,
    index: BTreeMap<String, usize>,
}

impl PairingTable {
    /// Builds and validates a table from rows.
    pub fn new(variant: Variant, rows: Vec<(String, Vec<String>)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut index = BTreeMap::new();
        let mut out = Vec::with_capacity(rows.len());
        for (fg, bgs) in rows {
            let fg = fg.trim().to_string();
            if bgs.len() != BACKGROUNDS_PER_CLASS {
                return Err(Error::PairingArity { class: fg, found: bgs.len() });
            }
            let bgs: Vec<String> = bgs.into_iter().map(|b| b.trim().to_string()).collect();
            if fg.is_empty() || bgs.iter().any(String::is_empty) {
                return Err(Error::Parse { line: 0, message: "empty class name".into() });
            }
            for (i, b) in bgs.iter().enumerate() {
                if *b == fg {
                    return Err(Error::SelfPairing(fg));
                }
                if bgs[..i].contains(b) {
                    return Err(Error::DuplicateBackground { class: fg, background: b.clone() });
                }
            }
            if index.insert(fg.clone(), out.len()).is_some() {
                return Err(Error::DuplicateClass(fg));
            }
            let arr: [String; BACKGROUNDS_PER_CLASS] = bgs.try_into().expect("arity checked");
            out.push((fg, arr));
        }
        Ok(PairingTable { variant, rows: out, index })
    }

    /// Parses the text format. A missing `variant:` line means standard.
    pub fn parse(text: &str) -> Result<Self> {
        let mut variant = Variant::Standard;
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("variant:") {
                variant = v.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: alloc::format!("unknown variant `{}`", v.trim()),
                })?;
                continue;
            }
            let (fg, rest) = line
                .split_once("->")
                .or_else(|| line.split_once('→'))
                .ok_or_else(|| Error::Parse { line: line_no, message: "expected `foreground -> bg, bg, bg, bg`".into() })?;
            let bgs: Vec<String> = rest.split(',').map(|s| s.trim().to_string()).collect();
            if fg.trim().is_empty() || bgs.iter().any(String::is_empty) {
                return Err(Error::Parse { line: line_no, message: "empty class name".into() });
            }
            rows.push((fg.trim().to_string(), bgs));
        }
        Self::new(variant, rows)
    }

    pub fn to_text(&self) -> String {
        let mut s = alloc::format!("variant: {}\n", self.variant.as_str());
        for (fg, bgs) in &self.rows {
            s.push_str(fg);
            s.push_str(" -> ");
            s.push_str(&bgs.join(", "));
            s.push('\n');
        }
        s
    }

    /// The bundled standard pairing (38 foreground classes).
    pub fn standard() -> Self {
        Self::parse(STANDARD_TEXT).expect("bundled standard table is valid")
    }

    /// The bundled hard pairing, whose test-split rows share backgrounds.
    pub fn hard() -> Self {
        Self::parse(HARD_TEXT).expect("bundled hard table is valid")
    }

    pub fn bundled(variant: Variant) -> Self {
        match variant {
            Variant::Standard => Self::standard(),
            Variant::Hard => Self::hard(),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(fg, _)| fg.as_str())
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[String; BACKGROUNDS_PER_CLASS])> {
        self.rows.iter().map(|(fg, b)| (fg.as_str(), b))
    }

    pub fn backgrounds(&self, fg: &str) -> Option<&[String; BACKGROUNDS_PER_CLASS]> {
        self.index.get(fg).map(|&i| &self.rows[i].1)
    }

    pub fn contains(&self, fg: &str) -> bool {
        self.index.contains_key(fg)
    }

    /// Maps a class name, or a known alias of one, to the table's spelling.
    pub fn resolve<'a>(&'a self, name: &str) -> Option<&'a str> {
        let name = name.trim();
        if let Some((k, _)) = self.index.get_key_value(name) {
            return Some(k.as_str());
        }
        ALIASES
            .iter()
            .find_map(|&(a, b)| {
                if a == name {
                    Some(b)
                } else if b == name {
                    Some(a)
                } else {
                    None
                }
            })
            .and_then(|other| self.index.get_key_value(other).map(|(k, _)| k.as_str()))
    }

    /// All distinct background classes.
    pub fn background_classes(&self) -> BTreeSet<&str> {
        self.rows.iter().flat_map(|(_, b)| b.iter().map(String::as_str)).collect()
    }

    /// How many foreground classes use each background.
    pub fn background_usage(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for (_, bgs) in &self.rows {
            for b in bgs {
                *m.entry(b.as_str()).or_insert(0) += 1;
            }
        }
        m
    }

    /// Backgrounds used by more than `cap` foregrounds.
    pub fn overused_backgrounds(&self, cap: usize) -> Vec<(String, usize)> {
        self.background_usage()
            .into_iter()
            .filter(|&(_, n)| n > cap)
            .map(|(b, n)| (b.to_string(), n))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
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
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parse { line: 0, message: alloc::format!("unknown split `{s}`") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn get(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_of(&self, class: &str) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test].into_iter().find(|s| self.get(*s).contains(class))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitMode {
    /// The fixed published split (8 test and 5 validation classes).
    Canonical,
    /// A 70/10/20 partition from a seeded shuffle.
    Seeded(u64),
}

pub fn assign_splits(table: &PairingTable, mode: SplitMode) -> Result<SplitAssignment> {
    let n = table.len();
    if n < 3 {
        return Err(Error::CannotSplit(n));
    }
    match mode {
        SplitMode::Canonical => {
            let pick = |names: &[&str]| -> Result<BTreeSet<String>> {
                names
                    .iter()
                    .map(|c| {
                        table.resolve(c).map(String::from).ok_or_else(|| Error::MissingCanonicalClass((*c).into()))
                    })
                    .collect()
            };
            let test = pick(CANONICAL_TEST)?;
            let val = pick(CANONICAL_VAL)?;
            let train =
                table.classes().filter(|c| !test.contains(*c) && !val.contains(*c)).map(String::from).collect();
            Ok(SplitAssignment { train, val, test })
        }
        SplitMode::Seeded(seed) => {
            let mut classes: Vec<&str> = table.classes().collect();
            classes.sort_unstable();
            classes.shuffle(&mut crate::rng::rng_from_seed(seed));
            let n_test = usize::max(1, libm::round(0.2 * n as f64) as usize);
            let n_val = usize::max(1, libm::round(0.1 * n as f64) as usize);
            let to_set = |s: &[&str]| s.iter().map(|c| String::from(*c)).collect::<BTreeSet<_>>();
            Ok(SplitAssignment {
                test: to_set(&classes[..n_test]),
                val: to_set(&classes[n_test..n_test + n_val]),
                train: to_set(&classes[n_test + n_val..]),
            })
        }
    }
}

/// Annotator scores for one candidate mixture, in order: acoustic
/// similarity, background overwhelms, background inaudible, unintended
/// events. 5 is best.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurationRecord {
    pub clip_id: String,
    pub scores: [u8; 4],
    pub kept: bool,
}

/// Keeps a clip unless its mean score is below 4.
pub fn curate(clip_id: &str, scores: [u8; 4]) -> Result<CurationRecord> {
    if let Some(&bad) = scores.iter().find(|s| !(1..=5).contains(*s)) {
        return Err(Error::InvalidScore(bad));
    }
    let total: u32 = scores.iter().map(|&s| u32::from(s)).sum();
    Ok(CurationRecord { clip_id: clip_id.into(), scores, kept: total >= 16 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn bundled_tables_load() {
        let s = PairingTable::standard();
        let h = PairingTable::hard();
        assert_eq!(s.variant(), Variant::Standard);
        assert_eq!(h.variant(), Variant::Hard);
        assert_eq!(s.len(), 38);
        assert_eq!(h.len(), 38);
        assert_eq!(s.background_classes().len(), 29);
        // rain backs 17 foregrounds in the published table.
        assert_eq!(s.overused_backgrounds(DEFAULT_OVERUSE_CAP), vec![("rain".into(), 17)]);
        assert!(s.classes().eq(h.classes()));
    }

    #[test]
    fn pig_rows() {
        let s = PairingTable::standard();
        assert_eq!(s.backgrounds("pig").unwrap(), &["church bells", "engine idling", "rain", "siren"].map(String::from));
        let h = PairingTable::hard();
        assert_eq!(h.backgrounds("pig").unwrap(), &["car horn", "crying baby", "rain", "siren"].map(String::from));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(PairingTable::parse("# nothing\n"), Err(Error::EmptyTable));
        assert!(matches!(
            PairingTable::parse("pig -> a, b, c"),
            Err(Error::PairingArity { found: 3, .. })
        ));
        assert_eq!(
            PairingTable::parse("pig -> a, b, c, d\npig -> a, b, c, e"),
            Err(Error::DuplicateClass("pig".into()))
        );
        assert_eq!(PairingTable::parse("pig -> pig, b, c, d"), Err(Error::SelfPairing("pig".into())));
        assert!(matches!(PairingTable::parse("pig -> a, a, c, d"), Err(Error::DuplicateBackground { .. })));
        assert!(matches!(PairingTable::parse("pig a b c d"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(PairingTable::parse("variant: soft\npig -> a, b, c, d"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(PairingTable::parse("pig -> a, , c, d"), Err(Error::Parse { .. })));
    }

    #[test]
    fn arrow_variants_and_variant_line() {
        let t = PairingTable::parse("variant: hard\npig → car horn, crying baby, rain, siren\n").unwrap();
        assert_eq!(t.variant(), Variant::Hard);
        assert_eq!(t.backgrounds("pig").unwrap()[0], "car horn");
    }

    #[test]
    fn text_round_trip_bundled() {
        for t in [PairingTable::standard(), PairingTable::hard()] {
            assert_eq!(PairingTable::parse(&t.to_text()).unwrap(), t);
        }
    }

    #[test]
    fn canonical_split() {
        let t = PairingTable::standard();
        let s = assign_splits(&t, SplitMode::Canonical).unwrap();
        let want_test: BTreeSet<String> = CANONICAL_TEST.iter().map(|c| t.resolve(c).unwrap().into()).collect();
        assert_eq!(s.test, want_test);
        assert!(s.test.contains("cough"));
        assert_eq!(s.test.len(), 8);
        let want_val: BTreeSet<String> = CANONICAL_VAL.iter().map(|c| t.resolve(c).unwrap().into()).collect();
        assert_eq!(s.val, want_val);
        assert!(s.val.contains("throat clearing"));
        assert_eq!(s.train.len(), 38 - 13);
        assert_eq!(t.resolve("coughing"), Some("cough"));
        assert_eq!(t.resolve("clearing throat"), Some("throat clearing"));
        assert_eq!(t.resolve("unicorn"), None);
    }

    #[test]
    fn canonical_split_needs_classes() {
        let t = PairingTable::parse("a -> w, x, y, z\nb -> w, x, y, z\nc -> w, x, y, z").unwrap();
        assert!(matches!(assign_splits(&t, SplitMode::Canonical), Err(Error::MissingCanonicalClass(_))));
    }

    #[test]
    fn seeded_split_sizes() {
        let text: String = (0..10).map(|i| alloc::format!("c{i} -> w, x, y, z\n")).collect();
        let t = PairingTable::parse(&text).unwrap();
        let s = assign_splits(&t, SplitMode::Seeded(3)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        let two = PairingTable::parse("a -> w, x, y, z\nb -> w, x, y, z").unwrap();
        assert_eq!(assign_splits(&two, SplitMode::Seeded(0)), Err(Error::CannotSplit(2)));
    }

    #[test]
    fn curation_rule() {
        assert!(curate("a", [5, 5, 5, 5]).unwrap().kept);
        assert!(!curate("b", [4, 4, 4, 3]).unwrap().kept);
        assert!(curate("c", [5, 4, 4, 3]).unwrap().kept);
        assert_eq!(curate("d", [0, 4, 4, 4]), Err(Error::InvalidScore(0)));
        assert_eq!(curate("e", [4, 6, 4, 4]), Err(Error::InvalidScore(6)));
    }

    #[test]
    fn overuse_reporting() {
        let text: String = (0..5).map(|i| alloc::format!("c{i} -> w, x, y, z{i}\n")).collect();
        let t = PairingTable::parse(&text).unwrap();
        let over = t.overused_backgrounds(4);
        assert_eq!(over, vec![("w".into(), 5), ("x".into(), 5), ("y".into(), 5)]);
    }

    proptest! {
        #[test]
        fn seeded_splits_partition(seed in any::<u64>(), n in 3usize..60) {
            let text: String = (0..n).map(|i| alloc::format!("c{i} -> w, x, y, z\n")).collect();
            let t = PairingTable::parse(&text).unwrap();
            let s = assign_splits(&t, SplitMode::Seeded(seed)).unwrap();
            prop_assert!(s.train.is_disjoint(&s.val));
            prop_assert!(s.train.is_disjoint(&s.test));
            prop_assert!(s.val.is_disjoint(&s.test));
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
            prop_assert!(!s.val.is_empty() && !s.test.is_empty());
        }

        #[test]
        fn arbitrary_tables_round_trip(names in proptest::collection::btree_set("[a-z]{1,6}( [a-z]{1,5})?", 5..20)) {
            let names: Vec<String> = names.into_iter().collect();
            let rows: Vec<(String, Vec<String>)> = names
                .iter()
                .enumerate()
                .map(|(i, fg)| {
                    let bgs = (1..=4).map(|k| names[(i + k) % names.len()].clone()).collect();
                    (fg.clone(), bgs)
                })
                .collect();
            let t = PairingTable::new(Variant::Hard, rows).unwrap();
            prop_assert_eq!(PairingTable::parse(&t.to_text()).unwrap(), t);
        }
    }
}
