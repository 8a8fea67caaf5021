//! N-way K-shot episode sampling under controlled background regimes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;

use crate::catalog::PairingTable;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// Class tuples tried before a constrained mode gives up.
pub const MAX_TUPLE_RETRIES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Mode {
    /// Queries reuse exactly the support backgrounds of their class.
    Iid,
    /// Queries take backgrounds from other classes' pairings, never their
    /// own class's support backgrounds.
    Ood,
    /// OOD where every support background also backs a query of every other
    /// class.
    HardOod,
    /// IID supports, foreground-only queries.
    CleanQuery,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Iid, Mode::Ood, Mode::HardOod, Mode::CleanQuery];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Iid => "iid",
            Mode::Ood => "ood",
            Mode::HardOod => "hard-ood",
            Mode::CleanQuery => "clean-query",
        }
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Mode::Iid),
            "ood" => Ok(Mode::Ood),
            "hard-ood" | "hard_ood" => Ok(Mode::HardOod),
            "clean-query" | "clean_query" => Ok(Mode::CleanQuery),
            _ => Err(Error::InvalidEpisodeSpec("unknown mode")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub mode: Mode,
    pub seed: u64,
    /// OOD only: put one background under every query, so the whole query
    /// batch shares the same shift. It is never a support background of the
    /// episode, and comes from the other classes' pairings whenever one
    /// background qualifies for every class at once.
    #[cfg_attr(feature = "serde", serde(default))]
    pub shared_query_background: bool,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec { n_way: 5, k_shot: 5, n_query: 10, mode: Mode::Iid, seed: 0, shared_query_background: false }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::InvalidEpisodeSpec("n_way must be >= 2"));
        }
        if self.k_shot < 1 {
            return Err(Error::InvalidEpisodeSpec("k_shot must be >= 1"));
        }
        if self.n_query < 1 {
            return Err(Error::InvalidEpisodeSpec("n_query must be >= 1"));
        }
        Ok(())
    }

    /// The same spec with the seed for episode `index` of a batch.
    pub fn for_index(&self, index: u64) -> Self {
        EpisodeSpec { seed: derive_seed(self.seed, index), ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Item {
    pub clip_ref: String,
    pub fg: String,
    /// `None` for a foreground-only clip.
    pub bg: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Episode {
    /// Episode classes; an item's label is its class's index here.
    pub classes: Vec<String>,
    pub support: Vec<Item>,
    pub query: Vec<Item>,
}

impl Episode {
    pub fn label(&self, item: &Item) -> Option<usize> {
        self.classes.iter().position(|c| *c == item.fg)
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|i| self.label(i).expect("support class in episode")).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|i| self.label(i).expect("query class in episode")).collect()
    }

    pub fn n_way(&self) -> usize {
        self.classes.len()
    }
}

/// Clip identifiers indexed by `(foreground, background)`.
///
/// Ordered containers make sampling depend only on identifiers, never on
/// insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClipPool {
    cells: BTreeMap<(String, Option<String>), BTreeSet<String>>,
    all: BTreeSet<String>,
}

impl ClipPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, clip_ref: &str, fg: &str, bg: Option<&str>) -> Result<()> {
        if !self.all.insert(clip_ref.into()) {
            return Err(Error::DuplicateClip(clip_ref.into()));
        }
        self.cells.entry((fg.into(), bg.map(String::from))).or_default().insert(clip_ref.into());
        Ok(())
    }

    pub fn from_items<'a, I: IntoIterator<Item = &'a Item>>(items: I) -> Result<Self> {
        let mut p = Self::new();
        for it in items {
            p.insert(&it.clip_ref, &it.fg, it.bg.as_deref())?;
        }
        Ok(p)
    }

    /// A pool holding `per_cell` clips for every foreground of `table`
    /// crossed with every background of the table, plus `per_cell`
    /// foreground-only clips. Identifiers are `fg/bg/i` and `fg/-/i`.
    pub fn synthetic(table: &PairingTable, per_cell: usize) -> Self {
        let bgs = table.background_classes();
        let mut p = Self::new();
        for fg in table.classes() {
            for i in 0..per_cell {
                p.insert(&alloc::format!("{fg}/-/{i}"), fg, None).expect("unique ids");
                for bg in &bgs {
                    p.insert(&alloc::format!("{fg}/{bg}/{i}"), fg, Some(bg)).expect("unique ids");
                }
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn clips(&self, fg: &str, bg: Option<&str>) -> Option<&BTreeSet<String>> {
        self.cells.get(&(String::from(fg), bg.map(String::from)))
    }

    /// Every `(clip, fg, bg)` in identifier order within cells.
    pub fn items(&self) -> impl Iterator<Item = Item> + '_ {
        self.cells.iter().flat_map(|((fg, bg), clips)| {
            clips.iter().map(move |c| Item { clip_ref: c.clone(), fg: fg.clone(), bg: bg.clone() })
        })
    }
}

/// Background plan for one class: support backgrounds, query backgrounds.
type Plan = (Vec<Option<String>>, Vec<Option<String>>);

/// Every entry of `chosen` once (up to `total`), topped up with draws with
/// replacement from `chosen`, shuffled.
fn spread(rng: &mut ChaCha8Rng, chosen: &[String], total: usize) -> Vec<Option<String>> {
    let mut out: Vec<Option<String>> = chosen.iter().take(total).cloned().map(Some).collect();
    while out.len() < total {
        out.push(Some(chosen.choose(rng).expect("non-empty").clone()));
    }
    out.shuffle(rng);
    out
}

fn choose_distinct(rng: &mut ChaCha8Rng, from: &[String], d: usize) -> Vec<String> {
    from.choose_multiple(rng, d).cloned().collect()
}

fn own_backgrounds<'t>(table: &'t PairingTable, class: &str) -> Result<&'t [String; 4]> {
    table.backgrounds(class).ok_or_else(|| Error::UnknownClass(class.into()))
}

/// Backgrounds of the other classes' pairings, minus `exclude`, sorted.
fn allowed_ood(table: &PairingTable, classes: &[&str], c: usize, exclude: &[String]) -> Result<Vec<String>> {
    let mut set = BTreeSet::new();
    for (j, other) in classes.iter().enumerate() {
        if j != c {
            for b in own_backgrounds(table, other)? {
                set.insert(b.clone());
            }
        }
    }
    for b in exclude {
        set.remove(b);
    }
    Ok(set.into_iter().collect())
}

fn plan_iid(rng: &mut ChaCha8Rng, table: &PairingTable, classes: &[&str], spec: &EpisodeSpec) -> Result<Vec<Plan>> {
    let d = spec.k_shot.min(4).min(spec.n_query);
    classes
        .iter()
        .map(|c| {
            let chosen = choose_distinct(rng, own_backgrounds(table, c)?, d);
            let sup = spread(rng, &chosen, spec.k_shot);
            let qry = spread(rng, &chosen, spec.n_query);
            Ok((sup, qry))
        })
        .collect()
}

fn support_sets(
    rng: &mut ChaCha8Rng,
    table: &PairingTable,
    classes: &[&str],
    d: usize,
) -> Result<Vec<Vec<String>>> {
    classes.iter().map(|c| Ok(choose_distinct(rng, own_backgrounds(table, c)?, d))).collect()
}

fn plan_ood(rng: &mut ChaCha8Rng, table: &PairingTable, classes: &[&str], spec: &EpisodeSpec) -> Result<Vec<Plan>> {
    let d = spec.k_shot.min(4);
    let sets = support_sets(rng, table, classes, d)?;
    let allowed: Vec<Vec<String>> =
        (0..classes.len()).map(|c| allowed_ood(table, classes, c, &sets[c])).collect::<Result<_>>()?;
    if allowed.iter().any(Vec::is_empty) {
        return Err(Error::OodInfeasible);
    }
    let shared = if spec.shared_query_background {
        let mut common: BTreeSet<&String> = allowed[0].iter().collect();
        for a in &allowed[1..] {
            let s: BTreeSet<&String> = a.iter().collect();
            common = common.intersection(&s).copied().collect();
        }
        // When every class saturates its own row (K >= 4), no background
        // satisfies the per-class rule for all classes at once; fall back to
        // any table background unused by the episode's supports.
        if common.is_empty() {
            let used: BTreeSet<&String> = sets.iter().flatten().collect();
            let table_bgs = table.background_classes();
            let spare: Vec<String> =
                table_bgs.iter().filter(|b| !used.iter().any(|u| u.as_str() == **b)).map(|b| String::from(*b)).collect();
            Some(spare.choose(rng).ok_or(Error::OodInfeasible)?.clone())
        } else {
            let common: Vec<&String> = common.into_iter().collect();
            Some((*common.choose(rng).expect("non-empty")).clone())
        }
    } else {
        None
    };
    Ok(sets
        .iter()
        .zip(&allowed)
        .map(|(s, a)| {
            let sup = spread(rng, s, spec.k_shot);
            let qry = (0..spec.n_query)
                .map(|_| Some(shared.clone().unwrap_or_else(|| a.choose(rng).expect("non-empty").clone())))
                .collect();
            (sup, qry)
        })
        .collect())
}

/// Randomised backtracking for pairwise-disjoint `d`-subsets, one per class.
fn disjoint_subsets(rng: &mut ChaCha8Rng, table: &PairingTable, classes: &[&str], d: usize) -> Result<Option<Vec<Vec<String>>>> {
    // Candidate subsets per class, shuffled once.
    let mut candidates: Vec<Vec<Vec<String>>> = Vec::with_capacity(classes.len());
    for c in classes {
        let own = own_backgrounds(table, c)?;
        let mut subs: Vec<Vec<String>> = Vec::new();
        for mask in 0u32..16 {
            if mask.count_ones() as usize == d {
                subs.push((0..4).filter(|i| mask & (1 << i) != 0).map(|i| own[i].clone()).collect());
            }
        }
        subs.shuffle(rng);
        candidates.push(subs);
    }

    fn go(
        candidates: &[Vec<Vec<String>>],
        used: &mut BTreeSet<String>,
        chosen: &mut Vec<Vec<String>>,
    ) -> bool {
        let level = chosen.len();
        if level == candidates.len() {
            return true;
        }
        for sub in &candidates[level] {
            if sub.iter().any(|b| used.contains(b)) {
                continue;
            }
            for b in sub {
                used.insert(b.clone());
            }
            chosen.push(sub.clone());
            if go(candidates, used, chosen) {
                return true;
            }
            chosen.pop();
            for b in sub {
                used.remove(b);
            }
        }
        false
    }

    let mut chosen = Vec::new();
    Ok(go(&candidates, &mut BTreeSet::new(), &mut chosen).then_some(chosen))
}

fn plan_hard(rng: &mut ChaCha8Rng, table: &PairingTable, classes: &[&str], spec: &EpisodeSpec) -> Result<Vec<Plan>> {
    let n = classes.len();
    let mut sets = None;
    for d in (1..=spec.k_shot.min(4)).rev() {
        if (n - 1) * d > spec.n_query {
            continue;
        }
        if let Some(s) = disjoint_subsets(rng, table, classes, d)? {
            sets = Some(s);
            break;
        }
    }
    let sets = sets.ok_or(Error::HardOodInfeasible)?;
    (0..n)
        .map(|c| {
            let allowed = allowed_ood(table, classes, c, &sets[c])?;
            let mut qry: Vec<Option<String>> =
                (0..n).filter(|&j| j != c).flat_map(|j| sets[j].iter().cloned().map(Some)).collect();
            while qry.len() < spec.n_query {
                qry.push(Some(allowed.choose(rng).ok_or(Error::HardOodInfeasible)?.clone()));
            }
            qry.shuffle(rng);
            Ok((spread(rng, &sets[c], spec.k_shot), qry))
        })
        .collect()
}

fn plan_clean(rng: &mut ChaCha8Rng, table: &PairingTable, classes: &[&str], spec: &EpisodeSpec) -> Result<Vec<Plan>> {
    let d = spec.k_shot.min(4);
    support_sets(rng, table, classes, d)?
        .into_iter()
        .map(|s| Ok((spread(rng, &s, spec.k_shot), alloc::vec![None; spec.n_query])))
        .collect()
}

fn plan(rng: &mut ChaCha8Rng, table: &PairingTable, classes: &[&str], spec: &EpisodeSpec) -> Result<Vec<Plan>> {
    match spec.mode {
        Mode::Iid => plan_iid(rng, table, classes, spec),
        Mode::Ood => plan_ood(rng, table, classes, spec),
        Mode::HardOod => plan_hard(rng, table, classes, spec),
        Mode::CleanQuery => plan_clean(rng, table, classes, spec),
    }
}

/// Draws distinct clips for every planned item.
fn fill(rng: &mut ChaCha8Rng, classes: &[&str], plans: &[Plan], pool: &ClipPool) -> Result<Episode> {
    let mut need: BTreeMap<(&str, Option<&str>), usize> = BTreeMap::new();
    for (c, (sup, qry)) in classes.iter().zip(plans) {
        for bg in sup.iter().chain(qry) {
            *need.entry((c, bg.as_deref())).or_insert(0) += 1;
        }
    }
    let mut drawn: BTreeMap<(String, Option<String>), Vec<String>> = BTreeMap::new();
    for (&(fg, bg), &count) in &need {
        let exhausted = || Error::PoolExhausted { fg: fg.into(), bg: bg.unwrap_or("-").into() };
        let cell = pool.clips(fg, bg).ok_or_else(exhausted)?;
        if cell.len() < count {
            return Err(exhausted());
        }
        let mut idx = rand::seq::index::sample(rng, cell.len(), count).into_vec();
        idx.sort_unstable();
        // Walk the ordered set once, then restore the random draw order.
        let picked: BTreeMap<usize, &String> = {
            let wanted: BTreeSet<usize> = idx.iter().copied().collect();
            cell.iter().enumerate().filter(|(i, _)| wanted.contains(i)).collect()
        };
        let mut order: Vec<String> = idx.iter().map(|i| picked[i].clone()).collect();
        order.shuffle(rng);
        drawn.insert((fg.into(), bg.map(String::from)), order);
    }

    let mut take = |fg: &str, bg: &Option<String>| -> Item {
        let list = drawn.get_mut(&(String::from(fg), bg.clone())).expect("planned");
        Item { clip_ref: list.pop().expect("counted"), fg: fg.into(), bg: bg.clone() }
    };
    let mut support = Vec::new();
    let mut query = Vec::new();
    for (c, (sup, qry)) in classes.iter().zip(plans) {
        for bg in sup {
            support.push(take(c, bg));
        }
        for bg in qry {
            query.push(take(c, bg));
        }
    }
    Ok(Episode { classes: classes.iter().map(|c| String::from(*c)).collect(), support, query })
}

/// Samples an episode over exactly the given classes, in that label order.
pub fn sample_episode_for_classes(
    table: &PairingTable,
    classes: &[&str],
    spec: &EpisodeSpec,
    pool: &ClipPool,
) -> Result<Episode> {
    spec.validate()?;
    if classes.len() != spec.n_way {
        return Err(Error::InvalidEpisodeSpec("class list length differs from n_way"));
    }
    let distinct: BTreeSet<&&str> = classes.iter().collect();
    if distinct.len() != classes.len() {
        return Err(Error::InvalidEpisodeSpec("episode classes must be distinct"));
    }
    let mut rng = rng_from_seed(spec.seed);
    let plans = plan(&mut rng, table, classes, spec)?;
    fill(&mut rng, classes, &plans, pool)
}

/// Samples an episode whose classes are drawn from `split` (for example the
/// test classes). Constrained modes retry other class tuples when a tuple
/// cannot satisfy them, up to [`MAX_TUPLE_RETRIES`].
pub fn sample_episode(
    table: &PairingTable,
    split: &BTreeSet<String>,
    spec: &EpisodeSpec,
    pool: &ClipPool,
) -> Result<Episode> {
    spec.validate()?;
    if split.len() < spec.n_way {
        return Err(Error::NotEnoughClasses { needed: spec.n_way, available: split.len() });
    }
    let universe: Vec<&str> = split.iter().map(String::as_str).collect();
    let mut rng = rng_from_seed(spec.seed);
    let mut last = Error::HardOodInfeasible;
    for _ in 0..MAX_TUPLE_RETRIES {
        let classes: Vec<&str> = universe.choose_multiple(&mut rng, spec.n_way).copied().collect();
        match plan(&mut rng, table, &classes, spec) {
            Ok(plans) => return fill(&mut rng, &classes, &plans, pool),
            Err(e @ (Error::HardOodInfeasible | Error::OodInfeasible)) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Samples `count` episodes with per-index derived seeds.
pub fn sample_episodes(
    table: &PairingTable,
    split: &BTreeSet<String>,
    spec: &EpisodeSpec,
    pool: &ClipPool,
    count: usize,
) -> Result<Vec<Episode>> {
    (0..count)
        .map(|i| sample_episode(table, split, &spec.for_index(i as u64), pool).map_err(|e| e.in_episode(i)))
        .collect()
}

/// Brute-force check of the structural and mode invariants of an episode.
/// Returns a description of every violation found.
pub fn audit(ep: &Episode, table: &PairingTable, spec: &EpisodeSpec, split: Option<&BTreeSet<String>>) -> Vec<String> {
    use alloc::format;
    let mut bad = Vec::new();
    let n = ep.classes.len();
    if n != spec.n_way {
        bad.push(format!("{} classes, expected {}", n, spec.n_way));
    }
    for i in 0..n {
        for j in 0..i {
            if ep.classes[i] == ep.classes[j] {
                bad.push(format!("class {} repeated", ep.classes[i]));
            }
        }
        if let Some(s) = split {
            if !s.contains(&ep.classes[i]) {
                bad.push(format!("class {} not in split", ep.classes[i]));
            }
        }
    }
    let all: Vec<&Item> = ep.support.iter().chain(&ep.query).collect();
    for i in 0..all.len() {
        for j in 0..i {
            if all[i].clip_ref == all[j].clip_ref {
                bad.push(format!("clip {} used twice", all[i].clip_ref));
            }
        }
    }
    if ep.support.len() != spec.n_way * spec.k_shot || ep.query.len() != spec.n_way * spec.n_query {
        bad.push(format!("sizes {}/{}", ep.support.len(), ep.query.len()));
    }

    let bgs_of = |items: &[Item], c: &str| -> Vec<Option<String>> {
        items.iter().filter(|i| i.fg == c).map(|i| i.bg.clone()).collect()
    };
    let contains = |v: &[Option<String>], b: &Option<String>| v.iter().any(|x| x == b);

    for c in &ep.classes {
        let sup = bgs_of(&ep.support, c);
        let qry = bgs_of(&ep.query, c);
        if sup.len() != spec.k_shot || qry.len() != spec.n_query {
            bad.push(format!("{c}: {} supports, {} queries", sup.len(), qry.len()));
        }
        let Some(own) = table.backgrounds(c) else {
            bad.push(format!("{c} missing from table"));
            continue;
        };
        for b in &sup {
            match b {
                Some(b) if own.contains(b) => {}
                _ => bad.push(format!("{c}: support background {b:?} not paired")),
            }
        }
        match spec.mode {
            Mode::Iid => {
                let same = sup.iter().all(|b| contains(&qry, b)) && qry.iter().all(|b| contains(&sup, b));
                if !same {
                    bad.push(format!("{c}: iid background sets differ"));
                }
            }
            Mode::Ood if spec.shared_query_background => {
                let all_support: Vec<Option<String>> = ep.support.iter().map(|i| i.bg.clone()).collect();
                for b in &qry {
                    if b.is_none() || contains(&all_support, b) {
                        bad.push(format!("{c}: shared query background {b:?} used by a support"));
                    }
                }
                if let Some(first) = ep.query.first() {
                    if ep.query.iter().any(|q| q.bg != first.bg) {
                        bad.push("query backgrounds not shared".into());
                    }
                }
            }
            Mode::Ood | Mode::HardOod => {
                for b in &qry {
                    if contains(&sup, b) {
                        bad.push(format!("{c}: query background {b:?} also in support"));
                    }
                    let from_other = ep
                        .classes
                        .iter()
                        .filter(|o| *o != c)
                        .any(|o| table.backgrounds(o).is_some_and(|bs| b.as_ref().is_some_and(|b| bs.contains(b))));
                    if !from_other {
                        bad.push(format!("{c}: query background {b:?} not from another class"));
                    }
                }
                if spec.mode == Mode::HardOod {
                    for o in ep.classes.iter().filter(|o| *o != c) {
                        for b in bgs_of(&ep.support, o) {
                            if !contains(&qry, &b) {
                                bad.push(format!("{c}: support background {b:?} of {o} missing from queries"));
                            }
                        }
                    }
                }
            }
            Mode::CleanQuery => {
                if qry.iter().any(Option::is_some) {
                    bad.push(format!("{c}: clean query carries a background"));
                }
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{assign_splits, SplitMode};
    use alloc::vec;
    use proptest::prelude::*;

    fn setup(hard: bool) -> (PairingTable, BTreeSet<String>, ClipPool) {
        let t = if hard { PairingTable::hard() } else { PairingTable::standard() };
        let s = assign_splits(&t, SplitMode::Canonical).unwrap();
        let pool = ClipPool::synthetic(&t, 12);
        (t, s.test, pool)
    }

    fn spec(mode: Mode, k: usize, q: usize, seed: u64) -> EpisodeSpec {
        EpisodeSpec { n_way: 5, k_shot: k, n_query: q, mode, seed, shared_query_background: false }
    }

    #[test]
    fn iid_pig_example() {
        let (t, _, pool) = setup(false);
        let sp = EpisodeSpec { n_way: 2, k_shot: 1, n_query: 1, ..spec(Mode::Iid, 1, 1, 4) };
        let ep = sample_episode_for_classes(&t, &["cough", "pig"], &sp, &pool).unwrap();
        let pig = t.backgrounds("pig").unwrap();
        let s = ep.support.iter().find(|i| i.fg == "pig").unwrap();
        let q = ep.query.iter().find(|i| i.fg == "pig").unwrap();
        assert!(pig.contains(s.bg.as_ref().unwrap()));
        assert_eq!(s.bg, q.bg);
        assert!(audit(&ep, &t, &sp, None).is_empty());
    }

    #[test]
    fn hand_built_two_way_episode_is_valid_ood() {
        let t = PairingTable::standard();
        let sp = EpisodeSpec { n_way: 2, k_shot: 1, n_query: 1, ..spec(Mode::Ood, 1, 1, 0) };
        // Support pig + church bells, query crow + siren (siren is one of
        // pig's backgrounds) and pig + rain (rain also backs crow).
        let ep = Episode {
            classes: vec!["pig".into(), "crow".into()],
            support: vec![
                Item { clip_ref: "a".into(), fg: "pig".into(), bg: Some("church bells".into()) },
                Item { clip_ref: "b".into(), fg: "crow".into(), bg: Some("airplane".into()) },
            ],
            query: vec![
                Item { clip_ref: "c".into(), fg: "pig".into(), bg: Some("rain".into()) },
                Item { clip_ref: "d".into(), fg: "crow".into(), bg: Some("siren".into()) },
            ],
        };
        assert!(audit(&ep, &t, &sp, None).is_empty(), "{:?}", audit(&ep, &t, &sp, None));
    }

    #[test]
    fn audit_flags_violations() {
        let t = PairingTable::standard();
        let sp = EpisodeSpec { n_way: 2, k_shot: 1, n_query: 1, ..spec(Mode::Ood, 1, 1, 0) };
        let ep = Episode {
            classes: vec!["pig".into(), "crow".into()],
            support: vec![
                Item { clip_ref: "a".into(), fg: "pig".into(), bg: Some("church bells".into()) },
                Item { clip_ref: "b".into(), fg: "crow".into(), bg: Some("airplane".into()) },
            ],
            query: vec![
                Item { clip_ref: "c".into(), fg: "pig".into(), bg: Some("church bells".into()) },
                Item { clip_ref: "d".into(), fg: "crow".into(), bg: Some("airplane".into()) },
            ],
        };
        assert!(!audit(&ep, &t, &sp, None).is_empty());
        let iid = EpisodeSpec { mode: Mode::Iid, ..sp };
        assert!(audit(&ep, &t, &iid, None).is_empty());
        let clean = EpisodeSpec { mode: Mode::CleanQuery, ..sp };
        assert!(!audit(&ep, &t, &clean, None).is_empty());
    }

    #[test]
    fn hard_ood_pig_cough_coverage() {
        let (t, _, pool) = setup(true);
        let sp = EpisodeSpec { n_way: 2, k_shot: 5, n_query: 10, ..spec(Mode::HardOod, 5, 10, 11) };
        let ep = sample_episode_for_classes(&t, &["pig", "cough"], &sp, &pool).unwrap();
        let bg = |items: &[Item], c: &str| -> BTreeSet<String> {
            items.iter().filter(|i| i.fg == c).map(|i| i.bg.clone().unwrap()).collect()
        };
        assert!(bg(&ep.support, "pig").is_subset(&bg(&ep.query, "cough")));
        assert!(bg(&ep.support, "cough").is_subset(&bg(&ep.query, "pig")));
        assert!(bg(&ep.support, "pig").is_disjoint(&bg(&ep.query, "pig")));
        assert!(audit(&ep, &t, &sp, None).is_empty());
    }

    #[test]
    fn hard_ood_infeasible_on_standard_disjoint_rows() {
        // Five classes over the same four backgrounds admit no pairwise
        // disjoint support sets.
        let t = PairingTable::parse("a -> w, x, y, z\nb -> w, x, y, z\nc -> w, x, y, z\nd -> w, x, y, z\ne -> w, x, y, z").unwrap();
        let pool = ClipPool::synthetic(&t, 10);
        let sp = EpisodeSpec { n_way: 5, ..spec(Mode::HardOod, 1, 10, 0) };
        assert_eq!(
            sample_episode_for_classes(&t, &["a", "b", "c", "d", "e"], &sp, &pool),
            Err(Error::HardOodInfeasible)
        );
    }

    #[test]
    fn hard_test_split_five_way_uses_single_background() {
        let (t, split, pool) = setup(true);
        let sp = spec(Mode::HardOod, 5, 10, 3);
        let ep = sample_episode(&t, &split, &sp, &pool).unwrap();
        assert!(audit(&ep, &t, &sp, Some(&split)).is_empty());
        for c in &ep.classes {
            let s: BTreeSet<_> = ep.support.iter().filter(|i| i.fg == *c).map(|i| i.bg.clone()).collect();
            assert_eq!(s.len(), 1);
        }
    }

    #[test]
    fn pool_exhaustion() {
        let (t, split, _) = setup(false);
        let pool = ClipPool::synthetic(&t, 1);
        let sp = spec(Mode::Iid, 5, 10, 0);
        assert!(matches!(sample_episode(&t, &split, &sp, &pool), Err(Error::PoolExhausted { .. })));
    }

    #[test]
    fn not_enough_classes_and_bad_spec() {
        let (t, split, pool) = setup(false);
        let sp = EpisodeSpec { n_way: 9, ..spec(Mode::Iid, 1, 1, 0) };
        assert_eq!(sample_episode(&t, &split, &sp, &pool), Err(Error::NotEnoughClasses { needed: 9, available: 8 }));
        let sp = EpisodeSpec { n_way: 1, ..spec(Mode::Iid, 1, 1, 0) };
        assert!(matches!(sample_episode(&t, &split, &sp, &pool), Err(Error::InvalidEpisodeSpec(_))));
    }

    #[test]
    fn shared_query_background() {
        let (t, split, pool) = setup(false);
        let sp = EpisodeSpec { shared_query_background: true, ..spec(Mode::Ood, 5, 10, 0) };
        for i in 0..50 {
            let s = sp.for_index(i);
            let ep = sample_episode(&t, &split, &s, &pool).unwrap();
            assert!(audit(&ep, &t, &s, Some(&split)).is_empty());
        }
    }

    #[test]
    fn pool_order_does_not_matter() {
        let (t, split, pool) = setup(false);
        let mut items: Vec<Item> = pool.items().collect();
        items.reverse();
        let shuffled = ClipPool::from_items(&items).unwrap();
        for mode in Mode::ALL {
            let tt = if mode == Mode::HardOod { PairingTable::hard() } else { t.clone() };
            let sp = spec(mode, 5, 10, 77);
            let a = sample_episode(&tt, &split, &sp, &pool);
            let b = sample_episode(&tt, &split, &sp, &shuffled);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mode_parse_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn invariants_hold(seed in any::<u64>(), k in 1usize..7, q in 1usize..12, n in 2usize..6, m in 0usize..4) {
            let mode = Mode::ALL[m];
            let (t, split, pool) = setup(mode == Mode::HardOod);
            let sp = EpisodeSpec { n_way: n, k_shot: k, n_query: q, mode, seed, shared_query_background: false };
            match sample_episode(&t, &split, &sp, &pool) {
                Ok(ep) => {
                    let bad = audit(&ep, &t, &sp, Some(&split));
                    prop_assert!(bad.is_empty(), "{:?}", bad);
                    let again = sample_episode(&t, &split, &sp, &pool).unwrap();
                    prop_assert_eq!(ep, again);
                }
                // Hard-OOD with few queries per class can be infeasible.
                Err(Error::HardOodInfeasible) => prop_assert!(mode == Mode::HardOod && (n - 1) > q),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
