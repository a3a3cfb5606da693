//! Class association rules.
//!
//! Rows of a [`CategoricalTable`] become transactions of `(attribute, category)`
//! items. Frequent itemsets are mined level by level (Apriori) with
//! downward-closure pruning; support counts come from intersecting per-item
//! transaction-id bitsets. Rules keep a single class item as consequent:
//!
//! * `support(X => Y) = sigma(X u Y) / N`
//! * `confidence(X => Y) = sigma(X u Y) / sigma(X)`
//! * `lift(X => Y) = s(X u Y) / (s(X) * s(Y))`
//!
//! Redundant rules are removed by minimal-improvement pruning: a rule survives
//! only if its confidence strictly exceeds that of every rule with the same
//! consequent and a proper sub-antecedent.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretizer::CategoricalTable;
use crate::error::{Error, Result};

pub type ItemId = u32;

/// An `(attribute, category)` pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NamedItem {
    pub attribute: String,
    pub category: String,
}

impl NamedItem {
    pub fn new(attribute: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            attribute: attribute.into(),
            category: category.into(),
        }
    }

    /// Parses `Attr=Cat` (whitespace around `=` is ignored).
    pub fn parse(text: &str) -> Result<Self> {
        let (a, c) = text
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("expected ATTR=CATEGORY, got {text:?}")))?;
        let (a, c) = (a.trim(), c.trim());
        if a.is_empty() || c.is_empty() {
            return Err(Error::InvalidParameter(format!("expected ATTR=CATEGORY, got {text:?}")));
        }
        Ok(Self::new(a, c))
    }
}

impl fmt::Display for NamedItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.attribute, self.category)
    }
}

/// Dense ids for items, contiguous from 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ItemDictionary {
    items: Vec<NamedItem>,
    attribute_of: Vec<u32>,
    class: Vec<bool>,
    attributes: Vec<String>,
    index: HashMap<NamedItem, ItemId>,
}

impl ItemDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of the item, inserting it if new.
    pub fn intern(&mut self, item: NamedItem, class: bool) -> ItemId {
        if let Some(&id) = self.index.get(&item) {
            return id;
        }
        let attr = match self.attributes.iter().position(|a| *a == item.attribute) {
            Some(i) => i,
            None => {
                self.attributes.push(item.attribute.clone());
                self.attributes.len() - 1
            }
        };
        let id = self.items.len() as ItemId;
        self.items.push(item.clone());
        self.attribute_of.push(attr as u32);
        self.class.push(class);
        self.index.insert(item, id);
        id
    }

    pub fn id(&self, item: &NamedItem) -> Option<ItemId> {
        self.index.get(item).copied()
    }

    pub fn item(&self, id: ItemId) -> &NamedItem {
        &self.items[id as usize]
    }

    pub fn is_class(&self, id: ItemId) -> bool {
        self.class[id as usize]
    }

    /// Index of the item's attribute (items of one attribute share it).
    pub fn attribute_index(&self, id: ItemId) -> u32 {
        self.attribute_of[id as usize]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[NamedItem] {
        &self.items
    }
}

/// Fixed-size bitset over transaction indices.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TidSet(Vec<u64>);

impl TidSet {
    fn empty(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }

    fn full(n: usize) -> Self {
        let mut s = Self::empty(n);
        for i in 0..n {
            s.insert(i);
        }
        s
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn count(&self) -> u64 {
        self.0.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn and(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }
}

/// Observations as sorted item-id sets, at most one item per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionSet {
    dictionary: ItemDictionary,
    transactions: Vec<Vec<ItemId>>,
    row_ids: Vec<String>,
    tidsets: Vec<TidSet>,
    /// Rows dropped because the class label was missing.
    pub excluded: Vec<String>,
}

impl TransactionSet {
    /// Builds a set from item ids over `dictionary`. Ids are sorted; two items
    /// of the same attribute in one transaction is an error.
    pub fn new(
        dictionary: ItemDictionary,
        transactions: Vec<Vec<ItemId>>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        if row_ids.len() != transactions.len() {
            return Err(Error::Shape("one row id per transaction required".into()));
        }
        let mut sorted = Vec::with_capacity(transactions.len());
        for (t, id) in transactions.into_iter().zip(&row_ids) {
            let mut t = t;
            t.sort_unstable();
            t.dedup();
            if let Some(&bad) = t.iter().find(|&&i| i as usize >= dictionary.len()) {
                return Err(Error::Mining(format!("unknown item id {bad} in {id:?}")));
            }
            let mut attrs: Vec<u32> = t.iter().map(|&i| dictionary.attribute_index(i)).collect();
            attrs.sort_unstable();
            if attrs.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Mining(format!(
                    "transaction {id:?} holds two items of one attribute"
                )));
            }
            sorted.push(t);
        }
        let n = sorted.len();
        let mut tidsets = vec![TidSet::empty(n); dictionary.len()];
        for (tid, t) in sorted.iter().enumerate() {
            for &i in t {
                tidsets[i as usize].insert(tid);
            }
        }
        Ok(Self {
            dictionary,
            transactions: sorted,
            row_ids,
            tidsets,
            excluded: Vec::new(),
        })
    }

    /// Builds a set from named items; items of `class_attribute` are class items.
    pub fn from_named(rows: &[Vec<NamedItem>], class_attribute: &str) -> Result<Self> {
        let mut dict = ItemDictionary::new();
        let transactions = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|it| dict.intern(it.clone(), it.attribute == class_attribute))
                    .collect()
            })
            .collect();
        let ids = (0..rows.len()).map(|i| format!("t{}", i + 1)).collect();
        Self::new(dict, transactions, ids)
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn dictionary(&self) -> &ItemDictionary {
        &self.dictionary
    }

    pub fn transactions(&self) -> &[Vec<ItemId>] {
        &self.transactions
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    fn tidset(&self, itemset: &[ItemId]) -> TidSet {
        match itemset.split_first() {
            None => TidSet::full(self.len()),
            Some((&first, rest)) => rest
                .iter()
                .fold(self.tidsets[first as usize].clone(), |acc, &i| {
                    acc.and(&self.tidsets[i as usize])
                }),
        }
    }
}

/// One transaction per row with a class label; items are the present labels.
/// Ids follow attribute order, then ordinal category order, and only cover
/// pairs that occur.
pub fn encode_transactions(table: &CategoricalTable, class_attribute: &str) -> Result<TransactionSet> {
    if table.n_rows() == 0 {
        return Err(Error::Mining("empty table".into()));
    }
    let class_idx = table.require_attribute(class_attribute)?;
    let n_attr = table.attributes().len();
    let kept: Vec<usize> = (0..table.n_rows())
        .filter(|&r| table.code(r, class_idx).is_some())
        .collect();
    let excluded: Vec<String> = (0..table.n_rows())
        .filter(|&r| table.code(r, class_idx).is_none())
        .map(|r| table.row_ids()[r].clone())
        .collect();

    let mut dict = ItemDictionary::new();
    let mut ids: Vec<Vec<Option<ItemId>>> = Vec::with_capacity(n_attr);
    for a in 0..n_attr {
        let cats = table.categories(a);
        let mut used = vec![false; cats.len()];
        for &r in &kept {
            if let Some(c) = table.code(r, a) {
                used[c] = true;
            }
        }
        ids.push(
            cats.iter()
                .zip(&used)
                .map(|(cat, &u)| {
                    u.then(|| {
                        dict.intern(
                            NamedItem::new(table.attributes()[a].clone(), cat.clone()),
                            a == class_idx,
                        )
                    })
                })
                .collect(),
        );
    }
    let transactions = kept
        .iter()
        .map(|&r| {
            (0..n_attr)
                .filter_map(|a| table.code(r, a).and_then(|c| ids[a][c]))
                .collect()
        })
        .collect();
    let row_ids = kept.iter().map(|&r| table.row_ids()[r].clone()).collect();
    let mut ts = TransactionSet::new(dict, transactions, row_ids)?;
    ts.excluded = excluded;
    Ok(ts)
}

/// Number of transactions containing `itemset`; the empty set is in all of them.
pub fn support_count(itemset: &[ItemId], ts: &TransactionSet) -> u64 {
    if itemset.iter().any(|&i| i as usize >= ts.dictionary.len()) {
        return 0;
    }
    ts.tidset(itemset).count()
}

/// Smallest count `c` with `c / n >= min_support`.
pub fn min_count(min_support: f64, n: usize) -> u64 {
    if n == 0 {
        return 1;
    }
    let nf = n as f64;
    let mut c = (min_support * nf).floor().max(0.0) as u64;
    while c > 0 && (c - 1) as f64 / nf >= min_support {
        c -= 1;
    }
    while (c as f64 / nf) < min_support {
        c += 1;
    }
    c.max(1)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrequentItemset {
    pub items: Vec<ItemId>,
    pub count: u64,
}

/// All itemsets of size `1..=max_size` with support at least `min_support`,
/// sorted by size and then lexicographically by item id.
pub fn apriori_frequent(
    ts: &TransactionSet,
    min_support: f64,
    max_size: usize,
) -> Result<Vec<FrequentItemset>> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "min_support {min_support} outside (0, 1]"
        )));
    }
    if max_size == 0 {
        return Err(Error::InvalidParameter("max_size must be at least 1".into()));
    }
    if ts.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = min_count(min_support, ts.len());
    let dict = &ts.dictionary;

    let mut level: Vec<(Vec<ItemId>, TidSet)> = (0..dict.len() as ItemId)
        .filter(|&i| ts.tidsets[i as usize].count() >= threshold)
        .map(|i| (vec![i], ts.tidsets[i as usize].clone()))
        .collect();
    let mut out: Vec<FrequentItemset> = Vec::new();

    for size in 1..=max_size {
        out.extend(level.iter().map(|(items, tids)| FrequentItemset {
            items: items.clone(),
            count: tids.count(),
        }));
        if size == max_size || level.len() < 2 {
            break;
        }
        let known: HashSet<&[ItemId]> = level.iter().map(|(i, _)| i.as_slice()).collect();
        // Blocks of itemsets sharing their first size-1 items; `level` is sorted.
        let mut blocks: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        for i in 1..=level.len() {
            if i == level.len() || level[i].0[..size - 1] != level[start].0[..size - 1] {
                blocks.push((start, i));
                start = i;
            }
        }
        let next: Vec<Vec<(Vec<ItemId>, TidSet)>> = blocks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut found = Vec::new();
                for a in lo..hi {
                    let (ref items_a, ref tids_a) = level[a];
                    let last_a = *items_a.last().expect("non-empty");
                    for (items_b, tids_b) in &level[a + 1..hi] {
                        let last_b = *items_b.last().expect("non-empty");
                        if dict.attribute_index(last_a) == dict.attribute_index(last_b) {
                            continue;
                        }
                        let mut cand = items_a.clone();
                        cand.push(last_b);
                        if !all_subsets_known(&cand, &known) {
                            continue;
                        }
                        let tids = tids_a.and(tids_b);
                        if tids.count() >= threshold {
                            found.push((cand, tids));
                        }
                    }
                }
                found
            })
            .collect();
        level = next.into_iter().flatten().collect();
        if level.is_empty() {
            break;
        }
    }
    Ok(out)
}

/// Downward closure: every (k-1)-subset of `cand` must be frequent. The two
/// subsets that drop one of the last two items are the join parents.
fn all_subsets_known(cand: &[ItemId], known: &HashSet<&[ItemId]>) -> bool {
    let k = cand.len();
    let mut sub = Vec::with_capacity(k - 1);
    for skip in 0..k.saturating_sub(2) {
        sub.clear();
        sub.extend(cand.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &x)| x));
        if !known.contains(sub.as_slice()) {
            return false;
        }
    }
    true
}

/// Thresholds for rule generation. Rule length counts antecedent items plus
/// the consequent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub min_support: f64,
    pub min_confidence: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub consequent_attribute: String,
    /// Restrict consequents to these categories of the class attribute.
    #[serde(default)]
    pub target_classes: Option<Vec<String>>,
    #[serde(default)]
    pub lift_floor: Option<f64>,
}

impl MiningParams {
    pub fn new(consequent_attribute: impl Into<String>) -> Self {
        Self {
            min_support: 0.065,
            min_confidence: 0.9,
            min_len: 2,
            max_len: 5,
            consequent_attribute: consequent_attribute.into(),
            target_classes: None,
            lift_floor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.min_support > 0.0 && self.min_support <= 1.0) {
            return bad(format!("min_support {} outside (0, 1]", self.min_support));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return bad(format!("min_confidence {} outside [0, 1]", self.min_confidence));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return bad(format!(
                "rule lengths need 2 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            ));
        }
        if let Some(l) = self.lift_floor {
            if !(l >= 0.0) {
                return bad(format!("lift_floor {l} must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRule {
    pub antecedent: Vec<ItemId>,
    pub consequent: ItemId,
    /// sigma(X u Y)
    pub support_count: u64,
    /// sigma(X)
    pub antecedent_count: u64,
    /// sigma(Y)
    pub consequent_count: u64,
    pub n: u64,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

impl ClassRule {
    pub fn from_counts(
        antecedent: Vec<ItemId>,
        consequent: ItemId,
        support_count: u64,
        antecedent_count: u64,
        consequent_count: u64,
        n: u64,
    ) -> Self {
        let nf = n as f64;
        let support = support_count as f64 / nf;
        let s_x = antecedent_count as f64 / nf;
        let s_y = consequent_count as f64 / nf;
        Self {
            antecedent,
            consequent,
            support_count,
            antecedent_count,
            consequent_count,
            n,
            support,
            confidence: support_count as f64 / antecedent_count as f64,
            lift: support / (s_x * s_y),
        }
    }

    /// Antecedent items plus the consequent.
    pub fn len(&self) -> usize {
        self.antecedent.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `confidence(self) >= confidence(other)`, compared exactly on counts.
    fn confidence_at_least(&self, other: &ClassRule) -> bool {
        self.support_count as u128 * other.antecedent_count as u128
            >= other.support_count as u128 * self.antecedent_count as u128
    }
}

/// Deterministic output order: lift, confidence and support descending, then
/// antecedent and consequent ids ascending.
pub fn rule_order(a: &ClassRule, b: &ClassRule) -> Ordering {
    b.lift
        .total_cmp(&a.lift)
        .then_with(|| b.confidence.total_cmp(&a.confidence))
        .then_with(|| b.support.total_cmp(&a.support))
        .then_with(|| a.antecedent.cmp(&b.antecedent))
        .then_with(|| a.consequent.cmp(&b.consequent))
}

/// Rule counts after each filter, in application order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub candidates: usize,
    pub after_confidence: usize,
    pub after_length: usize,
    pub after_support: usize,
    pub after_lift: usize,
    pub after_redundancy: usize,
}

impl FilterCounts {
    pub fn is_monotone(&self) -> bool {
        let c = [
            self.candidates,
            self.after_confidence,
            self.after_length,
            self.after_support,
            self.after_lift,
            self.after_redundancy,
        ];
        c.windows(2).all(|w| w[0] >= w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarGeneration {
    /// Rules passing every threshold, in [`rule_order`].
    pub rules: Vec<ClassRule>,
    /// Every rule derivable from a frequent itemset with one class item,
    /// before thresholds other than support.
    pub candidates: Vec<ClassRule>,
    pub counts: FilterCounts,
    pub warnings: Vec<String>,
}

/// Class association rules `X => Y` for the configured consequent attribute.
/// `counts.after_redundancy` is left equal to `after_lift`; see [`mine_cars`].
pub fn generate_cars(ts: &TransactionSet, params: &MiningParams) -> Result<CarGeneration> {
    params.validate()?;
    let dict = &ts.dictionary;
    let mut warnings = Vec::new();
    let class_items: Vec<ItemId> = (0..dict.len() as ItemId)
        .filter(|&i| dict.item(i).attribute == params.consequent_attribute)
        .filter(|&i| {
            params
                .target_classes
                .as_ref()
                .is_none_or(|t| t.contains(&dict.item(i).category))
        })
        .collect();
    if let Some(targets) = &params.target_classes {
        for t in targets {
            let item = NamedItem::new(params.consequent_attribute.clone(), t.clone());
            if dict.id(&item).is_none_or(|id| ts.tidsets[id as usize].count() == 0) {
                warnings.push(format!("target class {item} never occurs"));
            }
        }
    }
    if class_items.is_empty() {
        warnings.push(format!(
            "no occurring class items for {:?}",
            params.consequent_attribute
        ));
        return Ok(CarGeneration {
            rules: Vec::new(),
            candidates: Vec::new(),
            counts: FilterCounts::default(),
            warnings,
        });
    }

    let frequent = apriori_frequent(ts, params.min_support, params.max_len)?;
    let counts: HashMap<&[ItemId], u64> =
        frequent.iter().map(|f| (f.items.as_slice(), f.count)).collect();
    let n = ts.len() as u64;
    let is_target: HashSet<ItemId> = class_items.iter().copied().collect();

    let mut candidates = Vec::new();
    for f in &frequent {
        let mut classes = f.items.iter().filter(|i| dict.is_class(**i));
        let (Some(&y), None) = (classes.next(), classes.next()) else {
            continue;
        };
        if !is_target.contains(&y) {
            continue;
        }
        let x: Vec<ItemId> = f.items.iter().copied().filter(|&i| i != y).collect();
        let sigma_x = if x.is_empty() { n } else { counts[x.as_slice()] };
        let sigma_y = counts[[y].as_slice()];
        candidates.push(ClassRule::from_counts(x, y, f.count, sigma_x, sigma_y, n));
    }
    candidates.sort_by(rule_order);

    let mut fc = FilterCounts {
        candidates: candidates.len(),
        ..FilterCounts::default()
    };
    let mut rules: Vec<ClassRule> = candidates
        .iter()
        .filter(|r| r.confidence >= params.min_confidence)
        .cloned()
        .collect();
    fc.after_confidence = rules.len();
    rules.retain(|r| (params.min_len..=params.max_len).contains(&r.len()));
    fc.after_length = rules.len();
    rules.retain(|r| r.support >= params.min_support);
    fc.after_support = rules.len();
    if let Some(floor) = params.lift_floor {
        rules.retain(|r| r.lift >= floor);
    }
    fc.after_lift = rules.len();
    fc.after_redundancy = rules.len();
    Ok(CarGeneration {
        rules,
        candidates,
        counts: fc,
        warnings,
    })
}

/// [`generate_cars`] followed by redundancy pruning against the full candidate set.
pub fn mine_cars(ts: &TransactionSet, params: &MiningParams) -> Result<CarGeneration> {
    let mut g = generate_cars(ts, params)?;
    g.rules = prune_redundant_against(&g.rules, &g.candidates);
    g.counts.after_redundancy = g.rules.len();
    Ok(g)
}

fn rule_key(r: &ClassRule) -> (ItemId, &[ItemId]) {
    (r.consequent, r.antecedent.as_slice())
}

/// Removes every rule for which some rule in `rules` with the same consequent
/// and a proper sub-antecedent has confidence at least as high. Output is in
/// [`rule_order`], so the result does not depend on input order.
pub fn prune_redundant(rules: &[ClassRule]) -> Vec<ClassRule> {
    prune_redundant_against(rules, rules)
}

/// Like [`prune_redundant`], but sub-rules are looked up in `reference`
/// (typically every candidate, including ones filtered out by thresholds).
pub fn prune_redundant_against(rules: &[ClassRule], reference: &[ClassRule]) -> Vec<ClassRule> {
    let by_key: HashMap<(ItemId, &[ItemId]), &ClassRule> =
        reference.iter().map(|r| (rule_key(r), r)).collect();
    let mut kept: Vec<ClassRule> = rules
        .iter()
        .filter(|r| {
            let k = r.antecedent.len();
            // proper subsets of the antecedent as bitmasks over its positions
            !(0..(1u64 << k) - 1).any(|mask| {
                let sub: Vec<ItemId> = (0..k)
                    .filter(|b| mask & (1 << b) != 0)
                    .map(|b| r.antecedent[b])
                    .collect();
                by_key
                    .get(&(r.consequent, sub.as_slice()))
                    .is_some_and(|s| s.confidence_at_least(r))
            })
        })
        .cloned()
        .collect();
    kept.sort_by(rule_order);
    kept.dedup_by(|a, b| rule_key(a) == rule_key(b));
    kept
}

/// Name-level view of a rule, as exported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRule {
    pub antecedent: Vec<NamedItem>,
    pub consequent: NamedItem,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
    pub support_count: u64,
}

impl NamedRule {
    pub fn from_rule(rule: &ClassRule, dict: &ItemDictionary) -> Self {
        Self {
            antecedent: rule.antecedent.iter().map(|&i| dict.item(i).clone()).collect(),
            consequent: dict.item(rule.consequent).clone(),
            support: rule.support,
            confidence: rule.confidence,
            lift: rule.lift,
            support_count: rule.support_count,
        }
    }

    pub fn antecedent_text(&self) -> String {
        self.antecedent
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn name_rules(rules: &[ClassRule], dict: &ItemDictionary) -> Vec<NamedRule> {
    rules.iter().map(|r| NamedRule::from_rule(r, dict)).collect()
}

pub fn rules_to_json(rules: &[NamedRule]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rules)?)
}

pub fn rules_from_json(text: &str) -> Result<Vec<NamedRule>> {
    Ok(serde_json::from_str(text)?)
}

/// Plain-text rule table: comma-joined `Attr = Cat` antecedents per line.
pub fn write_rule_table<W: Write>(mut w: W, rules: &[NamedRule]) -> Result<()> {
    writeln!(w, "antecedents\tconsequent\tsupport\tconfidence\tlift")?;
    for r in rules {
        writeln!(
            w,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            r.antecedent_text(),
            r.consequent,
            r.support,
            r.confidence,
            r.lift
        )?;
    }
    Ok(())
}

/// Occurrences of each item across all antecedents, ordered by item name.
pub fn antecedent_histogram(rules: &[NamedRule]) -> BTreeMap<NamedItem, usize> {
    let mut h = BTreeMap::new();
    for r in rules {
        for it in &r.antecedent {
            *h.entry(it.clone()).or_insert(0) += 1;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn it(a: &str, c: &str) -> NamedItem {
        NamedItem::new(a, c)
    }

    /// {A,C},{A,C},{B,C},{A,B} with A, B, C as separate binary attributes.
    fn abc() -> TransactionSet {
        let a = it("A", "1");
        let b = it("B", "1");
        let c = it("C", "1");
        TransactionSet::from_named(
            &[
                vec![a.clone(), c.clone()],
                vec![a.clone(), c.clone()],
                vec![b.clone(), c.clone()],
                vec![a, b],
            ],
            "C",
        )
        .unwrap()
    }

    fn ids(ts: &TransactionSet, names: &[&str]) -> Vec<ItemId> {
        let mut v: Vec<ItemId> = names
            .iter()
            .map(|n| ts.dictionary().id(&it(n, "1")).unwrap())
            .collect();
        v.sort();
        v
    }

    #[test]
    fn support_counts() {
        let ts = abc();
        assert_eq!(support_count(&ids(&ts, &["A", "C"]), &ts), 2);
        assert_eq!(support_count(&[], &ts), 4);
        let mut d = ts.dictionary().clone();
        let z = d.intern(it("Z", "1"), false);
        let ts2 = TransactionSet::new(d, ts.transactions().to_vec(), ts.row_ids().to_vec()).unwrap();
        assert_eq!(support_count(&[z], &ts2), 0);
    }

    #[test]
    fn apriori_small_instance() {
        let ts = abc();
        let f = apriori_frequent(&ts, 0.5, 3).unwrap();
        let expect = vec![
            FrequentItemset { items: ids(&ts, &["A"]), count: 3 },
            FrequentItemset { items: ids(&ts, &["C"]), count: 3 },
            FrequentItemset { items: ids(&ts, &["B"]), count: 2 },
            FrequentItemset { items: ids(&ts, &["A", "C"]), count: 2 },
        ];
        let mut got = f.clone();
        got.sort();
        let mut expect = expect;
        expect.sort();
        assert_eq!(got, expect);
    }

    #[test]
    fn apriori_full_support_only_universal_items() {
        let ts = TransactionSet::from_named(
            &[vec![it("A", "1"), it("B", "1")], vec![it("A", "1")]],
            "B",
        )
        .unwrap();
        let f = apriori_frequent(&ts, 1.0, 4).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(ts.dictionary().item(f[0].items[0]), &it("A", "1"));
    }

    #[test]
    fn min_count_matches_division() {
        for n in 1..60usize {
            for ms in [0.01, 0.065, 0.1, 0.25, 1.0 / 3.0, 0.5, 0.9, 1.0] {
                let c = min_count(ms, n);
                assert!(c as f64 / n as f64 >= ms);
                assert!(c == 1 || ((c - 1) as f64 / n as f64) < ms);
            }
        }
    }

    #[test]
    fn same_attribute_items_rejected() {
        let mut d = ItemDictionary::new();
        let a = d.intern(it("X", "L"), false);
        let b = d.intern(it("X", "H"), false);
        assert!(TransactionSet::new(d, vec![vec![a, b]], vec!["r".into()]).is_err());
    }

    #[test]
    fn car_metrics_on_small_instance() {
        let ts = abc();
        let mut p = MiningParams::new("C");
        p.min_support = 0.25;
        p.min_confidence = 0.0;
        let g = generate_cars(&ts, &p).unwrap();
        let a_c = g
            .rules
            .iter()
            .find(|r| r.antecedent == ids(&ts, &["A"]))
            .unwrap();
        assert_eq!(a_c.support, 0.5);
        assert!((a_c.confidence - 2.0 / 3.0).abs() < 1e-15);
        assert!((a_c.lift - 8.0 / 9.0).abs() < 1e-15);

        p.min_confidence = 0.9;
        let g = generate_cars(&ts, &p).unwrap();
        assert!(g.rules.iter().all(|r| r.antecedent != ids(&ts, &["A"])));
        assert!(g.counts.is_monotone());
    }

    #[test]
    fn universal_class_gives_unit_confidence_and_lift() {
        let rows = vec![
            vec![it("A", "x"), it("Y", "y")],
            vec![it("A", "z"), it("Y", "y")],
            vec![it("A", "x"), it("Y", "y")],
        ];
        let ts = TransactionSet::from_named(&rows, "Y").unwrap();
        let mut p = MiningParams::new("Y");
        p.min_support = 0.1;
        let g = generate_cars(&ts, &p).unwrap();
        assert!(!g.rules.is_empty());
        for r in &g.rules {
            assert_eq!(r.confidence, 1.0);
            assert_eq!(r.lift, 1.0);
        }
    }

    #[test]
    fn missing_target_class_warns() {
        let ts = abc();
        let mut p = MiningParams::new("C");
        p.target_classes = Some(vec!["2".into()]);
        let g = generate_cars(&ts, &p).unwrap();
        assert!(g.rules.is_empty());
        assert_eq!(g.warnings.len(), 2);
    }

    #[test]
    fn invalid_params() {
        let mut p = MiningParams::new("C");
        p.min_len = 1;
        assert!(p.validate().is_err());
        let mut p = MiningParams::new("C");
        p.max_len = 1;
        assert!(p.validate().is_err());
        let mut p = MiningParams::new("C");
        p.min_support = 0.0;
        assert!(p.validate().is_err());
    }

    fn rule(ante: &[ItemId], sc: u64, ac: u64) -> ClassRule {
        ClassRule::from_counts(ante.to_vec(), 99, sc, ac, 40, 100)
    }

    #[test]
    fn equal_confidence_drops_longer_rule() {
        let short = rule(&[1], 19, 20);
        let long = rule(&[1, 2], 19, 20);
        assert_eq!(prune_redundant(&[short.clone(), long]), vec![short]);
    }

    #[test]
    fn strict_improvement_keeps_both() {
        let short = rule(&[1], 19, 20); // 0.95
        let long = rule(&[1, 2], 97, 100); // 0.97
        assert_eq!(prune_redundant(&[short, long]).len(), 2);
    }

    #[test]
    fn pruning_against_filtered_candidates() {
        let sub = rule(&[1], 18, 18);
        let sup = rule(&[1, 2], 15, 16);
        assert_eq!(prune_redundant(std::slice::from_ref(&sup)).len(), 1);
        assert!(prune_redundant_against(std::slice::from_ref(&sup), &[sub, sup.clone()]).is_empty());
    }

    #[test]
    fn histogram_counts_items() {
        let y = it("DpM", "high");
        let r = |ante: Vec<NamedItem>| NamedRule {
            antecedent: ante,
            consequent: y.clone(),
            support: 0.1,
            confidence: 1.0,
            lift: 2.0,
            support_count: 1,
        };
        let h = antecedent_histogram(&[r(vec![it("A", "L"), it("B", "H")]), r(vec![it("A", "L")])]);
        assert_eq!(h[&it("A", "L")], 2);
        assert_eq!(h[&it("B", "H")], 1);
        assert!(antecedent_histogram(&[]).is_empty());
    }

    #[test]
    fn named_item_parsing() {
        assert_eq!(NamedItem::parse("DpM=high").unwrap(), it("DpM", "high"));
        assert_eq!(NamedItem::parse(" Age_1 = L ").unwrap(), it("Age_1", "L"));
        assert!(NamedItem::parse("DpM").is_err());
    }

    #[test]
    fn rule_json_round_trip_and_table() {
        let ts = abc();
        let mut p = MiningParams::new("C");
        p.min_support = 0.25;
        p.min_confidence = 0.5;
        // A => C (2/3) and B => C (1/2) do not beat the prior 3/4 of {} => C.
        assert!(mine_cars(&ts, &p).unwrap().rules.is_empty());
        let g = generate_cars(&ts, &p).unwrap();
        let named = name_rules(&g.rules, ts.dictionary());
        let text = rules_to_json(&named).unwrap();
        assert_eq!(rules_from_json(&text).unwrap(), named);
        let mut buf = Vec::new();
        write_rule_table(&mut buf, &named).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("A = 1\tC = 1"));
    }
}
