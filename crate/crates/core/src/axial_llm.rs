//! Axial coding by asking a chat model to group code/utterance items.
//!
//! Items are batched, each batch is grouped independently, and the raw
//! categories of all batches (and optionally several models) are merged by
//! label similarity or membership overlap before every utterance is settled
//! into a single category.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatRequest, GroupItem, PromptTemplates, Task};
use crate::category::{Category, CategorySystem, Provenance};
use crate::embedding::{cosine_similarity, reaches, EmbeddingError, EmbeddingProvider};
use crate::open_coding::CodedUtterance;
use crate::text::{clean_label, normalize_label, word_count, MAX_LABEL_WORDS};

pub const MIN_BATCH: usize = 200;
pub const MAX_BATCH: usize = 500;

#[derive(Debug, Error)]
pub enum AxialLlmError {
    #[error("batch size {0} outside [{MIN_BATCH}, {MAX_BATCH}]")]
    BatchSize(usize),
    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    BadThreshold { name: &'static str, value: f64 },
    #[error("recursion depth must be at least 1")]
    ZeroDepth,
    #[error("cannot group an empty category system")]
    EmptySystem,
    #[error("every batch failed; first error: {0}")]
    AllBatchesFailed(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("grouper returned malformed JSON after {retries} repair attempt(s)")]
    Malformed { retries: usize, raw: String },
}

/// Which member sets the Jaccard overlap is computed over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JaccardOver {
    #[default]
    Utterances,
    Codes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergePolicy {
    pub label_cos_threshold: f64,
    pub jaccard_threshold: f64,
    pub label_embedder: String,
    pub jaccard_over: JaccardOver,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            label_cos_threshold: 0.70,
            jaccard_threshold: 0.20,
            label_embedder: "test-hash".into(),
            jaccard_over: JaccardOver::Utterances,
        }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<(), AxialLlmError> {
        for (name, value) in [("label_cos_threshold", self.label_cos_threshold), ("jaccard_threshold", self.jaccard_threshold)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(AxialLlmError::BadThreshold { name, value });
            }
        }
        Ok(())
    }
}

/// Items per grouping request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct BatchSize(usize);

impl BatchSize {
    pub fn new(n: usize) -> Result<Self, AxialLlmError> {
        if (MIN_BATCH..=MAX_BATCH).contains(&n) {
            Ok(Self(n))
        } else {
            Err(AxialLlmError::BatchSize(n))
        }
    }

    /// Any positive size, for small fixtures.
    pub fn unchecked(n: usize) -> Self {
        Self(n.max(1))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for BatchSize {
    type Error = AxialLlmError;
    fn try_from(n: usize) -> Result<Self, Self::Error> {
        Self::new(n)
    }
}

impl From<BatchSize> for usize {
    fn from(b: BatchSize) -> usize {
        b.0
    }
}

impl Default for BatchSize {
    fn default() -> Self {
        Self(300)
    }
}

/// A unit handed to the grouper. `key` is an utterance id at the first level
/// and a category id when grouping categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub key: String,
    pub code: String,
    pub text: String,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

/// Read one escaped quoted field starting right after its opening quote.
fn unescape_field(s: &str) -> Option<(String, &str)> {
    let mut out = String::new();
    let mut chars = s.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Some((out, &s[i + 1..])),
            '\\' => match chars.next()?.1 {
                'n' => out.push('\n'),
                other => out.push(other),
            },
            c => out.push(c),
        }
    }
    None
}

pub fn format_item(code: &str, text: &str) -> String {
    format!("Code: \"{}\" Utterance: \"{}\"", escape(code), escape(text))
}

/// Inverse of [`format_item`].
pub fn parse_item(s: &str) -> Option<(String, String)> {
    let (code, rest) = unescape_field(s.strip_prefix("Code: \"")?)?;
    let (text, rest) = unescape_field(rest.strip_prefix(" Utterance: \"")?)?;
    rest.is_empty().then_some((code, text))
}

/// One item string per coded utterance that has a code.
pub fn format_items(coded: &[CodedUtterance]) -> Vec<String> {
    coded.iter().filter_map(|c| c.code().map(|code| format_item(code, &c.text))).collect()
}

pub fn items_of(coded: &[CodedUtterance]) -> Vec<Item> {
    coded
        .iter()
        .filter_map(|c| c.code().map(|code| Item { key: c.utterance_id.clone(), code: code.to_string(), text: c.text.clone() }))
        .collect()
}

pub fn batch_items<T: Clone>(items: &[T], size: BatchSize) -> Vec<Vec<T>> {
    items.chunks(size.get()).map(<[T]>::to_vec).collect()
}

/// Parsed answer for one batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchGrouping {
    pub groups: BTreeMap<String, Vec<String>>,
    pub retries: usize,
    pub dropped_codes: Vec<String>,
    pub truncated_labels: Vec<String>,
}

/// First balanced `{...}` span, skipping braces inside strings.
fn first_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_groups(raw: &str) -> Option<Vec<(String, Vec<String>)>> {
    let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(first_json_object(raw)?).ok()?;
    let mut out = Vec::with_capacity(obj.len());
    for (label, v) in obj {
        let codes = v.as_array()?.iter().map(|c| c.as_str().map(str::to_string)).collect::<Option<Vec<_>>>()?;
        out.push((label, codes));
    }
    Some(out)
}

fn validate_groups(parsed: Vec<(String, Vec<String>)>, batch: &[Item], retries: usize) -> BatchGrouping {
    let mut known: HashMap<String, &str> = HashMap::new();
    for item in batch {
        known.entry(normalize_label(&item.code)).or_insert(&item.code);
    }
    let mut g = BatchGrouping { retries, ..Default::default() };
    for (raw_label, codes) in parsed {
        let Some(label) = clean_label(&raw_label, MAX_LABEL_WORDS) else {
            tracing::warn!(label = %raw_label, "dropping category with empty label");
            continue;
        };
        if label.truncated {
            g.truncated_labels.push(label.text.clone());
        }
        let entry = g.groups.entry(label.text).or_default();
        for code in codes {
            match known.get(&normalize_label(&code)) {
                Some(k) => {
                    if !entry.iter().any(|c| c == k) {
                        entry.push(k.to_string());
                    }
                }
                None => {
                    tracing::warn!(code = %code, "grouper returned a code absent from the batch");
                    g.dropped_codes.push(code);
                }
            }
        }
    }
    g.groups.retain(|_, codes| !codes.is_empty());
    g
}

/// Ask the grouper for categories over one batch.
///
/// Malformed output triggers exactly one repair request.
pub fn group_batch(
    batch: &[Item],
    grouper: &dyn ChatBackend,
    templates: &PromptTemplates,
    temperature: f64,
    seed: Option<u64>,
) -> Result<BatchGrouping, GroupError> {
    let formatted: Vec<String> = batch.iter().map(|i| format_item(&i.code, &i.text)).collect();
    let group_items: Vec<GroupItem> = batch.iter().map(|i| GroupItem { code: i.code.clone(), text: i.text.clone() }).collect();
    let first = grouper.complete(&ChatRequest {
        messages: templates.grouper_messages(&formatted),
        temperature,
        seed,
        task: Task::Group { items: group_items.clone(), repair: false },
    })?;
    if let Some(parsed) = parse_groups(&first) {
        return Ok(validate_groups(parsed, batch, 0));
    }
    tracing::warn!(grouper = grouper.name(), "malformed grouping JSON; sending repair request");
    let second = grouper.complete(&ChatRequest {
        messages: templates.repair_messages(&formatted, &first),
        temperature,
        seed,
        task: Task::Group { items: group_items, repair: true },
    })?;
    match parse_groups(&second) {
        Some(parsed) => Ok(validate_groups(parsed, batch, 1)),
        None => Err(GroupError::Malformed { retries: 1, raw: second }),
    }
}

fn members_for(codes: &[String], batch: &[Item]) -> (BTreeSet<String>, BTreeSet<String>) {
    let wanted: BTreeSet<&str> = codes.iter().map(String::as_str).collect();
    let mut keys = BTreeSet::new();
    let mut found = BTreeSet::new();
    for item in batch {
        if wanted.contains(item.code.as_str()) {
            keys.insert(item.key.clone());
            found.insert(item.code.clone());
        }
    }
    (found, keys)
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn representative(labels: &[&str]) -> String {
    labels.iter().min_by(|a, b| word_count(a).cmp(&word_count(b)).then_with(|| a.cmp(b))).unwrap().to_string()
}

fn sort_key(c: &Category) -> (&str, &BTreeSet<String>, &BTreeSet<String>) {
    (&c.label, &c.member_utterances, &c.member_codes)
}

/// Merge categories into connected components of the similarity graph,
/// repeated until no pair of categories is linked.
///
/// The result does not depend on the order of `raw`; ids are `c0, c1, ...`
/// in label order.
pub fn merge_categories(
    raw: Vec<Category>,
    policy: &MergePolicy,
    provider: &dyn EmbeddingProvider,
) -> Result<(Vec<Category>, Vec<Provenance>), AxialLlmError> {
    policy.validate()?;
    let mut cats = raw;
    cats.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    let mut log = Vec::new();
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    loop {
        let missing: Vec<String> = cats
            .iter()
            .map(|c| normalize_label(&c.label))
            .filter(|l| !vectors.contains_key(l))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !missing.is_empty() {
            let refs: Vec<&str> = missing.iter().map(String::as_str).collect();
            let vs = provider.embed_batch(&refs)?;
            vectors.extend(missing.into_iter().zip(vs));
        }
        let n = cats.len();
        let mut parent: Vec<usize> = (0..n).collect();
        let mut linked = false;
        for i in 0..n {
            for j in i + 1..n {
                let cos = cosine_similarity(&vectors[&normalize_label(&cats[i].label)], &vectors[&normalize_label(&cats[j].label)])?;
                let jac = match policy.jaccard_over {
                    JaccardOver::Utterances => jaccard(&cats[i].member_utterances, &cats[j].member_utterances),
                    JaccardOver::Codes => jaccard(&cats[i].member_codes, &cats[j].member_codes),
                };
                if reaches(cos, policy.label_cos_threshold) || reaches(jac, policy.jaccard_threshold) {
                    linked = true;
                    log.push(Provenance::MergeEdge { a: cats[i].label.clone(), b: cats[j].label.clone(), cosine: cos, jaccard: jac });
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        if !linked {
            break;
        }
        let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            components.entry(r).or_default().push(i);
        }
        let mut next = Vec::with_capacity(components.len());
        for members in components.values() {
            if members.len() == 1 {
                next.push(cats[members[0]].clone());
                continue;
            }
            let labels: Vec<&str> = members.iter().map(|&i| cats[i].label.as_str()).collect();
            let label = representative(&labels);
            let mut merged = Category { id: String::new(), label: label.clone(), member_codes: BTreeSet::new(), member_utterances: BTreeSet::new() };
            for &i in members {
                merged.member_codes.extend(cats[i].member_codes.iter().cloned());
                merged.member_utterances.extend(cats[i].member_utterances.iter().cloned());
            }
            log.push(Provenance::Merge { into: label, from: labels.iter().map(|s| s.to_string()).collect() });
            next.push(merged);
        }
        next.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
        cats = next;
    }
    for (i, c) in cats.iter_mut().enumerate() {
        c.id = format!("c{i}");
    }
    Ok((cats, log))
}

/// Settle every unit into at most one category.
///
/// A unit claimed by several categories stays in the one with the most
/// members (sizes taken once, before any reassignment; ties go to the
/// smallest label). `code_of` maps units to their codes so that member codes
/// can be recomputed.
pub fn assign_utterances(
    merged: Vec<Category>,
    corpus_ids: &BTreeSet<String>,
    code_of: &HashMap<String, String>,
    method: &str,
) -> CategorySystem {
    let sizes: Vec<usize> = merged.iter().map(Category::size).collect();
    let mut claims: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in merged.iter().enumerate() {
        for u in &c.member_utterances {
            claims.entry(u.as_str()).or_default().push(i);
        }
    }
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    let mut provenance = Vec::new();
    for (u, cs) in &claims {
        let best = *cs
            .iter()
            .min_by(|&&a, &&b| sizes[b].cmp(&sizes[a]).then_with(|| merged[a].label.cmp(&merged[b].label)))
            .unwrap();
        if cs.len() > 1 {
            provenance.push(Provenance::Reassign {
                utterance: u.to_string(),
                kept: merged[best].label.clone(),
                dropped_from: cs.iter().filter(|&&c| c != best).map(|&c| merged[c].label.clone()).collect(),
            });
        }
        owner.insert(u.to_string(), best);
    }

    let mut system = CategorySystem::new(method);
    for (i, c) in merged.into_iter().enumerate() {
        let members: BTreeSet<String> = c.member_utterances.iter().filter(|u| owner.get(*u) == Some(&i)).cloned().collect();
        if members.is_empty() {
            provenance.push(Provenance::Removed { label: c.label });
            continue;
        }
        let codes = members.iter().filter_map(|u| code_of.get(u)).filter(|code| c.member_codes.contains(*code)).cloned().collect();
        system.categories.push(Category { id: format!("c{}", system.categories.len()), label: c.label, member_codes: codes, member_utterances: members });
    }
    system.unassigned = corpus_ids.iter().filter(|u| !owner.contains_key(*u)).cloned().collect();
    system.provenance = provenance;
    system
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmGroupingConfig {
    pub policy: MergePolicy,
    pub batch_size: BatchSize,
    pub temperature: f64,
    pub seed: Option<u64>,
    /// Batches grouped concurrently.
    pub parallelism: usize,
}

impl Default for LlmGroupingConfig {
    fn default() -> Self {
        Self { policy: MergePolicy::default(), batch_size: BatchSize::default(), temperature: 0.0, seed: None, parallelism: 4 }
    }
}

/// Raw per-batch categories of one grouper, before any merging.
pub fn raw_categories(
    items: &[Item],
    grouper: &dyn ChatBackend,
    templates: &PromptTemplates,
    cfg: &LlmGroupingConfig,
) -> Result<(Vec<Category>, Vec<Provenance>), AxialLlmError> {
    let batches = batch_items(items, cfg.batch_size);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| AxialLlmError::Pool(e.to_string()))?;
    let results: Vec<Result<BatchGrouping, GroupError>> =
        pool.install(|| batches.par_iter().map(|b| group_batch(b, grouper, templates, cfg.temperature, cfg.seed)).collect());

    let mut cats = Vec::new();
    let mut log = Vec::new();
    let mut first_error = None;
    for (index, (batch, result)) in batches.iter().zip(results).enumerate() {
        match result {
            Ok(g) => {
                log.push(Provenance::Batch {
                    index,
                    items: batch.len(),
                    categories: g.groups.len(),
                    retries: g.retries,
                    failed: false,
                    dropped_codes: g.dropped_codes,
                    truncated_labels: g.truncated_labels,
                });
                for (label, codes) in g.groups {
                    let (member_codes, member_utterances) = members_for(&codes, batch);
                    cats.push(Category { id: String::new(), label, member_codes, member_utterances });
                }
            }
            Err(e) => {
                tracing::warn!(grouper = grouper.name(), batch = index, error = %e, "batch failed; its items stay unassigned");
                let retries = matches!(e, GroupError::Malformed { .. }) as usize;
                log.push(Provenance::Batch { index, items: batch.len(), categories: 0, retries, failed: true, dropped_codes: vec![], truncated_labels: vec![] });
                first_error.get_or_insert(e.to_string());
            }
        }
    }
    if !batches.is_empty() && log.iter().all(|p| matches!(p, Provenance::Batch { failed: true, .. })) {
        return Err(AxialLlmError::AllBatchesFailed(first_error.unwrap_or_default()));
    }
    Ok((cats, log))
}

fn params_of(cfg: &LlmGroupingConfig, groupers: &[&str]) -> BTreeMap<String, serde_json::Value> {
    let mut p = BTreeMap::new();
    p.insert("grouper".into(), serde_json::json!(groupers.join("+")));
    p.insert("batch_size".into(), serde_json::json!(cfg.batch_size.get()));
    p.insert("cos".into(), serde_json::json!(cfg.policy.label_cos_threshold));
    p.insert("jaccard".into(), serde_json::json!(cfg.policy.jaccard_threshold));
    p
}

fn group_items(
    items: &[Item],
    corpus_ids: &BTreeSet<String>,
    groupers: &[Arc<dyn ChatBackend>],
    templates: &PromptTemplates,
    cfg: &LlmGroupingConfig,
    provider: &dyn EmbeddingProvider,
    method: &str,
) -> Result<CategorySystem, AxialLlmError> {
    let mut raw = Vec::new();
    let mut log = Vec::new();
    for g in groupers {
        let (cats, batch_log) = raw_categories(items, g.as_ref(), templates, cfg)?;
        raw.extend(cats);
        log.extend(batch_log);
    }
    let (merged, merge_log) = merge_categories(raw, &cfg.policy, provider)?;
    log.extend(merge_log);
    let code_of: HashMap<String, String> = items.iter().map(|i| (i.key.clone(), i.code.clone())).collect();
    let mut system = assign_utterances(merged, corpus_ids, &code_of, method);
    log.append(&mut system.provenance);
    system.provenance = log;
    let names: Vec<&str> = groupers.iter().map(|g| g.name()).collect();
    system.params = params_of(cfg, &names);
    Ok(system)
}

fn corpus_ids_of(coded: &[CodedUtterance]) -> BTreeSet<String> {
    coded.iter().map(|c| c.utterance_id.clone()).collect()
}

/// Full grouping path for one model: format, batch, group, merge, assign.
///
/// Uncodable utterances and items of failed batches end up unassigned.
pub fn run_llm_grouping(
    coded: &[CodedUtterance],
    grouper: Arc<dyn ChatBackend>,
    templates: &PromptTemplates,
    cfg: &LlmGroupingConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<CategorySystem, AxialLlmError> {
    let method = format!("llm:{}", grouper.name());
    group_items(&items_of(coded), &corpus_ids_of(coded), &[grouper], templates, cfg, provider, &method)
}

/// Like [`run_llm_grouping`] but pools the raw categories of several models
/// before merging.
pub fn run_llm_grouping_combined(
    coded: &[CodedUtterance],
    groupers: &[Arc<dyn ChatBackend>],
    templates: &PromptTemplates,
    cfg: &LlmGroupingConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<CategorySystem, AxialLlmError> {
    group_items(&items_of(coded), &corpus_ids_of(coded), groupers, templates, cfg, provider, "llm:combined")
}

/// Codes shown for a category when it is itself grouped.
pub const TOP_CODES: usize = 5;

/// Group categories into higher-order aggregates, `depth` times.
///
/// Each returned level lists aggregates whose member codes are the labels of
/// the categories below and whose utterances are theirs combined.
pub fn group_recursive(
    system: &CategorySystem,
    grouper: Arc<dyn ChatBackend>,
    templates: &PromptTemplates,
    cfg: &LlmGroupingConfig,
    provider: &dyn EmbeddingProvider,
    depth: usize,
) -> Result<Vec<CategorySystem>, AxialLlmError> {
    if depth == 0 {
        return Err(AxialLlmError::ZeroDepth);
    }
    if system.categories.is_empty() {
        return Err(AxialLlmError::EmptySystem);
    }
    let mut levels = Vec::with_capacity(depth);
    let mut current = system.clone();
    for level in 0..depth {
        if current.categories.len() <= 1 {
            levels.push(current.clone());
            continue;
        }
        let items: Vec<Item> = current
            .categories
            .iter()
            .map(|c| Item {
                key: c.id.clone(),
                code: c.label.clone(),
                text: c.member_codes.iter().take(TOP_CODES).cloned().collect::<Vec<_>>().join("; "),
            })
            .collect();
        let keys: BTreeSet<String> = items.iter().map(|i| i.key.clone()).collect();
        let method = format!("{}/level{}", system.method, level + 2);
        let by_key = group_items(&items, &keys, std::slice::from_ref(&grouper), templates, cfg, provider, &method)?;

        let child: HashMap<&str, &Category> = current.categories.iter().map(|c| (c.id.as_str(), c)).collect();
        let mut next = CategorySystem::new(method);
        next.params = by_key.params.clone();
        next.params.insert("illustrative".into(), serde_json::json!(true));
        next.unassigned = current.unassigned.clone();
        for agg in &by_key.categories {
            let mut cat = Category { id: agg.id.clone(), label: agg.label.clone(), member_codes: BTreeSet::new(), member_utterances: BTreeSet::new() };
            for k in &agg.member_utterances {
                let c = child[k.as_str()];
                cat.member_codes.insert(c.label.clone());
                cat.member_utterances.extend(c.member_utterances.iter().cloned());
            }
            next.categories.push(cat);
        }
        for k in &by_key.unassigned {
            next.unassigned.extend(child[k.as_str()].member_utterances.iter().cloned());
        }
        next.provenance = by_key.provenance;
        levels.push(next.clone());
        current = next;
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{FnBackend, MockBackend, ScriptedBackend};
    use crate::embedding::TestHashProvider;

    fn item(key: &str, code: &str) -> Item {
        Item { key: key.into(), code: code.into(), text: format!("text of {key}") }
    }

    fn cat(label: &str, utts: &[&str]) -> Category {
        Category {
            id: String::new(),
            label: label.into(),
            member_codes: BTreeSet::from([label.to_string()]),
            member_utterances: utts.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn coded(id: &str, code: Option<&str>, text: &str) -> CodedUtterance {
        CodedUtterance {
            utterance_id: id.into(),
            text: text.into(),
            candidates: vec![],
            failures: vec![],
            moderator: None,
            refined_code: code.map(str::to_string),
            reused: false,
            uncodable: code.is_none(),
        }
    }

    #[test]
    fn format_matches_template() {
        assert_eq!(format_item("housing shortage", "We lack homes."), r#"Code: "housing shortage" Utterance: "We lack homes.""#);
        assert!(format_items(&[]).is_empty());
    }

    #[test]
    fn escaped_quotes_round_trip() {
        let text = "He said \"no\" \\ twice\nthen left";
        let s = format_item("quote \"x\"", text);
        assert_eq!(parse_item(&s), Some(("quote \"x\"".to_string(), text.to_string())));
    }

    #[test]
    fn batches_cover_items_once() {
        let items: Vec<usize> = (0..1000).collect();
        let b = batch_items(&items, BatchSize::new(300).unwrap());
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [300, 300, 300, 100]);
        assert_eq!(b.concat(), items);
        assert_eq!(batch_items(&items[..5], BatchSize::unchecked(2)).len(), 3);
        assert!(matches!(BatchSize::new(600), Err(AxialLlmError::BatchSize(600))));
        assert!(BatchSize::new(199).is_err());
    }

    #[test]
    fn group_batch_parses_valid_json() {
        let batch = vec![item("u1", "rent hikes"), item("u2", "army budget"), item("u3", "rent control")];
        let m = MockBackend::parse("g", "first-words:1").unwrap();
        let g = group_batch(&batch, &m, &PromptTemplates::default(), 0.0, None).unwrap();
        assert_eq!(g.groups.len(), 2);
        assert_eq!(g.groups["rent"], ["rent hikes", "rent control"]);
        assert_eq!(g.retries, 0);
    }

    #[test]
    fn hallucinated_codes_are_dropped() {
        let batch = vec![item("u1", "rent hikes")];
        let m = ScriptedBackend::new("g", vec![Ok(r#"Here: {"Housing": ["rent hikes", "xyz"]}"#.into())]);
        let g = group_batch(&batch, &m, &PromptTemplates::default(), 0.0, None).unwrap();
        assert_eq!(g.groups["Housing"], ["rent hikes"]);
        assert_eq!(g.dropped_codes, ["xyz"]);
    }

    #[test]
    fn long_labels_truncated_and_flagged() {
        let batch = vec![item("u1", "a")];
        let m = ScriptedBackend::new("g", vec![Ok(r#"{"one two three four five six": ["a"]}"#.into())]);
        let g = group_batch(&batch, &m, &PromptTemplates::default(), 0.0, None).unwrap();
        assert!(g.groups.contains_key("one two three four five"));
        assert_eq!(g.truncated_labels, ["one two three four five"]);
    }

    #[test]
    fn one_repair_then_success() {
        let batch = vec![item("u1", "a")];
        let m = ScriptedBackend::new("g", vec![Ok(r#"{"x": ["a""#.into()), Ok(r#"{"x": ["a"]}"#.into())]);
        let g = group_batch(&batch, &m, &PromptTemplates::default(), 0.0, None).unwrap();
        assert_eq!(g.retries, 1);
        assert_eq!(m.calls(), 2);
        let reqs = m.requests();
        assert!(matches!(reqs[1].task, Task::Group { repair: true, .. }));
        assert_eq!(reqs[1].messages.len(), 3);
    }

    #[test]
    fn still_malformed_fails_after_one_repair() {
        let batch = vec![item("u1", "a")];
        let m = ScriptedBackend::new("g", vec![Ok("nope".into()), Ok("still nope".into()), Ok(r#"{"x":["a"]}"#.into())]);
        let e = group_batch(&batch, &m, &PromptTemplates::default(), 0.0, None).unwrap_err();
        assert!(matches!(e, GroupError::Malformed { retries: 1, .. }));
        assert_eq!(m.calls(), 2);
    }

    #[test]
    fn json_object_extraction_ignores_braces_in_strings() {
        assert_eq!(first_json_object(r#"```json {"a}": ["{"]} ``` trailing }"#), Some(r#"{"a}": ["{"]}"#));
        assert_eq!(first_json_object("{ unbalanced"), None);
    }

    #[test]
    fn identical_labels_merge() {
        let p = TestHashProvider::new(256);
        let (m, _) = merge_categories(vec![cat("housing", &["u1"]), cat("Housing", &["u2"])], &MergePolicy::default(), &p).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].member_utterances.len(), 2);
    }

    #[test]
    fn membership_overlap_merges() {
        let p = TestHashProvider::new(4096);
        let a = cat("zebra crossings", &["a", "b", "c", "d"]);
        let b = cat("fiscal deficit", &["c", "d", "e"]);
        assert_eq!(jaccard(&a.member_utterances, &b.member_utterances), 0.4);
        let (m, _) = merge_categories(vec![a, b], &MergePolicy::default(), &p).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].label, "fiscal deficit");
    }

    #[test]
    fn weak_links_do_not_merge() {
        let p = TestHashProvider::new(4096);
        // ten members each, one shared: jaccard 1/19
        let a: Vec<String> = (0..10).map(|i| format!("a{i}")).collect();
        let mut b: Vec<String> = (0..9).map(|i| format!("b{i}")).collect();
        b.push("a0".into());
        let ca = Category { id: String::new(), label: "school meals".into(), member_codes: BTreeSet::new(), member_utterances: a.into_iter().collect() };
        let cb = Category { id: String::new(), label: "naval ships".into(), member_codes: BTreeSet::new(), member_utterances: b.into_iter().collect() };
        let cos = cosine_similarity(&p.embed("school meals"), &p.embed("naval ships")).unwrap();
        assert!(cos < 0.7);
        let (m, _) = merge_categories(vec![ca, cb], &MergePolicy::default(), &p).unwrap();
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn representative_is_shortest_then_smallest() {
        assert_eq!(representative(&["public housing policy", "rents", "homes"]), "homes");
    }

    #[test]
    fn code_set_jaccard_switch() {
        let p = TestHashProvider::new(4096);
        let mut a = cat("alpha topic", &["u1"]);
        let mut b = cat("omega matter", &["u2"]);
        a.member_codes = BTreeSet::from(["x".into(), "y".into()]);
        b.member_codes = BTreeSet::from(["x".into()]);
        let by_utt = merge_categories(vec![a.clone(), b.clone()], &MergePolicy::default(), &p).unwrap().0;
        assert_eq!(by_utt.len(), 2);
        let policy = MergePolicy { jaccard_over: JaccardOver::Codes, ..Default::default() };
        assert_eq!(merge_categories(vec![a, b], &policy, &p).unwrap().0.len(), 1);
    }

    fn ids(n: usize) -> BTreeSet<String> {
        (0..n).map(|i| format!("u{i}")).collect()
    }

    #[test]
    fn largest_category_wins() {
        let big: Vec<String> = (0..12).map(|i| format!("u{i}")).collect();
        let small: Vec<String> = (11..16).map(|i| format!("u{i}")).collect();
        let big: Vec<&str> = big.iter().map(String::as_str).collect();
        let small: Vec<&str> = small.iter().map(String::as_str).collect();
        let merged = vec![cat("big", &big), cat("small", &small)];
        let s = assign_utterances(merged, &ids(20), &HashMap::new(), "m");
        let of = s.category_of();
        assert_eq!(of["u11"].label, "big");
        assert_eq!(s.unassigned.len(), 4);
        assert!(s.validate(Some(&ids(20))).is_ok());
    }

    #[test]
    fn size_tie_goes_to_smallest_label() {
        let merged = vec![cat("health", &["u0", "u1", "u2", "u3"]), cat("budget", &["u3", "u4", "u5", "u6"])];
        let s = assign_utterances(merged, &ids(7), &HashMap::new(), "m");
        assert_eq!(s.category_of()["u3"].label, "budget");
    }

    #[test]
    fn emptied_categories_are_removed() {
        let merged = vec![cat("big", &["u0", "u1"]), cat("inside", &["u1"])];
        let s = assign_utterances(merged, &ids(2), &HashMap::new(), "m");
        assert_eq!(s.categories.len(), 1);
        assert!(s.provenance.iter().any(|p| matches!(p, Provenance::Removed { label } if label == "inside")));
    }

    fn ten_coded() -> Vec<CodedUtterance> {
        let codes = ["rent hikes", "rent control", "army budget", "army pay", "school meals", "school fees", "rent caps", "army bases", "school buses", "tax cuts"];
        codes.iter().enumerate().map(|(i, c)| coded(&format!("u{i}"), Some(c), &format!("about {c}"))).collect()
    }

    fn small_cfg() -> LlmGroupingConfig {
        LlmGroupingConfig { batch_size: BatchSize::unchecked(4), ..Default::default() }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let p = TestHashProvider::new(384);
        let g: Arc<dyn ChatBackend> = Arc::new(MockBackend::parse("g", "first-words:1").unwrap());
        let a = run_llm_grouping(&ten_coded(), g.clone(), &PromptTemplates::default(), &small_cfg(), &p).unwrap();
        let b = run_llm_grouping(&ten_coded(), g, &PromptTemplates::default(), &small_cfg(), &p).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.categories.len(), 4);
        assert_eq!(a.coverage(10), 1.0);
    }

    #[test]
    fn abstention_lowers_coverage() {
        let p = TestHashProvider::new(384);
        let g: Arc<dyn ChatBackend> = Arc::new(FnBackend::new("g", |req| match &req.task {
            Task::Group { items, .. } => {
                let codes: Vec<&str> = items.iter().map(|i| i.code.as_str()).filter(|c| !c.starts_with("school")).collect();
                Ok(serde_json::json!({ "policy": codes }).to_string())
            }
            _ => Ok(String::new()),
        }));
        let mut c = ten_coded();
        c.truncate(10);
        c[9].refined_code = Some("school trips".into());
        let s = run_llm_grouping(&c, g, &PromptTemplates::default(), &LlmGroupingConfig { batch_size: BatchSize::unchecked(10), ..Default::default() }, &p).unwrap();
        // school meals, school fees, school buses, school trips omitted
        assert_eq!(s.coverage(10), 0.6);
        assert_eq!(s.unassigned.len(), 4);
    }

    #[test]
    fn failed_batches_leave_items_unassigned() {
        let p = TestHashProvider::new(384);
        let g: Arc<dyn ChatBackend> = Arc::new(FnBackend::new("g", |req| match &req.task {
            Task::Group { items, .. } if items.iter().any(|i| i.code == "rent hikes") => Ok("garbage".into()),
            Task::Group { items, .. } => Ok(group_by_first(items)),
            _ => Ok(String::new()),
        }));
        let s = run_llm_grouping(&ten_coded(), g, &PromptTemplates::default(), &small_cfg(), &p).unwrap();
        assert_eq!(s.unassigned.len(), 4);
        assert!(s.provenance.iter().any(|p| matches!(p, Provenance::Batch { failed: true, retries: 1, .. })));
    }

    fn group_by_first(items: &[GroupItem]) -> String {
        crate::backend::mock::group_by_first_word(items)
    }

    #[test]
    fn all_batches_failing_is_an_error() {
        let p = TestHashProvider::new(64);
        let g: Arc<dyn ChatBackend> = Arc::new(MockBackend::parse("g", "fail").unwrap());
        assert!(matches!(
            run_llm_grouping(&ten_coded(), g, &PromptTemplates::default(), &small_cfg(), &p),
            Err(AxialLlmError::AllBatchesFailed(_))
        ));
    }

    #[test]
    fn combined_models_leave_no_mergeable_pair() {
        let p = TestHashProvider::new(384);
        let g1: Arc<dyn ChatBackend> = Arc::new(MockBackend::parse("g1", "first-words:1").unwrap());
        let g2: Arc<dyn ChatBackend> = Arc::new(MockBackend::parse("g2", "fixed:public policy").unwrap());
        let s = run_llm_grouping_combined(&ten_coded(), &[g1, g2], &PromptTemplates::default(), &small_cfg(), &p).unwrap();
        for i in 0..s.categories.len() {
            for j in i + 1..s.categories.len() {
                let (a, b) = (&s.categories[i], &s.categories[j]);
                let cos = cosine_similarity(&p.embed(&normalize_label(&a.label)), &p.embed(&normalize_label(&b.label))).unwrap();
                assert!(cos < 0.7);
                assert!(jaccard(&a.member_utterances, &b.member_utterances) < 0.2);
            }
        }
        assert!(s.validate(None).is_ok());
    }

    #[test]
    fn uncodable_utterances_are_unassigned() {
        let p = TestHashProvider::new(64);
        let mut c = ten_coded();
        c.push(coded("u10", None, "???"));
        let g: Arc<dyn ChatBackend> = Arc::new(MockBackend::parse("g", "first-words:1").unwrap());
        let s = run_llm_grouping(&c, g, &PromptTemplates::default(), &small_cfg(), &p).unwrap();
        assert!(s.unassigned.contains("u10"));
    }

    #[test]
    fn recursion_depth_zero_is_an_error() {
        let s = CategorySystem::new("m");
        let g: Arc<dyn ChatBackend> = Arc::new(MockBackend::parse("g", "first").unwrap());
        assert!(matches!(
            group_recursive(&s, g, &PromptTemplates::default(), &small_cfg(), &TestHashProvider::new(8), 0),
            Err(AxialLlmError::ZeroDepth)
        ));
    }

    #[test]
    fn single_category_is_a_fixpoint() {
        let mut s = CategorySystem::new("m");
        s.categories.push(Category { id: "c0".into(), ..cat("only", &["u1"]) });
        let g: Arc<dyn ChatBackend> = Arc::new(MockBackend::parse("g", "first").unwrap());
        let levels = group_recursive(&s, g, &PromptTemplates::default(), &small_cfg(), &TestHashProvider::new(8), 2).unwrap();
        assert_eq!(levels, vec![s.clone(), s]);
    }

    #[test]
    fn six_categories_pair_into_three() {
        let mut s = CategorySystem::new("m");
        let labels = ["alpha one", "alpha two", "beta one", "beta two", "gamma one", "gamma two"];
        for (i, l) in labels.iter().enumerate() {
            s.categories.push(Category { id: format!("c{i}"), ..cat(l, &[&format!("u{i}")]) });
        }
        let g: Arc<dyn ChatBackend> = Arc::new(FnBackend::new("pair", |req| match &req.task {
            Task::Group { items, .. } => {
                let mut m = serde_json::Map::new();
                for pair in items.chunks(2) {
                    let codes: Vec<&str> = pair.iter().map(|i| i.code.as_str()).collect();
                    let head = ["north", "south", "east"][m.len()];
                    m.insert(format!("{head} group"), serde_json::json!(codes));
                }
                Ok(serde_json::Value::Object(m).to_string())
            }
            _ => Ok(String::new()),
        }));
        let cfg = LlmGroupingConfig { batch_size: BatchSize::unchecked(10), ..Default::default() };
        let levels = group_recursive(&s, g, &PromptTemplates::default(), &cfg, &TestHashProvider::new(4096), 1).unwrap();
        assert_eq!(levels.len(), 1);
        assert_eq!(levels[0].categories.len(), 3);
        assert_eq!(levels[0].assigned_count(), 6);
        assert!(levels[0].validate(None).is_ok());
    }
}
