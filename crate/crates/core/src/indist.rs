//! Combinatorial indistinguishability analysis.
//!
//! The attacker's only signal is the trace sequence: how many traces were
//! started in each group of slots. Given a catalog mapping pages to the
//! sequences their fetches generate, this module enumerates every way an
//! observed sequence can be explained as a superposition of catalog
//! sequences ("combinations") and computes the posterior probability that a
//! particular page was fetched. Many consistent explanations mean the user
//! can plausibly deny any single one.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::{Error, Result};

/// Per-group trace-start counts in canonical form: trailing zeros stripped,
/// at least one positive entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceSequence {
    groups: Vec<u32>,
}

impl TraceSequence {
    pub fn new(mut groups: Vec<u32>) -> Result<Self> {
        while groups.last() == Some(&0) {
            groups.pop();
        }
        if groups.is_empty() {
            return Err(Error::InvalidParameter(
                "trace sequence must contain at least one trace start".into(),
            ));
        }
        Ok(TraceSequence { groups })
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        false // canonical sequences always hold a positive entry
    }

    /// Index of the first group with a trace start.
    pub fn lead(&self) -> usize {
        self.groups
            .iter()
            .position(|&g| g > 0)
            .expect("canonical sequence has a positive entry")
    }

    /// Total trace count.
    pub fn total(&self) -> u64 {
        self.groups.iter().map(|&g| u64::from(g)).sum()
    }
}

impl fmt::Display for TraceSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.groups.iter().map(|g| g.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

/// A catalog of pages and the trace sequence each one generates. Pages that
/// share a sequence form that sequence's anonymity set.
#[derive(Debug, Clone)]
pub struct PageCatalog {
    pages: Vec<String>,
    /// Page index -> index into `seqs`.
    seq_of: Vec<usize>,
    /// Distinct sequences, sorted for deterministic iteration order.
    seqs: Vec<TraceSequence>,
    /// Pages per sequence (the anonymity-set sizes |W_h|).
    members: Vec<Vec<usize>>,
    /// Optional per-page fetch probabilities; uniform when absent.
    fetch_prob: Option<Vec<f64>>,
}

impl PageCatalog {
    pub fn new(entries: Vec<(String, TraceSequence)>) -> Result<Self> {
        Self::build(entries, None)
    }

    /// Catalog with explicit page fetch probabilities (must sum to 1).
    pub fn with_probabilities(
        entries: Vec<(String, TraceSequence)>,
        probabilities: Vec<f64>,
    ) -> Result<Self> {
        if probabilities.len() != entries.len() {
            return Err(Error::InvalidParameter(
                "one fetch probability per page required".into(),
            ));
        }
        if probabilities.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err(Error::InvalidParameter(
                "fetch probabilities must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "fetch probabilities must sum to 1, got {sum}"
            )));
        }
        Self::build(entries, Some(probabilities))
    }

    fn build(
        entries: Vec<(String, TraceSequence)>,
        fetch_prob: Option<Vec<f64>>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("catalog must not be empty".into()));
        }
        let mut seen = BTreeMap::new();
        for (page, _) in &entries {
            if seen.insert(page.clone(), ()).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate page id '{page}' in catalog"
                )));
            }
        }
        let mut seqs: Vec<TraceSequence> = entries.iter().map(|(_, s)| s.clone()).collect();
        seqs.sort();
        seqs.dedup();
        let pages: Vec<String> = entries.iter().map(|(p, _)| p.clone()).collect();
        let seq_of: Vec<usize> = entries
            .iter()
            .map(|(_, s)| seqs.binary_search(s).expect("sequence was inserted"))
            .collect();
        let mut members = vec![Vec::new(); seqs.len()];
        for (page_idx, &seq_idx) in seq_of.iter().enumerate() {
            members[seq_idx].push(page_idx);
        }
        Ok(PageCatalog {
            pages,
            seq_of,
            seqs,
            members,
            fetch_prob,
        })
    }

    /// Reads a catalog from CSV rows `page_id,group_0,group_1,...` with a
    /// header row; rows may have ragged lengths and `#` lines are skipped.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .trim(csv::Trim::All)
            .has_headers(true)
            .from_reader(reader);
        let mut entries = Vec::new();
        for record in csv_reader.records() {
            let record = record?;
            let mut fields = record.iter();
            let page = fields
                .next()
                .ok_or_else(|| Error::Malformed("catalog row without page id".into()))?
                .to_string();
            let groups: Vec<u32> = fields
                .filter(|f| !f.is_empty())
                .map(|f| {
                    f.parse::<u32>().map_err(|_| {
                        Error::Malformed(format!("catalog row '{page}': bad count '{f}'"))
                    })
                })
                .collect::<Result<_>>()?;
            let seq = TraceSequence::new(groups).map_err(|_| {
                Error::Malformed(format!("catalog row '{page}': sequence has no trace starts"))
            })?;
            entries.push((page, seq));
        }
        Self::new(entries)
    }

    /// Validates every per-group count against a cap (the per-slot trace
    /// limit of the link that produced the sequences).
    pub fn check_group_cap(&self, cap: u32) -> Result<()> {
        for seq in &self.seqs {
            if seq.groups().iter().any(|&g| g > cap) {
                return Err(Error::InvalidConfig(format!(
                    "sequence {seq} exceeds the per-group trace cap {cap}"
                )));
            }
        }
        Ok(())
    }

    pub fn pages(&self) -> &[String] {
        &self.pages
    }

    pub fn page_index(&self, page: &str) -> Option<usize> {
        self.pages.iter().position(|p| p == page)
    }

    /// Distinct sequences in deterministic (lexicographic) order.
    pub fn sequences(&self) -> &[TraceSequence] {
        &self.seqs
    }

    pub fn sequence_of(&self, page_idx: usize) -> usize {
        self.seq_of[page_idx]
    }

    /// Anonymity set of a sequence: the pages generating it.
    pub fn anonymity_set(&self, seq_idx: usize) -> &[usize] {
        &self.members[seq_idx]
    }

    /// The probability that a fetch of some page in `W_h` is `page_idx`,
    /// i.e. `q_page / sum of q over the anonymity set` (uniform: `1/|W_h|`).
    fn conditional_pick_prob(&self, page_idx: usize) -> f64 {
        let seq_idx = self.seq_of[page_idx];
        let member_pages = &self.members[seq_idx];
        match &self.fetch_prob {
            None => 1.0 / member_pages.len() as f64,
            Some(q) => {
                let total: f64 = member_pages.iter().map(|&p| q[p]).sum();
                if total == 0.0 {
                    0.0
                } else {
                    q[page_idx] / total
                }
            }
        }
    }
}

/// A multiset of catalog-sequence instances whose superposition equals an
/// observed sequence. Each instance is `(sequence index, group offset)`;
/// the list is kept sorted, so equal combinations compare equal regardless
/// of construction order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combination {
    instances: Vec<(usize, u32)>,
}

impl Combination {
    /// Builds a combination from raw instances. Superposition equality
    /// against any particular observation is the caller's concern.
    pub fn from_instances(mut instances: Vec<(usize, u32)>) -> Self {
        instances.sort_unstable();
        Combination { instances }
    }

    pub fn instances(&self) -> &[(usize, u32)] {
        &self.instances
    }

    /// Items as (sequence index, multiplicity) with offsets folded away —
    /// the view the probability formulas consume.
    pub fn multiset(&self) -> Vec<(usize, u32)> {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for &(seq, _) in &self.instances {
            *counts.entry(seq).or_insert(0) += 1;
        }
        counts.into_iter().collect()
    }

    /// Element-wise sum of all instances, shifted by their offsets.
    pub fn superposition(&self, catalog: &PageCatalog) -> Vec<u32> {
        let mut out = Vec::new();
        for &(seq_idx, offset) in &self.instances {
            let seq = &catalog.sequences()[seq_idx];
            let end = offset as usize + seq.len();
            if out.len() < end {
                out.resize(end, 0);
            }
            for (j, &g) in seq.groups().iter().enumerate() {
                out[offset as usize + j] += g;
            }
        }
        out
    }

    /// Human-readable form like `{A@0, A@1, B@0}` with catalog sequence text.
    pub fn describe(&self, catalog: &PageCatalog) -> String {
        let parts: Vec<String> = self
            .instances
            .iter()
            .map(|&(seq, off)| format!("{}@{off}", catalog.sequences()[seq]))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

/// Search limits for combination enumeration. The packing search is
/// exponential in the worst case; the node budget aborts runaway inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumLimits {
    /// Cap on how often one sequence may repeat within a combination.
    pub max_multiplicity: u32,
    /// Cap on the total instance count of a combination.
    pub max_items: u32,
    /// Cap on visited partial solutions before aborting.
    pub node_budget: u64,
}

impl Default for EnumLimits {
    fn default() -> Self {
        EnumLimits {
            max_multiplicity: 4,
            max_items: 6,
            node_budget: 10_000_000,
        }
    }
}

/// Enumerates every combination of catalog sequences (with group-aligned,
/// non-negative start offsets) whose superposition equals `observed`,
/// subject to `limits`. Output order is deterministic: lexicographic in the
/// sorted instance list.
pub fn enumerate_combinations(
    observed: &TraceSequence,
    catalog: &PageCatalog,
    limits: &EnumLimits,
) -> Result<Vec<Combination>> {
    let mut residual: Vec<u32> = observed.groups().to_vec();
    let mut state = SearchState {
        catalog,
        limits,
        visited: 0,
        per_seq_count: vec![0; catalog.sequences().len()],
        chosen: Vec::new(),
        out: Vec::new(),
    };
    state.search(&mut residual, 0, 0)?;
    let mut out = state.out;
    out.sort_unstable();
    Ok(out)
}

struct SearchState<'a> {
    catalog: &'a PageCatalog,
    limits: &'a EnumLimits,
    visited: u64,
    per_seq_count: Vec<u32>,
    chosen: Vec<(usize, u32)>,
    out: Vec<Combination>,
}

impl SearchState<'_> {
    /// Fills the leftmost deficit group. `floor_seq` forbids sequence
    /// indices below the last choice at the same group, so each multiset is
    /// produced exactly once, already in sorted order.
    fn search(&mut self, residual: &mut [u32], from_group: usize, floor_seq: usize) -> Result<()> {
        let deficit = residual[from_group..]
            .iter()
            .position(|&r| r > 0)
            .map(|i| i + from_group);
        let Some(g) = deficit else {
            // chosen is ordered by deficit group, not canonically; sort.
            self.out
                .push(Combination::from_instances(self.chosen.clone()));
            return Ok(());
        };
        if self.chosen.len() as u32 == self.limits.max_items {
            return Ok(()); // deficit remains but no instance slots left
        }
        let floor_seq = if g > from_group { 0 } else { floor_seq };

        for seq_idx in floor_seq..self.catalog.sequences().len() {
            if self.per_seq_count[seq_idx] == self.limits.max_multiplicity {
                continue;
            }
            let seq = &self.catalog.sequences()[seq_idx];
            let lead = seq.lead();
            if lead > g {
                continue;
            }
            let offset = g - lead;
            if offset + seq.len() > residual.len() {
                continue;
            }
            let fits = seq
                .groups()
                .iter()
                .enumerate()
                .all(|(j, &v)| v <= residual[offset + j]);

            self.visited += 1;
            if self.visited > self.limits.node_budget {
                return Err(Error::BudgetExceeded {
                    visited: self.visited,
                    cap: self.limits.node_budget,
                });
            }
            if !fits {
                continue;
            }

            for (j, &v) in seq.groups().iter().enumerate() {
                residual[offset + j] -= v;
            }
            self.per_seq_count[seq_idx] += 1;
            self.chosen.push((seq_idx, offset as u32));

            self.search(residual, g, seq_idx)?;

            self.chosen.pop();
            self.per_seq_count[seq_idx] -= 1;
            for (j, &v) in seq.groups().iter().enumerate() {
                residual[offset + j] += v;
            }
        }
        Ok(())
    }
}

/// Pages coverable by a single trace: the anonymity set of the sequence
/// `[1]`, when present.
fn single_trace_set(catalog: &PageCatalog) -> Option<usize> {
    catalog
        .sequences()
        .iter()
        .position(|s| s.groups() == [1])
}

/// Probability that `page` was fetched given observed per-group trace
/// counts, under the closed-form model for pages coverable by one trace:
/// each of the `T_j` trace starts in group `j` is an independent fetch
/// drawn from the single-trace anonymity set.
///
/// Returns `1 - prod_j (1 - q_page / sum q over W_1)^{T_j}`. An all-zero
/// observation gives 0 (the empty product's complement). Raw counts rather
/// than a canonical [`TraceSequence`] so the zero observation is
/// expressible.
pub fn prob_fetch_simple(observed: &[u32], page: &str, catalog: &PageCatalog) -> Result<f64> {
    let page_idx = catalog
        .page_index(page)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown page '{page}'")))?;
    let w1 = single_trace_set(catalog).ok_or_else(|| {
        Error::InvalidParameter("catalog has no single-trace pages".into())
    })?;
    if catalog.sequence_of(page_idx) != w1 {
        return Err(Error::InvalidParameter(format!(
            "page '{page}' is not coverable by a single trace"
        )));
    }
    let pick = catalog.conditional_pick_prob(page_idx);
    let mut miss_all = 1.0f64;
    for &count in observed {
        miss_all *= (1.0 - pick).powi(count as i32);
    }
    Ok(1.0 - miss_all)
}

/// Probability that `page_idx` was fetched given that a particular
/// combination explains the observation: the binomial sum over the
/// multiplicity of the page's own sequence within the combination.
pub fn prob_fetch_given_combination(
    page_idx: usize,
    combination: &Combination,
    catalog: &PageCatalog,
) -> f64 {
    let own_seq = catalog.sequence_of(page_idx);
    let pick = catalog.conditional_pick_prob(page_idx);
    let mut prob = 0.0;
    for (seq_idx, n) in combination.multiset() {
        if seq_idx != own_seq {
            continue;
        }
        // sum_{j=1..n} C(n,j) p^j (1-p)^{n-j}
        for j in 1..=n {
            prob += binomial(n, j) * pick.powi(j as i32) * (1.0 - pick).powi((n - j) as i32);
        }
    }
    prob
}

/// Exact binomial coefficient as f64 via the multiplicative formula.
fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 1..=k {
        c = c * f64::from(n - k + i) / f64::from(i);
    }
    c
}

/// Whether the mean over combinations counts the observed sequence's own
/// single-fetch explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfExplanation {
    /// The identity combination contributes its probability (default).
    #[default]
    Included,
    /// The identity combination stays in the combination count but its
    /// probability is dropped from the numerator.
    OmittedFromSum,
}

/// Probability that `page_idx` was fetched given an observed sequence:
/// the equiprobable mean of [`prob_fetch_given_combination`] over every
/// combination explaining `observed`.
pub fn prob_fetch_given_history(
    page_idx: usize,
    observed: &TraceSequence,
    catalog: &PageCatalog,
    limits: &EnumLimits,
    self_explanation: SelfExplanation,
) -> Result<f64> {
    let combos = enumerate_combinations(observed, catalog, limits)?;
    Ok(prob_over_combinations(
        page_idx,
        observed,
        &combos,
        catalog,
        self_explanation,
    ))
}

/// Mean of [`prob_fetch_given_combination`] over an already-enumerated
/// combination list for `observed`; the building block behind
/// [`prob_fetch_given_history`] when the enumeration is shared across
/// pages.
pub fn prob_over_combinations(
    page_idx: usize,
    observed: &TraceSequence,
    combos: &[Combination],
    catalog: &PageCatalog,
    self_explanation: SelfExplanation,
) -> f64 {
    if combos.is_empty() {
        return 0.0;
    }
    let identity = catalog
        .sequences()
        .iter()
        .position(|s| s == observed)
        .map(|idx| Combination::from_instances(vec![(idx, 0)]));
    let mut sum = 0.0;
    for combo in combos {
        if self_explanation == SelfExplanation::OmittedFromSum
            && Some(combo) == identity.as_ref()
        {
            continue;
        }
        sum += prob_fetch_given_combination(page_idx, combo, catalog);
    }
    sum / combos.len() as f64
}

/// Deniability summary for one page.
#[derive(Debug, Clone, PartialEq)]
pub struct PageReport {
    pub page: String,
    /// Mean fetch probability over all observed sequences (equally likely).
    pub mean_prob: f64,
    /// Highest fetch probability over observed sequences, and the sequence
    /// attaining it.
    pub worst_prob: f64,
    pub worst_seq: String,
    /// Lowest fetch probability over observed sequences, exposed alongside
    /// the maximum.
    pub min_prob: f64,
    pub min_seq: String,
    /// Sequences whose enumeration blew the budget and were skipped.
    pub error: Option<String>,
}

/// Options for [`deniability_report`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    pub self_explanation: SelfExplanation,
}

/// Computes, for every page, the mean / maximum / minimum posterior fetch
/// probability over all catalog sequences treated as equally likely
/// observations. Rows are sorted ascending by mean probability (ties by
/// page id). Budget failures on individual sequences are flagged per page
/// rather than failing the report; the affected sequences are skipped.
///
/// Per-sequence enumerations run in parallel when the `parallel` feature
/// is enabled.
pub fn deniability_report(
    catalog: &PageCatalog,
    limits: &EnumLimits,
    options: ReportOptions,
) -> Vec<PageReport> {
    report_inner(catalog, limits, options, true)
}

/// Sequential variant of [`deniability_report`], available regardless of
/// features; the reference point for the parallel implementation and its
/// benchmark.
pub fn deniability_report_seq(
    catalog: &PageCatalog,
    limits: &EnumLimits,
    options: ReportOptions,
) -> Vec<PageReport> {
    report_inner(catalog, limits, options, false)
}

fn report_inner(
    catalog: &PageCatalog,
    limits: &EnumLimits,
    options: ReportOptions,
    parallel: bool,
) -> Vec<PageReport> {
    let seqs = catalog.sequences();
    let enumerations: Vec<(usize, Result<Vec<Combination>>)> =
        enumerate_all(catalog, limits, parallel);

    let failed: Vec<String> = enumerations
        .iter()
        .filter_map(|(idx, r)| r.as_ref().err().map(|e| format!("{}: {e}", seqs[*idx])))
        .collect();
    let error = if failed.is_empty() {
        None
    } else {
        Some(failed.join("; "))
    };

    let mut rows: Vec<PageReport> = catalog
        .pages()
        .iter()
        .enumerate()
        .map(|(page_idx, page)| {
            let mut sum = 0.0;
            let mut counted = 0usize;
            let mut worst: Option<(f64, usize)> = None;
            let mut least: Option<(f64, usize)> = None;
            for (seq_idx, outcome) in &enumerations {
                let Ok(combos) = outcome else { continue };
                let p = prob_over_combinations(
                    page_idx,
                    &seqs[*seq_idx],
                    combos,
                    catalog,
                    options.self_explanation,
                );
                sum += p;
                counted += 1;
                if worst.is_none_or(|(best, _)| p > best) {
                    worst = Some((p, *seq_idx));
                }
                if least.is_none_or(|(low, _)| p < low) {
                    least = Some((p, *seq_idx));
                }
            }
            let (worst_prob, worst_seq) = worst
                .map(|(p, i)| (p, seqs[i].to_string()))
                .unwrap_or((0.0, String::new()));
            let (min_prob, min_seq) = least
                .map(|(p, i)| (p, seqs[i].to_string()))
                .unwrap_or((0.0, String::new()));
            PageReport {
                page: page.clone(),
                mean_prob: if counted == 0 { 0.0 } else { sum / counted as f64 },
                worst_prob,
                worst_seq,
                min_prob,
                min_seq,
                error: error.clone(),
            }
        })
        .collect();

    rows.sort_by(|a, b| {
        a.mean_prob
            .partial_cmp(&b.mean_prob)
            .expect("probabilities are never NaN")
            .then_with(|| a.page.cmp(&b.page))
    });
    rows
}

#[cfg(feature = "parallel")]
fn enumerate_all(
    catalog: &PageCatalog,
    limits: &EnumLimits,
    parallel: bool,
) -> Vec<(usize, Result<Vec<Combination>>)> {
    if parallel {
        catalog
            .sequences()
            .par_iter()
            .enumerate()
            .map(|(idx, seq)| (idx, enumerate_combinations(seq, catalog, limits)))
            .collect()
    } else {
        catalog
            .sequences()
            .iter()
            .enumerate()
            .map(|(idx, seq)| (idx, enumerate_combinations(seq, catalog, limits)))
            .collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn enumerate_all(
    catalog: &PageCatalog,
    limits: &EnumLimits,
    _parallel: bool,
) -> Vec<(usize, Result<Vec<Combination>>)> {
    catalog
        .sequences()
        .iter()
        .enumerate()
        .map(|(idx, seq)| (idx, enumerate_combinations(seq, catalog, limits)))
        .collect()
}

/// Reads an observed sequence from CSV. Two layouts are accepted, told
/// apart by the header: the catalog row layout (`page_id,group_0,...`,
/// first data row used) and the engine's trace-sequence export
/// (`group_index,traces_started`).
pub fn read_observed_csv(path: &Path) -> Result<TraceSequence> {
    let content = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());
    let headers = reader.headers()?.clone();
    let first = headers.get(0).unwrap_or("");
    if first == "group_index" {
        let mut counts: Vec<(u64, u32)> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let idx: u64 = record
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed("bad group_index".into()))?;
            let started: u32 = record
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed("bad traces_started".into()))?;
            counts.push((idx, started));
        }
        counts.sort_by_key(|&(idx, _)| idx);
        let len = counts.last().map(|&(idx, _)| idx + 1).unwrap_or(0);
        let mut groups = vec![0u32; len as usize];
        for (idx, started) in counts {
            groups[idx as usize] = started;
        }
        TraceSequence::new(groups)
    } else {
        let record = reader
            .records()
            .next()
            .ok_or_else(|| Error::Malformed("observed file has no data row".into()))??;
        let groups: Vec<u32> = record
            .iter()
            .skip(1)
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<u32>()
                    .map_err(|_| Error::Malformed(format!("bad group count '{f}'")))
            })
            .collect::<Result<_>>()?;
        TraceSequence::new(groups)
    }
}
