//! Comparing providers: test F1, F1 across tweet length, and F1 under
//! shuffled word order.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{word_count, Corpus};
use crate::encoders::EmbeddingProvider;
use crate::exec::Execution;
use crate::probe::{encode_instances, LabeledFeatures, Metrics, ProbeError, ProbeModel, TweetView};
use crate::taskgen::{bin_length, TaskInstance, TaskKind};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("zero variance; correlation undefined")]
    ZeroVariance,
    #[error("sequences differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("test split is empty")]
    EmptySplit,
    #[error("provider {provider} has two runs for task {task}")]
    DuplicateRun { provider: String, task: TaskKind },
    #[error("no runs to report")]
    NoRuns,
    #[error("tweet {0} not in corpus")]
    UnknownTweet(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Cut points for the categorical summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub length_bin_size: usize,
    /// Bins with fewer test instances are left out of the correlation.
    pub min_bin_count: usize,
    pub min_bins: usize,
    /// |ρ| at or above this marks a length correlation.
    pub correlation: f64,
    /// |Δ| below this many F1 points is invariant.
    pub invariant_points: f64,
    /// Δ at or above this many F1 points is significantly deviant.
    pub deviant_points: f64,
    pub permutation_seed: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            length_bin_size: 4,
            min_bin_count: 50,
            min_bins: 3,
            correlation: 0.5,
            invariant_points: 1.0,
            deviant_points: 5.0,
            permutation_seed: 0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.length_bin_size == 0 {
            return Err("length_bin_size must be positive".into());
        }
        if self.min_bins < 3 {
            return Err("min_bins must be at least 3".into());
        }
        if !(self.correlation > 0.0 && self.correlation <= 1.0) {
            return Err(format!("correlation threshold {} outside (0, 1]", self.correlation));
        }
        if !(self.invariant_points >= 0.0 && self.invariant_points <= self.deviant_points) {
            return Err("need 0 <= invariant_points <= deviant_points".into());
        }
        Ok(())
    }
}

/// 1-based ranks, ties sharing the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(AnalysisError::TooFewPoints(xs.len()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthCategory {
    PositivelyCorrelated,
    NegativelyCorrelated,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub bin: usize,
    pub count: usize,
    /// Mean F1 over the classes observed in this bin.
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthProfile {
    /// Every bin with at least one test instance, ascending.
    pub bins: Vec<LengthBin>,
    /// Spearman ρ over qualifying bins; `None` when undefined.
    pub rho: Option<f64>,
    pub category: LengthCategory,
}

impl LengthProfile {
    /// Applies the qualifying-bin filter and the correlation thresholds.
    pub fn from_bins(mut bins: Vec<LengthBin>, thresholds: &Thresholds) -> Self {
        bins.sort_by_key(|b| b.bin);
        let qualifying: Vec<&LengthBin> = bins.iter().filter(|b| b.count >= thresholds.min_bin_count).collect();
        let rho = if qualifying.len() >= thresholds.min_bins {
            let xs: Vec<f64> = qualifying.iter().map(|b| b.bin as f64).collect();
            let ys: Vec<f64> = qualifying.iter().map(|b| b.macro_f1).collect();
            spearman(&xs, &ys).ok()
        } else {
            None
        };
        let category = match rho {
            Some(r) if r >= thresholds.correlation => LengthCategory::PositivelyCorrelated,
            Some(r) if r <= -thresholds.correlation => LengthCategory::NegativelyCorrelated,
            _ => LengthCategory::None,
        };
        LengthProfile { bins, rho, category }
    }
}

/// Per-length-bin F1 of `model` on already encoded test instances.
pub fn f1_by_length_encoded(
    model: &ProbeModel,
    instances: &[TaskInstance],
    features: &LabeledFeatures,
    corpus: &Corpus,
    thresholds: &Thresholds,
    exec: Execution,
) -> Result<LengthProfile, AnalysisError> {
    if instances.is_empty() {
        return Err(AnalysisError::EmptySplit);
    }
    if instances.len() != features.len() {
        return Err(AnalysisError::LengthMismatch {
            left: instances.len(),
            right: features.len(),
        });
    }
    let predictions = model.predict_all(features, exec)?;
    let mut groups: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for ((inst, &pred), &gold) in instances.iter().zip(&predictions).zip(&features.labels) {
        let tweet = corpus
            .get(&inst.tweet_id)
            .ok_or_else(|| AnalysisError::UnknownTweet(inst.tweet_id.clone()))?;
        let length = word_count(tweet).map_err(|_| AnalysisError::UnknownTweet(inst.tweet_id.clone()))?;
        let bin = bin_length(length, thresholds.length_bin_size).expect("validated bin size");
        let g = groups.entry(bin).or_default();
        g.0.push(pred);
        g.1.push(gold);
    }
    let mut bins = Vec::with_capacity(groups.len());
    for (bin, (preds, golds)) in groups {
        let m = Metrics::compute(&preds, &golds, model.class_count())?;
        bins.push(LengthBin {
            bin,
            count: preds.len(),
            macro_f1: m.macro_f1_observed(),
        });
    }
    Ok(LengthProfile::from_bins(bins, thresholds))
}

/// Encodes `instances` with `provider`, then as [`f1_by_length_encoded`].
pub fn f1_by_length(
    model: &ProbeModel,
    instances: &[TaskInstance],
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
    thresholds: &Thresholds,
    exec: Execution,
) -> Result<LengthProfile, AnalysisError> {
    if instances.is_empty() {
        return Err(AnalysisError::EmptySplit);
    }
    let features = encode_instances(instances, provider, corpus, TweetView::Original, exec)?;
    f1_by_length_encoded(model, instances, &features, corpus, thresholds, exec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityCategory {
    Invariant,
    SignificantlyDeviant,
    Intermediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub f1_original: f64,
    pub f1_permuted: f64,
    /// `(f1_original - f1_permuted) * 100`
    pub delta_points: f64,
    pub category: SensitivityCategory,
    pub seed: u64,
}

impl SensitivityResult {
    pub fn new(f1_original: f64, f1_permuted: f64, seed: u64, thresholds: &Thresholds) -> Self {
        let delta_points = (f1_original - f1_permuted) * 100.0;
        SensitivityResult {
            f1_original,
            f1_permuted,
            delta_points,
            category: sensitivity_category(delta_points, thresholds),
            seed,
        }
    }
}

pub fn sensitivity_category(delta_points: f64, thresholds: &Thresholds) -> SensitivityCategory {
    if delta_points.abs() < thresholds.invariant_points {
        SensitivityCategory::Invariant
    } else if delta_points >= thresholds.deviant_points {
        SensitivityCategory::SignificantlyDeviant
    } else {
        SensitivityCategory::Intermediate
    }
}

/// F1 drop when each test tweet is re-encoded with shuffled tokens.
/// Auxiliary texts and labels are left as they are.
pub fn permutation_sensitivity(
    model: &ProbeModel,
    instances: &[TaskInstance],
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
    thresholds: &Thresholds,
    exec: Execution,
) -> Result<SensitivityResult, AnalysisError> {
    if instances.is_empty() {
        return Err(AnalysisError::EmptySplit);
    }
    let original = encode_instances(instances, provider, corpus, TweetView::Original, exec)?;
    permutation_sensitivity_encoded(model, instances, &original, provider, corpus, thresholds, exec)
}

/// As [`permutation_sensitivity`], reusing the original-order features.
pub fn permutation_sensitivity_encoded(
    model: &ProbeModel,
    instances: &[TaskInstance],
    original: &LabeledFeatures,
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
    thresholds: &Thresholds,
    exec: Execution,
) -> Result<SensitivityResult, AnalysisError> {
    if instances.is_empty() {
        return Err(AnalysisError::EmptySplit);
    }
    let seed = thresholds.permutation_seed;
    let permuted = encode_instances(instances, provider, corpus, TweetView::Permuted { seed }, exec)?;
    let f1_original = model.evaluate(original, exec)?.macro_f1;
    let f1_permuted = model.evaluate(&permuted, exec)?.macro_f1;
    Ok(SensitivityResult::new(f1_original, f1_permuted, seed, thresholds))
}

/// Everything measured for one (provider, task) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub provider: String,
    pub supervised: bool,
    pub task: TaskKind,
    pub metrics: Metrics,
    pub length: LengthProfile,
    pub sensitivity: SensitivityResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub name: String,
    pub supervised: bool,
}

/// Providers achieving the top F1 on one task, per provider subset.
/// Tied providers are all listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestOf {
    pub task: TaskKind,
    pub overall: Vec<String>,
    pub unsupervised: Vec<String>,
    pub supervised: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_digest: String,
    pub corpus_digest: String,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Column order of `f1`: all task kinds.
    pub tasks: Vec<TaskKind>,
    /// Row order of `f1`, sorted by name.
    pub providers: Vec<ProviderInfo>,
    /// Test macro F1, `None` where a provider has no run for a task.
    pub f1: Vec<Vec<Option<f64>>>,
    pub best: Vec<BestOf>,
    /// Sorted by provider, then task.
    pub runs: Vec<RunRecord>,
    pub metadata: RunMetadata,
}

fn argmax_set<'a>(cells: impl Iterator<Item = (&'a str, f64)>) -> Vec<String> {
    let cells: Vec<(&str, f64)> = cells.collect();
    let Some(top) = cells.iter().map(|c| c.1).reduce(f64::max) else {
        return Vec::new();
    };
    cells.iter().filter(|c| c.1 == top).map(|c| c.0.to_string()).collect()
}

/// Best-of sets per task, computed from the F1 matrix alone.
pub fn best_of(tasks: &[TaskKind], providers: &[ProviderInfo], f1: &[Vec<Option<f64>>]) -> Vec<BestOf> {
    tasks
        .iter()
        .enumerate()
        .filter(|(t, _)| f1.iter().any(|row| row[*t].is_some()))
        .map(|(t, &task)| {
            let cells = |filter: fn(&ProviderInfo) -> bool| {
                argmax_set(
                    providers
                        .iter()
                        .zip(f1)
                        .filter(move |(p, _)| filter(p))
                        .filter_map(move |(p, row)| row[t].map(|v| (p.name.as_str(), v))),
                )
            };
            BestOf {
                task,
                overall: cells(|_| true),
                unsupervised: cells(|p| !p.supervised),
                supervised: cells(|p| p.supervised),
            }
        })
        .collect()
}

pub fn build_report(mut runs: Vec<RunRecord>, metadata: RunMetadata) -> Result<AnalysisReport, AnalysisError> {
    if runs.is_empty() {
        return Err(AnalysisError::NoRuns);
    }
    runs.sort_by(|a, b| (a.provider.as_str(), a.task).cmp(&(b.provider.as_str(), b.task)));
    for w in runs.windows(2) {
        if w[0].provider == w[1].provider && w[0].task == w[1].task {
            return Err(AnalysisError::DuplicateRun {
                provider: w[0].provider.clone(),
                task: w[0].task,
            });
        }
    }
    let tasks = TaskKind::ALL.to_vec();
    let mut providers: Vec<ProviderInfo> = Vec::new();
    for r in &runs {
        if providers.last().is_none_or(|p| p.name != r.provider) {
            providers.push(ProviderInfo {
                name: r.provider.clone(),
                supervised: r.supervised,
            });
        }
    }
    let mut f1 = vec![vec![None; tasks.len()]; providers.len()];
    for r in &runs {
        let row = providers
            .iter()
            .position(|p| p.name == r.provider)
            .expect("collected above");
        f1[row][r.task.index()] = Some(r.metrics.macro_f1);
    }
    let best = best_of(&tasks, &providers, &f1);
    Ok(AnalysisReport {
        tasks,
        providers,
        f1,
        best,
        runs,
        metadata,
    })
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data") + "\n"
    }

    /// One row per provider, one column per task, F1 in percent.
    pub fn f1_tsv(&self) -> String {
        let mut out = String::from("provider");
        for t in &self.tasks {
            out.push('\t');
            out.push_str(t.slug());
        }
        out.push('\n');
        for (p, row) in self.providers.iter().zip(&self.f1) {
            out.push_str(&p.name);
            for cell in row {
                match cell {
                    Some(v) => write!(out, "\t{:.2}", v * 100.0).unwrap(),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }

    fn tasks_where(&self, provider: &str, pick: impl Fn(&RunRecord) -> bool) -> String {
        let names: Vec<&str> = self
            .runs
            .iter()
            .filter(|r| r.provider == provider && pick(r))
            .map(|r| r.task.title())
            .collect();
        if names.is_empty() {
            "-".to_string()
        } else {
            names.join(", ")
        }
    }

    fn best_in(&self, provider: &str, pick: impl Fn(&BestOf) -> &Vec<String>) -> String {
        let names: Vec<&str> = self
            .best
            .iter()
            .filter(|b| pick(b).iter().any(|p| p == provider))
            .map(|b| b.task.title())
            .collect();
        if names.is_empty() {
            "-".to_string()
        } else {
            names.join(", ")
        }
    }

    /// Per-provider category summary in plain text.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.providers.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let kind = if p.supervised { "supervised" } else { "unsupervised" };
            writeln!(out, "{} ({kind})", p.name).unwrap();
            writeln!(out, "  Best of all in: {}", self.best_in(&p.name, |b| &b.overall)).unwrap();
            if p.supervised {
                writeln!(
                    out,
                    "  Best of supervised approaches in: {}",
                    self.best_in(&p.name, |b| &b.supervised)
                )
                .unwrap();
            } else {
                writeln!(
                    out,
                    "  Best of unsupervised approaches in: {}",
                    self.best_in(&p.name, |b| &b.unsupervised)
                )
                .unwrap();
            }
            let length = |c| move |r: &RunRecord| r.length.category == c;
            writeln!(
                out,
                "  F1 increases with tweet length in: {}",
                self.tasks_where(&p.name, length(LengthCategory::PositivelyCorrelated))
            )
            .unwrap();
            writeln!(
                out,
                "  F1 decreases with tweet length in: {}",
                self.tasks_where(&p.name, length(LengthCategory::NegativelyCorrelated))
            )
            .unwrap();
            let sens = |c| move |r: &RunRecord| r.sensitivity.category == c;
            writeln!(
                out,
                "  Invariant tasks: {}",
                self.tasks_where(&p.name, sens(SensitivityCategory::Invariant))
            )
            .unwrap();
            writeln!(
                out,
                "  Significantly deviant tasks: {}",
                self.tasks_where(&p.name, sens(SensitivityCategory::SignificantlyDeviant))
            )
            .unwrap();
        }
        out
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn spearman_monotone() {
        assert!(close(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0));
        assert!(close(spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(), -1.0));
    }

    #[test]
    fn spearman_with_ties() {
        // ranks (1, 2.5, 2.5, 4) vs (1, 3, 2, 4); centred: (-1.5, 0, 0, 1.5) and
        // (-1.5, 0.5, -0.5, 1.5); r = 4.5 / sqrt(4.5 * 5) = 3 / sqrt(10)
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!(close(r, 3.0 / 10f64.sqrt()));
    }

    #[test]
    fn spearman_bins_example() {
        // F1 ranks (4, 1, 5, 2, 3) against bin ranks (1..5): Σd² = 22,
        // ρ = 1 - 6·22 / (5·24) = -0.1
        let r = spearman(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.8, 0.6, 0.9, 0.7, 0.75]).unwrap();
        assert!(close(r, -0.1));
        let bins = [0.8, 0.6, 0.9, 0.7, 0.75]
            .iter()
            .enumerate()
            .map(|(i, &f)| LengthBin {
                bin: i,
                count: 50,
                macro_f1: f,
            })
            .collect();
        assert_eq!(
            LengthProfile::from_bins(bins, &Thresholds::default()).category,
            LengthCategory::None
        );
    }

    #[test]
    fn spearman_errors() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(AnalysisError::TooFewPoints(2))
        ));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::ZeroVariance)
        ));
        assert!(matches!(
            spearman(&[1.0; 3], &[1.0; 4]),
            Err(AnalysisError::LengthMismatch { .. })
        ));
    }

    fn brute_rank(xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|x| {
                let below = xs.iter().filter(|y| *y < x).count() as f64;
                let equal = xs.iter().filter(|y| *y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    fn brute_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn spearman_matches_brute_force(pairs in proptest::collection::vec((0u8..6, 0u8..6), 3..12)) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            match (spearman(&xs, &ys), brute_pearson(&brute_rank(&xs), &brute_rank(&ys))) {
                (Ok(r), Some(b)) => {
                    prop_assert!((r - b).abs() < 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&r));
                }
                (Err(AnalysisError::ZeroVariance), None) => {}
                (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
            }
        }

        #[test]
        fn categories_follow_thresholds(delta in -20.0f64..20.0) {
            let t = Thresholds::default();
            let c = sensitivity_category(delta, &t);
            prop_assert_eq!(c == SensitivityCategory::Invariant, delta.abs() < 1.0);
            prop_assert_eq!(c == SensitivityCategory::SignificantlyDeviant, delta >= 5.0);
        }
    }

    #[test]
    fn length_categories() {
        let t = Thresholds::default();
        let mk = |f1s: &[f64], count: usize| {
            f1s.iter()
                .enumerate()
                .map(|(i, &f)| LengthBin {
                    bin: i,
                    count,
                    macro_f1: f,
                })
                .collect::<Vec<_>>()
        };
        let up = LengthProfile::from_bins(mk(&[0.1, 0.2, 0.3, 0.4, 0.5], 60), &t);
        assert_eq!((up.rho, up.category), (Some(1.0), LengthCategory::PositivelyCorrelated));
        let down = LengthProfile::from_bins(mk(&[0.5, 0.4, 0.3, 0.2, 0.1], 60), &t);
        assert_eq!(
            (down.rho, down.category),
            (Some(-1.0), LengthCategory::NegativelyCorrelated)
        );
        let sparse = LengthProfile::from_bins(mk(&[0.1, 0.2, 0.3, 0.4, 0.5], 49), &t);
        assert_eq!((sparse.rho, sparse.category), (None, LengthCategory::None));
    }

    #[test]
    fn sensitivity_examples() {
        let t = Thresholds::default();
        assert_eq!(
            SensitivityResult::new(0.8, 0.795, 0, &t).category,
            SensitivityCategory::Invariant
        );
        let r = SensitivityResult::new(0.9, 0.828, 0, &t);
        assert!(close(r.delta_points, 7.2));
        assert_eq!(r.category, SensitivityCategory::SignificantlyDeviant);
        assert_eq!(
            SensitivityResult::new(0.9, 0.87, 0, &t).category,
            SensitivityCategory::Intermediate
        );
    }

    fn run(provider: &str, supervised: bool, task: TaskKind, f1: f64) -> RunRecord {
        let t = Thresholds::default();
        RunRecord {
            provider: provider.into(),
            supervised,
            task,
            metrics: Metrics {
                macro_f1: f1,
                per_class: Vec::new(),
                confusion: Vec::new(),
                count: 1,
            },
            length: LengthProfile::from_bins(Vec::new(), &t),
            sensitivity: SensitivityResult::new(f1, f1, 0, &t),
        }
    }

    #[test]
    fn single_run_is_best_everywhere_it_applies() {
        let r = build_report(vec![run("bow", false, TaskKind::Content, 0.9)], RunMetadata::default()).unwrap();
        assert_eq!(r.best.len(), 1);
        assert_eq!(r.best[0].overall, ["bow"]);
        assert_eq!(r.best[0].unsupervised, ["bow"]);
        assert!(r.best[0].supervised.is_empty());
        assert!(r.summary().contains("Best of all in: Content"));
    }

    #[test]
    fn ties_mark_all_and_duplicates_fail() {
        let r = build_report(
            vec![
                run("lda", false, TaskKind::Length, 0.5),
                run("bow", false, TaskKind::Length, 0.5),
                run("cnn", true, TaskKind::Length, 0.4),
            ],
            RunMetadata::default(),
        )
        .unwrap();
        assert_eq!(r.best[0].overall, ["bow", "lda"]);
        assert_eq!(r.best[0].supervised, ["cnn"]);
        let dup = build_report(
            vec![
                run("bow", false, TaskKind::Length, 0.5),
                run("bow", false, TaskKind::Length, 0.6),
            ],
            RunMetadata::default(),
        );
        assert!(matches!(dup, Err(AnalysisError::DuplicateRun { .. })));
        assert!(matches!(
            build_report(vec![], RunMetadata::default()),
            Err(AnalysisError::NoRuns)
        ));
    }

    #[test]
    fn tsv_shape() {
        let runs = TaskKind::ALL
            .iter()
            .flat_map(|&t| [run("a", false, t, 0.5), run("b", true, t, 0.25)])
            .collect();
        let r = build_report(runs, RunMetadata::default()).unwrap();
        let tsv = r.f1_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1..].iter().all(|l| l.split('\t').count() == 9));
        assert!(lines[1].starts_with("a\t50.00"));
    }

    proptest! {
        #[test]
        fn markers_match_independent_scan(cells in proptest::collection::vec((0usize..5, any::<bool>(), 0usize..8, 0u8..4), 1..30)) {
            let mut seen = std::collections::BTreeSet::new();
            let mut runs = Vec::new();
            for (p, _, t, v) in &cells {
                if seen.insert((*p, *t)) {
                    // supervision is a property of the provider
                    runs.push(run(&format!("p{p}"), p % 2 == 1, TaskKind::ALL[*t], *v as f64 / 4.0));
                }
            }
            let report = build_report(runs.clone(), RunMetadata::default()).unwrap();
            for b in &report.best {
                for (subset, got) in [(None, &b.overall), (Some(false), &b.unsupervised), (Some(true), &b.supervised)] {
                    let eligible: Vec<&RunRecord> = runs
                        .iter()
                        .filter(|r| r.task == b.task && subset.is_none_or(|s| r.supervised == s))
                        .collect();
                    let top = eligible.iter().map(|r| r.metrics.macro_f1).fold(f64::NEG_INFINITY, f64::max);
                    let mut want: Vec<String> = eligible
                        .iter()
                        .filter(|r| r.metrics.macro_f1 == top)
                        .map(|r| r.provider.clone())
                        .collect();
                    want.sort();
                    prop_assert_eq!(got, &want);
                }
            }
        }
    }
}
