//! Intrinsic evaluation: gesture-level embeddings, correlation with shared
//! form features, and referent/speaker/dialogue pair-set comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pose::{Corpus, GestureRecord, PairAnnotation};
use crate::rng::rng_from;
use crate::stats::{bonferroni, mean, spearman, t_test, variance, TestResult, Variance};
use crate::towers::{Layer, Model};
use crate::trainer::write_atomic;

/// One embedding per gesture id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean-pools window embeddings that share a gesture id.
    pub fn from_windows(ids: &[String], embeddings: &[Vec<f64>]) -> Result<Self> {
        if ids.len() != embeddings.len() {
            return Err(Error::Shape(format!("{} ids for {} embeddings", ids.len(), embeddings.len())));
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for (id, e) in ids.iter().zip(embeddings) {
            if e.len() != dim {
                return Err(Error::Shape(format!("embedding of {id} has {} dims, expected {dim}", e.len())));
            }
            let entry = sums.entry(id.clone()).or_insert_with(|| (vec![0.0; dim], 0));
            for (s, v) in entry.0.iter_mut().zip(e) {
                *s += v;
            }
            entry.1 += 1;
        }
        let rows = sums
            .into_iter()
            .map(|(id, (s, n))| (id, s.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Ok(EmbeddingTable { dim, rows })
    }

    /// CSV with header `gesture_id,dim_0,…,dim_{k-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["gesture_id".to_string()];
        header.extend((0..self.dim).map(|k| format!("dim_{k}")));
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for (id, row) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(path, &bytes)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{file}: {e}")))?;
        let header = r.headers().map_err(|e| Error::Format(format!("{file}: {e}")))?.clone();
        if header.get(0) != Some("gesture_id") {
            return Err(Error::Parse {
                file,
                line: 1,
                message: "first column must be gesture_id".into(),
            });
        }
        let dim = header.len() - 1;
        let mut table = EmbeddingTable::new(dim);
        for (i, rec) in r.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| Error::Parse {
                file: file.clone(),
                line,
                message: e.to_string(),
            })?;
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse {
                    file: file.clone(),
                    line,
                    message: e.to_string(),
                })?;
            if row.len() != dim {
                return Err(Error::Parse {
                    file,
                    line,
                    message: format!("{} values, expected {dim}", row.len()),
                });
            }
            table.rows.insert(rec[0].to_string(), row);
        }
        Ok(table)
    }
}

/// Embeds every sampled window of `corpus` at `layer` and mean-pools per
/// gesture. Gestures without windows are left out with a warning.
pub fn embed_gestures(model: &Model, corpus: &Corpus, layer: Layer, batch: usize, exec: Exec) -> Result<EmbeddingTable> {
    let windows = exec
        .map(corpus.windows.len(), |i| corpus.normalized_window(&corpus.windows[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = corpus.windows.iter().map(|w| corpus.record(w).gesture_id.clone()).collect();
    let emb = model.embed_windows(&windows, layer, batch, exec)?;
    let mut table = EmbeddingTable::from_windows(&ids, &emb)?;
    if table.is_empty() {
        table.dim = match layer {
            Layer::Projection => model.config.projection_dim,
            Layer::Encoder => model.config.gesture.output_dim,
        };
    }
    for r in &corpus.records {
        if !table.rows.contains_key(&r.gesture_id) {
            log::warn!("gesture {} has no sampled windows and is left out", r.gesture_id);
        }
    }
    Ok(table)
}

fn unit_rows(table: &EmbeddingTable) -> Result<BTreeMap<&str, Vec<f64>>> {
    table
        .rows
        .iter()
        .map(|(id, v)| {
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Domain(format!("embedding of {id} has norm {n}")));
            }
            Ok((id.as_str(), v.iter().map(|a| a / n).collect()))
        })
        .collect()
}

fn cosine_unit(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

fn missing_error(missing: BTreeSet<&str>) -> Error {
    let ids: Vec<&str> = missing.into_iter().collect();
    Error::Integrity(format!("no embedding for gestures: {}", ids.join(", ")))
}

/// Sample summary of one group of similarity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl GroupSummary {
    fn of(label: &str, scores: &[f64]) -> Self {
        GroupSummary {
            label: label.to_string(),
            n: scores.len(),
            mean: (!scores.is_empty()).then(|| mean(scores)),
            std: (scores.len() > 1).then(|| variance(scores).sqrt()),
        }
    }
}

/// One two-sample comparison inside a report. `result` is absent when the
/// test could not be computed, and `note` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub result: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub n_pairs: usize,
    pub groups: Vec<GroupSummary>,
    /// Scores per group, in `groups` order.
    pub distributions: Vec<Vec<f64>>,
    /// Every pairwise test among the groups, Bonferroni-adjusted over the
    /// computed tests.
    pub tests: Vec<PairwiseTest>,
    pub zero_variance_groups: Vec<String>,
}

impl SimilarityReport {
    pub fn test(&self, a: &str, b: &str) -> Option<&PairwiseTest> {
        self.tests.iter().find(|t| (t.a == a && t.b == b) || (t.a == b && t.b == a))
    }

    pub fn group(&self, label: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.label == label)
    }
}

/// All C(k, 2) t-tests among `groups`, Bonferroni-adjusted.
fn pairwise_tests(groups: &[(String, Vec<f64>)], kind: Variance) -> Result<(Vec<PairwiseTest>, Vec<String>)> {
    let mut tests = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, b) = (&groups[i], &groups[j]);
            let (result, note) = match t_test(&a.1, &b.1, kind) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            tests.push(PairwiseTest {
                a: a.0.clone(),
                b: b.0.clone(),
                result,
                note,
            });
        }
    }
    let raw: Vec<f64> = tests.iter().filter_map(|t| t.result.as_ref().map(|r| r.p_value)).collect();
    let adjusted = bonferroni(&raw)?;
    let mut k = 0;
    for t in &mut tests {
        if let Some(r) = &mut t.result {
            r.adjusted_p = Some(adjusted[k]);
            k += 1;
        }
    }
    let zero_var = groups
        .iter()
        .filter(|(_, s)| s.len() > 1 && variance(s) == 0.0)
        .map(|(l, _)| l.clone())
        .collect();
    Ok((tests, zero_var))
}

fn report(groups: Vec<(String, Vec<f64>)>, kind: Variance) -> Result<SimilarityReport> {
    let (tests, zero_variance_groups) = pairwise_tests(&groups, kind)?;
    Ok(SimilarityReport {
        rho: None,
        p_value: None,
        n_pairs: groups.iter().map(|g| g.1.len()).sum(),
        groups: groups.iter().map(|(l, s)| GroupSummary::of(l, s)).collect(),
        distributions: groups.into_iter().map(|g| g.1).collect(),
        tests,
        zero_variance_groups,
    })
}

/// Label of the shared-count group `k`.
pub fn shared_label(k: usize) -> String {
    format!("shared-{k}")
}

/// Cosine similarity of every annotated pair against its shared-feature
/// count: Spearman correlation, per-count distributions, and pairwise
/// t-tests among counts with at least two pairs.
pub fn form_feature_correlation(table: &EmbeddingTable, annotations: &[PairAnnotation], kind: Variance) -> Result<SimilarityReport> {
    let unit = unit_rows(table)?;
    let missing: BTreeSet<&str> = annotations
        .iter()
        .flat_map(|a| [a.gesture_a.as_str(), a.gesture_b.as_str()])
        .filter(|id| !unit.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(missing_error(missing));
    }
    let scores: Vec<f64> = annotations
        .iter()
        .map(|a| cosine_unit(&unit[a.gesture_a.as_str()], &unit[a.gesture_b.as_str()]))
        .collect();
    let counts: Vec<f64> = annotations.iter().map(|a| a.shared_count() as f64).collect();
    let corr = spearman(&scores, &counts)?;
    let mut by_count: Vec<Vec<f64>> = vec![Vec::new(); 6];
    for (s, a) in scores.iter().zip(annotations) {
        by_count[a.shared_count()].push(*s);
    }
    let tested: Vec<(String, Vec<f64>)> = by_count
        .iter()
        .enumerate()
        .filter(|(_, s)| s.len() >= 2)
        .map(|(k, s)| (shared_label(k), s.clone()))
        .collect();
    let (tests, zero_variance_groups) = pairwise_tests(&tested, kind)?;
    Ok(SimilarityReport {
        rho: Some(corr.rho),
        p_value: Some(corr.p_value),
        n_pairs: annotations.len(),
        groups: by_count.iter().enumerate().map(|(k, s)| GroupSummary::of(&shared_label(k), s)).collect(),
        distributions: by_count,
        tests,
        zero_variance_groups,
    })
}

/// Referent, speaker, and dialogue relation of a gesture pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairCondition {
    #[serde(rename = "same-ref-same-spk")]
    SameRefSameSpeaker,
    #[serde(rename = "same-ref-diff-spk")]
    SameRefDiffSpeaker,
    #[serde(rename = "diff-ref-same-spk")]
    DiffRefSameSpeaker,
    #[serde(rename = "diff-ref-diff-spk")]
    DiffRefDiffSpeaker,
    #[serde(rename = "same-ref-diff-spk-diff-dlg")]
    SameRefDiffDialogue,
    #[serde(rename = "diff-ref-diff-spk-diff-dlg")]
    DiffRefDiffDialogue,
}

impl PairCondition {
    pub const ALL: [PairCondition; 6] = [
        PairCondition::SameRefSameSpeaker,
        PairCondition::SameRefDiffSpeaker,
        PairCondition::DiffRefSameSpeaker,
        PairCondition::DiffRefDiffSpeaker,
        PairCondition::SameRefDiffDialogue,
        PairCondition::DiffRefDiffDialogue,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            PairCondition::SameRefSameSpeaker => "same-ref-same-spk",
            PairCondition::SameRefDiffSpeaker => "same-ref-diff-spk",
            PairCondition::DiffRefSameSpeaker => "diff-ref-same-spk",
            PairCondition::DiffRefDiffSpeaker => "diff-ref-diff-spk",
            PairCondition::SameRefDiffDialogue => "same-ref-diff-spk-diff-dlg",
            PairCondition::DiffRefDiffDialogue => "diff-ref-diff-spk-diff-dlg",
        }
    }

    pub fn is_cross_dialogue(self) -> bool {
        matches!(self, PairCondition::SameRefDiffDialogue | PairCondition::DiffRefDiffDialogue)
    }

    /// Condition of a pair of distinct gestures. Pairs of one speaker in two
    /// dialogues have no condition.
    pub fn classify(a: &GestureRecord, b: &GestureRecord) -> Option<PairCondition> {
        let same_ref = a.referent_id == b.referent_id;
        let same_spk = a.speaker_id == b.speaker_id;
        let same_dlg = a.dialogue_id == b.dialogue_id;
        Some(match (same_dlg, same_spk, same_ref) {
            (true, true, true) => PairCondition::SameRefSameSpeaker,
            (true, false, true) => PairCondition::SameRefDiffSpeaker,
            (true, true, false) => PairCondition::DiffRefSameSpeaker,
            (true, false, false) => PairCondition::DiffRefDiffSpeaker,
            (false, false, true) => PairCondition::SameRefDiffDialogue,
            (false, false, false) => PairCondition::DiffRefDiffDialogue,
            (false, true, _) => return None,
        })
    }
}

impl fmt::Display for PairCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairScope {
    WithinDialogue,
    CrossDialogue,
}

/// Pairs of record indices `(i, j)`, `i < j`, under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub condition: PairCondition,
    pub pairs: Vec<(usize, usize)>,
}

/// Seeded cap on the number of pairs kept per set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Downsample {
    pub max_pairs: usize,
    pub seed: u64,
}

/// Classifies every unordered record pair. The within-dialogue scope yields
/// the four same-dialogue sets; the cross-dialogue scope adds the two
/// different-dialogue sets.
pub fn build_pair_sets(records: &[GestureRecord], scope: PairScope, cap: Option<Downsample>) -> Vec<PairSet> {
    let conditions: &[PairCondition] = match scope {
        PairScope::WithinDialogue => &PairCondition::ALL[..4],
        PairScope::CrossDialogue => &PairCondition::ALL,
    };
    let mut sets: Vec<PairSet> = conditions
        .iter()
        .map(|&condition| PairSet {
            condition,
            pairs: Vec::new(),
        })
        .collect();
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            if let Some(c) = PairCondition::classify(&records[i], &records[j]) {
                if let Some(set) = sets.iter_mut().find(|s| s.condition == c) {
                    set.pairs.push((i, j));
                }
            }
        }
    }
    if let Some(cap) = cap {
        for (k, set) in sets.iter_mut().enumerate() {
            if set.pairs.len() > cap.max_pairs {
                let mut rng = rng_from(crate::rng::derive_seed(cap.seed, k as u64));
                set.pairs.shuffle(&mut rng);
                set.pairs.truncate(cap.max_pairs);
                set.pairs.sort_unstable();
            }
        }
    }
    sets
}

/// Outcome of one directional hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub hypothesis: String,
    pub greater: String,
    pub lesser: String,
    /// `None` when the comparison could not be evaluated.
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    /// The four within-dialogue sets.
    pub within: SimilarityReport,
    /// Different-speaker sets within and across dialogues, when built.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross: Option<SimilarityReport>,
    pub verdicts: Vec<Verdict>,
    pub alpha: f64,
}

impl BatteryReport {
    pub fn verdict(&self, hypothesis: &str) -> Option<bool> {
        self.verdicts.iter().find(|v| v.hypothesis == hypothesis).and_then(|v| v.holds)
    }
}

fn directional(report: &SimilarityReport, name: &str, greater: PairCondition, lesser: PairCondition, alpha: f64) -> Verdict {
    let holds = report.test(greater.tag(), lesser.tag()).and_then(|t| {
        let r = t.result.as_ref()?;
        let (g, l) = (report.group(greater.tag())?.mean?, report.group(lesser.tag())?.mean?);
        Some(g > l && r.adjusted_p.unwrap_or(r.p_value) < alpha)
    });
    Verdict {
        hypothesis: name.to_string(),
        greater: greater.tag().to_string(),
        lesser: lesser.tag().to_string(),
        holds,
    }
}

/// Cosine similarity per set, all pairwise t-tests within each analysis
/// (Bonferroni over that analysis), and verdicts: H1a same-referent above
/// different-referent for one speaker, H1b the same across speakers, H2
/// same-speaker above different-speaker for one referent, and H3 (both
/// H3-same-ref and H3-diff-ref) within-dialogue above cross-dialogue.
pub fn hypothesis_battery(
    table: &EmbeddingTable,
    records: &[GestureRecord],
    sets: &[PairSet],
    kind: Variance,
    alpha: f64,
) -> Result<BatteryReport> {
    let unit = unit_rows(table)?;
    let mut missing = BTreeSet::new();
    for set in sets {
        for &(i, j) in &set.pairs {
            for k in [i, j] {
                let id = records
                    .get(k)
                    .ok_or_else(|| Error::Contract(format!("pair refers to record {k} of {}", records.len())))?
                    .gesture_id
                    .as_str();
                if !unit.contains_key(id) {
                    missing.insert(id);
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(missing_error(missing));
    }
    let scores = |c: PairCondition| -> Option<Vec<f64>> {
        sets.iter().find(|s| s.condition == c).map(|s| {
            s.pairs
                .iter()
                .map(|&(i, j)| {
                    cosine_unit(&unit[records[i].gesture_id.as_str()], &unit[records[j].gesture_id.as_str()])
                })
                .collect()
        })
    };
    let group = |c: PairCondition| (c.tag().to_string(), scores(c).unwrap_or_default());
    use PairCondition::*;
    let within = report(
        [SameRefSameSpeaker, SameRefDiffSpeaker, DiffRefSameSpeaker, DiffRefDiffSpeaker].map(group).to_vec(),
        kind,
    )?;
    let has_cross = sets.iter().any(|s| s.condition.is_cross_dialogue());
    let cross = if has_cross {
        Some(report(
            [SameRefDiffSpeaker, DiffRefDiffSpeaker, SameRefDiffDialogue, DiffRefDiffDialogue].map(group).to_vec(),
            kind,
        )?)
    } else {
        None
    };
    let mut verdicts = vec![
        directional(&within, "H1a", SameRefSameSpeaker, DiffRefSameSpeaker, alpha),
        directional(&within, "H1b", SameRefDiffSpeaker, DiffRefDiffSpeaker, alpha),
        directional(&within, "H2", SameRefSameSpeaker, SameRefDiffSpeaker, alpha),
    ];
    if let Some(c) = &cross {
        let a = directional(c, "H3-same-ref", SameRefDiffSpeaker, SameRefDiffDialogue, alpha);
        let b = directional(c, "H3-diff-ref", DiffRefDiffSpeaker, DiffRefDiffDialogue, alpha);
        let holds = match (a.holds, b.holds) {
            (Some(x), Some(y)) => Some(x && y),
            _ => None,
        };
        verdicts.push(a.clone());
        verdicts.push(b.clone());
        verdicts.push(Verdict {
            hypothesis: "H3".into(),
            greater: format!("{} & {}", a.greater, b.greater),
            lesser: format!("{} & {}", a.lesser, b.lesser),
            holds,
        });
    }
    Ok(BatteryReport {
        within,
        cross,
        verdicts,
        alpha,
    })
}

/// Writes `pair_id,gesture_a,gesture_b,shared_count,similarity` rows.
pub fn write_pair_scores(path: &Path, table: &EmbeddingTable, annotations: &[PairAnnotation]) -> Result<()> {
    let unit = unit_rows(table)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pair_id", "gesture_a", "gesture_b", "shared_count", "similarity"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for a in annotations {
        let (Some(x), Some(y)) = (unit.get(a.gesture_a.as_str()), unit.get(a.gesture_b.as_str())) else {
            return Err(missing_error(
                [a.gesture_a.as_str(), a.gesture_b.as_str()]
                    .into_iter()
                    .filter(|id| !unit.contains_key(id))
                    .collect(),
            ));
        };
        w.write_record([
            a.pair_id.clone(),
            a.gesture_a.clone(),
            a.gesture_b.clone(),
            a.shared_count().to_string(),
            cosine_unit(x, y).to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Text histogram of mean similarity per shared-count bucket.
pub fn render_histogram(report: &SimilarityReport) -> String {
    let mut out = String::new();
    for g in &report.groups {
        let bar = g.mean.map_or(0, |m| ((m.clamp(-1.0, 1.0) + 1.0) * 20.0).round() as usize);
        let mean = g.mean.map_or("-".to_string(), |m| format!("{m:+.3}"));
        out.push_str(&format!("{:>10} n={:<5} mean={:>6} {}\n", g.label, g.n, mean, "#".repeat(bar)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, spk: &str, dlg: &str, r: &str) -> GestureRecord {
        GestureRecord {
            gesture_id: id.into(),
            speaker_id: spk.into(),
            dialogue_id: dlg.into(),
            referent_id: r.into(),
            stroke_start_frame: 0,
            stroke_end_frame: 1,
        }
    }

    #[test]
    fn two_speakers_two_gestures_each() {
        let records = vec![
            rec("a1", "a", "d", "r1"),
            rec("a2", "a", "d", "r1"),
            rec("b1", "b", "d", "r1"),
            rec("b2", "b", "d", "r1"),
        ];
        let sets = build_pair_sets(&records, PairScope::WithinDialogue, None);
        let count = |c: PairCondition| sets.iter().find(|s| s.condition == c).unwrap().pairs.len();
        assert_eq!(count(PairCondition::SameRefSameSpeaker), 2);
        assert_eq!(count(PairCondition::SameRefDiffSpeaker), 4);
        assert_eq!(count(PairCondition::DiffRefSameSpeaker), 0);
    }

    #[test]
    fn single_gesture_gives_empty_sets() {
        let sets = build_pair_sets(&[rec("a1", "a", "d", "r1")], PairScope::CrossDialogue, None);
        assert_eq!(sets.len(), 6);
        assert!(sets.iter().all(|s| s.pairs.is_empty()));
    }

    #[test]
    fn pooling_a_single_or_repeated_window_is_identity() {
        let e = vec![0.5, -1.0, 2.0];
        let one = EmbeddingTable::from_windows(&["g".into()], &[e.clone()]).unwrap();
        let two = EmbeddingTable::from_windows(&["g".into(), "g".into()], &[e.clone(), e.clone()]).unwrap();
        assert_eq!(one.get("g").unwrap(), e.as_slice());
        assert_eq!(two, one);
    }

    #[test]
    fn downsampling_is_seeded() {
        let records: Vec<GestureRecord> =
            (0..20).map(|k| rec(&format!("g{k}"), &format!("s{}", k % 2), "d", &format!("r{}", k % 3))).collect();
        let cap = Some(Downsample { max_pairs: 5, seed: 9 });
        let a = build_pair_sets(&records, PairScope::WithinDialogue, cap);
        assert_eq!(a, build_pair_sets(&records, PairScope::WithinDialogue, cap));
        assert!(a.iter().all(|s| s.pairs.len() <= 5));
    }
}
