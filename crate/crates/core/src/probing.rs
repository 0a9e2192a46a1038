//! Diagnostic probing of frozen gesture embeddings for pairwise form
//! similarity.
//!
//! Each gesture of a pair passes through a per-gesture linear layer with
//! ReLU; the two hidden vectors are concatenated and a linear unit with a
//! sigmoid predicts whether the pair shares a form feature. Probes on
//! trained embeddings are compared with probes on random-init embeddings
//! over many seeded splits.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::eval::{embed_gestures, EmbeddingTable};
use crate::exec::Exec;
use crate::optim::{Adam, AdamConfig};
use crate::params::{he_uniform, ParamStore};
use crate::pose::{Corpus, FormFeature, PairAnnotation};
use crate::rng::{derive_seed, derive_seed_path, rng_from};
use crate::stats::{benjamini_hochberg, mann_whitney_u, mean, roc_auc, UMethod};
use crate::towers::{Layer, Model, ModelConfig};

/// Which epoch's parameters produce the test score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpochSelection {
    BestValidation,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Train, validation, and test shares of the pair list.
    pub fractions: [f64; 3],
    pub seeds: usize,
    pub alpha: f64,
    /// One per-gesture layer for both slots, or one per slot.
    pub shared_weights: bool,
    /// Z-score inputs with training-split statistics.
    pub standardize: bool,
    pub selection: EpochSelection,
    /// Split redraws allowed when a part lacks one class.
    pub max_split_retries: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 32,
            epochs: 50,
            lr: 5e-4,
            batch_size: 32,
            fractions: [0.6, 0.2, 0.2],
            seeds: 100,
            alpha: 0.05,
            shared_weights: true,
            standardize: true,
            selection: EpochSelection::BestValidation,
            max_split_retries: 20,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.fractions.iter().any(|f| *f <= 0.0) {
            return Err(Error::Config(format!("probe split fractions {:?} must be positive and sum to 1", self.fractions)));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.seeds == 0 {
            return Err(Error::Config("probe widths, batch size, and seed count must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("probe learning rate must be nonnegative and alpha in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Probe parameters. `w1` is `(input, hidden)`, `w2` is `(2·hidden)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub store: ParamStore,
}

impl ProbeParams {
    pub fn init(input_dim: usize, hidden: usize, shared: bool, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut store = ParamStore::new();
        store.insert("probe.a.w", he_uniform(&[input_dim, hidden], input_dim, &mut rng));
        store.insert("probe.a.b", Tensor::zeros(&[hidden]));
        if !shared {
            store.insert("probe.b.w", he_uniform(&[input_dim, hidden], input_dim, &mut rng));
            store.insert("probe.b.b", Tensor::zeros(&[hidden]));
        }
        let bound = (1.0 / (2 * hidden) as f64).sqrt();
        let w2 = (0..2 * hidden).map(|_| rng.random_range(-bound..bound)).collect();
        store.insert("probe.out.w", Tensor::vector(w2));
        store.insert("probe.out.b", Tensor::zeros(&[1]));
        ProbeParams {
            input_dim,
            hidden,
            store,
        }
    }

    /// All-zero parameters.
    pub fn zeros(input_dim: usize, hidden: usize, shared: bool) -> Self {
        let mut p = ProbeParams::init(input_dim, hidden, shared, 0);
        for (_, t) in p.store.iter_mut() {
            t.data_mut().fill(0.0);
        }
        p
    }

    pub fn is_shared(&self) -> bool {
        self.store.get("probe.b.w").is_err()
    }

    fn slot(&self, slot: usize) -> (&[f64], &[f64]) {
        let (w, b) = if slot == 1 && !self.is_shared() {
            ("probe.b.w", "probe.b.b")
        } else {
            ("probe.a.w", "probe.a.b")
        };
        (
            self.store.get(w).expect("probe weight").data(),
            self.store.get(b).expect("probe bias").data(),
        )
    }

    fn out(&self) -> (&[f64], f64) {
        (
            self.store.get("probe.out.w").expect("probe output").data(),
            self.store.get("probe.out.b").expect("probe output bias").data()[0],
        )
    }
}

/// Hidden activations `(n, hidden)` of one slot for `n` stacked inputs.
fn hidden(params: &ProbeParams, slot: usize, x: &[f64], n: usize) -> Vec<f64> {
    let (w, b) = params.slot(slot);
    let h = params.hidden;
    let mut out = vec![0.0; n * h];
    gemm(n, params.input_dim, h, x, false, w, false, &mut out, 0.0);
    for row in out.chunks_mut(h) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v = (*v + bias).max(0.0);
        }
    }
    out
}

/// Logits for `n` pairs given stacked first-slot and second-slot inputs.
fn logits(params: &ProbeParams, xa: &[f64], xb: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ha = hidden(params, 0, xa, n);
    let hb = hidden(params, 1, xb, n);
    let (w2, b2) = params.out();
    let h = params.hidden;
    let z = (0..n)
        .map(|i| {
            let a: f64 = ha[i * h..(i + 1) * h].iter().zip(&w2[..h]).map(|(x, w)| x * w).sum();
            let b: f64 = hb[i * h..(i + 1) * h].iter().zip(&w2[h..]).map(|(x, w)| x * w).sum();
            a + b + b2
        })
        .collect();
    (z, ha, hb)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability that the pair `(a, b)` shares the probed feature.
pub fn probe_forward(a: &[f64], b: &[f64], params: &ProbeParams) -> Result<f64> {
    if a.len() != params.input_dim || b.len() != params.input_dim {
        return Err(Error::Shape(format!(
            "probe expects {}-dim inputs, got {} and {}",
            params.input_dim,
            a.len(),
            b.len()
        )));
    }
    Ok(sigmoid(logits(params, a, b, 1).0[0]))
}

/// Mean binary cross-entropy over `n` pairs and its gradients in store
/// order.
pub fn probe_loss_and_gradients(params: &ProbeParams, xa: &[f64], xb: &[f64], labels: &[bool]) -> (f64, Vec<Tensor>) {
    let n = labels.len();
    let (z, ha, hb) = logits(params, xa, xb, n);
    let h = params.hidden;
    let d = params.input_dim;
    let (w2, _) = params.out();
    let mut loss = 0.0;
    let mut dz = vec![0.0; n];
    for i in 0..n {
        let y = if labels[i] { 1.0 } else { 0.0 };
        loss += z[i].max(0.0) - y * z[i] + (-z[i].abs()).exp().ln_1p();
        dz[i] = (sigmoid(z[i]) - y) / n as f64;
    }
    loss /= n as f64;
    let mut dw2 = vec![0.0; 2 * h];
    let mut dha = vec![0.0; n * h];
    let mut dhb = vec![0.0; n * h];
    for i in 0..n {
        for k in 0..h {
            dw2[k] += dz[i] * ha[i * h + k];
            dw2[h + k] += dz[i] * hb[i * h + k];
            if ha[i * h + k] > 0.0 {
                dha[i * h + k] = dz[i] * w2[k];
            }
            if hb[i * h + k] > 0.0 {
                dhb[i * h + k] = dz[i] * w2[h + k];
            }
        }
    }
    let db2: f64 = dz.iter().sum();
    let slot_grads = |x: &[f64], dh: &[f64]| {
        let mut dw = vec![0.0; d * h];
        gemm(d, n, h, x, true, dh, false, &mut dw, 0.0);
        let mut db = vec![0.0; h];
        for row in dh.chunks(h) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
        (dw, db)
    };
    let (mut dwa, mut dba) = slot_grads(xa, &dha);
    let (dwb, dbb) = slot_grads(xb, &dhb);
    let mut grads = Vec::new();
    if params.is_shared() {
        dwa.iter_mut().zip(&dwb).for_each(|(a, b)| *a += b);
        dba.iter_mut().zip(&dbb).for_each(|(a, b)| *a += b);
        grads.push(Tensor::new(&[d, h], dwa).expect("shape"));
        grads.push(Tensor::vector(dba));
    } else {
        grads.push(Tensor::new(&[d, h], dwa).expect("shape"));
        grads.push(Tensor::vector(dba));
        grads.push(Tensor::new(&[d, h], dwb).expect("shape"));
        grads.push(Tensor::vector(dbb));
    }
    grads.push(Tensor::vector(dw2));
    grads.push(Tensor::vector(vec![db2]));
    (loss, grads)
}

/// Embedding pairs with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub dim: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl ProbeData {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self> {
        let dim = a.first().map_or(0, Vec::len);
        if a.len() != b.len() || a.len() != labels.len() {
            return Err(Error::Shape(format!("{} / {} pairs for {} labels", a.len(), b.len(), labels.len())));
        }
        if a.iter().chain(&b).any(|v| v.len() != dim) {
            return Err(Error::Shape("probe inputs of unequal width".into()));
        }
        Ok(ProbeData { dim, a, b, labels })
    }

    /// Pairs of `annotations` labelled by `feature`.
    pub fn from_annotations(table: &EmbeddingTable, annotations: &[PairAnnotation], feature: FormFeature) -> Result<Self> {
        let mut missing: Vec<&str> = annotations
            .iter()
            .flat_map(|p| [p.gesture_a.as_str(), p.gesture_b.as_str()])
            .filter(|id| table.get(id).is_none())
            .collect();
        if !missing.is_empty() {
            missing.sort_unstable();
            missing.dedup();
            return Err(Error::Integrity(format!("no embedding for gestures: {}", missing.join(", "))));
        }
        let get = |id: &str| table.get(id).expect("checked").to_vec();
        ProbeData::new(
            annotations.iter().map(|p| get(&p.gesture_a)).collect(),
            annotations.iter().map(|p| get(&p.gesture_b)).collect(),
            annotations.iter().map(|p| p.has(feature)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Disjoint train/validation/test index lists covering every pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn has_both(labels: &[bool], idx: &[usize]) -> bool {
    idx.iter().any(|&i| labels[i]) && idx.iter().any(|&i| !labels[i])
}

/// Seeded shuffle split. Redraws with derived seeds until every part holds
/// both classes.
pub fn split_pairs(labels: &[bool], fractions: [f64; 3], seed: u64, max_retries: usize) -> Result<ProbeSplit> {
    let n = labels.len();
    let n_train = (n as f64 * fractions[0]).floor() as usize;
    let n_val = (n as f64 * fractions[1]).floor() as usize;
    for attempt in 0..=max_retries {
        let mut idx: Vec<usize> = (0..n).collect();
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt as u64) };
        idx.shuffle(&mut rng_from(s));
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        let split = ProbeSplit { train: idx, val, test };
        if has_both(labels, &split.train) && has_both(labels, &split.val) && has_both(labels, &split.test) {
            return Ok(split);
        }
        log::warn!("probe split {attempt} with seed {s} has a single-class part; redrawing");
    }
    Err(Error::Degenerate(format!(
        "no split with both classes in every part after {} draws",
        max_retries + 1
    )))
}

fn gather(rows: &[Vec<f64>], idx: &[usize], stats: Option<&(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * rows.first().map_or(0, Vec::len));
    for &i in idx {
        match stats {
            Some((m, s)) => out.extend(rows[i].iter().zip(m).zip(s).map(|((v, m), s)| (v - m) / s)),
            None => out.extend_from_slice(&rows[i]),
        }
    }
    out
}

/// Per-dimension mean and standard deviation over both slots of `idx`.
fn input_stats(data: &ProbeData, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = data.dim;
    let n = 2 * idx.len();
    let mut m = vec![0.0; d];
    for &i in idx {
        for k in 0..d {
            m[k] += data.a[i][k] + data.b[i][k];
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    let mut s = vec![0.0; d];
    for &i in idx {
        for k in 0..d {
            s[k] += (data.a[i][k] - m[k]).powi(2) + (data.b[i][k] - m[k]).powi(2);
        }
    }
    let s = s.into_iter().map(|v| (v / n as f64).sqrt().max(1e-8)).collect();
    (m, s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub test_auc: f64,
    pub best_epoch: usize,
    pub split: ProbeSplit,
}

fn scores(params: &ProbeParams, data: &ProbeData, idx: &[usize], stats: Option<&(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let xa = gather(&data.a, idx, stats);
    let xb = gather(&data.b, idx, stats);
    logits(params, &xa, &xb, idx.len()).0
}

/// Trains one probe on a seeded split and returns its test ROC-AUC.
pub fn train_probe(data: &ProbeData, cfg: &ProbeConfig, seed: u64) -> Result<ProbeRun> {
    cfg.validate()?;
    let split = split_pairs(&data.labels, cfg.fractions, derive_seed(seed, 1), cfg.max_split_retries)?;
    let stats = cfg.standardize.then(|| input_stats(data, &split.train));
    let stats = stats.as_ref();
    let mut params = ProbeParams::init(data.dim, cfg.hidden, cfg.shared_weights, derive_seed(seed, 2));
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &params.store,
    );
    let mut rng = rng_from(derive_seed(seed, 3));
    let val_labels: Vec<bool> = split.val.iter().map(|&i| data.labels[i]).collect();
    let mut best = (f64::NEG_INFINITY, 0, params.clone());
    let mut order = split.train.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let swaps: Vec<bool> = order.iter().map(|_| rng.random::<bool>()).collect();
        for (chunk, swap) in order.chunks(cfg.batch_size).zip(swaps.chunks(cfg.batch_size)) {
            let xa = gather(&data.a, chunk, stats);
            let xb = gather(&data.b, chunk, stats);
            // Slot order flips per pair and epoch.
            let d = data.dim;
            let mut first = xa.clone();
            let mut second = xb.clone();
            for (k, &s) in swap.iter().enumerate() {
                if s {
                    first[k * d..(k + 1) * d].copy_from_slice(&xb[k * d..(k + 1) * d]);
                    second[k * d..(k + 1) * d].copy_from_slice(&xa[k * d..(k + 1) * d]);
                }
            }
            let labels: Vec<bool> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, grads) = probe_loss_and_gradients(&params, &first, &second, &labels);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite probe loss {loss} at epoch {epoch}")));
            }
            adam.step(&mut params.store, &grads)?;
        }
        if cfg.selection == EpochSelection::BestValidation {
            let auc = roc_auc(&scores(&params, data, &split.val, stats), &val_labels)?;
            if auc > best.0 {
                best = (auc, epoch, params.clone());
            }
        }
    }
    let (best_epoch, chosen) = match cfg.selection {
        EpochSelection::BestValidation if cfg.epochs > 0 => (best.1, best.2),
        _ => (cfg.epochs, params),
    };
    let test_labels: Vec<bool> = split.test.iter().map(|&i| data.labels[i]).collect();
    let test_auc = roc_auc(&scores(&chosen, data, &split.test, stats), &test_labels)?;
    Ok(ProbeRun {
        test_auc,
        best_epoch,
        split,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Trained,
    RandomBaseline,
}

impl Representation {
    pub fn tag(self) -> &'static str {
        match self {
            Representation::Trained => "trained",
            Representation::RandomBaseline => "random-baseline",
        }
    }
}

/// Seed-level AUCs of one feature and representation, with the
/// feature's trained-versus-baseline comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub feature: String,
    pub representation: Representation,
    pub auc_mean: f64,
    pub auc_values: Vec<f64>,
    pub u_statistic: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub results: Vec<ProbeResult>,
    pub seeds: usize,
    pub alpha: f64,
}

impl ProbeReport {
    pub fn significant_features(&self) -> Vec<String> {
        self.results
            .iter()
            .filter(|r| r.representation == Representation::Trained && r.significant)
            .map(|r| r.feature.clone())
            .collect()
    }

    /// Two-column CSV body: one row per feature, representation, and seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,representation,seed,auc\n");
        for r in &self.results {
            for (s, v) in r.auc_values.iter().enumerate() {
                out.push_str(&format!("{},{},{s},{v}\n", r.feature, r.representation.tag()));
            }
        }
        out
    }
}

/// For every form feature, `cfg.seeds` probes on each representation with
/// paired split seeds; Mann-Whitney on the two AUC lists, then
/// Benjamini-Hochberg over the five features.
pub fn run_probe_experiment(
    annotations: &[PairAnnotation],
    trained: &EmbeddingTable,
    baseline: &EmbeddingTable,
    cfg: &ProbeConfig,
    seed: u64,
    exec: Exec,
) -> Result<ProbeReport> {
    cfg.validate()?;
    let mut data = Vec::new();
    for f in FormFeature::ALL {
        data.push([
            ProbeData::from_annotations(trained, annotations, f)?,
            ProbeData::from_annotations(baseline, annotations, f)?,
        ]);
    }
    let jobs = FormFeature::ALL.len() * 2 * cfg.seeds;
    let aucs = exec.map(jobs, |k| {
        let (f, rest) = (k / (2 * cfg.seeds), k % (2 * cfg.seeds));
        let (rep, s) = (rest / cfg.seeds, rest % cfg.seeds);
        train_probe(&data[f][rep], cfg, derive_seed_path(seed, &[f as u64, s as u64])).map(|r| r.test_auc)
    });
    let aucs = aucs.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut tests = Vec::new();
    for f in 0..FormFeature::ALL.len() {
        let base = f * 2 * cfg.seeds;
        let t = &aucs[base..base + cfg.seeds];
        let b = &aucs[base + cfg.seeds..base + 2 * cfg.seeds];
        tests.push(mann_whitney_u(t, b, UMethod::default())?);
    }
    let raw: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
    let adjusted = benjamini_hochberg(&raw)?;
    let mut results = Vec::new();
    for (f, feature) in FormFeature::ALL.iter().enumerate() {
        let base = f * 2 * cfg.seeds;
        let t = aucs[base..base + cfg.seeds].to_vec();
        let b = aucs[base + cfg.seeds..base + 2 * cfg.seeds].to_vec();
        let significant = adjusted[f] < cfg.alpha && mean(&t) > mean(&b);
        for (rep, values) in [(Representation::Trained, t), (Representation::RandomBaseline, b)] {
            results.push(ProbeResult {
                feature: feature.name().to_string(),
                representation: rep,
                auc_mean: mean(&values),
                auc_values: values,
                u_statistic: tests[f].statistic,
                p: tests[f].p_value,
                p_adjusted: adjusted[f],
                significant,
            });
        }
    }
    Ok(ProbeReport {
        results,
        seeds: cfg.seeds,
        alpha: cfg.alpha,
    })
}

/// Encoder-layer embeddings of a frozen randomly initialized model.
pub fn random_baseline_embeddings(config: &ModelConfig, corpus: &Corpus, seed: u64, exec: Exec) -> Result<EmbeddingTable> {
    let model = Model::init(config.clone(), seed)?;
    embed_gestures(&model, corpus, Layer::Encoder, 64, exec)
}

/// Copies `annotations` with each feature's flags permuted across pairs.
pub fn shuffle_labels(annotations: &[PairAnnotation], seed: u64) -> Vec<PairAnnotation> {
    let mut out = annotations.to_vec();
    for f in 0..FormFeature::ALL.len() {
        let mut flags: Vec<bool> = annotations.iter().map(|a| a.features[f]).collect();
        flags.shuffle(&mut rng_from(derive_seed(seed, f as u64)));
        for (a, v) in out.iter_mut().zip(flags) {
            a.features[f] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probe_outputs_one_half() {
        let p = ProbeParams::zeros(4, 3, true);
        assert_eq!(probe_forward(&[1.0, 2.0, 3.0, 4.0], &[-1.0, 0.0, 5.0, 2.0], &p).unwrap(), 0.5);
        assert!(matches!(probe_forward(&[1.0], &[1.0], &p), Err(Error::Shape(_))));
    }

    #[test]
    fn probe_gradients_match_finite_differences() {
        for shared in [true, false] {
            let mut rng = rng_from(5);
            let mut p = ProbeParams::init(5, 4, shared, 11);
            for (_, t) in p.store.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
            }
            let n = 6;
            let xa: Vec<f64> = (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xb: Vec<f64> = (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let (_, grads) = probe_loss_and_gradients(&p, &xa, &xb, &labels);
            let names: Vec<String> = p.store.iter().map(|(n, _)| n.to_string()).collect();
            for (k, name) in names.iter().enumerate() {
                for i in 0..grads[k].len() {
                    let h = 1e-6;
                    let mut plus = p.clone();
                    plus.store.get_mut(name).unwrap().data_mut()[i] += h;
                    let mut minus = p.clone();
                    minus.store.get_mut(name).unwrap().data_mut()[i] -= h;
                    let num = (probe_loss_and_gradients(&plus, &xa, &xb, &labels).0
                        - probe_loss_and_gradients(&minus, &xa, &xb, &labels).0)
                        / (2.0 * h);
                    let ana = grads[k].data()[i];
                    let err = crate::diff::relative_error(ana, num);
                    assert!(err < 1e-4, "{name}[{i}]: analytic {ana} numeric {num}");
                }
            }
        }
    }

    #[test]
    fn splits_partition_and_hold_both_classes() {
        let labels: Vec<bool> = (0..50).map(|i| i % 4 == 0).collect();
        let s = split_pairs(&labels, [0.6, 0.2, 0.2], 3, 10).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (30, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        let one_class = vec![true; 20];
        assert!(matches!(split_pairs(&one_class, [0.6, 0.2, 0.2], 3, 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn separable_labels_are_learned() {
        let mut rng = rng_from(2);
        let n = 300;
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels = a.iter().zip(&b).map(|(x, y)| x[0] + y[0] > 0.0).collect();
        let data = ProbeData::new(a, b, labels).unwrap();
        let cfg = ProbeConfig {
            lr: 5e-3,
            ..ProbeConfig::default()
        };
        let run = train_probe(&data, &cfg, 4).unwrap();
        assert!(run.test_auc >= 0.95, "{}", run.test_auc);
        assert_eq!(train_probe(&data, &cfg, 4).unwrap(), run);
    }
}
