use gesture_clr::eval::EmbeddingTable;
use gesture_clr::pose::{FormFeature, PairAnnotation};
use gesture_clr::probing::{random_baseline_embeddings, run_probe_experiment, shuffle_labels, ProbeConfig};
use gesture_clr::rng::rng_from;
use gesture_clr::synth::{generate, SynthConfig};
use gesture_clr::{config::Profile, Exec};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const GESTURES: usize = 120;
const DIM: usize = 8;
/// Probability of the majority category of each binary attribute.
const MAJORITY: f64 = 0.75;

struct Fixture {
    /// Attributes 0, 1, and 2 plus noise.
    encoded: EmbeddingTable,
    /// Noise only.
    noise: EmbeddingTable,
    annotations: Vec<PairAnnotation>,
}

// The probe scores each gesture separately and adds the two, so the planted
// signal is the marginal one: majority-category gestures share more often.
fn fixture(seed: u64) -> Fixture {
    let mut rng = rng_from(seed);
    let attrs: Vec<[bool; 5]> = (0..GESTURES)
        .map(|_| std::array::from_fn(|_| rng.random_bool(MAJORITY)))
        .collect();
    let gauss = |rng: &mut _| Distribution::<f64>::sample(&StandardNormal, rng);
    let mut encoded = EmbeddingTable::new(DIM);
    let mut noise = EmbeddingTable::new(DIM);
    for (i, a) in attrs.iter().enumerate() {
        let mut row: Vec<f64> = (0..DIM).map(|_| 0.3 * gauss(&mut rng)).collect();
        for f in 0..3 {
            row[f] += if a[f] { 1.0 } else { -1.0 };
        }
        encoded.rows.insert(format!("g{i:03}"), row);
        noise.rows.insert(format!("g{i:03}"), (0..DIM).map(|_| gauss(&mut rng)).collect());
    }
    let mut annotations = Vec::new();
    for i in 0..GESTURES {
        for j in i + 1..GESTURES {
            if (i + j) % 7 != 0 {
                continue;
            }
            annotations.push(PairAnnotation {
                pair_id: format!("p{i:03}_{j:03}"),
                gesture_a: format!("g{i:03}"),
                gesture_b: format!("g{j:03}"),
                features: std::array::from_fn(|f| attrs[i][f] == attrs[j][f]),
            });
        }
    }
    Fixture {
        encoded,
        noise,
        annotations,
    }
}

fn quick() -> ProbeConfig {
    ProbeConfig {
        seeds: 12,
        epochs: 30,
        lr: 5e-3,
        ..ProbeConfig::default()
    }
}

#[test]
fn planted_features_are_exactly_the_significant_ones() {
    let f = fixture(5);
    let report = run_probe_experiment(&f.annotations, &f.encoded, &f.noise, &quick(), 11, Exec::default()).unwrap();
    let expected: Vec<String> = FormFeature::ALL[..3].iter().map(|f| f.name().to_string()).collect();
    assert_eq!(report.significant_features(), expected, "{report:#?}");
    assert_eq!(report.results.len(), 10);
    assert!(report.results.iter().all(|r| r.auc_values.len() == 12));
}

#[test]
fn identical_representations_show_nothing() {
    let f = fixture(6);
    let report = run_probe_experiment(&f.annotations, &f.encoded, &f.encoded, &quick(), 3, Exec::default()).unwrap();
    assert!(report.significant_features().is_empty());
    for r in &report.results {
        assert!(r.p_adjusted >= 0.05, "{r:?}");
    }
}

#[test]
fn shuffled_labels_probe_at_chance() {
    let f = fixture(7);
    let shuffled = shuffle_labels(&f.annotations, 99);
    let report = run_probe_experiment(&shuffled, &f.encoded, &f.noise, &quick(), 5, Exec::default()).unwrap();
    for r in &report.results {
        assert!((r.auc_mean - 0.5).abs() < 0.08, "{r:?}");
    }
}

#[test]
fn experiment_is_deterministic_across_executors() {
    let f = fixture(8);
    let cfg = ProbeConfig { seeds: 3, ..quick() };
    let a = run_probe_experiment(&f.annotations, &f.encoded, &f.noise, &cfg, 1, Exec::Sequential).unwrap();
    let b = run_probe_experiment(&f.annotations, &f.encoded, &f.noise, &cfg, 1, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn random_baseline_is_seeded_encoder_output() {
    let cfg = SynthConfig {
        n_dialogues: 1,
        gestures_per_speaker: 6,
        referents: 4,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg, Exec::default()).unwrap().corpus;
    let model = Profile::Desk.model();
    let a = random_baseline_embeddings(&model, &corpus, 4, Exec::default()).unwrap();
    let b = random_baseline_embeddings(&model, &corpus, 4, Exec::default()).unwrap();
    let c = random_baseline_embeddings(&model, &corpus, 5, Exec::default()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.dim, model.gesture.output_dim);
    assert_eq!(a.dim, 256);
    assert_eq!(a.len(), corpus.records.len() - corpus.skipped.len());
}
