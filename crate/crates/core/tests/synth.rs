use std::collections::BTreeMap;
use std::path::Path;

use gesture_clr::pose::{Corpus, WindowSpec};
use gesture_clr::synth::{generate, planted_geometry_check, shared_count_histogram, SynthConfig};
use gesture_clr::Exec;
use sha2::{Digest, Sha256};

fn small() -> SynthConfig {
    SynthConfig {
        n_dialogues: 2,
        gestures_per_speaker: 16,
        referents: 8,
        ..SynthConfig::default()
    }
}

fn digest_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&path).unwrap())));
            }
        }
    }
    out
}

#[test]
fn zero_noise_repeats_same_referent_gestures_exactly() {
    let cfg = SynthConfig {
        noise: 0.0,
        ..small()
    };
    let s = generate(&cfg, Exec::Sequential).unwrap();
    let mut compared = 0;
    let recs = &s.corpus.records;
    for i in 0..recs.len() {
        for j in i + 1..recs.len() {
            let (a, b) = (&recs[i], &recs[j]);
            if a.speaker_id != b.speaker_id || a.referent_id != b.referent_id {
                continue;
            }
            let kp = &s.corpus.keypoints[&a.speaker_id];
            assert_eq!(a.stroke_end_frame - a.stroke_start_frame, b.stroke_end_frame - b.stroke_start_frame);
            // Preparation and retraction frames included.
            for t in 0..(a.stroke_end_frame - a.stroke_start_frame + 17) {
                for joint in 0..27 {
                    assert_eq!(
                        kp.joint(a.stroke_start_frame - 8 + t, joint),
                        kp.joint(b.stroke_start_frame - 8 + t, joint),
                        "{} vs {} frame {t}",
                        a.gesture_id,
                        b.gesture_id
                    );
                }
            }
            compared += 1;
        }
    }
    assert!(compared >= 8, "{compared}");
}

#[test]
fn unperturbed_prototypes_share_all_features() {
    let cfg = SynthConfig {
        dialogue_resample: 0.0,
        speaker_resample: 0.0,
        gesture_resample: 0.0,
        ..small()
    };
    let s = generate(&cfg, Exec::Sequential).unwrap();
    assert!(!s.corpus.annotations.is_empty());
    assert!(s.corpus.annotations.iter().all(|a| a.shared_count() == 5));
}

#[test]
fn defaults_give_enough_pairs_in_every_bucket() {
    let s = generate(&SynthConfig::default(), Exec::default()).unwrap();
    assert!(s.corpus.annotations.len() >= 400, "{}", s.corpus.annotations.len());
    let hist = shared_count_histogram(&s.corpus.annotations);
    assert!(hist.iter().all(|&c| c > 0), "{hist:?}");
    assert_eq!(hist.iter().sum::<usize>(), s.corpus.annotations.len());
    // Brute-force recount from the planted attributes.
    let truth: BTreeMap<_, _> = s.truth.iter().map(|t| (t.gesture_id.as_str(), t.attributes)).collect();
    for a in &s.corpus.annotations {
        let (x, y) = (truth[a.gesture_a.as_str()], truth[a.gesture_b.as_str()]);
        let expected: [bool; 5] = std::array::from_fn(|f| x[f] == y[f]);
        assert_eq!(a.features, expected, "{}", a.pair_id);
    }
}

#[test]
fn planted_geometry_holds_at_defaults_and_without_noise() {
    let s = generate(&SynthConfig::default(), Exec::default()).unwrap();
    let report = planted_geometry_check(&s.corpus).unwrap();
    assert!(report.passed, "{report:?}");
    let quiet = generate(&SynthConfig { noise: 0.0, ..small() }, Exec::default()).unwrap();
    assert!(planted_geometry_check(&quiet.corpus).unwrap().passed);
}

#[test]
fn heavy_style_offsets_are_reported_not_raised() {
    let cfg = SynthConfig {
        style_scale: 40.0,
        camera_scale: 5.0,
        ..small()
    };
    let s = generate(&cfg, Exec::default()).unwrap();
    let report = planted_geometry_check(&s.corpus).unwrap();
    assert!(report.p_value.is_finite() && (0.0..=1.0).contains(&report.p_value));
    assert_eq!(report.passed, report.p_value < 0.01 && report.same_referent_mean < report.different_referent_mean);
}

#[test]
fn same_seed_writes_identical_bytes_and_round_trips() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = generate(&small(), Exec::Sequential).unwrap();
    first.corpus.save(a.path()).unwrap();
    generate(&small(), Exec::Parallel).unwrap().corpus.save(b.path()).unwrap();
    let (da, db) = (digest_dir(a.path()), digest_dir(b.path()));
    assert!(da.len() >= 6);
    assert_eq!(da, db);

    let other = generate(&SynthConfig { seed: 1, ..small() }, Exec::Sequential).unwrap();
    let c = tempfile::tempdir().unwrap();
    other.corpus.save(c.path()).unwrap();
    assert_ne!(da, digest_dir(c.path()));

    let loaded = Corpus::load(a.path(), WindowSpec::default()).unwrap();
    assert_eq!(loaded.records, first.corpus.records);
    assert_eq!(loaded.annotations, first.corpus.annotations);
    assert_eq!(loaded.keypoints, first.corpus.keypoints);
    assert_eq!(loaded.windows, first.corpus.windows);
    assert_eq!(loaded.speech.len(), first.corpus.speech.len());
    for (k, v) in &loaded.speech {
        assert_eq!(v, &first.corpus.speech[k]);
    }
}
