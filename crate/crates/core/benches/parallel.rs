use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gesture_clr::config::Profile;
use gesture_clr::eval::embed_gestures;
use gesture_clr::probing::{run_probe_experiment, ProbeConfig};
use gesture_clr::synth::{generate, SynthConfig};
use gesture_clr::towers::{Layer, Model};
use gesture_clr::Exec;

const EXECS: [Exec; 2] = [Exec::Sequential, Exec::Parallel];

fn small() -> SynthConfig {
    SynthConfig {
        n_dialogues: 2,
        gestures_per_speaker: 12,
        referents: 6,
        ..SynthConfig::default()
    }
}

fn bench_synth(c: &mut Criterion) {
    let mut group = c.benchmark_group("synth");
    group.sample_size(10);
    for exec in EXECS {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| generate(&small(), exec).unwrap())
        });
    }
    group.finish();
}

fn bench_embed(c: &mut Criterion) {
    let corpus = generate(&small(), Exec::default()).unwrap().corpus;
    let model = Model::init(Profile::Desk.model(), 0).unwrap();
    let mut group = c.benchmark_group("embed");
    group.sample_size(10);
    for exec in EXECS {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| embed_gestures(&model, &corpus, Layer::Projection, 64, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_probe(c: &mut Criterion) {
    let corpus = generate(&small(), Exec::default()).unwrap().corpus;
    let model = Model::init(Profile::Desk.model(), 0).unwrap();
    let trained = embed_gestures(&model, &corpus, Layer::Encoder, 64, Exec::default()).unwrap();
    let other = Model::init(Profile::Desk.model(), 1).unwrap();
    let baseline = embed_gestures(&other, &corpus, Layer::Encoder, 64, Exec::default()).unwrap();
    let cfg = ProbeConfig {
        seeds: 4,
        epochs: 10,
        ..ProbeConfig::default()
    };
    let mut group = c.benchmark_group("probe");
    group.sample_size(10);
    for exec in EXECS {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| run_probe_experiment(&corpus.annotations, &trained, &baseline, &cfg, 0, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_synth, bench_embed, bench_probe);
criterion_main!(benches);
