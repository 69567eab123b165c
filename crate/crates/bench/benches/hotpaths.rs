//! Hot-path benchmarks: simulator stepping, sensor rendering, and network
//! forward/backward at smoke and full scale.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use athrl_core::neural::{backward, forward, Frame, HiddenState, SeqInput};
use athrl_core::sensors::Observation;
use athrl_core::worldsim::{spawn_scenario, EgoCommand, MapId, DT};
use athrl_core::NetworkSpec;

fn bench_world_step(c: &mut Criterion) {
    let cmd = EgoCommand::clipped(0.4, 0.1);
    for n_traffic in [10, 100] {
        let mut world = spawn_scenario(MapId::Mini03, n_traffic, 0).unwrap();
        c.bench_function(&format!("world_step_{n_traffic}_traffic"), |b| {
            b.iter(|| world.step(&cmd, DT).unwrap())
        });
    }
}

fn bench_sensors(c: &mut Criterion) {
    let world = spawn_scenario(MapId::Mini03, 100, 0).unwrap();
    c.bench_function("observation_render", |b| b.iter(|| Observation::render(&world)));
    let obs = Observation::render(&world);
    c.bench_function("observation_to_frame", |b| b.iter(|| obs.to_frame()));
}

fn random_grid_frames(rng: &mut ChaCha8Rng, seq_len: usize) -> Vec<Arc<Frame>> {
    (0..seq_len)
        .map(|_| {
            Arc::new(Frame::Grids {
                lidar: (0..100).map(|_| rng.gen_range(0..1024u16)).collect(),
                bev: (0..300).map(|_| rng.gen_range(0..3072u16)).collect(),
            })
        })
        .collect()
}

fn bench_network(c: &mut Criterion) {
    let spec = NetworkSpec::observation(1, 3, 8);
    let params = spec.init_params(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames = random_grid_frames(&mut rng, spec.seq_len);
    let extras = [1.0];
    let seqs = [SeqInput { frames: &frames, extras: &extras }];
    let h0 = HiddenState::zeros(seqs.len(), spec.lstm);

    c.bench_function("forward_full_scale", |b| {
        b.iter(|| forward(&spec, &params, &seqs, &h0).unwrap())
    });

    let (out, tape, _) = forward(&spec, &params, &seqs, &h0).unwrap();
    let grad = out.mapv(|_| 1.0);
    c.bench_function("backward_full_scale", |b| {
        b.iter(|| backward(&spec, &params, &tape, &grad).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_world_step, bench_sensors, bench_network
}
criterion_main!(benches);
