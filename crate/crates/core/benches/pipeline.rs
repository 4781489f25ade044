//! Sequential vs parallel execution of the per-point stages and a full run.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Vector3;

use rinav::config::Config;
use rinav::ins::{idx, ErrorCovariance, NavState};
use rinav::kdtree::KdTree;
use rinav::matcher::{scan_match_update, MatchPoint};
use rinav::par::ExecPolicy;
use rinav::pipeline::run;
use rinav::radar::gate_doppler;
use rinav::sim::{simulate, Scenario};

const POLICIES: [(&str, ExecPolicy); 2] = [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel)];

fn stages(c: &mut Criterion) {
    let s = Scenario { duration: 20.0, points_min: 300, points_max: 300, ..Scenario::default() };
    let sim = simulate(&s).unwrap();
    let cfg = s.run_config();
    let tree = KdTree::from_points(&sim.world);
    let scan = &sim.dataset.scans[sim.dataset.scans.len() / 2];
    let g = sim.flight.sample(scan.time);
    let x = NavState {
        attitude: g.attitude,
        position: g.position,
        velocity: g.velocity,
        ext_rotation: s.ext_rotation,
        ext_translation: s.ext_translation,
        time: scan.time,
        ..NavState::default()
    };
    let mut p = ErrorCovariance::identity() * 1e-6;
    for i in 0..3 {
        p[(idx::POS + i, idx::POS + i)] = 0.1;
    }
    let points: Vec<MatchPoint> = scan.points.iter().map(|pt| MatchPoint::from_radar(pt, &cfg.radar)).collect();

    let mut group = c.benchmark_group("stages");
    for (name, policy) in POLICIES {
        group.bench_with_input(BenchmarkId::new("gate_doppler", name), &policy, |b, &policy| {
            b.iter(|| gate_doppler(black_box(scan), &x, &p, &Vector3::zeros(), &cfg.radar, false, policy))
        });
        group.bench_with_input(BenchmarkId::new("scan_match_update", name), &policy, |b, &policy| {
            b.iter(|| scan_match_update(black_box(&x), &p, &points, &tree, &cfg.matching, &cfg.update, policy).unwrap())
        });
    }
    group.finish();
}

fn full_run(c: &mut Criterion) {
    let s = Scenario { duration: 8.0, ..Scenario::default() };
    let sim = simulate(&s).unwrap();
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    for (name, policy) in POLICIES {
        let mut cfg = Config { parallel: policy == ExecPolicy::Parallel, ..s.run_config() };
        cfg.finish().unwrap();
        group.bench_function(name, |b| b.iter(|| run(black_box(&sim.dataset), &cfg, None).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, stages, full_run);
criterion_main!(benches);
