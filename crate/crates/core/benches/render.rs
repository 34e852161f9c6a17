use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mhi_core::estimate::{estimate_mhi, EstimatorMode};
use mhi_core::mhi::MhiConfig;
use mhi_core::par;
use mhi_core::render::{render_multi_normal_images, RenderRequest};
use mhi_core::synth::{generate_sample, RotationBin, SuiteConfig};

fn render(c: &mut Criterion) {
    let suite = SuiteConfig {
        width: 256,
        height: 256,
        ..Default::default()
    };
    let sample = generate_sample(&suite, RotationBin::From4To8, 0, 3).unwrap();
    let cfg = MhiConfig::with_counts(sample.input.ref_cam, 5, 32).unwrap();
    let req = RenderRequest::new(sample.input.ref_cam, sample.targets[0].pose);
    let mut group = c.benchmark_group("render_256_n5_d32");
    group.sample_size(10);
    for mode in [EstimatorMode::WinnerTakeAll, EstimatorMode::default()] {
        let mhi = estimate_mhi(&sample.input, &cfg, mode).unwrap();
        // 0 selects rayon's default pool; 1 is a single worker.
        for threads in [1usize, 0] {
            let label = if threads == 1 { "1 thread" } else { "default pool" };
            group.bench_with_input(BenchmarkId::new(mode.name(), label), &threads, |b, &t| {
                b.iter(|| par::with_threads(t, || render_multi_normal_images(&mhi, &req).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, render);
criterion_main!(benches);
