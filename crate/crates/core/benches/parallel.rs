// Parallel core vs. a single worker on the same build. Build with
// `--no-default-features` to time the sequential fallback itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::Rng;
use sitfuse::dbn::{init_layer, DbnModel, LayerKind};
use sitfuse::evaluation::{ssim, SsimParams};
use sitfuse::iic::{assign_labels, build_tree, HeadConfig, TreeConfig};
use sitfuse::rng::seeded;
use sitfuse::scene::{compute_band_stats, extract_samples};
use sitfuse::synthetic::{generate_scene, SceneSpec};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("one_thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("default", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench(c: &mut Criterion) {
    let spec = SceneSpec {
        width: 256,
        height: 256,
        seed: 1,
        ..SceneSpec::default()
    };
    let (scene, _) = generate_scene(&spec).unwrap();
    let stats = compute_band_stats(&scene).unwrap();
    let samples = extract_samples(&scene, &stats, 1).unwrap();
    let d = samples.features.ncols();
    let model = DbnModel::new(vec![
        init_layer(LayerKind::GaussianBernoulli, d, 64, 1).unwrap(),
        init_layer(LayerKind::BernoulliBernoulli, 64, 32, 2).unwrap(),
    ])
    .unwrap();
    let features = sitfuse::dbn::encode(&model, samples.features.view()).unwrap();
    let tree = build_tree(
        features.view(),
        &TreeConfig {
            k: 4,
            max_depth: 2,
            min_node_samples: 100,
            head: HeadConfig {
                epochs: 1,
                ..HeadConfig::default()
            },
        },
    )
    .unwrap();
    let mut rng = seeded(3);
    let a: Vec<f64> = (0..256 * 256).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..256 * 256).map(|_| rng.random()).collect();
    let params = SsimParams::default();
    let small: Array2<f64> = features.slice(ndarray::s![..4096, ..]).to_owned();

    let mut group = c.benchmark_group("parallel_core");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("ssim_256", name), |bch| {
            bch.iter(|| pool.install(|| ssim(&a, &b, 256, &params).unwrap()))
        });
        group.bench_function(BenchmarkId::new("extract_samples_r1", name), |bch| {
            bch.iter(|| pool.install(|| extract_samples(&scene, &stats, 1).unwrap()))
        });
        group.bench_function(BenchmarkId::new("encode", name), |bch| {
            bch.iter(|| pool.install(|| sitfuse::dbn::encode(&model, samples.features.view()).unwrap()))
        });
        group.bench_function(BenchmarkId::new("assign_labels", name), |bch| {
            bch.iter(|| {
                pool.install(|| assign_labels(&tree, features.view(), &samples.coords, 256, 256).unwrap())
            })
        });
        group.bench_function(BenchmarkId::new("build_tree_4096", name), |bch| {
            bch.iter(|| {
                pool.install(|| {
                    build_tree(
                        small.view(),
                        &TreeConfig {
                            k: 3,
                            max_depth: 2,
                            min_node_samples: 50,
                            head: HeadConfig {
                                epochs: 1,
                                ..HeadConfig::default()
                            },
                        },
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
