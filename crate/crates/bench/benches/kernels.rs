use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fusion_bench::{boxes, pipeline, scene, voxel_grid};
use fusion_core::detect::{bev_iou, nms};
use fusion_core::gcfat::{gcfat_forward, init_gcfat, GcfatConfig};
use fusion_core::numerics::testing::random_tensor;
use fusion_core::numerics::{matmul, softmax_rows, ParamSet};
use fusion_core::pipeline::{grad_suite, run_scene, GradSuiteOptions, RunOptions};
use fusion_core::scene::depth_map;
use fusion_core::sffa::{init_sffa, sffa_forward, SffaConfig};
use fusion_core::voxel::{fps, init_conv, local_features, sparse_conv3};

fn numerics(c: &mut Criterion) {
    let a = random_tensor(&[256, 32], 1);
    let b = random_tensor(&[32, 256], 2);
    c.bench_function("matmul_256x32x256", |bch| {
        bch.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
    });
    let s = random_tensor(&[256, 256], 3);
    c.bench_function("softmax_rows_256x256", |bch| bch.iter(|| softmax_rows(black_box(&s))));
}

fn lidar(c: &mut Criterion) {
    let sc = scene(0);
    c.bench_function("depth_map", |bch| {
        bch.iter(|| depth_map(black_box(&sc.cloud), &sc.camera))
    });
    c.bench_function("fps_64", |bch| {
        bch.iter(|| fps(black_box(&sc.cloud), 64, None).unwrap())
    });
    let g = local_features(&voxel_grid(0)).unwrap();
    let mut p = ParamSet::new(0);
    init_conv(&mut p, "c", g.width(), 16);
    c.bench_function("sparse_conv3_subm", |bch| {
        bch.iter(|| sparse_conv3(black_box(&g), &p, "c", 1).unwrap())
    });
    c.bench_function("sparse_conv3_stride2", |bch| {
        bch.iter(|| sparse_conv3(black_box(&g), &p, "c", 2).unwrap())
    });
}

fn image(c: &mut Criterion) {
    let sc = scene(0);
    let cfg = GcfatConfig::default();
    let mut p = ParamSet::new(0);
    init_gcfat(&mut p, &cfg);
    let depth = depth_map(&sc.cloud, &sc.camera);
    c.bench_function("gcfat_forward", |bch| {
        bch.iter(|| gcfat_forward(black_box(&sc.image), &depth, &cfg, &p, 0).unwrap())
    });
    let sf = SffaConfig::default();
    init_sffa(&mut p, &sf);
    let (h, w) = cfg.out_hw;
    let l = random_tensor(&[h, w, sf.width], 4);
    let i = random_tensor(&[h, w, sf.width], 5);
    c.bench_function("sffa_forward", |bch| {
        bch.iter(|| sffa_forward(black_box(&l), &i, &sf, &p).unwrap())
    });
}

fn boxes_bench(c: &mut Criterion) {
    let bx = boxes(200, 7);
    c.bench_function("bev_iou", |bch| {
        bch.iter(|| bev_iou(black_box(&bx[0]), black_box(&bx[1])))
    });
    c.bench_function("nms_200", |bch| bch.iter(|| nms(black_box(&bx), 0.1, 100)));
}

fn end_to_end(c: &mut Criterion) {
    let (cfg, params) = pipeline();
    let sc = scene(3);
    let mut g = c.benchmark_group("end_to_end");
    g.sample_size(10);
    g.bench_function("run_scene", |bch| {
        bch.iter(|| run_scene(black_box(&sc), &cfg, &params, RunOptions::default()).unwrap())
    });
    g.bench_function("grad_suite", |bch| {
        bch.iter(|| grad_suite(&GradSuiteOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, numerics, lidar, image, boxes_bench, end_to_end);
criterion_main!(benches);
