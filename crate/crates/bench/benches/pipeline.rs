use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use parcelca_bench::{grid_city, grid_network};
use parcelca_core::ca_engine::build_neighborhood;
use parcelca_core::fixture::GridFixture;
use parcelca_core::{
    aggregate, buffer_roads, extract_parcels, fit_logistic, AttributeVector, CaEngine, CaParams, ClassTable, Covariate,
    FitOptions, LabeledRow, LogisticModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn parcelize(c: &mut Criterion) {
    let mut group = c.benchmark_group("parcelize");
    group.sample_size(10);
    let table = ClassTable::default();
    for n in [20usize, 60] {
        let g = GridFixture::new(n, 100.0);
        let net = grid_network(&g);
        let boundary = g.boundary();
        group.bench_with_input(BenchmarkId::new("buffer_and_extract", n * n), &n, |b, _| {
            b.iter(|| {
                let buffer = buffer_roads(&net, &table).unwrap();
                extract_parcels(&boundary, &buffer, 100.0).parcels.len()
            })
        });
    }
    group.finish();
}

fn neighborhood(c: &mut Criterion) {
    let (parcels, _) = grid_city(60, 100.0);
    let geoms: Vec<_> = parcels.iter().map(|p| p.geometry.clone()).collect();
    c.bench_function("neighborhood_3600_r300", |b| b.iter(|| build_neighborhood(black_box(&geoms), 300.0).edge_count()));
}

fn simulate(c: &mut Criterion) {
    let (parcels, ctx) = grid_city(40, 100.0);
    let model = LogisticModel::beijing2010();
    let params = CaParams {
        p_thd: 0.6,
        beta: 3.0,
        neighborhood_radius_m: 300.0,
        ..CaParams::default()
    };
    c.bench_function("ca_run_1600", |b| {
        b.iter(|| CaEngine::new(&parcels, &ctx, &model, &params).unwrap().run().urban_count())
    });
    let urban: Vec<_> = parcels.iter().step_by(3).map(|p| p.geometry.clone()).collect();
    c.bench_function("aggregate_533", |b| b.iter(|| aggregate("bench", black_box(&urban), 500.0, 10_000.0).polygons.len()));
}

fn calibrate(c: &mut Criterion) {
    let truth = LogisticModel::beijing2010();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<LabeledRow> = (0..50_000)
        .map(|_| {
            let attrs = AttributeVector {
                ln_size: rng.gen_range(4.0..16.0),
                accessibility_km: rng.gen_range(0.0..50.0),
                poi_density_norm: rng.gen_range(0.0..1.0),
                ..Default::default()
            };
            LabeledRow {
                urban: rng.gen::<f64>() < truth.predict(&attrs),
                attrs,
            }
        })
        .collect();
    c.bench_function("fit_logistic_50k", |b| {
        b.iter(|| fit_logistic(black_box(&rows), &Covariate::DEFAULT, &FitOptions::default()).unwrap())
    });
}

criterion_group!(benches, parcelize, neighborhood, simulate, calibrate);
criterion_main!(benches);
