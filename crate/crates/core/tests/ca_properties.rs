mod common;

use common::random_small_city;
use parcelca_core::{CaEngine, LogisticModel, Parcel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn urban_ids(parcels: &[Parcel], states: &[parcelca_core::ParcelState]) -> Vec<usize> {
    let mut ids: Vec<usize> = parcels.iter().zip(states).filter(|(_, s)| s.is_urban()).map(|(p, _)| p.id).collect();
    ids.sort_unstable();
    ids
}

#[test]
fn input_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = LogisticModel::beijing2010();
    for i in 0..20 {
        let city = random_small_city(&mut rng, i);
        let base = CaEngine::new(&city.parcels, &city.ctx, &model, &city.params).unwrap().run();
        let mut shuffled = city.parcels.clone();
        shuffled.shuffle(&mut rng);
        let other = CaEngine::new(&shuffled, &city.ctx, &model, &city.params).unwrap().run();
        assert_eq!(urban_ids(&city.parcels, &base.states), urban_ids(&shuffled, &other.states), "city {i}");
        assert_eq!(base.rounds.len(), other.rounds.len());
    }
}

#[test]
fn round_log_accounts_for_every_conversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = LogisticModel::beijing2010();
    for i in 0..20 {
        let city = random_small_city(&mut rng, i);
        let out = CaEngine::new(&city.parcels, &city.ctx, &model, &city.params).unwrap().run();
        let logged: usize = out.rounds.iter().map(|r| r.converted).sum();
        assert_eq!(logged, out.urban_count());
        let area: f64 = city.parcels.iter().zip(&out.states).filter(|(_, s)| s.is_urban()).map(|(p, _)| p.area_m2).sum();
        if let Some(last) = out.rounds.last() {
            assert!((last.urban_area_m2 - area).abs() < 1e-6 * area.max(1.0));
            assert!((last.remaining_budget_m2 - (city.ctx.total_budget_m2 - area)).abs() < 1e-6 * city.ctx.total_budget_m2);
        }
        assert!(out.rounds.iter().filter(|r| r.kind == parcelca_core::ca_engine::RoundKind::Update).count() as u32 <= city.params.max_rounds);
    }
}
