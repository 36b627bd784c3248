//! Constrained vector cellular automaton over irregular parcels.
//!
//! A parcel's transition score is the product of its logistic local
//! potential, the urban share of its neighborhood, a binary suitability mask
//! and a stochastic factor `1 + (-ln γ)^β`. Scores above the threshold are
//! converted greedily, highest first, while the city's area budget allows.

use std::path::Path;

use geo::{Area, BooleanOps, Intersects, MultiPolygon, Polygon};
use rayon::prelude::*;
use rstar::primitives::{GeomWithData, Rectangle};
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::calibrator::LogisticModel;
use crate::error::{Error, Result};
use crate::geometry::{envelope, expand, polygons_within_distance};
use crate::parcel_attrs::CityContext;
use crate::parcelizer::{Parcel, ParcelState};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    ThresholdGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaParams {
    pub beta: f64,
    pub p_thd: f64,
    pub neighborhood_radius_m: f64,
    pub rng_seed: u64,
    pub max_rounds: u32,
    pub selection_mode: SelectionMode,
}

impl Default for CaParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            p_thd: 0.8,
            neighborhood_radius_m: 500.0,
            rng_seed: 42,
            max_rounds: 50,
            selection_mode: SelectionMode::ThresholdGreedy,
        }
    }
}

impl CaParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=10.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 10]", self.beta)));
        }
        if !(self.p_thd > 0.0 && self.p_thd < 1.0) {
            return Err(Error::Config(format!("p_thd {} outside (0, 1)", self.p_thd)));
        }
        if !(self.neighborhood_radius_m > 0.0) {
            return Err(Error::Config("neighborhood radius must be positive".into()));
        }
        Ok(())
    }
}

/// Parcels whose boundaries lie within the neighborhood radius of each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodGraph {
    adjacency: Vec<Vec<usize>>,
}

impl NeighborhoodGraph {
    /// Symmetrizes and sorts the given edge list.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { adjacency }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

pub fn build_neighborhood(geometries: &[Polygon<f64>], radius: f64) -> NeighborhoodGraph {
    let tree = RTree::bulk_load(
        geometries
            .iter()
            .enumerate()
            .map(|(i, g)| GeomWithData::new(Rectangle::from_aabb(envelope(g)), i))
            .collect(),
    );
    let edges: Vec<(usize, usize)> = geometries
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, g)| {
            let search = expand(&envelope(g), radius);
            let mut found: Vec<usize> = tree
                .locate_in_envelope_intersecting(&search)
                .map(|hit| hit.data)
                .filter(|&j| j > i && polygons_within_distance(g, &geometries[j], radius))
                .collect();
            found.sort_unstable();
            found.into_iter().map(move |j| (i, j))
        })
        .collect();
    NeighborhoodGraph::from_edges(geometries.len(), edges)
}

/// Binary development suitability per parcel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintMask {
    suitable: Vec<bool>,
}

impl ConstraintMask {
    pub fn all_suitable(n: usize) -> Self {
        Self {
            suitable: vec![true; n],
        }
    }

    pub fn from_flags(suitable: Vec<bool>) -> Self {
        Self { suitable }
    }

    /// A parcel is unsuitable if it is flagged as constrained or overlaps any
    /// constraint polygon with positive area.
    pub fn build(parcels: &[Parcel], constraints: &MultiPolygon<f64>) -> Self {
        let tree = RTree::bulk_load(
            constraints
                .0
                .iter()
                .enumerate()
                .map(|(i, g)| GeomWithData::new(Rectangle::from_aabb(envelope(g)), i))
                .collect(),
        );
        let suitable = parcels
            .par_iter()
            .map(|p| {
                if p.constrained {
                    return false;
                }
                !tree
                    .locate_in_envelope_intersecting(&envelope(&p.geometry))
                    .any(|hit| {
                        let c = &constraints.0[hit.data];
                        c.intersects(&p.geometry) && c.intersection(&p.geometry).unsigned_area() > 0.0
                    })
            })
            .collect();
        Self { suitable }
    }

    pub fn is_suitable(&self, i: usize) -> bool {
        self.suitable[i]
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.suitable[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn len(&self) -> usize {
        self.suitable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.suitable.is_empty()
    }
}

/// Urban share of the neighbors of `i`; zero for a parcel without neighbors.
pub fn neighborhood_potential(i: usize, graph: &NeighborhoodGraph, states: &[ParcelState]) -> f64 {
    let nb = graph.neighbors(i);
    if nb.is_empty() {
        return 0.0;
    }
    let urban = nb.iter().filter(|&&j| states[j].is_urban()).count();
    urban as f64 / nb.len() as f64
}

/// `1 + (-ln γ)^β` for γ in (0, 1).
pub fn stochastic_factor(gamma: f64, beta: f64) -> f64 {
    debug_assert!(gamma > 0.0 && gamma < 1.0);
    1.0 + (-gamma.ln()).powf(beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionFactors {
    pub local: f64,
    pub neighborhood: f64,
    pub suitability: f64,
    pub stochastic: f64,
}

impl TransitionFactors {
    /// A score, not a probability: the stochastic factor is at least 1.
    pub fn score(&self) -> f64 {
        self.local * self.neighborhood * self.suitability * self.stochastic
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub id: usize,
    pub score: f64,
    pub area_m2: f64,
}

/// Sorts by score descending (ties by id) and takes every candidate that
/// still fits in the remaining budget. Returns the chosen candidates in order.
pub fn greedy_select(mut candidates: Vec<Candidate>, remaining_budget_m2: f64) -> Vec<Candidate> {
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let mut used = 0.0;
    candidates
        .into_iter()
        .filter(|c| {
            if used + c.area_m2 <= remaining_budget_m2 {
                used += c.area_m2;
                true
            } else {
                false
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    Seed,
    Update,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub kind: RoundKind,
    pub evaluated: usize,
    pub above_threshold: usize,
    pub converted: usize,
    pub converted_area_m2: f64,
    pub urban_area_m2: f64,
    pub remaining_budget_m2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    NoConversions,
    MaxRounds,
}

#[derive(Debug, Clone)]
pub struct CaOutcome {
    pub states: Vec<ParcelState>,
    pub rounds: Vec<RoundLog>,
    pub stop_reason: StopReason,
    /// Budget exceeds the total suitable area, so everything suitable may convert.
    pub budget_exceeds_suitable: bool,
}

impl CaOutcome {
    pub fn urban_count(&self) -> usize {
        self.states.iter().filter(|s| s.is_urban()).count()
    }

    /// Update rounds executed, not counting the seed round.
    pub fn update_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.kind == RoundKind::Update).count()
    }
}

/// Share of the budget converted up front when no parcel starts urban.
pub const SEED_BUDGET_SHARE: f64 = 0.01;

pub struct CaEngine<'a> {
    parcels: &'a [Parcel],
    params: CaParams,
    budget_m2: f64,
    graph: NeighborhoodGraph,
    mask: ConstraintMask,
    local: Vec<f64>,
    states: Vec<ParcelState>,
    urban_area_m2: f64,
    median_area_m2: f64,
    rng: CounterRng,
    round: u32,
    log: Vec<RoundLog>,
    stopped: Option<StopReason>,
}

impl<'a> CaEngine<'a> {
    pub fn new(parcels: &'a [Parcel], ctx: &CityContext, model: &LogisticModel, params: &CaParams) -> Result<Self> {
        params.validate()?;
        let geoms: Vec<Polygon<f64>> = parcels.iter().map(|p| p.geometry.clone()).collect();
        let graph = build_neighborhood(&geoms, params.neighborhood_radius_m);
        let mask = ConstraintMask::build(parcels, &ctx.constraint_polygons);
        Self::with_parts(parcels, graph, mask, model, params, ctx.total_budget_m2)
    }

    pub fn with_parts(
        parcels: &'a [Parcel],
        graph: NeighborhoodGraph,
        mask: ConstraintMask,
        model: &LogisticModel,
        params: &CaParams,
        budget_m2: f64,
    ) -> Result<Self> {
        params.validate()?;
        if parcels.is_empty() {
            return Err(Error::EmptyInput("no parcels to simulate"));
        }
        if !(budget_m2 > 0.0) {
            return Err(Error::Config("area budget must be positive".into()));
        }
        if graph.len() != parcels.len() || mask.len() != parcels.len() {
            return Err(Error::Invariant("graph or mask size differs from parcel count".into()));
        }
        let states: Vec<ParcelState> = parcels
            .iter()
            .enumerate()
            .map(|(i, p)| if mask.is_suitable(i) { p.state } else { ParcelState::NonUrban })
            .collect();
        let urban_area_m2: f64 = parcels
            .iter()
            .zip(&states)
            .filter(|(_, s)| s.is_urban())
            .map(|(p, _)| p.area_m2)
            .sum();
        if urban_area_m2 > budget_m2 {
            return Err(Error::Config(format!(
                "initial urban area {urban_area_m2} m² already exceeds the budget"
            )));
        }
        let mut areas: Vec<f64> = parcels.iter().map(|p| p.area_m2).collect();
        areas.sort_by(f64::total_cmp);
        let mid = areas.len() / 2;
        let median_area_m2 = if areas.len() % 2 == 1 {
            areas[mid]
        } else {
            0.5 * (areas[mid - 1] + areas[mid])
        };
        let local = parcels.iter().map(|p| model.predict(&p.attributes)).collect();
        Ok(Self {
            parcels,
            params: params.clone(),
            budget_m2,
            graph,
            mask,
            local,
            states,
            urban_area_m2,
            median_area_m2,
            rng: CounterRng::new(params.rng_seed),
            round: 0,
            log: Vec::new(),
            stopped: None,
        })
    }

    pub fn states(&self) -> &[ParcelState] {
        &self.states
    }

    pub fn urban_area_m2(&self) -> f64 {
        self.urban_area_m2
    }

    pub fn graph(&self) -> &NeighborhoodGraph {
        &self.graph
    }

    pub fn mask(&self) -> &ConstraintMask {
        &self.mask
    }

    pub fn log(&self) -> &[RoundLog] {
        &self.log
    }

    pub fn remaining_budget_m2(&self) -> f64 {
        self.budget_m2 - self.urban_area_m2
    }

    pub fn local_potential(&self, i: usize) -> f64 {
        self.local[i]
    }

    /// Factors for parcel `i` against the current states, drawing γ for `round`.
    pub fn transition_factors(&self, i: usize, round: u32) -> TransitionFactors {
        let gamma = self.rng.open01(u64::from(round), self.parcels[i].id as u64);
        TransitionFactors {
            local: self.local[i],
            neighborhood: neighborhood_potential(i, &self.graph, &self.states),
            suitability: self.mask.value(i),
            stochastic: stochastic_factor(gamma, self.params.beta),
        }
    }

    fn convert(&mut self, chosen: &[Candidate]) -> f64 {
        let mut area = 0.0;
        for c in chosen {
            debug_assert!(!self.states[c.index].is_urban() && self.mask.is_suitable(c.index));
            self.states[c.index] = ParcelState::Urban;
            self.urban_area_m2 += c.area_m2;
            area += c.area_m2;
        }
        assert!(
            self.urban_area_m2 <= self.budget_m2,
            "urban area {} exceeds budget {}",
            self.urban_area_m2,
            self.budget_m2
        );
        area
    }

    fn seed_round(&mut self) -> RoundLog {
        let mut order: Vec<usize> = (0..self.parcels.len()).filter(|&i| self.mask.is_suitable(i)).collect();
        order.sort_by(|&a, &b| {
            self.local[b]
                .total_cmp(&self.local[a])
                .then(self.parcels[a].id.cmp(&self.parcels[b].id))
        });
        let target = SEED_BUDGET_SHARE * self.budget_m2;
        let mut chosen = Vec::new();
        let mut total = 0.0;
        for i in order.iter().copied() {
            if total >= target {
                break;
            }
            let area = self.parcels[i].area_m2;
            if self.urban_area_m2 + total + area <= self.budget_m2 {
                total += area;
                chosen.push(Candidate {
                    index: i,
                    id: self.parcels[i].id,
                    score: self.local[i],
                    area_m2: area,
                });
            }
        }
        let converted_area_m2 = self.convert(&chosen);
        RoundLog {
            round: 0,
            kind: RoundKind::Seed,
            evaluated: order.len(),
            above_threshold: chosen.len(),
            converted: chosen.len(),
            converted_area_m2,
            urban_area_m2: self.urban_area_m2,
            remaining_budget_m2: self.remaining_budget_m2(),
        }
    }

    /// Runs the next round, or returns `None` once a stopping rule has fired.
    pub fn step(&mut self) -> Option<&RoundLog> {
        if self.stopped.is_some() {
            return None;
        }
        if self.log.is_empty() && !self.states.iter().any(|s| s.is_urban()) {
            let entry = self.seed_round();
            self.log.push(entry);
            return self.log.last();
        }
        if self.remaining_budget_m2() <= self.median_area_m2 {
            self.stopped = Some(StopReason::BudgetExhausted);
            return None;
        }
        if self.round >= self.params.max_rounds {
            self.stopped = Some(StopReason::MaxRounds);
            return None;
        }
        self.round += 1;
        let round = self.round;

        let pending: Vec<usize> = (0..self.parcels.len())
            .filter(|&i| !self.states[i].is_urban() && self.mask.is_suitable(i))
            .collect();
        let candidates: Vec<Candidate> = pending
            .par_iter()
            .filter_map(|&i| {
                let score = self.transition_factors(i, round).score();
                (score > self.params.p_thd).then(|| Candidate {
                    index: i,
                    id: self.parcels[i].id,
                    score,
                    area_m2: self.parcels[i].area_m2,
                })
            })
            .collect();
        let above = candidates.len();
        let chosen = greedy_select(candidates, self.remaining_budget_m2());
        let converted_area_m2 = self.convert(&chosen);
        self.log.push(RoundLog {
            round,
            kind: RoundKind::Update,
            evaluated: pending.len(),
            above_threshold: above,
            converted: chosen.len(),
            converted_area_m2,
            urban_area_m2: self.urban_area_m2,
            remaining_budget_m2: self.remaining_budget_m2(),
        });
        if chosen.is_empty() {
            self.stopped = Some(StopReason::NoConversions);
        }
        self.log.last()
    }

    pub fn run(mut self) -> CaOutcome {
        while self.step().is_some() {}
        let suitable_area: f64 = self
            .parcels
            .iter()
            .enumerate()
            .filter(|(i, _)| self.mask.is_suitable(*i))
            .map(|(_, p)| p.area_m2)
            .sum();
        let budget_exceeds_suitable = self.budget_m2 > suitable_area;
        if budget_exceeds_suitable {
            log::warn!(
                "budget {:.0} m² exceeds total suitable parcel area {:.0} m²",
                self.budget_m2,
                suitable_area
            );
        }
        CaOutcome {
            states: self.states,
            rounds: self.log,
            stop_reason: self.stopped.unwrap_or(StopReason::MaxRounds),
            budget_exceeds_suitable,
        }
    }
}

pub fn run_ca(parcels: &[Parcel], ctx: &CityContext, model: &LogisticModel, params: &CaParams) -> Result<CaOutcome> {
    Ok(CaEngine::new(parcels, ctx, model, params)?.run())
}

pub fn write_round_log_csv(path: &Path, rounds: &[RoundLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rounds {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
