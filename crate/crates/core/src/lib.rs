//! Parcel-level urban growth simulation: road networks are cut into
//! parcels, each parcel gets a logistic development probability, and a
//! vector cellular automaton converts parcels until a land budget is spent.
//! Converted parcels are merged into urban-area polygons and checked
//! against rank-size regularities.

// `!(x > 0.0)` style checks deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregator;
pub mod ca_engine;
pub mod calibrator;
pub mod error;
pub mod fixture;
pub mod geometry;
pub mod io;
pub mod parcel_attrs;
pub mod parcelizer;
pub mod pipeline;
pub mod rng;
pub mod road_ingest;
pub mod validator;

pub use geo;

pub use aggregator::{aggregate, UrbanArea};
pub use ca_engine::{run_ca, CaEngine, CaOutcome, CaParams, ConstraintMask, NeighborhoodGraph, RoundLog, StopReason};
pub use calibrator::{fit_logistic, Covariate, FitOptions, FitReport, LabeledRow, LogisticModel};
pub use error::{Error, Result};
pub use parcel_attrs::{compute_attributes, AttributeVector, CityContext};
pub use parcelizer::{buffer_roads, extract_parcels, Parcel, ParcelSet, ParcelState};
pub use pipeline::{run_batch, run_city, CityConfig, CityReport, Pipeline, PipelineConfig, RunManifest};
pub use road_ingest::{ClassTable, PointOfInterest, RoadClass, RoadNetwork, RoadSegment};
pub use validator::{head_tail_break, overlap_rate, rank_size_fit, PowerLawFit};
