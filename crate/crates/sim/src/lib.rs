//! Mock ecosystem for the hub: fixture-backed providers, a verifying app
//! server, an in-process virtual-time world and the case-study scenarios.

pub mod app;
pub mod debug;
pub mod fixture;
pub mod graphql;
pub mod provider;
pub mod scenario;
pub mod schema;
pub mod world;

pub use app::{serve_app, MockApp, StoredDelivery};
pub use debug::{debug_manifest, DebugError, DebugReport};
pub use fixture::{generate_fixture, Fixture, FixtureError, NOTES_FOLDER};
pub use provider::{serve_provider, FixtureConnector, JournalEntry, MockProvider, MockServer};
pub use scenario::{run_scenario, Mode, ScenarioFailure, ScenarioName, ScenarioReport, DEFAULT_ITERATIONS};
pub use world::{Session, World};
