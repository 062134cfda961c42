//! Serves the gated obstacle scenario over HTTP/WebSocket on port 8080 (or
//! the first argument) at real-time speed.
//!
//! ```text
//! curl localhost:8080/api/state
//! curl localhost:8080/api/pending
//! curl -X POST localhost:8080/api/pending/<id>/decision \
//!      -H 'content-type: application/json' -d '{"verdict":"approve","actor":"me"}'
//! ```

use twinsync::config::ScenarioConfig;
use twinsync::service::{serve, ServeOptions};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let port = std::env::args().nth(1).and_then(|p| p.parse().ok()).unwrap_or(8080);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/obstacle_sweep.json");
    let cfg = ScenarioConfig::load(std::path::Path::new(path)).expect("bundled scenario");
    serve(cfg, port, ServeOptions::default()).await
}
