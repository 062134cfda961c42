//! The bundled free-motion scenario: two twins with mismatched gains follow the
//! same plan. Prints the metrics report and writes the CSV log.

use twinsync::config::ScenarioConfig;
use twinsync::control::metrics::MetricsReport;
use twinsync::control::run_scenario;

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/free_motion.json");
    let cfg = ScenarioConfig::load(std::path::Path::new(path)).expect("bundled scenario");
    let log = run_scenario(&cfg).expect("scenario runs");
    let report = MetricsReport::from_rows(&log.rows, cfg.tick_ms, Some(log.terminal())).unwrap();
    print!("{}", report.to_text());
    let out = std::env::temp_dir().join("twinsync_free_motion.csv");
    log.write_csv(std::fs::File::create(&out).unwrap()).unwrap();
    println!("log written to {}", out.display());
}
