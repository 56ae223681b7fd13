use std::collections::BTreeMap;
use std::path::Path;

use dpra_core::scheduler::ExplorationResult;

use crate::manifest::sha256_hex;
use crate::Failure;

pub const RESULT_FILE: &str = "result.json";

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn opt(x: Option<f64>) -> String {
    x.map(|p| p.to_string()).unwrap_or_default()
}

/// Data files of an exploration, keyed by path relative to the output
/// directory.
pub fn render(r: &ExplorationResult) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    files.insert(
        "end_states.csv".to_string(),
        csv_bytes(
            &["end_state", "probability", "ci_low", "ci_high", "std_error", "n_stories", "severity"],
            r.end_states.iter().map(|e| {
                vec![
                    e.name.clone(),
                    e.estimate.to_string(),
                    e.ci_low.to_string(),
                    e.ci_high.to_string(),
                    e.std_error().to_string(),
                    e.n_stories.to_string(),
                    e.severity.clone(),
                ]
            }),
        ),
    );
    files.insert(
        "stories.csv".to_string(),
        csv_bytes(
            &["story", "seed", "index", "end_state", "probability", "weight", "events"],
            r.stories.iter().enumerate().map(|(i, s)| {
                let events: Vec<String> = s.events.iter().map(|e| e.to_string()).collect();
                vec![
                    i.to_string(),
                    s.seed.to_string(),
                    s.index.to_string(),
                    s.end_state.clone(),
                    s.probability.to_string(),
                    s.weight.to_string(),
                    events.join(" "),
                ]
            }),
        ),
    );
    for (i, s) in r.stories.iter().enumerate() {
        files.insert(
            format!("traces/story_{i:05}.csv"),
            csv_bytes(
                &["time", "kind", "detail", "prob"],
                s.trace
                    .iter()
                    .map(|e| vec![e.time.to_string(), e.kind.to_string(), e.detail.clone(), opt(e.prob)]),
            ),
        );
    }
    let json = |v: &dyn erased::Json| v.to_json();
    files.insert("ledger.json".to_string(), json(&r.ledger));
    files.insert(RESULT_FILE.to_string(), json(r));
    files
}

mod erased {
    pub trait Json {
        fn to_json(&self) -> Vec<u8>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> Vec<u8> {
            let mut v = serde_json::to_vec_pretty(self).expect("results serialize");
            v.push(b'\n');
            v
        }
    }
}

/// Writes the data files and returns their hashes. Old traces in `dir`
/// are removed first.
pub fn write_results(dir: &Path, r: &ExplorationResult) -> Result<BTreeMap<String, String>, Failure> {
    let traces = dir.join("traces");
    if traces.exists() {
        std::fs::remove_dir_all(&traces)
            .map_err(|e| Failure::usage(format!("cannot clear {}: {e}", traces.display())))?;
    }
    let mut hashes = BTreeMap::new();
    for (name, bytes) in render(r) {
        write(&dir.join(&name), &bytes)?;
        hashes.insert(name, sha256_hex(&bytes));
    }
    Ok(hashes)
}
