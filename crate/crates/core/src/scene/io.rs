//! Line-delimited JSON files: one scenario (or prediction record) per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AgentId, PairPrediction, Scenario};
use crate::error::{Error, Result};

/// Predicted joint modes for one interactive pair, sorted by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scenario_id: String,
    pub agent_a: AgentId,
    pub agent_b: AgentId,
    pub pairs: Vec<PairPrediction>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Parse { line: 1, msg: format!("{} contains no records", path.display()) });
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates every scenario in a file.
pub fn read_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let scenarios: Vec<Scenario> = read_jsonl(path)?;
    for s in &scenarios {
        s.validate()?;
    }
    Ok(scenarios)
}

/// Reads the first scenario of a file.
pub fn read_scenario(path: &Path) -> Result<Scenario> {
    Ok(read_scenarios(path)?.swap_remove(0))
}

pub fn write_scenarios(path: &Path, scenarios: &[Scenario]) -> Result<()> {
    write_jsonl(path, scenarios)
}

/// Writes prediction records, sorting each record's pairs by descending score.
pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let sorted: Vec<PredictionRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.pairs.sort_by(|a, b| b.score.total_cmp(&a.score));
            r
        })
        .collect();
    write_jsonl(path, &sorted)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth::{generate_synthetic, ScenarioKind, SynthConfig};

    #[test]
    fn empty_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_scenarios(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let s = generate_synthetic(ScenarioKind::Follow, 0, &SynthConfig::default()).unwrap();
        let good = serde_json::to_string(&s).unwrap();
        std::fs::write(&p, format!("{good}\n{{\"id\": 3\n")).unwrap();
        match read_scenarios(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let cfg = SynthConfig::default();
        let scenes: Vec<_> = ScenarioKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &k)| generate_synthetic(k, i as u64 + 11, &cfg).unwrap())
            .collect();
        write_scenarios(&p, &scenes).unwrap();
        let back = read_scenarios(&p).unwrap();
        assert_eq!(back, scenes);
        for (a, b) in scenes.iter().zip(&back) {
            for (ta, tb) in a.tracks.iter().zip(&b.tracks) {
                for (pa, pb) in ta.positions.iter().zip(&tb.positions) {
                    assert_eq!(pa[0].to_bits(), pb[0].to_bits());
                    assert_eq!(pa[1].to_bits(), pb[1].to_bits());
                }
            }
        }
    }

    #[test]
    fn mismatched_mask_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut s = generate_synthetic(ScenarioKind::Merge, 1, &SynthConfig::default()).unwrap();
        s.tracks[0].valid.pop();
        write_scenarios(&p, &[s]).unwrap();
        assert!(matches!(read_scenarios(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn predictions_are_written_score_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.jsonl");
        let pair = |s: f64| PairPrediction { traj_a: vec![[0.0, 0.0]], traj_b: vec![[1.0, 1.0]], score: s };
        let rec = PredictionRecord { scenario_id: "x".into(), agent_a: 1, agent_b: 2, pairs: vec![pair(0.1), pair(0.7), pair(0.2)] };
        write_predictions(&p, &[rec]).unwrap();
        let back = read_predictions(&p).unwrap();
        let scores: Vec<f64> = back[0].pairs.iter().map(|p| p.score).collect();
        assert_eq!(scores, vec![0.7, 0.2, 0.1]);
    }
}
