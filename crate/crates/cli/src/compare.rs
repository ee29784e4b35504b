use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use owl_core::pipeline::ExperimentReport;
use owl_core::stats::paired_t_test;

/// Last-window OWM per seed, keyed by cell.
type ScoreSet = BTreeMap<String, BTreeMap<u64, f64>>;

fn cell_key(path: &Path, report: &ExperimentReport) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    match stem.split_once("__seed") {
        Some((cell, _)) => cell.to_string(),
        None => format!("{}-u{}", report.method, report.unknown_classes),
    }
}

fn add_report(set: &mut ScoreSet, path: &Path) -> Result<()> {
    let report: ExperimentReport = crate::read_json(path)?;
    let entry = set.entry(cell_key(path, &report)).or_default();
    for run in &report.runs {
        entry.insert(run.seed, run.window.owm);
    }
    Ok(())
}

fn load_set(path: &Path) -> Result<ScoreSet> {
    let mut set = ScoreSet::new();
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            add_report(&mut set, &f)?;
        }
    } else {
        add_report(&mut set, path)?;
    }
    if set.is_empty() {
        bail!("no reports found in {}", path.display());
    }
    Ok(set)
}

/// Pairs cells present in both sets (or the only cell of each) by seed and
/// prints one CSV row of paired t-test results per pair.
pub fn compare(a: &Path, b: &Path) -> Result<()> {
    let sa = load_set(a)?;
    let sb = load_set(b)?;
    let pairs: Vec<(&String, &String)> = if sa.len() == 1 && sb.len() == 1 {
        vec![(sa.keys().next().unwrap(), sb.keys().next().unwrap())]
    } else {
        sa.keys().filter(|k| sb.contains_key(*k)).map(|k| (k, k)).collect()
    };
    if pairs.is_empty() {
        bail!("the report sets share no cells");
    }
    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.write_record(["cell_a", "cell_b", "pairs", "mean_a", "mean_b", "mean_difference", "t", "p_value", "degenerate"])?;
    for (ka, kb) in pairs {
        let (ra, rb) = (&sa[ka], &sb[kb]);
        let seeds: Vec<u64> = ra.keys().filter(|s| rb.contains_key(s)).copied().collect();
        let xa: Vec<f64> = seeds.iter().map(|s| ra[s]).collect();
        let xb: Vec<f64> = seeds.iter().map(|s| rb[s]).collect();
        let t = paired_t_test(&xa, &xb).with_context(|| format!("comparing {ka} with {kb}"))?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.write_record([
            ka.clone(),
            kb.clone(),
            t.n.to_string(),
            mean(&xa).to_string(),
            mean(&xb).to_string(),
            t.mean_difference.to_string(),
            t.t.to_string(),
            t.p_value.to_string(),
            t.degenerate.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
