//! Result tables rendered from persisted metrics rows.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::MetricsRow;

/// Collect every `metrics/*.json` row below the given directories.
pub fn collect_rows(dirs: &[&Path]) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for d in dirs {
        walk(d, &mut rows)?;
    }
    sort_rows(&mut rows);
    Ok(rows)
}

fn walk(dir: &Path, rows: &mut Vec<MetricsRow>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, rows)?;
        } else if p.extension().is_some_and(|e| e == "json")
            && p.parent().and_then(|d| d.file_name()).is_some_and(|n| n == "metrics")
        {
            rows.push(MetricsRow::read(&p)?);
        }
    }
    Ok(())
}

/// Split an id into its alphabetic prefix and numeric suffix so that
/// `M2 < M10`.
fn id_key(id: &str) -> (String, u64, String) {
    let digits_at = id.find(|c: char| c.is_ascii_digit()).unwrap_or(id.len());
    let (prefix, rest) = id.split_at(digits_at);
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    let num = rest[..end].parse().unwrap_or(0);
    (prefix.to_string(), num, rest[end..].to_string())
}

fn model_order(a: &str, b: &str) -> Ordering {
    // baseline first, then sub-CNNs, joint models, fusions
    let rank = |id: &str| match id.chars().next() {
        Some('C') => 0,
        Some('M') => 1,
        Some('J') => 2,
        Some('F') => 3,
        _ => 4,
    };
    rank(a).cmp(&rank(b)).then_with(|| id_key(a).cmp(&id_key(b)))
}

pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        model_order(&a.model_id, &b.model_id)
            .then_with(|| a.corpus.cmp(&b.corpus))
            .then_with(|| a.partition.cmp(&b.partition))
    });
}

fn min_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.flatten().fold(None, |m, v| Some(m.map_or(v, |m: f64| m.min(v))))
}

fn cell(v: Option<f64>, best: Option<f64>, digits: usize) -> String {
    match v {
        None => "n/a".into(),
        Some(x) => {
            let s = format!("{x:.digits$}");
            if Some(x) == best {
                format!("**{s}**")
            } else {
                s
            }
        }
    }
}

/// Markdown table; the minimum of each metric column is bold.
pub fn render_markdown(rows: &[MetricsRow]) -> String {
    let best_tdcf = min_of(rows.iter().map(|r| r.min_tdcf));
    let best_eer = min_of(rows.iter().map(|r| Some(r.eer_percent)));
    let mut out = String::from(
        "| Model | Subband (kHz) | Corpus | Partition | min t-DCF | EER (%) |\n|---|---|---|---|---|---|\n",
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            r.model_id,
            r.subband,
            r.corpus,
            r.partition,
            cell(r.min_tdcf, best_tdcf, 4),
            cell(Some(r.eer_percent), best_eer, 2),
        ));
    }
    out
}

pub fn render_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("model_id,subband,corpus,partition,min_tdcf,eer_percent,score_file,params_hash\n");
    for r in rows {
        out.push_str(&format!(
            "{},\"{}\",{},{},{},{:.6},{},{}\n",
            r.model_id,
            r.subband,
            r.corpus,
            r.partition,
            r.min_tdcf.map(|v| format!("{v:.6}")).unwrap_or_default(),
            r.eer_percent,
            r.score_file.display(),
            r.params_hash.as_deref().unwrap_or(""),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Partition;
    use std::path::PathBuf;

    fn row(id: &str, corpus: &str, eer: f64, tdcf: Option<f64>) -> MetricsRow {
        MetricsRow {
            model_id: id.into(),
            subband: "0-8".into(),
            corpus: corpus.into(),
            partition: Partition::Eval,
            eer_percent: eer,
            min_tdcf: tdcf,
            n_bonafide: 1,
            n_spoof: 1,
            score_file: PathBuf::from("scores/x.txt"),
            params_hash: None,
        }
    }

    #[test]
    fn empty_table_has_header() {
        let md = render_markdown(&[]);
        assert_eq!(md.lines().count(), 2);
        assert!(md.starts_with("| Model |"));
        assert_eq!(render_csv(&[]).lines().count(), 1);
    }

    #[test]
    fn rows_sorted_and_best_bold() {
        let mut rows = vec![
            row("M10", "b", 3.0, Some(0.2)),
            row("J1", "a", 1.5, None),
            row("M2", "a", 9.0, Some(0.1)),
            row("M2", "A", 8.0, Some(0.3)),
            row("CNN", "a", 4.0, None),
        ];
        sort_rows(&mut rows);
        let ids: Vec<_> = rows.iter().map(|r| (r.model_id.as_str(), r.corpus.as_str())).collect();
        assert_eq!(ids, [("CNN", "a"), ("M2", "A"), ("M2", "a"), ("M10", "b"), ("J1", "a")]);
        let md = render_markdown(&rows);
        assert!(md.contains("| **0.1000** | 9.00 |"));
        assert!(md.contains("| n/a | **1.50** |"));
    }

    #[test]
    fn collects_nested_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("exp/metrics");
        fs::create_dir_all(&m).unwrap();
        for (i, r) in [row("M2", "a", 1.0, None), row("M1", "a", 2.0, None)].iter().enumerate() {
            fs::write(m.join(format!("{i}.json")), serde_json::to_string(r).unwrap()).unwrap();
        }
        fs::write(dir.path().join("exp/other.json"), "{}").unwrap();
        let rows = collect_rows(&[dir.path()]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].model_id, "M1");
    }
}
