//! Report writing: atomic file output and the CSV renderers shared by the
//! commands. All CSVs use a header row, `.` decimals, and LF endings, and
//! are deterministic for a given run configuration (measured-latency columns
//! excepted).

use lrtabl_core::model::Metrics;
use lrtabl_core::Result;
use std::path::Path;

/// Class names in class-index order.
pub const CLASS_NAMES: [&str; 3] = ["up", "stationary", "down"];

/// Writes a file atomically: temporary file in the target directory, then
/// rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp.{}", std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Renders metrics as key/value CSV rows: overall scores, per-class scores,
/// then the confusion matrix (`confusion_<true>_<predicted>`).
pub fn metrics_to_csv(metrics: &Metrics) -> String {
    let mut out = String::from("metric,value\n");
    let mut kv = |k: String, v: String| out.push_str(&format!("{k},{v}\n"));
    kv("accuracy".into(), metrics.accuracy.to_string());
    kv("macro_precision".into(), metrics.macro_precision.to_string());
    kv("macro_recall".into(), metrics.macro_recall.to_string());
    kv("macro_f1".into(), metrics.macro_f1.to_string());
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        kv(format!("precision_{name}"), metrics.per_class[c].precision.to_string());
        kv(format!("recall_{name}"), metrics.per_class[c].recall.to_string());
        kv(format!("f1_{name}"), metrics.per_class[c].f1.to_string());
    }
    for (t, true_name) in CLASS_NAMES.iter().enumerate() {
        for (p, pred_name) in CLASS_NAMES.iter().enumerate() {
            kv(
                format!("confusion_{true_name}_{pred_name}"),
                metrics.confusion[t][p].to_string(),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use lrtabl_core::model::compute_metrics;

    #[test]
    fn metrics_csv_contains_all_rows() {
        let m = compute_metrics(&[0, 1, 1, 2], &[0, 0, 1, 2]).unwrap();
        let csv = metrics_to_csv(&m);
        assert!(csv.starts_with("metric,value\n"));
        assert!(csv.contains("accuracy,0.75\n"));
        assert!(csv.contains("f1_up,0.6666666666666666\n"));
        assert!(csv.contains("confusion_up_stationary,1\n"));
        assert!(csv.contains("confusion_down_down,1\n"));
        // header + 4 overall + 9 per-class + 9 confusion
        assert_eq!(csv.lines().count(), 1 + 4 + 9 + 9);
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("report.csv");
        write_atomic(&path, "a,b\n1,2\n").unwrap();
        write_atomic(&path, "a,b\n3,4\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n3,4\n");
        // No temporary files left behind.
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp."))
            .collect();
        assert!(leftovers.is_empty());
    }
}
