//! Dataset-level evaluation report and its fixed-format text rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::ImageRecord;
use crate::metrics::{
    count_stats, game_stats, localization_report, CountStats, GameStats, LocalizationReport,
};

pub const DEFAULT_GAME_LEVELS: [u32; 3] = [1, 2, 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_records: usize,
    pub n_annotated: usize,
    pub count: CountStats,
    /// Absent when no record has instance annotations.
    pub game: Option<GameStats>,
    pub localization: Option<LocalizationReport>,
}

pub fn evaluate(records: &[ImageRecord], game_levels: &[u32]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        n_records: records.len(),
        n_annotated: records.iter().filter(|r| r.has_instances()).count(),
        count: count_stats(records)?,
        game: game_stats(records, game_levels),
        localization: localization_report(records),
    })
}

impl MetricsReport {
    /// Plain-text summary; every real number is printed with 4 decimals so
    /// the output is stable for golden comparisons.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k:<18}{v}").unwrap();
        let f = |v: f64| format!("{v:.4}");

        line("records", self.n_records.to_string());
        line("annotated", self.n_annotated.to_string());
        line("", String::new());
        line("[count]", String::new());
        line("mae", f(self.count.mae));
        line("rmse", f(self.count.rmse));
        line("", String::new());
        line("[game]", String::new());
        match &self.game {
            Some(g) => {
                for (level, v) in &g.levels {
                    line(&format!("game_l{level}"), f(*v));
                }
            }
            None => line("absent", "no instance annotations".into()),
        }
        line("", String::new());
        line("[localization]", String::new());
        match &self.localization {
            Some(l) => {
                line("mean_l2", f(l.mean_l2));
                line("mean_median_l2", f(l.mean_median_l2));
                line("mean_p95_l2", f(l.mean_p95_l2));
                line("precision", f(l.precision));
                line("recall", f(l.recall));
                line("f1", f(l.f1));
                line("macro_precision", f(l.macro_precision));
                line("macro_recall", f(l.macro_recall));
                line("macro_f1", f(l.macro_f1));
                line("mean_iou_matched", f(l.mean_iou_matched));
                line("tp", l.tp.to_string());
                line("fp", l.fp.to_string());
                line("fn", l.fn_.to_string());
                line("images_matched", l.n_images_matched.to_string());
            }
            None => line("absent", "no instance annotations".into()),
        }
        // trailing spaces from the blank/heading lines
        out.lines()
            .map(str::trim_end)
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, Detection};

    #[test]
    fn renders_absent_sections() {
        let mut r = ImageRecord::new("c", 10.0, 10.0);
        r.gt_count = Some(4);
        r.predictions = vec![Detection::new(BBox::new(1.0, 1.0, 1.0, 1.0), 0.9); 3];
        let text = evaluate(&[r], &DEFAULT_GAME_LEVELS).unwrap().render_text();
        assert!(text.contains("mae               1.0000\n"), "{text}");
        assert_eq!(
            text.matches("absent            no instance annotations")
                .count(),
            2
        );
        assert!(text.lines().all(|l| l == l.trim_end()));
    }
}
