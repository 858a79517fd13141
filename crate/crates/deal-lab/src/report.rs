//! Run artifacts: summary CSVs, per-cycle JSON lines, selection CSVs,
//! Markdown tables, SVG learning curves, and the cross-run merge used by
//! the report command. All writers are deterministic; wall-clock fields
//! stay out of the determinism-checked files.

use std::path::Path;

use crate::alloop::{
    mean_std, CycleReport, Decision, DecisionRecord, ExperimentResult, KfoldSummary,
};
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: &str = "strategy,cycle,mean_dice,std_dice,per_fold";

pub fn write_summary_csv(path: &Path, rows: &[KfoldSummary]) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let folds: Vec<String> = r.per_fold.iter().map(|v| format!("{:.6}", v)).collect();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            r.strategy,
            r.cycle,
            r.mean_dice,
            r.std_dice,
            folds.join("|")
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub strategy: String,
    pub cycle: usize,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub per_fold: Vec<f64>,
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SUMMARY_HEADER => {}
        Some(h) => {
            return Err(Error::Schema(format!(
                "{}: unsupported summary schema (header '{}')",
                path.display(),
                h
            )))
        }
        None => return Err(Error::Schema(format!("{}: empty summary", path.display()))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Schema(format!(
                "{}:{}: expected 5 fields, got {}",
                path.display(),
                i + 2,
                parts.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Schema(format!("{}:{}: bad number '{}'", path.display(), i + 2, s)))
        };
        rows.push(SummaryRow {
            strategy: parts[0].to_string(),
            cycle: parts[1]
                .parse()
                .map_err(|_| Error::Schema(format!("{}:{}: bad cycle", path.display(), i + 2)))?,
            mean_dice: num(parts[2])?,
            std_dice: num(parts[3])?,
            per_fold: parts[4]
                .split('|')
                .filter(|s| !s.is_empty())
                .map(num)
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

pub fn write_decisions_csv(path: &Path, decisions: &[DecisionRecord]) -> Result<()> {
    let mut out = String::from("cycle,sample_id,s_e,s_md,s_cd,s_p,s_g,decision\n");
    for d in decisions {
        let decision = match d.decision {
            Decision::KeepCam => "KEEP_CAM",
            Decision::Pseudo => "PSEUDO",
            Decision::Gt => "GT",
        };
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            d.cycle, d.score.sample_id, d.score.s_e, d.score.s_md, d.score.s_cd, d.score.s_p,
            d.score.s_g, decision
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_cycles_jsonl(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let mut out = String::new();
    for r in results {
        for c in &r.cycles {
            #[derive(serde::Serialize)]
            struct Line<'a> {
                strategy: &'a str,
                fold: usize,
                seed: u64,
                initial_dice: f64,
                #[serde(flatten)]
                cycle: &'a CycleReport,
            }
            let line = Line {
                strategy: r.strategy.name(),
                fold: r.fold,
                seed: r.seed,
                initial_dice: r.initial_dice,
                cycle: c,
            };
            out.push_str(&serde_json::to_string(&line).map_err(|e| Error::Schema(e.to_string()))?);
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Markdown table in the shape of the per-budget comparison: one row per
/// strategy, one column per cycle (GT budget), plus the 95%-of-full line
/// when a fully supervised reference is available.
pub fn markdown_summary(
    rows: &[KfoldSummary],
    gt_fraction: f64,
    full_supervision: Option<f64>,
) -> String {
    let mut strategies: Vec<&str> = Vec::new();
    let mut cycles = 0usize;
    for r in rows {
        if !strategies.contains(&r.strategy.name()) {
            strategies.push(r.strategy.name());
        }
        cycles = cycles.max(r.cycle + 1);
    }
    let mut md = String::from("| strategy |");
    for c in 0..cycles {
        md.push_str(&format!(" {:.0}% GT |", 100.0 * gt_fraction * c as f64));
    }
    md.push('\n');
    md.push_str("|---|");
    md.push_str(&"---|".repeat(cycles));
    md.push('\n');
    for s in strategies {
        md.push_str(&format!("| {} |", s));
        for c in 0..cycles {
            match rows.iter().find(|r| r.strategy.name() == s && r.cycle == c) {
                Some(r) => md.push_str(&format!(" {:.4} ± {:.4} |", r.mean_dice, r.std_dice)),
                None => md.push_str(" — |"),
            }
        }
        md.push('\n');
    }
    if let Some(full) = full_supervision {
        md.push_str(&format!(
            "\n100% ground truth: {:.4}; 95% of full supervision: {:.4}\n",
            full,
            0.95 * full
        ));
    }
    md
}

/// Learning curve (mean Dice vs GT fraction, one polyline per strategy)
/// as a self-contained SVG.
pub fn svg_learning_curve(rows: &[KfoldSummary], gt_fraction: f64) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 60.0; // margins
    const MR: f64 = 20.0;
    const MT: f64 = 20.0;
    const MB: f64 = 50.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
    ];

    let mut strategies: Vec<&str> = Vec::new();
    let mut max_cycle = 1usize;
    for r in rows {
        if !strategies.contains(&r.strategy.name()) {
            strategies.push(r.strategy.name());
        }
        max_cycle = max_cycle.max(r.cycle);
    }
    let x_of = |cycle: usize| ML + (W - ML - MR) * cycle as f64 / max_cycle as f64;
    let y_of = |dice: f64| MT + (H - MT - MB) * (1.0 - dice);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        H - MB,
        W - MR,
        H - MB
    ));
    for tick in 0..=10 {
        let v = tick as f64 / 10.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ML}\" y2=\"{y}\" stroke=\"black\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.1}</text>\n",
            ML - 5.0,
            ML - 8.0,
            y + 4.0
        ));
    }
    for c in 0..=max_cycle {
        let x = x_of(c);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\
             <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{:.0}%</text>\n",
            H - MB,
            H - MB + 5.0,
            H - MB + 20.0,
            100.0 * gt_fraction * c as f64
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">ground-truth budget</text>\n\
         <text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">mean Dice</text>\n",
        (ML + W - MR) / 2.0,
        H - 10.0,
        H / 2.0,
        H / 2.0
    ));

    for (si, s) in strategies.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let mut pts: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.strategy.name() == *s)
            .map(|r| (r.cycle, r.mean_dice))
            .collect();
        pts.sort_by_key(|p| p.0);
        let path: Vec<String> = pts
            .iter()
            .map(|&(c, d)| format!("{:.1},{:.1}", x_of(c), y_of(d)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        for &(c, d) in &pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                x_of(c),
                y_of(d)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{s}</text>\n",
            W - MR - 130.0,
            MT + 18.0 * (si + 1) as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Merge summary CSVs from several completed run directories: rows with
/// the same (strategy, cycle) are averaged, with the population std taken
/// over the per-run means.
pub fn merge_summaries(paths: &[std::path::PathBuf]) -> Result<Vec<SummaryRow>> {
    if paths.is_empty() {
        return Err(Error::Contract("report: no run directories given".into()));
    }
    let mut groups: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for p in paths {
        for row in read_summary_csv(p)? {
            match groups
                .iter_mut()
                .find(|(s, c, _)| *s == row.strategy && *c == row.cycle)
            {
                Some((_, _, v)) => v.push(row.mean_dice),
                None => groups.push((row.strategy, row.cycle, vec![row.mean_dice])),
            }
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(groups
        .into_iter()
        .map(|(strategy, cycle, means)| {
            let (mean_dice, std_dice) = mean_std(&means);
            SummaryRow {
                strategy,
                cycle,
                mean_dice,
                std_dice,
                per_fold: means,
            }
        })
        .collect())
}

pub fn write_merged_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let folds: Vec<String> = r.per_fold.iter().map(|v| format!("{:.6}", v)).collect();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            r.strategy,
            r.cycle,
            r.mean_dice,
            r.std_dice,
            folds.join("|")
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloop::Strategy;

    fn summary(strategy: Strategy, cycle: usize, per_fold: Vec<f64>) -> KfoldSummary {
        let (mean_dice, std_dice) = mean_std(&per_fold);
        KfoldSummary {
            strategy,
            cycle,
            mean_dice,
            std_dice,
            per_fold,
        }
    }

    #[test]
    fn summary_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("summary.csv");
        let rows = vec![
            summary(Strategy::Deal, 0, vec![0.5, 0.6]),
            summary(Strategy::Random, 1, vec![0.4, 0.5, 0.6]),
        ];
        write_summary_csv(&p, &rows).unwrap();
        let back = read_summary_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].strategy, "deal");
        assert!((back[0].mean_dice - 0.55).abs() < 1e-9);
        assert_eq!(back[1].per_fold.len(), 3);
    }

    #[test]
    fn schema_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("summary.csv");
        std::fs::write(&p, "foo,bar\n1,2\n").unwrap();
        assert!(matches!(read_summary_csv(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn merge_averages_across_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for (i, d) in [0.6, 0.7, 0.8].iter().enumerate() {
            let p = dir.path().join(format!("run{}.csv", i));
            write_summary_csv(&p, &[summary(Strategy::Deal, 1, vec![*d])]).unwrap();
            paths.push(p);
        }
        let merged = merge_summaries(&paths).unwrap();
        assert_eq!(merged.len(), 1);
        // hand-averaged oracle
        assert!((merged[0].mean_dice - 0.7).abs() < 1e-9);
        let hand_std = ((0.01 + 0.0 + 0.01) / 3.0f64).sqrt();
        assert!((merged[0].std_dice - hand_std).abs() < 1e-9);
    }

    #[test]
    fn merge_keeps_disjoint_strategies_separate() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_summary_csv(&a, &[summary(Strategy::Deal, 0, vec![0.5])]).unwrap();
        write_summary_csv(&b, &[summary(Strategy::Random, 0, vec![0.4])]).unwrap();
        let merged = merge_summaries(&[a, b]).unwrap();
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn markdown_and_svg_contain_all_strategies() {
        let rows = vec![
            summary(Strategy::Deal, 0, vec![0.5]),
            summary(Strategy::Deal, 1, vec![0.6]),
            summary(Strategy::Random, 0, vec![0.45]),
            summary(Strategy::Random, 1, vec![0.55]),
        ];
        let md = markdown_summary(&rows, 0.1, Some(0.8));
        assert!(md.contains("deal") && md.contains("random"));
        assert!(md.contains("0.7600")); // 95% of 0.8
        let svg = svg_learning_curve(&rows, 0.1);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("deal") && svg.contains("random"));
        assert!(svg.contains("polyline"));
    }
}
