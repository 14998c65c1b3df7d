//! Pairwise Wilcoxon comparison of finished runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ccagnn::metrics::{wilcoxon_signed_rank, WilcoxonResult};
use ccagnn::Error;

use crate::experiment::SUMMARY_FILE;

/// Per-fold test MSE of one run, read back from its summary.
#[derive(Clone, Debug, PartialEq)]
pub struct RunScores {
    pub name: String,
    pub test_mse: Vec<f64>,
}

impl RunScores {
    /// Accepts a run directory or a summary file.
    pub fn load(path: &Path) -> Result<Self> {
        let file: PathBuf = if path.is_dir() {
            path.join(SUMMARY_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        let name = if path.is_dir() {
            path.to_path_buf()
        } else {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        Self::parse(&name.display().to_string(), &text).with_context(|| format!("parsing {}", file.display()))
    }

    pub fn parse(name: &str, summary: &str) -> Result<Self> {
        let mut folds: Vec<(usize, f64)> = Vec::new();
        for line in summary.lines() {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let Some(rest) = key.strip_prefix("fold.") else {
                continue;
            };
            let Some(idx) = rest.strip_suffix(".test_mse") else {
                continue;
            };
            let idx: usize = idx.parse().with_context(|| format!("bad fold index in {key:?}"))?;
            let v: f64 = value.parse().with_context(|| format!("bad value in {line:?}"))?;
            folds.push((idx, v));
        }
        if folds.is_empty() {
            bail!("no per-fold test MSE in summary");
        }
        folds.sort_by_key(|&(i, _)| i);
        Ok(RunScores {
            name: name.to_string(),
            test_mse: folds.into_iter().map(|(_, v)| v).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Winner(usize),
    NotSignificant,
    /// Every paired difference is zero.
    NoDifference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairComparison {
    pub a: usize,
    pub b: usize,
    pub test: Option<WilcoxonResult>,
    pub verdict: Verdict,
}

/// Compares every pair of runs on their per-fold test MSE; lower wins.
pub fn compare_runs(runs: &[RunScores], alpha: f64) -> ccagnn::Result<Vec<PairComparison>> {
    if runs.len() < 2 {
        return Err(Error::Param(format!("need at least 2 runs, got {}", runs.len())));
    }
    let folds = runs[0].test_mse.len();
    if let Some(r) = runs.iter().find(|r| r.test_mse.len() != folds) {
        return Err(Error::Param(format!(
            "fold counts differ: {} has {}, {} has {folds}",
            r.name,
            r.test_mse.len(),
            runs[0].name
        )));
    }
    let mut out = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            let cmp = match wilcoxon_signed_rank(&runs[a].test_mse, &runs[b].test_mse, alpha) {
                Ok(w) => PairComparison {
                    a,
                    b,
                    test: Some(w),
                    verdict: if !w.reject {
                        Verdict::NotSignificant
                    } else if w.w_minus > w.w_plus {
                        Verdict::Winner(a)
                    } else {
                        Verdict::Winner(b)
                    },
                },
                Err(Error::Degenerate(_)) => PairComparison {
                    a,
                    b,
                    test: None,
                    verdict: Verdict::NoDifference,
                },
                Err(e) => return Err(e),
            };
            out.push(cmp);
        }
    }
    Ok(out)
}

/// Tab-separated table; the winning run's name is wrapped in `**`.
pub fn format_comparisons(runs: &[RunScores], cmps: &[PairComparison]) -> String {
    let mut s = String::from("run_a\trun_b\tn\tw_plus\tw_minus\tp_value\tdecision\n");
    for c in cmps {
        let mark = |i: usize| {
            if c.verdict == Verdict::Winner(i) {
                format!("**{}**", runs[i].name)
            } else {
                runs[i].name.clone()
            }
        };
        let decision = match c.verdict {
            Verdict::Winner(i) => format!("{} wins", runs[i].name),
            Verdict::NotSignificant => "no significant difference".into(),
            Verdict::NoDifference => "no difference".into(),
        };
        let stats = match &c.test {
            Some(w) => format!("{}\t{}\t{}\t{}", w.n, w.w_plus, w.w_minus, w.p_value),
            None => "0\t-\t-\t-".into(),
        };
        let _ = writeln!(s, "{}\t{}\t{stats}\t{decision}", mark(c.a), mark(c.b));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(name: &str, v: Vec<f64>) -> RunScores {
        RunScores {
            name: name.into(),
            test_mse: v,
        }
    }

    #[test]
    fn parse_reads_folds_in_order() {
        let text = "status=ok\nfold.1.test_mse=0.5\nfold.0.test_mse=0.25\nfold.0.noisy_test_mse=9\n";
        assert_eq!(RunScores::parse("x", text).unwrap().test_mse, vec![0.25, 0.5]);
        assert!(RunScores::parse("x", "status=ok\n").is_err());
    }

    #[test]
    fn identical_runs_show_no_difference() {
        let v: Vec<f64> = (0..15).map(|i| 0.01 * i as f64).collect();
        let cmps = compare_runs(&[run("a", v.clone()), run("b", v)], 0.05).unwrap();
        assert_eq!(cmps[0].verdict, Verdict::NoDifference);
    }

    #[test]
    fn run_better_on_all_fifteen_folds_wins() {
        let a: Vec<f64> = (0..15).map(|i| 0.010 + 0.001 * i as f64).collect();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + 0.0001 * (i + 1) as f64).collect();
        let runs = [run("a", a), run("b", b)];
        let cmps = compare_runs(&runs, 0.05).unwrap();
        assert_eq!(cmps[0].verdict, Verdict::Winner(0));
        // All 15 signs agree, so the exact two-sided tail is 2 / 2^15.
        let exact = 2.0 / 32768.0;
        assert!(exact < 0.05);
        assert!(cmps[0].test.unwrap().p_value < 0.05);
        assert!(format_comparisons(&runs, &cmps).contains("**a**"));
    }

    #[test]
    fn single_fold_and_mismatched_counts_are_errors() {
        assert!(matches!(
            compare_runs(&[run("a", vec![0.1]), run("b", vec![0.2])], 0.05),
            Err(Error::Param(_))
        ));
        assert!(matches!(
            compare_runs(&[run("a", vec![0.1; 6]), run("b", vec![0.2; 5])], 0.05),
            Err(Error::Param(_))
        ));
        assert!(compare_runs(&[run("a", vec![0.1; 6])], 0.05).is_err());
    }
}
