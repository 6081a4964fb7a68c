//! Sampler efficacy: how often each sampler attains the lowest mean VI.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::sampling::SamplerKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficacyRow {
    pub target: String,
    pub sample_size: usize,
    pub sampler: String,
    pub mean_vi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Efficacy {
    pub sampler: String,
    pub strategy: String,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficacyReport {
    /// Ascending by efficacy, then by sampler name.
    pub rows: Vec<Efficacy>,
    pub settings: usize,
    /// `(target, sample_size)` settings dropped for missing samplers.
    pub skipped: Vec<(String, usize)>,
}

/// Percent of `(target, sample_size)` settings in which each sampler has the
/// lowest mean VI. Tied winners share the setting equally. Settings that lack
/// any sampler seen elsewhere in the table are skipped with a warning.
pub fn sampler_efficacy(table: &[EfficacyRow]) -> Result<EfficacyReport, EvalError> {
    let samplers: BTreeSet<&str> = table.iter().map(|r| r.sampler.as_str()).collect();
    let mut settings: BTreeMap<(&str, usize), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in table {
        settings
            .entry((r.target.as_str(), r.sample_size))
            .or_default()
            .insert(r.sampler.as_str(), r.mean_vi);
    }
    let mut wins: BTreeMap<&str, f64> = samplers.iter().map(|&s| (s, 0.0)).collect();
    let mut skipped = Vec::new();
    let mut complete = 0usize;
    for ((target, size), scores) in &settings {
        if scores.len() != samplers.len() {
            log::warn!("skipping incomplete setting target={target} sample_size={size}");
            skipped.push((target.to_string(), *size));
            continue;
        }
        complete += 1;
        let best = scores.values().copied().fold(f64::INFINITY, f64::min);
        let winners: Vec<&str> = scores.iter().filter(|(_, &v)| v == best).map(|(&s, _)| s).collect();
        for w in &winners {
            *wins.get_mut(w).expect("known sampler") += 1.0 / winners.len() as f64;
        }
    }
    if complete == 0 {
        return Err(EvalError::NoCompleteSettings);
    }
    let mut rows: Vec<Efficacy> = wins
        .into_iter()
        .map(|(s, w)| {
            let kind = s.parse::<SamplerKind>().ok();
            Efficacy {
                sampler: kind.map_or_else(|| s.to_string(), |k| k.display_name().to_string()),
                strategy: kind.map_or("Unknown", |k| k.strategy()).to_string(),
                percent: 100.0 * w / complete as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.percent.total_cmp(&b.percent).then_with(|| a.sampler.cmp(&b.sampler)));
    Ok(EfficacyReport {
        rows,
        settings: complete,
        skipped,
    })
}

/// Three-column table: sampler, strategy class, efficacy with one decimal.
/// The best sampler(s) are marked with a trailing `*`.
pub fn efficacy_table_csv(report: &EfficacyReport) -> String {
    let best = report.rows.iter().map(|r| r.percent).fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::from("sampling_algorithm,strategy,efficacy\n");
    for r in &report.rows {
        let mark = if r.percent == best { "*" } else { "" };
        out.push_str(&format!("{},{},{:.1}%{}\n", r.sampler, r.strategy, r.percent, mark));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(target: &str, size: usize, sampler: &str, vi: f64) -> EfficacyRow {
        EfficacyRow {
            target: target.into(),
            sample_size: size,
            sampler: sampler.into(),
            mean_vi: vi,
        }
    }

    fn percent(r: &EfficacyReport, name: &str) -> f64 {
        r.rows.iter().find(|e| e.sampler == name).unwrap().percent
    }

    #[test]
    fn single_setting_single_winner() {
        let t = [row("a", 4, "median-unc", 0.2), row("a", 4, "badge", 0.3)];
        let r = sampler_efficacy(&t).unwrap();
        assert_eq!(percent(&r, "Median-Uncertainty"), 100.0);
        assert_eq!(percent(&r, "BADGE"), 0.0);
    }

    #[test]
    fn two_settings_split_evenly() {
        let t = [
            row("a", 4, "clue", 0.2),
            row("a", 4, "max-unc", 0.3),
            row("a", 8, "clue", 0.5),
            row("a", 8, "max-unc", 0.3),
        ];
        let r = sampler_efficacy(&t).unwrap();
        assert_eq!(percent(&r, "CLUE"), 50.0);
        assert_eq!(percent(&r, "Max-Uncertainty"), 50.0);
    }

    #[test]
    fn ties_share_and_totals_reach_one_hundred() {
        let t = [
            row("a", 1, "random", 0.2),
            row("a", 1, "min-unc", 0.2),
            row("a", 1, "badge", 0.9),
            row("b", 1, "random", 0.1),
            row("b", 1, "min-unc", 0.4),
            row("b", 1, "badge", 0.3),
            row("c", 1, "random", 0.5),
        ];
        let r = sampler_efficacy(&t).unwrap();
        assert_eq!(r.settings, 2);
        assert_eq!(r.skipped, vec![("c".to_string(), 1)]);
        assert_eq!(percent(&r, "Random"), 75.0);
        assert_eq!(percent(&r, "Min-Uncertainty"), 25.0);
        let total: f64 = r.rows.iter().map(|e| e.percent).sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn table_layout() {
        let t = [row("a", 4, "median-unc", 0.2), row("a", 4, "clue", 0.3)];
        let csv = efficacy_table_csv(&sampler_efficacy(&t).unwrap());
        assert_eq!(
            csv,
            "sampling_algorithm,strategy,efficacy\nCLUE,Uncertainty + Diversity,0.0%\nMedian-Uncertainty,Uncertainty,100.0%*\n"
        );
    }

    #[test]
    fn nothing_complete() {
        assert_eq!(sampler_efficacy(&[]).unwrap_err().kind(), "NoCompleteSettings");
    }
}
