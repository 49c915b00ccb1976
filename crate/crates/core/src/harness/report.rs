//! Aggregation across seeds and report rendering.
//!
//! Rates are computed within each seed first, then summarized across seeds.
//! Ineligible cells and criteria that could not be evaluated are left out of
//! denominators; their counts are reported next to each rate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{SeedResult, SweepCell};
use crate::config::RunConfig;
use crate::engine::CascadeConfig;
use crate::predict::PredictorId;
use crate::regime::{first_chaotic_exit, regime_breakdown, RegimeCounts, RegimeLabel, Thresholds};
use crate::verify::Criterion;

/// Mean and sample standard deviation across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// 100·std/mean; `None` when the mean is zero.
    pub cov: Option<f64>,
    pub n: usize,
}

impl MeanStd {
    /// Summary of `values`; a single value has std 0.
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        let cov = (mean != 0.0).then(|| 100.0 * std / mean);
        Some(MeanStd { mean, std, cov, n })
    }
}

/// Coefficient of variation in percent; `None` for empty input or zero mean.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    MeanStd::of(values).and_then(|m| m.cov)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRegimes {
    pub seed: u64,
    pub counts: RegimeCounts,
    /// First checkpoint whose regime improves on a chaotic predecessor.
    pub first_chaotic_exit: Option<u64>,
    pub final_val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeBreakdown {
    pub per_seed: Vec<SeedRegimes>,
    pub chaotic: Option<MeanStd>,
    pub transition: Option<MeanStd>,
    pub stable: Option<MeanStd>,
    pub unknown: Option<MeanStd>,
    pub final_val_loss: Option<MeanStd>,
}

/// Which checkpoints a rate is taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeScope {
    Transition,
    Stable,
    /// Transition and stable together.
    All,
}

impl RegimeScope {
    pub const ALL: [RegimeScope; 3] = [RegimeScope::Transition, RegimeScope::Stable, RegimeScope::All];

    pub fn contains(self, label: RegimeLabel) -> bool {
        match self {
            RegimeScope::Transition => label == RegimeLabel::Transition,
            RegimeScope::Stable => label == RegimeLabel::Stable,
            RegimeScope::All => matches!(label, RegimeLabel::Transition | RegimeLabel::Stable),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeScope::Transition => "transition",
            RegimeScope::Stable => "stable",
            RegimeScope::All => "transition+stable",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRate {
    pub seed: u64,
    pub accepted: usize,
    pub denominator: usize,
    /// Percent; `None` with a zero denominator.
    pub rate: Option<f64>,
}

impl SeedRate {
    fn new(seed: u64, accepted: usize, denominator: usize) -> Self {
        SeedRate {
            seed,
            accepted,
            denominator,
            rate: (denominator > 0).then(|| 100.0 * accepted as f64 / denominator as f64),
        }
    }
}

/// Acceptance rate for one (scope, predictor, K, criterion).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub scope: RegimeScope,
    pub predictor: PredictorId,
    pub k: u64,
    pub criterion: Criterion,
    pub per_seed: Vec<SeedRate>,
    /// Totals over all seeds.
    pub accepted: usize,
    pub denominator: usize,
    pub ineligible: usize,
    pub not_evaluable: usize,
    /// Across seeds with a non-zero denominator.
    pub rate: Option<MeanStd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub k: u64,
    pub mean_l_hat: Option<f64>,
    pub mean_l_t: Option<f64>,
    /// mean(L̂) / mean(L_t) over cells with finite L̂.
    pub ratio: Option<f64>,
    pub cells: usize,
    pub non_finite: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub predictor: PredictorId,
    pub rows: Vec<RatioRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub config: CascadeConfig,
    pub predictor: PredictorId,
    pub criterion: Criterion,
    pub starts: usize,
    /// `depth_counts[d]` cascades stopped with accepted depth `d`.
    pub depth_counts: Vec<usize>,
    pub mean_depth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seeds: Vec<u64>,
    pub single_seed: bool,
    pub thresholds: Option<Thresholds>,
    pub regimes: RegimeBreakdown,
    pub acceptance: Vec<RateRow>,
    pub loss_ratios: Vec<RatioTable>,
    pub cascades: Vec<CascadeSummary>,
    pub stable_checkpoints: usize,
    pub cascade_ineligible: usize,
    pub config: Option<RunConfig>,
}

impl ExperimentReport {
    pub fn rate(&self, scope: RegimeScope, p: PredictorId, k: u64, c: Criterion) -> Option<&RateRow> {
        self.acceptance
            .iter()
            .find(|r| r.scope == scope && r.predictor == p && r.k == k && r.criterion == c)
    }

    pub fn ratios(&self, p: PredictorId) -> Option<&RatioTable> {
        self.loss_ratios.iter().find(|t| t.predictor == p)
    }
}

/// mean(L̂)/mean(L_t) per K over the eligible cells of one predictor. Cells
/// with non-finite L̂ are counted and left out of both means.
pub fn loss_ratio_table(cells: &[SweepCell], predictor: PredictorId) -> RatioTable {
    let mut by_k: BTreeMap<u64, Vec<&SweepCell>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.eligible && c.predictor == predictor) {
        by_k.entry(c.k).or_default().push(c);
    }
    let rows = by_k
        .into_iter()
        .map(|(k, mut cs)| {
            cs.sort_by_key(|c| (c.seed, c.step));
            let finite: Vec<&&SweepCell> = cs.iter().filter(|c| c.l_hat.is_finite()).collect();
            let n = finite.len();
            let (mean_l_hat, mean_l_t) = if n == 0 {
                (None, None)
            } else {
                (
                    Some(finite.iter().map(|c| c.l_hat).sum::<f64>() / n as f64),
                    Some(finite.iter().map(|c| c.l_t).sum::<f64>() / n as f64),
                )
            };
            let ratio = match (mean_l_hat, mean_l_t) {
                (Some(h), Some(t)) if t != 0.0 => Some(h / t),
                _ => None,
            };
            RatioRow {
                k,
                mean_l_hat,
                mean_l_t,
                ratio,
                cells: cs.len(),
                non_finite: cs.len() - n,
            }
        })
        .collect();
    RatioTable { predictor, rows }
}

fn summarize(values: impl Iterator<Item = f64>) -> Option<MeanStd> {
    MeanStd::of(&values.collect::<Vec<_>>())
}

/// Reduces per-seed results into a report. The output does not depend on
/// the order of `seeds`.
pub fn aggregate(seeds: &[SeedResult]) -> ExperimentReport {
    let mut seeds: Vec<&SeedResult> = seeds.iter().collect();
    seeds.sort_by_key(|s| s.seed);

    let per_seed: Vec<SeedRegimes> = seeds
        .iter()
        .map(|s| {
            let pairs: Vec<(u64, RegimeLabel)> = s.regimes.iter().map(|r| (r.step, r.regime)).collect();
            SeedRegimes {
                seed: s.seed,
                counts: regime_breakdown(pairs.iter().map(|p| p.1)),
                first_chaotic_exit: first_chaotic_exit(&pairs),
                final_val_loss: s.regimes.last().map(|r| r.val_loss),
            }
        })
        .collect();
    let count = |l: RegimeLabel| summarize(per_seed.iter().map(|r| r.counts.get(l) as f64));
    let regimes = RegimeBreakdown {
        chaotic: count(RegimeLabel::Chaotic),
        transition: count(RegimeLabel::Transition),
        stable: count(RegimeLabel::Stable),
        unknown: count(RegimeLabel::Unknown),
        final_val_loss: summarize(per_seed.iter().filter_map(|r| r.final_val_loss)),
        per_seed,
    };

    let predictors: BTreeSet<PredictorId> = seeds.iter().flat_map(|s| s.cells.iter().map(|c| c.predictor)).collect();
    let ks: BTreeSet<u64> = seeds.iter().flat_map(|s| s.cells.iter().map(|c| c.k)).collect();

    let mut acceptance = Vec::new();
    for scope in RegimeScope::ALL {
        for &p in &predictors {
            for &k in &ks {
                for criterion in Criterion::ALL {
                    acceptance.push(rate_row(&seeds, scope, p, k, criterion));
                }
            }
        }
    }

    let all_cells: Vec<SweepCell> = seeds.iter().flat_map(|s| s.cells.iter().cloned()).collect();
    let loss_ratios = predictors.iter().map(|&p| loss_ratio_table(&all_cells, p)).collect();

    let mut groups: BTreeMap<(u32, u64, PredictorId, Criterion), Vec<u32>> = BTreeMap::new();
    let mut configs: Vec<CascadeConfig> = Vec::new();
    for s in &seeds {
        for r in &s.cascades.records {
            let o = &r.outcome;
            if !configs.contains(&o.config) {
                configs.push(o.config);
            }
            groups
                .entry((o.config.depth, o.config.k, o.predictor, o.criterion))
                .or_default()
                .push(o.accepted_depth);
        }
    }
    let stable_checkpoints: usize = seeds.iter().map(|s| s.cascades.stable_checkpoints).sum();
    let cascade_ineligible = seeds.iter().map(|s| s.cascades.ineligible).sum();
    let cascades = if groups.is_empty() {
        Vec::new()
    } else {
        groups
            .into_iter()
            .map(|((depth, k, predictor, criterion), depths)| {
                let mut depth_counts = vec![0; depth as usize + 1];
                for &d in &depths {
                    depth_counts[d as usize] += 1;
                }
                CascadeSummary {
                    config: CascadeConfig { depth, k },
                    predictor,
                    criterion,
                    starts: depths.len(),
                    mean_depth: Some(depths.iter().map(|&d| d as f64).sum::<f64>() / depths.len() as f64),
                    depth_counts,
                    note: None,
                }
            })
            .collect()
    };

    ExperimentReport {
        seeds: seeds.iter().map(|s| s.seed).collect(),
        single_seed: seeds.len() == 1,
        thresholds: None,
        regimes,
        acceptance,
        loss_ratios,
        cascades,
        stable_checkpoints,
        cascade_ineligible,
        config: None,
    }
}

fn rate_row(seeds: &[&SeedResult], scope: RegimeScope, p: PredictorId, k: u64, criterion: Criterion) -> RateRow {
    let mut row = RateRow {
        scope,
        predictor: p,
        k,
        criterion,
        per_seed: Vec::with_capacity(seeds.len()),
        accepted: 0,
        denominator: 0,
        ineligible: 0,
        not_evaluable: 0,
        rate: None,
    };
    for s in seeds {
        let (mut acc, mut den) = (0, 0);
        for c in s.cells.iter().filter(|c| c.predictor == p && c.k == k && scope.contains(c.regime)) {
            if !c.eligible {
                row.ineligible += 1;
                continue;
            }
            match c.verdict(criterion) {
                Some(v) => {
                    den += 1;
                    acc += usize::from(v);
                }
                None => row.not_evaluable += 1,
            }
        }
        row.accepted += acc;
        row.denominator += den;
        row.per_seed.push(SeedRate::new(s.seed, acc, den));
    }
    row.rate = summarize(row.per_seed.iter().filter_map(|r| r.rate));
    row
}

fn fmt_ms(m: Option<MeanStd>, prec: usize) -> String {
    match m {
        Some(m) => format!("{:.prec$} ± {:.prec$}", m.mean, m.std),
        None => "—".to_string(),
    }
}

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    x.map_or_else(|| "—".to_string(), |x| format!("{x:.prec$}"))
}

/// Plain-text tables: regime breakdown, acceptance rates per criterion and
/// regime, loss ratios, cross-seed CoV, and cascades.
pub fn render_text(r: &ExperimentReport) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "Seeds: {}{}", seeds.join(", "), if r.single_seed { " (single seed: std is 0 by convention)" } else { "" });
    if let Some(th) = r.thresholds {
        let _ = writeln!(s, "Thresholds: tau_low = {:.6}, tau_high = {:.6}", th.tau_low, th.tau_high);
    }

    let _ = writeln!(s, "\nRegime breakdown (checkpoints per seed, mean ± std)");
    let _ = writeln!(s, "{:>12} {:>12} {:>12} {:>12}", "Chaotic", "Transition", "Stable", "Unknown");
    let g = &r.regimes;
    let _ = writeln!(
        s,
        "{:>12} {:>12} {:>12} {:>12}",
        fmt_ms(g.chaotic, 1),
        fmt_ms(g.transition, 1),
        fmt_ms(g.stable, 1),
        fmt_ms(g.unknown, 1)
    );
    let _ = writeln!(s, "Final validation loss: {}", fmt_ms(g.final_val_loss, 4));
    for sr in &g.per_seed {
        let _ = writeln!(
            s,
            "  seed {:>6}: chaotic {:>3}  transition {:>3}  stable {:>3}  unknown {:>3}  first chaotic exit {}",
            sr.seed,
            sr.counts.chaotic,
            sr.counts.transition,
            sr.counts.stable,
            sr.counts.unknown,
            sr.first_chaotic_exit.map_or_else(|| "—".to_string(), |x| x.to_string())
        );
    }

    let predictors: BTreeSet<PredictorId> = r.acceptance.iter().map(|x| x.predictor).collect();
    let ks: BTreeSet<u64> = r.acceptance.iter().map(|x| x.k).collect();
    for criterion in Criterion::ALL {
        let _ = writeln!(s, "\n{} acceptance rate (%), mean ± std across seeds [N = evaluations]", criterion.as_str());
        for scope in RegimeScope::ALL {
            let _ = writeln!(s, "  {} regime", scope.as_str());
            let mut header = format!("  {:>5}", "K");
            for p in &predictors {
                let _ = write!(header, " {:>24}", p.as_str());
            }
            let _ = writeln!(s, "{header}");
            for &k in &ks {
                let mut line = format!("  {k:>5}");
                for &p in &predictors {
                    let cell = r
                        .rate(scope, p, k, criterion)
                        .map(|x| format!("{} [{}]", fmt_ms(x.rate, 1), x.denominator))
                        .unwrap_or_else(|| "—".to_string());
                    let _ = write!(line, " {cell:>24}");
                }
                let _ = writeln!(s, "{line}");
            }
        }
    }

    for t in &r.loss_ratios {
        let _ = writeln!(s, "\nPredicted vs actual validation loss: {}", t.predictor.as_str());
        let _ = writeln!(s, "  {:>5} {:>14} {:>14} {:>12} {:>7} {:>10}", "K", "Predicted", "Actual", "Ratio", "Cells", "Nonfinite");
        for row in &t.rows {
            let _ = writeln!(
                s,
                "  {:>5} {:>14} {:>14} {:>12} {:>7} {:>10}",
                row.k,
                fmt_opt(row.mean_l_hat, 4),
                fmt_opt(row.mean_l_t, 4),
                row.ratio.map_or_else(|| "—".to_string(), |x| format!("{x:.2}x")),
                row.cells,
                row.non_finite
            );
        }
    }

    let _ = writeln!(s, "\nCoefficient of variation (%) of proximity acceptance across seeds, transition regime");
    let mut header = format!("  {:>5}", "K");
    for p in &predictors {
        let _ = write!(header, " {:>16}", p.as_str());
    }
    let _ = writeln!(s, "{header}");
    for &k in &ks {
        let mut line = format!("  {k:>5}");
        for &p in &predictors {
            let cov = r
                .rate(RegimeScope::Transition, p, k, Criterion::Proximity)
                .and_then(|x| x.rate)
                .and_then(|m| m.cov);
            let _ = write!(line, " {:>16}", fmt_opt(cov, 1));
        }
        let _ = writeln!(s, "{line}");
    }

    let _ = writeln!(s, "\nCascades from stable checkpoints ({} stable checkpoints)", r.stable_checkpoints);
    if r.cascades.is_empty() {
        let _ = writeln!(s, "  no cascades evaluated: zero stable checkpoints with enough history (denominator 0)");
    } else {
        let _ = writeln!(s, "  {:>3} {:>4} {:>16} {:>10} {:>7} {:>10}  depth counts", "D", "K", "predictor", "criterion", "starts", "mean depth");
        for c in &r.cascades {
            let counts: Vec<String> = c.depth_counts.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "  {:>3} {:>4} {:>16} {:>10} {:>7} {:>10}  [{}]",
                c.config.depth,
                c.config.k,
                c.predictor.as_str(),
                c.criterion.as_str(),
                c.starts,
                fmt_opt(c.mean_depth, 2),
                counts.join(" ")
            );
        }
    }
    if r.cascade_ineligible > 0 {
        let _ = writeln!(s, "  skipped for lack of history: {}", r.cascade_ineligible);
    }
    s
}
