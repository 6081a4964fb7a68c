//! Source-free active domain adaptation: pick a pretrained source by MMD,
//! then alternate between annotating a batch of target images and
//! fine-tuning on everything annotated so far, under fixed annotation and
//! step budgets. The control modes share the same loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{derive_seed, DataError, DomainPool, RunResult};
use crate::mmd::{embed_pool, mmd2, subsample_indices, DistanceMatrix, MatrixConfig, MmdError};
use crate::model::{train_steps, ModelConfig, ModelError, SegModel, TrainConfig};
use crate::numeric::{mean, sample_std};
use crate::sampling::{sample, SamplerKind, SamplingError};
use crate::segeval::{evaluate_model, EvalConfig, EvalError, VIResult};
use crate::uncertainty::UncertaintyConfig;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("training budget {steps} is smaller than the {iterations} active iterations")]
    InsufficientTrainingBudget { steps: usize, iterations: usize },
    #[error("target pool has {available} labelable samples, budget needs {requested}")]
    PoolExhausted { requested: usize, available: usize },
    #[error("no candidate source models")]
    NoCandidates,
    #[error("unknown source model {0}")]
    UnknownSource(String),
    #[error("unknown mode {0}")]
    UnknownMode(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mmd(#[from] MmdError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl AdaptError {
    pub fn kind(&self) -> &'static str {
        match self {
            AdaptError::InvalidBudget(_) => "InvalidBudget",
            AdaptError::InsufficientTrainingBudget { .. } => "InsufficientTrainingBudget",
            AdaptError::PoolExhausted { .. } => "PoolExhausted",
            AdaptError::NoCandidates => "EmptyCandidates",
            AdaptError::UnknownSource(_) => "UnknownDomain",
            AdaptError::UnknownMode(_) => "UnknownMode",
            AdaptError::InvalidGrid(_) => "InvalidGrid",
            AdaptError::Sampling(e) => e.kind(),
            AdaptError::Model(e) => e.kind(),
            AdaptError::Mmd(e) => e.kind(),
            AdaptError::Eval(e) => e.kind(),
            AdaptError::Data(e) => e.kind(),
        }
    }
}

/// Split of the annotation budget `A` and step budget `B` over the active
/// iterations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub annotations: usize,
    pub steps: usize,
    pub iterations_requested: usize,
    pub iterations: usize,
    pub annotations_per_iteration: Vec<usize>,
    pub steps_per_iteration: Vec<usize>,
}

fn split_evenly(total: usize, parts: usize) -> Vec<usize> {
    let (q, r) = (total / parts, total % parts);
    (0..parts).map(|i| q + usize::from(i < r)).collect()
}

/// `T_eff = min(T, A)`; remainders go one each to the earliest iterations.
pub fn plan_budget(annotations: usize, steps: usize, iterations: usize) -> Result<BudgetPlan, AdaptError> {
    if annotations == 0 {
        return Err(AdaptError::InvalidBudget("annotation budget must be at least 1".into()));
    }
    if iterations == 0 {
        return Err(AdaptError::InvalidBudget(
            "at least 1 active iteration is required".into(),
        ));
    }
    let t = iterations.min(annotations);
    if steps < t {
        return Err(AdaptError::InsufficientTrainingBudget { steps, iterations: t });
    }
    Ok(BudgetPlan {
        annotations,
        steps,
        iterations_requested: iterations,
        iterations: t,
        annotations_per_iteration: split_evenly(annotations, t),
        steps_per_iteration: split_evenly(steps, t),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "scratch")]
    Scratch,
    #[serde(rename = "passive-min-mmd")]
    PassiveMinMmd,
    #[serde(rename = "active-max-mmd")]
    ActiveMaxMmd,
    /// The full method: min-MMD source plus uncertainty-driven sampling.
    #[serde(rename = "active-min-mmd")]
    ActiveMinMmd,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Scratch,
        Mode::PassiveMinMmd,
        Mode::ActiveMaxMmd,
        Mode::ActiveMinMmd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Scratch => "scratch",
            Mode::PassiveMinMmd => "passive-min-mmd",
            Mode::ActiveMaxMmd => "active-max-mmd",
            Mode::ActiveMinMmd => "active-min-mmd",
        }
    }

    pub fn learning_type(&self) -> &'static str {
        match self {
            Mode::Scratch | Mode::PassiveMinMmd => "Passive",
            Mode::ActiveMaxMmd | Mode::ActiveMinMmd => "Active",
        }
    }

    pub fn transfer_label(&self) -> &'static str {
        match self {
            Mode::Scratch => "Scratch Training",
            Mode::PassiveMinMmd | Mode::ActiveMinMmd => "min MMD",
            Mode::ActiveMaxMmd => "max MMD",
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self, Mode::ActiveMaxMmd | Mode::ActiveMinMmd)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = AdaptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "scratch" => Mode::Scratch,
            "passive-min-mmd" | "passive-minMMD" => Mode::PassiveMinMmd,
            "active-max-mmd" | "active-maxMMD" => Mode::ActiveMaxMmd,
            "active-min-mmd" | "active-minMMD" | "neuroadda" => Mode::ActiveMinMmd,
            other => return Err(AdaptError::UnknownMode(other.to_string())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub mode: Mode,
    /// Sampler of the active modes; passive modes always sample at random.
    pub sampler: SamplerKind,
    pub annotations: usize,
    pub training_steps: usize,
    pub iterations: usize,
    /// Architecture of scratch models; transfer modes inherit the source's.
    pub model: ModelConfig,
    /// Optimizer settings; `steps`, `seed` and `convergence` are overridden per iteration.
    pub train: TrainConfig,
    pub uncertainty: UncertaintyConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            mode: Mode::ActiveMinMmd,
            sampler: SamplerKind::MedianUncertainty,
            annotations: 4,
            training_steps: 10_000,
            iterations: 4,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn effective_sampler(&self) -> SamplerKind {
        if self.mode.is_active() {
            self.sampler
        } else {
            SamplerKind::Random
        }
    }
}

/// A pretrained candidate model and the domain it was trained on.
#[derive(Clone, Debug)]
pub struct SourceModel {
    pub name: String,
    pub model: SegModel,
}

/// Squared MMD from each source to the target, in the source's own
/// embedding: `mmd2(F_c(source_c), F_c(target))`. Only images in the target's
/// unlabeled set are embedded.
pub fn target_distances(
    target: &DomainPool,
    sources: &[SourceModel],
    source_pools: &[&DomainPool],
    cfg: &MatrixConfig,
) -> Result<Vec<(String, f64)>, AdaptError> {
    if sources.is_empty() {
        return Err(AdaptError::NoCandidates);
    }
    if sources.len() != source_pools.len() {
        return Err(AdaptError::InvalidGrid(
            "one source pool per source model is required".into(),
        ));
    }
    let unlabeled: Vec<usize> = target.unlabeled_ids().iter().copied().collect();
    let picks = subsample_indices(unlabeled.len(), cfg.sample_cap, derive_seed(cfg.seed, u64::MAX));
    let target_ids: Vec<usize> = picks.iter().map(|&i| unlabeled[i]).collect();
    sources
        .iter()
        .zip(source_pools)
        .enumerate()
        .map(|(c, (s, pool))| {
            let own = subsample_indices(pool.len(), cfg.sample_cap, derive_seed(cfg.seed, c as u64));
            let x = embed_pool(&s.model, pool, &own)?;
            let y = embed_pool(&s.model, target, &target_ids)?;
            Ok((s.name.clone(), mmd2(&x, &y, &cfg.kernel, cfg.estimator)?.value))
        })
        .collect()
}

/// Distances to `target` read from a precomputed matrix (row = source).
pub fn distances_from_matrix(
    matrix: &DistanceMatrix,
    target: &str,
    candidates: &[String],
) -> Result<Vec<(String, f64)>, AdaptError> {
    if candidates.is_empty() {
        return Err(AdaptError::NoCandidates);
    }
    candidates
        .iter()
        .map(|c| Ok((c.clone(), matrix.get(c, target)?)))
        .collect()
}

/// Source name for `mode`: none for scratch, else the first candidate with
/// the smallest (or largest) distance.
pub fn choose_source(mode: Mode, distances: &[(String, f64)]) -> Result<Option<(String, f64)>, AdaptError> {
    if mode == Mode::Scratch {
        return Ok(None);
    }
    let (first, rest) = distances.split_first().ok_or(AdaptError::NoCandidates)?;
    let mut best = first;
    for d in rest {
        let better = if mode == Mode::ActiveMaxMmd {
            d.1 > best.1
        } else {
            d.1 < best.1
        };
        if better {
            best = d;
        }
    }
    Ok(Some(best.clone()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Pool indices annotated in this iteration, in pick order.
    pub annotated: Vec<usize>,
    pub image_ids: Vec<String>,
    pub labeled_total: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub target: String,
    pub mode: Mode,
    pub sampler: SamplerKind,
    pub source: Option<String>,
    pub source_distance: Option<f64>,
    pub seed: u64,
    pub plan: BudgetPlan,
    pub initial_hash: String,
    pub final_hash: String,
    pub iterations: Vec<IterationLog>,
    pub annotations_used: usize,
    pub steps_used: usize,
    pub eval: Option<VIResult>,
}

impl RunRecord {
    pub fn transfer_domain(&self) -> String {
        self.source.clone().unwrap_or_else(|| "scratch".into())
    }

    /// Flat result row; `None` when the run was not evaluated.
    pub fn to_result(&self) -> Option<RunResult> {
        let vi = self.eval.as_ref()?;
        Some(RunResult {
            target: self.target.clone(),
            method: self.mode.as_str().to_string(),
            transfer_domain: self.transfer_domain(),
            sample_size: self.plan.annotations,
            seed: self.seed,
            vi_split: vi.vi_split,
            vi_merge: vi.vi_merge,
            vi_total: vi.vi_total,
        })
    }
}

/// One adaptation run in `cfg.mode`. `target` supplies the images to annotate
/// (its ground truth is the annotation oracle) and starts with L = ∅ whatever
/// its incoming state; `test`, when given, is scored at the end.
pub fn run_adaptation(
    target: &DomainPool,
    test: Option<&DomainPool>,
    sources: &[SourceModel],
    distances: &[(String, f64)],
    cfg: &AdaptConfig,
) -> Result<(SegModel, RunRecord), AdaptError> {
    let plan = plan_budget(cfg.annotations, cfg.training_steps, cfg.iterations)?;
    let labelable = target.samples().iter().filter(|s| s.labels.is_some()).count();
    if labelable < plan.annotations {
        return Err(AdaptError::PoolExhausted {
            requested: plan.annotations,
            available: labelable,
        });
    }
    let source = choose_source(cfg.mode, distances)?;
    let mut model = match &source {
        None => SegModel::init(&cfg.model, derive_seed(cfg.seed, 0))?,
        Some((name, _)) => sources
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| AdaptError::UnknownSource(name.clone()))?
            .model
            .clone(),
    };
    model.reset_optimizer();
    let initial_hash = model.param_hash();
    let sampler = cfg.effective_sampler();
    let mut pool = target.clone();
    pool.reset_unlabeled();
    let mut log = Vec::with_capacity(plan.iterations);
    for t in 0..plan.iterations {
        let k = plan.annotations_per_iteration[t];
        let selection = sample(
            sampler,
            &model,
            &pool,
            k,
            &cfg.uncertainty,
            derive_seed(cfg.seed, 1000 + t as u64),
        )?;
        pool.annotate(&selection.indices)?;
        let labeled = pool.labeled_samples();
        let train = TrainConfig {
            steps: plan.steps_per_iteration[t],
            seed: derive_seed(cfg.seed, 2000 + t as u64),
            convergence: None,
            ..cfg.train.clone()
        };
        let report = train_steps(&mut model, &labeled, &train, train.steps)?;
        log.push(IterationLog {
            iteration: t,
            image_ids: selection
                .indices
                .iter()
                .map(|&i| target.samples()[i].id.clone())
                .collect(),
            annotated: selection.indices,
            labeled_total: labeled.len(),
            steps: report.steps,
            final_loss: report.final_loss(),
            warning: selection.warning,
        });
    }
    let eval = match test {
        Some(t) => Some(evaluate_model(&model, t, &cfg.eval)?.mean),
        None => None,
    };
    let record = RunRecord {
        target: target.name().to_string(),
        mode: cfg.mode,
        sampler,
        source: source.as_ref().map(|s| s.0.clone()),
        source_distance: source.map(|s| s.1),
        seed: cfg.seed,
        annotations_used: log.iter().map(|l| l.annotated.len()).sum(),
        steps_used: log.iter().map(|l| l.steps).sum(),
        plan,
        initial_hash,
        final_hash: model.param_hash(),
        iterations: log,
        eval,
    };
    Ok((model, record))
}

/// The full method: min-MMD source, active sampling with `cfg.sampler`.
pub fn run_neuroadda(
    target: &DomainPool,
    test: Option<&DomainPool>,
    sources: &[SourceModel],
    distances: &[(String, f64)],
    cfg: &AdaptConfig,
) -> Result<(SegModel, RunRecord), AdaptError> {
    let cfg = AdaptConfig {
        mode: Mode::ActiveMinMmd,
        ..cfg.clone()
    };
    run_adaptation(target, test, sources, distances, &cfg)
}

/// A control configuration under the same budget accounting.
pub fn run_baseline(
    target: &DomainPool,
    test: Option<&DomainPool>,
    sources: &[SourceModel],
    distances: &[(String, f64)],
    mode: Mode,
    cfg: &AdaptConfig,
) -> Result<(SegModel, RunRecord), AdaptError> {
    let cfg = AdaptConfig { mode, ..cfg.clone() };
    run_adaptation(target, test, sources, distances, &cfg)
}

/// A target of the experiment grid: the pool to annotate, the held-out pool
/// to score, and the distance from each candidate source.
#[derive(Clone, Debug)]
pub struct GridTarget {
    pub pool: DomainPool,
    pub test: DomainPool,
    pub distances: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub modes: Vec<Mode>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Shared settings; `mode`, `annotations` and `seed` vary per cell.
    pub base: AdaptConfig,
}

/// One evaluated run per (target, mode, sample size, seed), in that nesting
/// order. Cells run in parallel. A source never serves as its own target.
pub fn run_experiment_grid(
    targets: &[GridTarget],
    sources: &[SourceModel],
    grid: &GridConfig,
) -> Result<Vec<RunRecord>, AdaptError> {
    if grid.sample_sizes.is_empty() || grid.sample_sizes.contains(&0) {
        return Err(AdaptError::InvalidGrid("sample sizes must be positive".into()));
    }
    if grid.seeds.is_empty() {
        return Err(AdaptError::InvalidGrid("at least one seed is required".into()));
    }
    if grid.modes.is_empty() {
        return Err(AdaptError::InvalidGrid("at least one mode is required".into()));
    }
    let mut cells = Vec::new();
    for (ti, t) in targets.iter().enumerate() {
        for &mode in &grid.modes {
            for &a in &grid.sample_sizes {
                for &seed in &grid.seeds {
                    cells.push((ti, t, mode, a, seed));
                }
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(ti, t, mode, a, seed)| {
            let name = t.pool.name();
            let distances: Vec<(String, f64)> = t.distances.iter().filter(|d| d.0 != name).cloned().collect();
            let cfg = AdaptConfig {
                mode,
                annotations: a,
                seed: derive_seed(seed, ti as u64),
                ..grid.base.clone()
            };
            let (_, mut record) = run_adaptation(&t.pool, Some(&t.test), sources, &distances, &cfg)?;
            record.seed = seed;
            Ok(record)
        })
        .collect()
}

/// Table of mean±std vi_total with one row per (target, mode) and one column
/// per sample size. The smallest mean of each (target, sample size) column is
/// suffixed with `*`; ties are all flagged.
pub fn results_table_csv(records: &[RunRecord]) -> String {
    let mut cells: BTreeMap<(String, Mode, usize), Vec<(u64, f64)>> = BTreeMap::new();
    let mut sources: BTreeMap<(String, Mode), String> = BTreeMap::new();
    let mut targets: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for r in records {
        let Some(vi) = &r.eval else { continue };
        if !targets.contains(&r.target) {
            targets.push(r.target.clone());
        }
        if !sizes.contains(&r.plan.annotations) {
            sizes.push(r.plan.annotations);
        }
        cells
            .entry((r.target.clone(), r.mode, r.plan.annotations))
            .or_default()
            .push((r.seed, vi.vi_total));
        let src = sources.entry((r.target.clone(), r.mode)).or_default();
        let name = r.transfer_domain();
        if !src.split('|').any(|s| s == name) {
            if !src.is_empty() {
                src.push('|');
            }
            src.push_str(&name);
        }
    }
    sizes.sort_unstable();
    let stats: BTreeMap<_, (f64, f64)> = cells
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|x| x.0);
            let vals: Vec<f64> = v.iter().map(|x| x.1).collect();
            (k, (mean(&vals), sample_std(&vals)))
        })
        .collect();
    let mut out = String::from("target,learning_type,transfer_domain,source");
    for s in &sizes {
        out.push_str(&format!(",S{s}"));
    }
    out.push('\n');
    for t in &targets {
        let modes: Vec<Mode> = Mode::ALL
            .into_iter()
            .filter(|m| sources.contains_key(&(t.clone(), *m)))
            .collect();
        let best: Vec<Option<f64>> = sizes
            .iter()
            .map(|&s| {
                modes
                    .iter()
                    .filter_map(|m| stats.get(&(t.clone(), *m, s)).map(|x| x.0))
                    .min_by(f64::total_cmp)
            })
            .collect();
        for m in &modes {
            out.push_str(&format!(
                "{t},{},{},{}",
                m.learning_type(),
                m.transfer_label(),
                sources[&(t.clone(), *m)]
            ));
            for (si, s) in sizes.iter().enumerate() {
                out.push(',');
                if let Some((mu, sd)) = stats.get(&(t.clone(), *m, *s)) {
                    out.push_str(&format!("{mu:.3}±{sd:.3}"));
                    if best[si] == Some(*mu) {
                        out.push('*');
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}
