use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use emtransfer::adapt::{
    distances_from_matrix, results_table_csv, run_experiment_grid, target_distances, AdaptConfig, GridConfig,
    GridTarget, Mode, RunRecord, SourceModel,
};
use emtransfer::data::{
    derive_seed, read_domain, read_domain_names, save_image, write_domain, write_embeddings, write_run_manifest,
    DomainPool, RunResult, TEST_SPLIT, TRAIN_SPLIT,
};
use emtransfer::mmd::{
    domain_distance_matrix, select_farthest_source, select_optimal_source, Bandwidth, DistanceMatrix, Estimator,
    KernelConfig, MatrixConfig,
};
use emtransfer::model::{load_checkpoint, ModelConfig, SegModel, TrainConfig};
use emtransfer::pretrain::{pretrain_all, PretrainJob};
use emtransfer::sampling::SamplerKind;
use emtransfer::segeval::{efficacy_table_csv, evaluate_model, sampler_efficacy, EfficacyRow, EvalConfig};
use emtransfer::stats::{
    agglomerative_cluster, cut_at_k, fowlkes_mallows, mann_whitney_u, permutation_test_fm, symmetrize, Alternative,
    Clustering, PermutationMode,
};
use emtransfer::synth::{generate_domain, make_benchmark_with, BenchmarkConfig, DomainSpec};
use emtransfer::uncertainty::{entropy_heatmap, image_uncertainty, rank_pool_by_uncertainty, UncertaintyConfig};

use crate::error::{CliError, CliResult};
use crate::manifest::CommandManifest;
use crate::{
    AdaptArgs, AuditArgs, ClusterArgs, EmbedArgs, EvaluateArgs, GridArgs, MmdMatrixArgs, OdsArgs, PretrainArgs,
    SynthGenArgs,
};

const TRAIN_FRACTION: f64 = 0.8;

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::config("ConfigNotFound", format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::config("InvalidConfig", format!("{}: {e}", path.display())))
}

fn require_dir(path: &Path) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::config(
            "PathNotFound",
            format!("{} is not a directory", path.display()),
        ))
    }
}

fn checkpoint_exists(prefix: &Path) -> bool {
    let mut json = prefix.as_os_str().to_owned();
    json.push(".json");
    Path::new(&json).is_file()
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn domains_or_all(data: &Path, given: &[String]) -> CliResult<Vec<String>> {
    if given.is_empty() {
        Ok(read_domain_names(data)?)
    } else {
        Ok(given.to_vec())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SynthGenConfig {
    benchmark: Option<BenchmarkConfig>,
    domains: Vec<DomainSpec>,
    samples_per_domain: usize,
}

pub fn synth_gen(a: &SynthGenArgs) -> CliResult {
    let cfg: SynthGenConfig = read_config(&a.config)?;
    let (pools, families) = match &cfg.benchmark {
        Some(b) => {
            let bench = make_benchmark_with(b)?;
            let families: Vec<(String, usize)> = bench.names().into_iter().zip(bench.families).collect();
            (bench.domains, Some(families))
        }
        None => {
            if cfg.domains.is_empty() {
                return Err(CliError::config(
                    "InvalidConfig",
                    "config needs `benchmark` or `domains`",
                ));
            }
            let pools = cfg
                .domains
                .iter()
                .map(|s| generate_domain(s, cfg.samples_per_domain))
                .collect::<Result<Vec<_>, _>>()?;
            (pools, None)
        }
    };
    fs::create_dir_all(&a.out)?;
    let mut rows = String::from("domain,split,image_id,stripe,black_tile,contrast\n");
    for p in &pools {
        let (train, test) = p.split_at_fraction(TRAIN_FRACTION);
        for (split, part) in [(TRAIN_SPLIT, &train), (TEST_SPLIT, &test)] {
            write_domain(&a.out, part, split)?;
            for s in part.samples() {
                let f = s.artifacts;
                rows.push_str(&format!(
                    "{},{split},{},{},{},{}\n",
                    p.name(),
                    s.id,
                    f.stripe,
                    f.black_tile,
                    f.contrast
                ));
            }
        }
    }
    let artifacts = a.out.join("artifacts.csv");
    fs::write(&artifacts, rows)?;
    let mut m = CommandManifest::new("synth-gen", &cfg, vec![])?;
    m.input(&a.config)?.output(&artifacts);
    if let Some(f) = families {
        let path = a.out.join("families.csv");
        let mut text = String::from("domain,family\n");
        for (d, fam) in f {
            text.push_str(&format!("{d},{fam}\n"));
        }
        fs::write(&path, text)?;
        m.output(&path);
    }
    for p in &pools {
        m.output(&a.out.join(p.name()));
    }
    m.write(&a.out.join("synth-gen.manifest.json"))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct PretrainConfig {
    model: ModelConfig,
    train: TrainConfig,
    eval: EvalConfig,
}

pub fn pretrain(a: &PretrainArgs) -> CliResult {
    require_dir(&a.data)?;
    let mut cfg: PretrainConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => PretrainConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let domains = domains_or_all(&a.data, &a.domains)?;
    let pools = domains
        .iter()
        .map(|d| read_domain(&a.data, d, TRAIN_SPLIT))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<PretrainJob> = domains
        .iter()
        .enumerate()
        .map(|(i, d)| PretrainJob {
            domain: d.clone(),
            model: cfg.model.clone(),
            train: TrainConfig {
                seed: derive_seed(cfg.train.seed, i as u64),
                ..cfg.train.clone()
            },
            eval: cfg.eval,
            output: Some(a.out.join(d)),
        })
        .collect();
    let outcomes = pretrain_all(&pools, &jobs)?;
    let summary: Vec<serde_json::Value> = outcomes.iter().map(|o| o.summary()).collect();
    let summary_path = a.out.join("pretrain.json");
    write_json(&summary_path, &summary)?;
    for o in &outcomes {
        log::info!("{}: loss {:.4} held-out VI {:.4}", o.domain, o.final_loss, o.heldout_vi);
    }
    let mut m = CommandManifest::new(
        "pretrain",
        serde_json::json!({ "config": cfg, "jobs": jobs }),
        vec![cfg.train.seed],
    )?;
    for d in &domains {
        m.input(&a.data.join(d))?;
        m.output(&a.out.join(d));
    }
    m.output(&summary_path);
    m.write(&a.out.join("pretrain.manifest.json"))
}

pub fn embed(a: &EmbedArgs) -> CliResult {
    let pool = read_domain(&a.data, &a.domain, &a.split)?;
    let (model, _) = load_checkpoint(&a.model)?;
    let rows = pool
        .samples()
        .par_iter()
        .map(|s| Ok((s.id.clone(), model.embed(&s.image)?)))
        .collect::<Result<Vec<_>, emtransfer::model::ModelError>>()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let meta = write_embeddings(&a.out, &rows, &model.param_hash())?;
    let mut m = CommandManifest::new(
        "embed",
        serde_json::json!({ "domain": a.domain, "split": a.split, "dim": meta.dim, "count": meta.count }),
        vec![],
    )?;
    m.input(&a.data.join(&a.domain))?.output(&a.out);
    let mut path = a.out.as_os_str().to_owned();
    path.push(".manifest.json");
    m.write(Path::new(&path))
}

fn parse_bandwidth(s: &str) -> CliResult<Bandwidth> {
    if s == "median" {
        return Ok(Bandwidth::MedianHeuristic);
    }
    s.parse::<f64>().map(Bandwidth::Fixed).map_err(|_| {
        CliError::config(
            "InvalidBandwidth",
            format!("bandwidth `{s}` is neither `median` nor a number"),
        )
    })
}

fn parse_estimator(s: &str) -> CliResult<Estimator> {
    match s {
        "biased" => Ok(Estimator::Biased),
        "unbiased" => Ok(Estimator::Unbiased),
        other => Err(CliError::config(
            "InvalidConfig",
            format!("unknown estimator `{other}`"),
        )),
    }
}

pub fn mmd_matrix(a: &MmdMatrixArgs) -> CliResult {
    require_dir(&a.data)?;
    require_dir(&a.models)?;
    let cfg = MatrixConfig {
        kernel: KernelConfig {
            bandwidth: parse_bandwidth(&a.bandwidth)?,
        },
        estimator: parse_estimator(&a.estimator)?,
        sample_cap: a.sample_cap,
        seed: a.seed,
    };
    let domains: Vec<String> = domains_or_all(&a.data, &a.domains)?
        .into_iter()
        .filter(|d| !a.domains.is_empty() || checkpoint_exists(&a.models.join(d)))
        .collect();
    let pools = domains
        .iter()
        .map(|d| read_domain(&a.data, d, &a.split))
        .collect::<Result<Vec<_>, _>>()?;
    let models = domains
        .iter()
        .map(|d| Ok(load_checkpoint(a.models.join(d))?.0))
        .collect::<CliResult<Vec<SegModel>>>()?;
    let refs: Vec<&SegModel> = models.iter().collect();
    let matrix = domain_distance_matrix(&pools, &refs, &cfg)?;
    matrix.save(&a.out)?;
    let mut m = CommandManifest::new(
        "mmd-matrix",
        serde_json::json!({ "matrix": cfg, "domains": domains, "split": a.split }),
        vec![a.seed],
    )?;
    for d in &domains {
        m.input(&a.data.join(d))?;
    }
    m.input(&a.models)?.output(&a.out);
    m.write(&a.out.with_extension("manifest.json"))
}

pub fn ods(a: &OdsArgs) -> CliResult {
    let matrix = DistanceMatrix::load(&a.matrix)?;
    let candidates: Vec<String> = if a.candidates.is_empty() {
        matrix.names.iter().filter(|n| **n != a.target).cloned().collect()
    } else {
        a.candidates.clone()
    };
    let pick = if a.farthest {
        select_farthest_source(&matrix, &a.target, &candidates)?
    } else {
        select_optimal_source(&matrix, &a.target, &candidates)?
    };
    println!("{pick}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct GroupSummary {
    n: usize,
    mean_u: f64,
}

pub fn audit_uncertainty(a: &AuditArgs) -> CliResult {
    let mut pool = read_domain(&a.data, &a.domain, &a.split)?;
    pool.reset_unlabeled();
    let (model, _) = load_checkpoint(&a.model)?;
    let ucfg = UncertaintyConfig {
        k_passes: a.k_passes,
        ..UncertaintyConfig::default()
    };
    let ranked = rank_pool_by_uncertainty(&model, &pool, &ucfg, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let mut csv = String::from("rank,index,image_id,u,stripe,black_tile,contrast\n");
    let (mut striped, mut clean) = (Vec::new(), Vec::new());
    for (rank, s) in ranked.iter().enumerate() {
        let f = pool.samples()[s.index].artifacts;
        csv.push_str(&format!(
            "{rank},{},{},{},{},{},{}\n",
            s.index, s.image_id, s.u, f.stripe, f.black_tile, f.contrast
        ));
        if f.stripe {
            striped.push(s.u);
        } else {
            clean.push(s.u);
        }
    }
    let scores_path = a.out.join("uncertainty.csv");
    fs::write(&scores_path, csv)?;
    let group = |v: &[f64]| GroupSummary {
        n: v.len(),
        mean_u: if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        },
    };
    let test = if striped.is_empty() || clean.is_empty() {
        None
    } else {
        Some(mann_whitney_u(&striped, &clean, Alternative::AGreater)?)
    };
    let summary_path = a.out.join("audit.json");
    write_json(
        &summary_path,
        &serde_json::json!({
            "domain": a.domain,
            "model_hash": model.param_hash(),
            "uncertainty": ucfg,
            "seed": a.seed,
            "striped": group(&striped),
            "clean": group(&clean),
            "stripe_greater": test,
        }),
    )?;
    let mut m = CommandManifest::new(
        "audit-uncertainty",
        serde_json::json!({ "uncertainty": ucfg, "split": a.split }),
        vec![a.seed],
    )?;
    m.input(&a.data.join(&a.domain))?;
    m.output(&scores_path).output(&summary_path);
    for s in ranked.iter().take(a.heatmaps) {
        let img = &pool.samples()[s.index].image;
        let u = image_uncertainty(&model, img, &ucfg, a.seed)?;
        let (heat, _) = entropy_heatmap(&u.entropy, img.width(), img.height(), model.config().num_classes)?;
        let path = a.out.join(format!("{}.entropy.pgm", s.image_id));
        save_image(&heat, &path)?;
        m.output(&path);
    }
    m.write(&a.out.join("audit-uncertainty.manifest.json"))
}

/// Target pool (train split, all images unannotated) and test split.
fn load_target(data: &Path, target: &str) -> CliResult<(DomainPool, DomainPool)> {
    let mut pool = read_domain(data, target, TRAIN_SPLIT)?;
    pool.reset_unlabeled();
    let test = read_domain(data, target, TEST_SPLIT)?;
    Ok((pool, test))
}

struct Sources {
    models: Vec<SourceModel>,
    pools: Vec<DomainPool>,
}

/// Every domain under `data` with a checkpoint under `models`.
fn load_sources(data: &Path, models: &Path) -> CliResult<Sources> {
    let mut out = Sources {
        models: Vec::new(),
        pools: Vec::new(),
    };
    for d in read_domain_names(data)? {
        let prefix = models.join(&d);
        if !checkpoint_exists(&prefix) {
            continue;
        }
        out.models.push(SourceModel {
            name: d.clone(),
            model: load_checkpoint(&prefix)?.0,
        });
        out.pools.push(read_domain(data, &d, TRAIN_SPLIT)?);
    }
    if out.models.is_empty() {
        return Err(CliError::config(
            "EmptyCandidates",
            format!("no checkpoints under {}", models.display()),
        ));
    }
    Ok(out)
}

fn distances_for(
    target: &str,
    pool: &DomainPool,
    sources: &Sources,
    matrix: Option<&DistanceMatrix>,
    mcfg: &MatrixConfig,
) -> CliResult<Vec<(String, f64)>> {
    let keep: Vec<usize> = (0..sources.models.len())
        .filter(|&i| sources.models[i].name != target)
        .collect();
    if let Some(m) = matrix {
        let names: Vec<String> = keep.iter().map(|&i| sources.models[i].name.clone()).collect();
        return Ok(distances_from_matrix(m, target, &names)?);
    }
    let models: Vec<SourceModel> = keep.iter().map(|&i| sources.models[i].clone()).collect();
    let pools: Vec<&DomainPool> = keep.iter().map(|&i| &sources.pools[i]).collect();
    Ok(target_distances(pool, &models, &pools, mcfg)?)
}

fn write_results(out: &Path, config: &impl Serialize, records: &[RunRecord]) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let records_path = out.join("records.json");
    write_json(&records_path, &records)?;
    let results: Vec<RunResult> = records.iter().filter_map(|r| r.to_result()).collect();
    let results_path = out.join("results.json");
    write_run_manifest(config, &results, &results_path)?;
    let table_path = out.join("table.csv");
    fs::write(&table_path, results_table_csv(records))?;
    Ok(vec![
        records_path,
        results_path.clone(),
        results_path.with_extension("csv"),
        table_path,
    ])
}

pub fn adapt(a: &AdaptArgs) -> CliResult {
    require_dir(&a.data)?;
    require_dir(&a.models)?;
    let mut base: AdaptConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => AdaptConfig::default(),
    };
    if let Some(m) = &a.mode {
        base.mode = m.parse::<Mode>()?;
    }
    if let Some(s) = &a.sampler {
        base.sampler = s.parse::<SamplerKind>()?;
    }
    if let Some(v) = a.annotations {
        base.annotations = v;
    }
    if let Some(v) = a.steps {
        base.training_steps = v;
    }
    if let Some(v) = a.iterations {
        base.iterations = v;
    }
    emtransfer::adapt::plan_budget(base.annotations, base.training_steps, base.iterations)?;
    let sources = load_sources(&a.data, &a.models)?;
    let (pool, test) = load_target(&a.data, &a.target)?;
    let matrix = a.matrix.as_ref().map(DistanceMatrix::load).transpose()?;
    let distances = distances_for(&a.target, &pool, &sources, matrix.as_ref(), &MatrixConfig::default())?;
    if base.mode == Mode::Scratch {
        base.model = sources.models[0].model.config().clone();
    }
    let grid = GridConfig {
        modes: vec![base.mode],
        sample_sizes: vec![base.annotations],
        seeds: a.seeds.clone(),
        base,
    };
    let targets = vec![GridTarget { pool, test, distances }];
    let records = run_experiment_grid(&targets, &sources.models, &grid)?;
    let config = serde_json::json!({ "target": a.target, "grid": grid, "distances": targets[0].distances });
    let outputs = write_results(&a.out, &config, &records)?;
    let mut m = CommandManifest::new("adapt", &config, a.seeds.clone())?;
    m.input(&a.data.join(&a.target))?.input(&a.models)?;
    if let Some(p) = &a.matrix {
        m.input(p)?;
    }
    for o in &outputs {
        m.output(o);
    }
    m.write(&a.out.join("adapt.manifest.json"))
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult {
    let pool = read_domain(&a.data, &a.domain, &a.split)?;
    let (model, _) = load_checkpoint(&a.model)?;
    let mut cfg = EvalConfig::default();
    if let Some(t) = a.threshold {
        cfg.watershed.threshold = t;
    }
    if let Some(s) = a.min_seed_area {
        cfg.watershed.min_seed_area = s;
    }
    let report = evaluate_model(&model, &pool, &cfg)?;
    write_json(&a.out, &report)?;
    println!("{}", report.mean.vi_total);
    let mut m = CommandManifest::new("evaluate", serde_json::json!({ "eval": cfg, "split": a.split }), vec![])?;
    m.input(&a.data.join(&a.domain))?.output(&a.out);
    m.write(&a.out.with_extension("manifest.json"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub models_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Default: every domain with data.
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub matrix: Option<PathBuf>,
    #[serde(default)]
    pub kernel: MatrixConfig,
    #[serde(default = "all_modes")]
    pub modes: Vec<Mode>,
    /// Extra runs of the active min-MMD mode with each of these samplers,
    /// summarized as a sampler-efficacy table.
    #[serde(default)]
    pub samplers: Vec<SamplerKind>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub adapt: AdaptConfig,
}

fn all_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

impl ExperimentConfig {
    fn validate(&self) -> CliResult {
        require_dir(&self.data_dir)?;
        require_dir(&self.models_dir)?;
        if let Some(m) = &self.matrix {
            if !m.is_file() {
                return Err(CliError::config(
                    "PathNotFound",
                    format!("{} does not exist", m.display()),
                ));
            }
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(CliError::config("InvalidGrid", "sample sizes must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("InvalidGrid", "at least one seed is required"));
        }
        if self.modes.is_empty() && self.samplers.is_empty() {
            return Err(CliError::config("InvalidGrid", "nothing to run"));
        }
        for &a in &self.sample_sizes {
            emtransfer::adapt::plan_budget(a, self.adapt.training_steps, self.adapt.iterations)?;
        }
        Ok(())
    }
}

pub fn grid(a: &GridArgs) -> CliResult {
    let mut cfg: ExperimentConfig = read_config(&a.config)?;
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    let sources = load_sources(&cfg.data_dir, &cfg.models_dir)?;
    let matrix = cfg.matrix.as_ref().map(DistanceMatrix::load).transpose()?;
    let names = if cfg.targets.is_empty() {
        read_domain_names(&cfg.data_dir)?
    } else {
        cfg.targets.clone()
    };
    let mut targets = Vec::new();
    for t in &names {
        let (pool, test) = load_target(&cfg.data_dir, t)?;
        let distances = distances_for(t, &pool, &sources, matrix.as_ref(), &cfg.kernel)?;
        targets.push(GridTarget { pool, test, distances });
    }
    let mut base = cfg.adapt.clone();
    base.model = sources.models[0].model.config().clone();
    let mut records = Vec::new();
    if !cfg.modes.is_empty() {
        let g = GridConfig {
            modes: cfg.modes.clone(),
            sample_sizes: cfg.sample_sizes.clone(),
            seeds: cfg.seeds.clone(),
            base: base.clone(),
        };
        records = run_experiment_grid(&targets, &sources.models, &g)?;
    }
    let mut outputs = if records.is_empty() {
        Vec::new()
    } else {
        write_results(&cfg.out_dir, &cfg, &records)?
    };
    if !cfg.samplers.is_empty() {
        let mut rows = Vec::new();
        let mut sampler_records = BTreeMap::new();
        for &s in &cfg.samplers {
            let g = GridConfig {
                modes: vec![Mode::ActiveMinMmd],
                sample_sizes: cfg.sample_sizes.clone(),
                seeds: cfg.seeds.clone(),
                base: AdaptConfig {
                    sampler: s,
                    ..base.clone()
                },
            };
            let recs = run_experiment_grid(&targets, &sources.models, &g)?;
            let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
            for r in &recs {
                if let Some(vi) = &r.eval {
                    cells
                        .entry((r.target.clone(), r.plan.annotations))
                        .or_default()
                        .push(vi.vi_total);
                }
            }
            for ((target, sample_size), v) in cells {
                rows.push(EfficacyRow {
                    target,
                    sample_size,
                    sampler: s.as_str().to_string(),
                    mean_vi: v.iter().sum::<f64>() / v.len() as f64,
                });
            }
            sampler_records.insert(s.as_str(), recs);
        }
        let report = sampler_efficacy(&rows)?;
        let path = cfg.out_dir.join("efficacy.csv");
        fs::create_dir_all(&cfg.out_dir)?;
        fs::write(&path, efficacy_table_csv(&report))?;
        let rec_path = cfg.out_dir.join("sampler_records.json");
        write_json(&rec_path, &sampler_records)?;
        outputs.push(path);
        outputs.push(rec_path);
    }
    let mut m = CommandManifest::new("grid", &cfg, cfg.seeds.clone())?;
    m.input(&a.config)?;
    for t in &names {
        m.input(&cfg.data_dir.join(t))?;
    }
    m.input(&cfg.models_dir)?;
    if let Some(p) = &cfg.matrix {
        m.input(p)?;
    }
    for o in &outputs {
        m.output(o);
    }
    m.write(&cfg.out_dir.join("grid.manifest.json"))
}

fn read_reference(path: &Path, items: &[String]) -> CliResult<Clustering> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::config("ConfigNotFound", format!("{}: {e}", path.display())))?;
    let mut families = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let (d, f) = line
            .split_once(',')
            .ok_or_else(|| CliError::config("InvalidConfig", format!("bad reference row `{line}`")))?;
        families.insert(d.trim().to_string(), f.trim().to_string());
    }
    let labels = items
        .iter()
        .map(|i| {
            families
                .get(i)
                .cloned()
                .ok_or_else(|| CliError::config("ItemMismatch", format!("{i} missing from reference")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Clustering::from_labels(items.to_vec(), &labels)?)
}

pub fn cluster(a: &ClusterArgs) -> CliResult {
    let matrix = DistanceMatrix::load(&a.matrix)?;
    let sym = symmetrize(&matrix)?;
    let dendrogram = agglomerative_cluster(&sym)?;
    let clusters = cut_at_k(&dendrogram, a.k)?;
    fs::create_dir_all(&a.out)?;
    let tree_path = a.out.join("dendrogram.txt");
    fs::write(&tree_path, dendrogram.render())?;
    let sym_path = a.out.join("symmetrized.csv");
    fs::write(&sym_path, sym.to_csv())?;
    let mode = match a.permutations.as_str() {
        "exact" => PermutationMode::Exact,
        n => PermutationMode::MonteCarlo {
            n_perm: n.parse().map_err(|_| {
                CliError::config("InvalidPermutations", format!("`{n}` is neither `exact` nor a count"))
            })?,
            seed: a.seed,
        },
    };
    let agreement = match &a.reference {
        Some(p) => {
            let reference = read_reference(p, &clusters.items)?;
            let fm = fowlkes_mallows(&reference, &clusters)?;
            let test = permutation_test_fm(&reference, &clusters, mode)?;
            println!("fm={fm} p={}", test.p_value);
            Some(serde_json::json!({ "fowlkes_mallows": fm, "permutation": test }))
        }
        None => None,
    };
    let result_path = a.out.join("cluster.json");
    write_json(
        &result_path,
        &serde_json::json!({ "k": a.k, "dendrogram": dendrogram, "clusters": clusters, "agreement": agreement }),
    )?;
    let mut m = CommandManifest::new(
        "cluster",
        serde_json::json!({ "k": a.k, "permutations": a.permutations }),
        vec![a.seed],
    )?;
    m.input(&a.matrix)?;
    if let Some(p) = &a.reference {
        m.input(p)?;
    }
    m.output(&tree_path).output(&sym_path).output(&result_path);
    m.write(&a.out.join("cluster.manifest.json"))
}
