use std::path::{Path, PathBuf};
use std::time::Instant;

use emofuse_core::audio::cache::FeatureCache;
use emofuse_core::audio::external::ExternalLld;
use emofuse_core::autograd::suite::run_suite;
use emofuse_core::io::{
    build_dataset, build_dataset_with_vocab, generate, load_manifest, single_input, FeatureSource, ManifestEntry,
    RunConfig, SynthConfig,
};
use emofuse_core::model::{checkpoint, Branch, BranchSet, Model, SampleInput};
use emofuse_core::text::EmbeddingTable;
use emofuse_core::train::{
    cross_validate, evaluate, fold_seed, loss_log_csv, make_folds, results_csv, run_ablation, AblationRow, Dataset,
    FoldSplit, LabelMap,
};
use emofuse_core::CLASSES;

use crate::output::{self, write_file};
use crate::{Command, Common, Failure};

type Outcome = Result<(), Failure>;

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(scale) = &common.scale {
        overrides.push(("scale".into(), scale.clone()));
    }
    if let Some(dir) = &common.output_dir {
        overrides.push(("output_dir".into(), dir.display().to_string()));
    }
    Ok(RunConfig::resolve(common.config.as_deref(), &overrides)?)
}

pub fn run(common: &Common, command: Command) -> Outcome {
    let mut cfg = resolve(common)?;
    match command {
        Command::Features => features(&cfg),
        Command::Train { regime, fold, epochs } => {
            if let Some(r) = regime {
                cfg.plan.regime = r;
            }
            if let Some(e) = epochs {
                cfg.plan.epochs = e;
            }
            cfg.validate()?;
            train(&cfg, fold)
        }
        Command::Evaluate { checkpoint, all } => evaluate_checkpoint(&cfg, &checkpoint, all),
        Command::Ablate {
            subsets,
            regime,
            fold,
            epochs,
        } => {
            if let Some(r) = regime {
                cfg.plan.regime = r;
            }
            if let Some(e) = epochs {
                cfg.plan.epochs = e;
            }
            let subsets = match subsets {
                Some(s) => parse_subsets(&s)?,
                None => BranchSet::all_subsets(),
            };
            // The dataset is built for the union of the requested branches.
            let union: Vec<Branch> = Branch::ALL
                .into_iter()
                .filter(|&b| subsets.iter().any(|s| s.contains(b)))
                .collect();
            cfg.model.branches = BranchSet::new(&union)?;
            cfg.validate()?;
            ablate(&cfg, &subsets, fold)
        }
        Command::Predict {
            checkpoint,
            audio,
            transcript,
            pos,
        } => predict(&cfg, &checkpoint, &audio, &transcript, pos.as_deref()),
        Command::Gradcheck { seeds, tolerance } => gradcheck(seeds, tolerance),
        Command::Synth {
            size,
            correlation,
            dir,
            embedding_dim,
        } => synth(&cfg, size, correlation, dir, embedding_dim),
    }
}

fn parse_subsets(s: &str) -> Result<Vec<BranchSet>, Failure> {
    let mut out: Vec<BranchSet> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let set: BranchSet = part.parse()?;
        if out.contains(&set) {
            return Err(Failure::Usage(format!("subset `{part}` listed twice")));
        }
        out.push(set);
    }
    if out.is_empty() {
        return Err(Failure::Usage("--subsets names no branch subset".into()));
    }
    Ok(out)
}

fn entries(cfg: &RunConfig) -> Result<Vec<ManifestEntry>, Failure> {
    let path = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| Failure::Usage("config key `manifest`: required for this command".into()))?;
    Ok(load_manifest(path, &LabelMap::default())?)
}

fn external(cfg: &RunConfig) -> Result<Option<ExternalLld>, Failure> {
    match &cfg.external_lld {
        Some(p) if cfg.model.branches.contains(Branch::Lld) => Ok(Some(ExternalLld::load(p, Some(cfg.model.lld_dim))?)),
        _ => Ok(None),
    }
}

fn cache(cfg: &RunConfig) -> Option<FeatureCache> {
    cfg.cache.then(|| FeatureCache::new(cfg.output_dir.join("cache")))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let entries = entries(cfg)?;
    let words = if cfg.model.branches.contains(Branch::Word) {
        let path = cfg
            .embeddings
            .as_deref()
            .ok_or_else(|| Failure::Usage("config key `embeddings`: required by the word branch".into()))?;
        Some(EmbeddingTable::load(path, cfg.model.word_dim)?)
    } else {
        None
    };
    let ext = external(cfg)?;
    let cache = cache(cfg);
    let src = FeatureSource {
        dsp: &cfg.dsp,
        lld: &cfg.lld,
        branches: cfg.model.branches,
        cache: cache.as_ref(),
        external: ext.as_ref(),
    };
    Ok(build_dataset(&entries, words.as_ref(), src)?)
}

fn folds_for(cfg: &RunConfig, data: &Dataset) -> Result<FoldSplit, Failure> {
    Ok(make_folds(data.len(), cfg.folds, Some(&data.labels()), cfg.plan.seed)?)
}

fn features(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    let data = load_dataset(cfg)?;
    let mut counts = [0usize; CLASSES.len()];
    for l in data.labels() {
        counts[l] += 1;
    }
    let segments: usize = data
        .examples
        .iter()
        .filter_map(|e| e.input.mfsc.as_ref())
        .map(|m| m.segments().shape()[0])
        .sum();
    println!("samples      {}", data.len());
    for (name, n) in CLASSES.iter().zip(counts) {
        println!("  {name:<10} {n}");
    }
    println!("branches     {}", cfg.model.branches);
    if cfg.model.branches.contains(Branch::Mfsc) {
        println!("mfsc maps    {segments} segments");
    }
    if let Some(l) = data.examples.first().and_then(|e| e.input.lld.as_ref()) {
        println!("lld dim      {}", l.len());
    }
    if let Some(w) = &data.words {
        println!("vocabulary   {}", w.len());
    }
    match cache(cfg) {
        Some(c) => println!("cache        {}", c.dir().display()),
        None => println!("cache        disabled"),
    }
    eprintln!("features ready in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn train(cfg: &RunConfig, fold: Option<usize>) -> Outcome {
    let data = load_dataset(cfg)?;
    let folds = folds_for(cfg, &data)?;
    if let Some(f) = fold {
        if f >= folds.k() {
            return Err(Failure::Usage(format!("--fold {f}: only {} folds", folds.k())));
        }
    }
    let start = Instant::now();
    let (summary, outcomes) = cross_validate(&data, &cfg.model, &cfg.plan, &folds, fold)?;
    let dir = cfg.output_dir.join("train");
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    for o in &outcomes {
        let ckpt = dir.join(format!("fold{}.ckpt", o.fold));
        checkpoint::save(&ckpt, &o.model, o.seed, o.lld_stats.as_ref(), Some(o.fold))?;
        write_file(
            &dir.join(format!("fold{}_loss.csv", o.fold)),
            loss_log_csv(&o.training.history),
        )?;
        eprintln!(
            "fold {}: {} epochs, initial loss {:.4}, train acc {:.3}, test WA {:.3}",
            o.fold,
            o.training.epochs_run,
            o.training.initial_loss,
            o.training.train_accuracy,
            o.report.weighted_accuracy
        );
    }
    let row = AblationRow {
        subset: cfg.model.branches,
        fusion_input: cfg.model.fusion_input(),
        summary,
    };
    write_file(&dir.join("results.csv"), results_csv(std::slice::from_ref(&row)))?;
    write_file(&dir.join("summary.json"), output::json(&row)?)?;
    print!("{}", output::summary_table(std::slice::from_ref(&row)));
    eprintln!(
        "{} regime, {} fold(s) in {:.1} s; artifacts in {}",
        cfg.plan.regime,
        outcomes.len(),
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Model, checkpoint::CheckpointMeta), Failure> {
    Ok(checkpoint::load(path)?)
}

fn eval_source<'a>(
    cfg: &'a RunConfig,
    model: &Model,
    cache: Option<&'a FeatureCache>,
    ext: Option<&'a ExternalLld>,
) -> FeatureSource<'a> {
    FeatureSource {
        dsp: &cfg.dsp,
        lld: &cfg.lld,
        branches: model.config.branches,
        cache,
        external: ext,
    }
}

fn evaluate_checkpoint(cfg: &RunConfig, path: &Path, all: bool) -> Outcome {
    let (model, meta) = load_checkpoint(path)?;
    let entries = entries(cfg)?;
    let cfg_for_ext = RunConfig {
        model: model.config.clone(),
        ..cfg.clone()
    };
    let ext = external(&cfg_for_ext)?;
    let cache = cache(cfg);
    let data = build_dataset_with_vocab(
        &entries,
        &model.vocab,
        eval_source(cfg, &model, cache.as_ref(), ext.as_ref()),
    )?;
    let indices: Vec<usize> = match (meta.fold, all) {
        (Some(f), false) => {
            if meta.seed != fold_seed(cfg.plan.seed, f, model.config.branches) {
                return Err(Failure::Usage(format!(
                    "{} was trained with a different seed; pass the training --seed or use --all",
                    path.display()
                )));
            }
            folds_for(cfg, &data)?.test(f).to_vec()
        }
        _ => (0..data.len()).collect(),
    };
    let inputs: Vec<SampleInput> = match &meta.lld_stats {
        Some(stats) => data.normalized(stats)?,
        None => data.examples.iter().map(|e| e.input.clone()).collect(),
    };
    let labels = data.labels();
    let x: Vec<_> = indices.iter().map(|&i| &inputs[i]).collect();
    let y: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    let report = evaluate(&model, &x, &y)?;
    let scope = match (meta.fold, all) {
        (Some(f), false) => format!("fold {f} test split"),
        _ => "all entries".into(),
    };
    println!("{} on {scope} ({} samples)", model.config.branches, y.len());
    print!("{}", output::report_table(&report));
    Ok(())
}

fn predict(cfg: &RunConfig, path: &Path, audio: &Path, transcript: &str, pos: Option<&str>) -> Outcome {
    let (model, meta) = load_checkpoint(path)?;
    if model.config.branches.contains(Branch::Lld) && cfg.external_lld.is_some() {
        return Err(Failure::Usage(
            "config key `external_lld`: predict extracts LLD vectors itself".into(),
        ));
    }
    let src = eval_source(cfg, &model, None, None);
    let mut input = single_input(audio, transcript, pos, &model.vocab, src)?;
    if let (Some(stats), Some(v)) = (&meta.lld_stats, &input.lld) {
        input.lld = Some(stats.apply(v)?);
    }
    let p = model.predict(&[&input])?.remove(0);
    println!("class {}", CLASSES[p.class]);
    for (name, prob) in CLASSES.iter().zip(&p.probs) {
        println!("  {name:<4} {prob:.4}");
    }
    Ok(())
}

fn gradcheck(seeds: u64, tolerance: f64) -> Outcome {
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (1..=seeds).collect();
    let rows = run_suite(&seeds)?;
    let (table, worst) = output::gradcheck_table(&rows, tolerance);
    print!("{table}");
    if worst > tolerance {
        return Err(Failure::Numeric(format!(
            "max relative error {worst:.3e} exceeds {tolerance:e}"
        )));
    }
    Ok(())
}

fn ablate(cfg: &RunConfig, subsets: &[BranchSet], fold: Option<usize>) -> Outcome {
    let data = load_dataset(cfg)?;
    let folds = folds_for(cfg, &data)?;
    let start = Instant::now();
    let rows = run_ablation(&data, &cfg.model, subsets, &cfg.plan, &folds, fold)?;
    let dir = cfg.output_dir.join("ablate");
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    write_file(&dir.join("results.csv"), results_csv(&rows))?;
    write_file(&dir.join("summary.json"), output::json(&rows)?)?;
    print!("{}", output::summary_table(&rows));
    eprintln!(
        "{} subsets in {:.1} s; artifacts in {}",
        rows.len(),
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn synth(cfg: &RunConfig, size: usize, correlation: f64, dir: Option<PathBuf>, embedding_dim: usize) -> Outcome {
    let dir = dir.unwrap_or_else(|| cfg.output_dir.join("corpus"));
    let corpus = generate(
        &dir,
        &SynthConfig {
            size,
            seed: cfg.plan.seed,
            correlation,
            sample_rate: cfg.dsp.sample_rate,
            embedding_dim,
            ..SynthConfig::default()
        },
    )?;
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let run = format!(
        "manifest = {:?}\nembeddings = {:?}\nword_dim = {embedding_dim}\n",
        abs(&corpus.manifest).display().to_string(),
        abs(&corpus.embeddings).display().to_string(),
    );
    write_file(&dir.join("run.toml"), run)?;
    println!("{size} samples in {}", dir.display());
    println!("manifest     {}", corpus.manifest.display());
    println!("embeddings   {}", corpus.embeddings.display());
    println!("run config   {}", dir.join("run.toml").display());
    Ok(())
}
