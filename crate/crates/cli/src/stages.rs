use std::collections::BTreeSet;
use std::net::SocketAddr;

use fsl_core::artifacts::{
    load_baseline, load_split, read_json, write_json, DatasetConfig, RunDir, SplitRecord, TrainedCheckpoint,
    TrainingManifest,
};
use fsl_core::baseline::{pretrain_classifier, weakened_baseline, PretrainConfig};
use fsl_core::eval::{
    build_report, partition_confusion, read_inference_log, run_inference, write_inference_log, Provenance,
};
use fsl_core::ingest::{
    generate_synthetic_dataset, load_manifest, split_dataset, split_id, write_synthetic_dataset, ImageRecord,
    PreprocessConfig, SyntheticSpec, UncertainPolicy,
};
use fsl_core::model::{checkpoint_id, load_checkpoint, save_checkpoint, Checkpoint, EmbeddingModel, Model};
use fsl_core::repair::{
    build_triplet_plan, combined_checkpoint_id, evaluate_plan, train_plan, EvalContext, PlanEvaluation,
    SkippedPathology, TripletPlan,
};
use fsl_core::stats::compare_reports;
use fsl_core::trainer::{TrainConfig, TrainMode};
use fsl_core::triplets::{read_triplets, write_triplets, TripletDatasetConfig};
use fsl_core::PathologyId;
use fsl_service::{LoopService, Workspace};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::run::{clear_stale, create_run, guard, now, open_run, parse_pathology, require, seed_for};
use crate::{
    BaselineArgs, Common, CompareArgs, EvalArgs, IngestArgs, ModeArg, ServeArgs, SynthArgs, TrainArgs, TripletArgs,
};

/// Settings the triplet file was built with; stored next to it.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PlanFile {
    config: TripletDatasetConfig,
    pathology: Option<PathologyId>,
    skipped: Vec<SkippedPathology>,
}

#[derive(Serialize)]
struct PretrainRecord<'a> {
    config: &'a PretrainConfig,
    miss_rate: f64,
    threshold: f64,
    loss_trace: &'a [f64],
}

fn write_split(
    run: &RunDir,
    records: Vec<ImageRecord>,
    dataset: DatasetConfig,
) -> CliResult<(usize, usize)> {
    let tf = dataset.train_fraction;
    if !(0.0..=1.0).contains(&tf) {
        return Err(CliError::Usage(format!("--train-fraction {tf} must be in [0, 1]")));
    }
    let (train, eval) = split_dataset(records, (tf, 1.0 - tf), dataset.split_seed)?;
    let ids = |rs: &[ImageRecord]| rs.iter().map(|r| r.image_id.clone()).collect::<Vec<_>>();
    let split = SplitRecord { split_id: split_id(&eval), train_ids: ids(&train), eval_ids: ids(&eval) };
    write_json(&run.dataset_config(), &dataset)?;
    write_json(&run.split(), &split)?;
    Ok((train.len(), eval.len()))
}

pub fn synth(common: &Common, a: &SynthArgs) -> CliResult<()> {
    let seed = common.seed.unwrap_or(0);
    let spec = SyntheticSpec {
        image_size: a.image_size,
        n_pathologies: a.pathologies,
        prevalence: a.prevalence,
        seed,
        ..SyntheticSpec::default()
    };
    let records = generate_synthetic_dataset(&spec, a.n_images)?;
    let run = create_run(common, seed)?;
    write_synthetic_dataset(&run.data_dir(), &spec, &records)?;
    let dataset = DatasetConfig {
        manifest: std::fs::canonicalize(run.data_dir().join("manifest.csv"))?,
        uncertain_policy: UncertainPolicy::default(),
        preprocess: PreprocessConfig::identity(a.image_size),
        train_fraction: a.train_fraction,
        split_seed: seed,
    };
    let (n_train, n_eval) = write_split(&run, records, dataset)?;
    println!("run: {}", run.root().display());
    println!("synthetic images: {} train, {} eval", n_train, n_eval);
    Ok(())
}

pub fn ingest(common: &Common, a: &IngestArgs) -> CliResult<()> {
    let seed = common.seed.unwrap_or(0);
    let preprocess = PreprocessConfig { resize_to: a.resize, crop_to: a.crop, ..PreprocessConfig::default() };
    let manifest = std::fs::canonicalize(&a.manifest).map_err(|_| CliError::Missing {
        what: "manifest",
        path: a.manifest.clone(),
    })?;
    let records = load_manifest(&manifest, a.uncertain.into(), &preprocess)?;
    let run = create_run(common, seed)?;
    let dataset = DatasetConfig {
        manifest,
        uncertain_policy: a.uncertain.into(),
        preprocess,
        train_fraction: a.train_fraction,
        split_seed: seed,
    };
    let (n_train, n_eval) = write_split(&run, records, dataset)?;
    println!("run: {}", run.root().display());
    println!("images: {} train, {} eval", n_train, n_eval);
    Ok(())
}

pub fn baseline(common: &Common, a: &BaselineArgs) -> CliResult<()> {
    let run = open_run(common)?;
    let seed = seed_for(common, &run)?;
    guard(common, &run.classifier_checkpoint())?;
    if !(0.0..1.0).contains(&a.miss_rate) {
        return Err(CliError::Usage(format!("--miss-rate {} must be in [0, 1)", a.miss_rate)));
    }
    let (train, eval, split) = load_split(&run)?;
    let dataset: DatasetConfig = read_json(&run.dataset_config())?;

    let ckpt = match &a.classifier {
        Some(path) => load_checkpoint(path)?,
        None => {
            let cfg = PretrainConfig { epochs: a.epochs, learning_rate: a.learning_rate, seed, ..PretrainConfig::default() };
            let (model, trace) = if a.miss_rate > 0.0 {
                weakened_baseline(&train, dataset.preprocess, &cfg, a.miss_rate)?
            } else {
                pretrain_classifier(&train, dataset.preprocess, &cfg)?
            };
            let record = PretrainRecord { config: &cfg, miss_rate: a.miss_rate, threshold: a.threshold, loss_trace: &trace };
            write_json(&run.root().join("baseline/pretrain.json"), &record)?;
            Checkpoint::new(Model::Classifier(model), seed)
        }
    };
    let ckpt_id = checkpoint_id(&ckpt)?;
    clear_stale(&downstream_of_triplets(&run))?;
    clear_stale(&[run.triplets(), run.triplet_plan()])?;
    save_checkpoint(&run.classifier_checkpoint(), &ckpt)?;
    let classifier = ckpt.into_classifier()?;

    let inference = run_inference(&classifier, &eval, a.threshold)?;
    write_inference_log(&run.inference_log(), &inference)?;
    let partition = partition_confusion(&inference)?;
    let report = build_report(
        &partition,
        Provenance { checkpoint_id: ckpt_id, split_id: split.split_id, timestamp: now() },
    );
    write_json(&run.baseline_report(), &report)?;
    print!("{}", report.render_table());
    for p in PathologyId::all() {
        let n = partition.failed(p).len();
        if n > 0 {
            println!("{p}: {n} failed inferences");
        }
    }
    Ok(())
}

/// Everything trained or evaluated from a triplet file.
fn downstream_of_triplets(run: &RunDir) -> Vec<std::path::PathBuf> {
    let root = run.root();
    vec![root.join("train"), root.join("eval"), root.join("compare")]
}

fn load_plan(run: &RunDir) -> CliResult<TripletPlan> {
    let file: PlanFile = read_json(&require(run.triplet_plan(), "triplet plan")?)?;
    let rows = read_triplets(&require(run.triplets(), "triplets")?)?;
    Ok(TripletPlan::from_rows(rows, file.skipped))
}

pub fn triplets(common: &Common, a: &TripletArgs) -> CliResult<()> {
    let run = open_run(common)?;
    let seed = seed_for(common, &run)?;
    guard(common, &run.triplets())?;
    let inference = read_inference_log(&require(run.inference_log(), "baseline inference log")?)?;
    let partition = partition_confusion(&inference)?;
    let pathology = parse_pathology(&a.pathology)?;
    let config = TripletDatasetConfig { n_train: a.n as usize, seed };
    let targets = pathology.map(|p| vec![p]);
    let plan = build_triplet_plan(&partition, targets.as_deref(), &config)?;
    clear_stale(&downstream_of_triplets(&run))?;
    write_triplets(&run.triplets(), &plan.rows())?;
    write_json(&run.triplet_plan(), &PlanFile { config, pathology, skipped: plan.skipped.clone() })?;
    for e in &plan.entries {
        println!("{}: {} training, {} validation triplets", e.pathology, e.train.len(), e.val.len());
    }
    for s in &plan.skipped {
        println!("{}: skipped ({})", s.pathology, s.code);
    }
    Ok(())
}

fn checkpoint_file(mode: TrainMode, pathologies: &[PathologyId]) -> String {
    match (mode, pathologies) {
        (TrainMode::Tfsl, [p]) => format!("p{:02}.ckpt", p.index()),
        _ => "pooled.ckpt".into(),
    }
}

pub fn train(common: &Common, a: &TrainArgs) -> CliResult<()> {
    let run = open_run(common)?;
    let seed = seed_for(common, &run)?;
    let mode: TrainMode = a.mode.into();
    guard(common, &run.training_manifest(mode))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        weight_decay: a.weight_decay,
        margin: a.margin,
        loss_kind: a.loss.into(),
        batch_size: a.batch_size,
        seed,
        backbone_trainable: !a.freeze_backbone,
    };
    cfg.validate()?;
    let base = load_baseline(&run)?;
    let mut plan = load_plan(&run)?;
    if let Some(p) = parse_pathology(&a.pathology)? {
        if let Some(s) = plan.skipped.iter().find(|s| s.pathology == p) {
            return Err(CliError::Usage(format!("{p} has no triplets: {}", s.reason)));
        }
        plan = plan.restrict(p)?;
    }

    let models = train_plan(&base.classifier, &plan, mode, &cfg, seed, &base.images)?;
    clear_stale(&[run.eval_dir(mode), run.comparison(mode)])?;
    let mut entries = Vec::with_capacity(models.len());
    for m in &models {
        let file = checkpoint_file(mode, &m.pathologies);
        save_checkpoint(&run.train_dir(mode).join(&file), &m.checkpoint())?;
        let record = m.record()?;
        let names: Vec<String> = m.pathologies.iter().map(|p| p.to_string()).collect();
        println!(
            "{} [{}]: {} triplets, loss {:.4} -> {:.4}",
            file,
            names.join(", "),
            record.n_triplets,
            record.loss_trace.first().copied().unwrap_or(f64::NAN),
            record.loss_trace.last().copied().unwrap_or(f64::NAN),
        );
        entries.push(TrainedCheckpoint { file, record });
    }
    let ids: Vec<String> = entries.iter().map(|e| e.record.checkpoint_id.clone()).collect();
    let manifest = TrainingManifest { mode, models: entries, combined_checkpoint_id: combined_checkpoint_id(&ids) };
    write_json(&run.training_manifest(mode), &manifest)?;
    Ok(())
}

fn resolve_mode(run: &RunDir, arg: Option<ModeArg>) -> CliResult<TrainMode> {
    if let Some(m) = arg {
        return Ok(m.into());
    }
    let trained: Vec<TrainMode> = [TrainMode::Tfsl, TrainMode::Incremental]
        .into_iter()
        .filter(|m| run.training_manifest(*m).exists())
        .collect();
    match trained.as_slice() {
        [m] => Ok(*m),
        [] => Err(CliError::Missing { what: "training manifest", path: run.training_manifest(TrainMode::Tfsl) }),
        _ => Err(CliError::Usage("both modes are trained; pass --mode".into())),
    }
}

fn run_eval(common: &Common, run: &RunDir, mode: TrainMode, a: &EvalArgs) -> CliResult<PlanEvaluation> {
    let seed = seed_for(common, run)?;
    let base = load_baseline(run)?;
    let plan = load_plan(run)?;
    let manifest: TrainingManifest = read_json(&require(run.training_manifest(mode), "training manifest")?)?;
    let mut models: Vec<(Vec<PathologyId>, EmbeddingModel)> = Vec::new();
    for entry in &manifest.models {
        let ckpt = load_checkpoint(&run.train_dir(mode).join(&entry.file))?;
        let id = checkpoint_id(&ckpt)?;
        if id != entry.record.checkpoint_id {
            return Err(fsl_core::Error::CorruptCheckpoint(format!(
                "{} hashes to {id}, training manifest says {}",
                entry.file, entry.record.checkpoint_id
            ))
            .into());
        }
        models.push((entry.record.pathologies.clone(), ckpt.into_embedding()?));
    }
    let covered: BTreeSet<PathologyId> = models.iter().flat_map(|(ps, _)| ps.iter().copied()).collect();
    let plan = TripletPlan {
        entries: plan.entries.into_iter().filter(|e| covered.contains(&e.pathology)).collect(),
        skipped: plan.skipped,
    };
    let assignment: Vec<(&[PathologyId], &EmbeddingModel)> = models.iter().map(|(ps, m)| (ps.as_slice(), m)).collect();
    let timestamp = now();
    let evaluation = evaluate_plan(
        &plan,
        &assignment,
        &EvalContext {
            partition: &base.partition,
            images: &base.images,
            split_id: &base.split_id,
            baseline_checkpoint: &base.classifier_checkpoint,
            after_checkpoint: &manifest.combined_checkpoint_id,
            timestamp: &timestamp,
            support_size: a.support_size,
            seed,
        },
    )?;
    write_json(&run.before_report(mode), &evaluation.before)?;
    write_json(&run.after_report(mode), &evaluation.after)?;
    write_json(&run.evaluation(mode), &evaluation)?;
    Ok(evaluation)
}

pub fn eval(common: &Common, a: &EvalArgs) -> CliResult<()> {
    let run = open_run(common)?;
    let mode = resolve_mode(&run, a.mode)?;
    guard(common, &run.evaluation(mode))?;
    let evaluation = run_eval(common, &run, mode, a)?;
    for e in &evaluation.per_pathology {
        println!("{}: {} validation failures re-decided", e.pathology, e.n_validation_anchors);
    }
    print!("{}", evaluation.after.render_table());
    Ok(())
}

pub fn compare(common: &Common, a: &CompareArgs) -> CliResult<()> {
    let run = open_run(common)?;
    let mode = resolve_mode(&run, a.eval.mode)?;
    guard(common, &run.comparison(mode))?;
    let evaluation = if run.evaluation(mode).exists() {
        read_json(&run.evaluation(mode))?
    } else {
        run_eval(common, &run, mode, &a.eval)?
    };
    let comparison = compare_reports(&evaluation.before, &evaluation.after)?;
    write_json(&run.comparison(mode), &comparison)?;
    print!("{}", comparison.render_table());
    println!("comparison: {}", run.comparison(mode).display());
    Ok(())
}

pub fn serve(common: &Common, a: &ServeArgs) -> CliResult<()> {
    let run = open_run(common)?;
    let ws = Workspace::from_baseline(load_baseline(&run)?)?;
    let svc = LoopService::open(ws, &run.service_dir())?;
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    println!("serving {} on http://{addr}", run.root().display());
    rt.block_on(fsl_service::serve(svc.clone(), addr))?;
    svc.shutdown();
    Ok(())
}
