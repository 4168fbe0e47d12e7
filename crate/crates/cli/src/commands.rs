use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use chaincount_core::geometry::{dominant_orientation, Axis, ImageRecord, Rect};
use chaincount_core::partition::{
    two_pass_count, Counter, Crop, FileCounter, NoisyCounter, OracleCounter,
};
use chaincount_core::postprocess::{dedup, filter_by_confidence};
use chaincount_core::refine::{mean_center_error, refine, RefineTrace};
use chaincount_core::report::evaluate;
use chaincount_core::synth::{corrupt, generate_scene, jittered_chain, SplitMix64};
use chaincount_core::{gradcheck, io as dataset, ChainInstance, PartitionConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{ChainArgs, Cli, Command, CounterKind, ReportFormat};

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = cli.resolve_config()?;
    eprintln!("config: {}", serde_json::to_string(&cfg)?);
    let strict = cli.global.strict;
    match cli.command {
        Command::Evaluate {
            input,
            output,
            format,
            ..
        } => run_evaluate(&cfg, &input, output.as_deref(), format, strict),
        Command::Dedup { input, output, .. } => run_dedup(&cfg, &input, output.as_deref(), strict),
        Command::Partition {
            input,
            output,
            counter,
            counter_file,
            plan,
            ..
        } => {
            let records = read_records(&input, strict)?;
            let part = cfg.partition_config()?;
            let out = output.as_deref();
            match counter {
                CounterKind::Oracle => run_partition(&records, &OracleCounter, &part, out, plan),
                CounterKind::Noisy => {
                    let corruption = chaincount_core::synth::CorruptionSpec {
                        seed: cfg.seed,
                        ..cfg.synth.corruption
                    };
                    run_partition(&records, &NoisyCounter { corruption }, &part, out, plan)
                }
                CounterKind::File => {
                    let path = counter_file.expect("clap requires --counter-file");
                    let counter = FileCounter::from_path(&path)
                        .with_context(|| format!("reading counter outputs {}", path.display()))?;
                    run_partition(&records, &counter, &part, out, plan)
                }
            }
        }
        Command::Refine {
            input,
            record,
            output,
            chain,
            ..
        } => run_refine(
            &cfg,
            input.as_deref(),
            record.as_deref(),
            &chain,
            output.as_deref(),
            strict,
        ),
        Command::Synth { output, .. } => run_synth(&cfg, output.as_deref()),
        Command::Gradcheck { .. } => run_gradcheck(&cfg),
    }
}

fn read_records(path: &Path, strict: bool) -> anyhow::Result<Vec<ImageRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    dataset::read_dataset(BufReader::new(file), strict)
        .with_context(|| format!("reading dataset {}", path.display()))
}

fn writer(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_evaluate(
    cfg: &RunConfig,
    input: &Path,
    output: Option<&Path>,
    format: ReportFormat,
    strict: bool,
) -> anyhow::Result<ExitCode> {
    let records = read_records(input, strict)?;
    let report = evaluate(&records, &cfg.metrics.game_levels).context("evaluate")?;
    let text = report.render_text();
    print!("{text}");
    if let Some(path) = output {
        let mut w = writer(Some(path))?;
        match format {
            ReportFormat::Text => w.write_all(text.as_bytes())?,
            ReportFormat::Json => {
                serde_json::to_writer_pretty(&mut w, &report)?;
                writeln!(w)?;
            }
        }
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_dedup(
    cfg: &RunConfig,
    input: &Path,
    output: Option<&Path>,
    strict: bool,
) -> anyhow::Result<ExitCode> {
    let dedup_cfg = cfg.dedup_config()?;
    let records = read_records(input, strict)?;
    let cleaned: Vec<ImageRecord> = records
        .par_iter()
        .map(|r| {
            let kept = filter_by_confidence(&r.predictions, dedup_cfg.confidence_threshold);
            let centers: Vec<_> = kept.iter().map(|d| d.center()).collect();
            let axis = dominant_orientation(&centers).unwrap_or(Axis::Y);
            ImageRecord {
                predictions: dedup(&kept, &dedup_cfg, axis),
                ..r.clone()
            }
        })
        .collect();
    let before: usize = records.iter().map(|r| r.predictions.len()).sum();
    let after: usize = cleaned.iter().map(|r| r.predictions.len()).sum();
    let mut w = writer(output)?;
    dataset::write_dataset(&mut w, &cleaned)?;
    w.flush()?;
    eprintln!(
        "dedup: {} records, {before} -> {after} detections",
        cleaned.len()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SlicePlan {
    crop_id: String,
    region: Rect,
    first_pass_members: usize,
}

#[derive(Serialize)]
struct RecordPlan {
    id: String,
    axis: Axis,
    first_pass: usize,
    slices: Vec<SlicePlan>,
    count: usize,
}

fn run_partition(
    records: &[ImageRecord],
    counter: &(impl Counter + ?Sized),
    cfg: &PartitionConfig,
    output: Option<&Path>,
    plan: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    // Records are independent; slices within a record are already counted in parallel.
    let results: Vec<_> = records
        .par_iter()
        .map(|r| two_pass_count(r, &counter, cfg).with_context(|| format!("record {}", r.id)))
        .collect::<anyhow::Result<_>>()?;

    let stitched: Vec<ImageRecord> = records
        .iter()
        .zip(&results)
        .map(|(r, out)| ImageRecord {
            predictions: out.detections.clone(),
            ..r.clone()
        })
        .collect();
    let mut w = writer(output)?;
    dataset::write_dataset(&mut w, &stitched)?;
    w.flush()?;

    if let Some(path) = plan {
        let mut w = writer(Some(&path))?;
        for (r, out) in records.iter().zip(&results) {
            let line = RecordPlan {
                id: r.id.clone(),
                axis: out.axis,
                first_pass: out.first_pass.len(),
                slices: out
                    .slices
                    .iter()
                    .enumerate()
                    .map(|(k, s)| SlicePlan {
                        crop_id: Crop::slice(r, k, s.crop_region).id,
                        region: s.crop_region,
                        first_pass_members: s.member_indices.len(),
                    })
                    .collect(),
                count: out.detections.len(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        w.flush()?;
    }
    let slices: usize = results.iter().map(|o| o.slices.len()).sum();
    eprintln!(
        "partition: {} records, {slices} slices, {} detections",
        records.len(),
        results.iter().map(|o| o.detections.len()).sum::<usize>()
    );
    Ok(ExitCode::SUCCESS)
}

fn chain_from_dataset(
    cfg: &RunConfig,
    input: &Path,
    record: Option<&str>,
    strict: bool,
) -> anyhow::Result<ChainInstance> {
    let records = read_records(input, strict)?;
    let chosen = match record {
        Some(id) => records
            .iter()
            .find(|r| r.id == id)
            .with_context(|| format!("no record with id {id:?}"))?,
        None => records
            .iter()
            .find(|r| r.has_instances() && !r.predictions.is_empty() && !r.ground_truth.is_empty())
            .context("no record has both predictions and ground-truth boxes")?,
    };
    if !chosen.has_instances() {
        bail!("record {:?} has no instance annotations", chosen.id);
    }
    Ok(ChainInstance::matched(
        chosen.predicted_centers(),
        chosen.predictions.iter().map(|d| d.score).collect(),
        chosen.gt_centers(),
        &cfg.focal,
    )?)
}

fn run_refine(
    cfg: &RunConfig,
    input: Option<&Path>,
    record: Option<&str>,
    chain: &ChainArgs,
    output: Option<&Path>,
    strict: bool,
) -> anyhow::Result<ExitCode> {
    let refine_cfg = cfg.refine_config()?;
    let inst = match input {
        Some(path) => chain_from_dataset(cfg, path, record, strict)?,
        None => jittered_chain(
            chain.chain_points,
            chain.chain_spacing,
            chain.chain_jitter,
            cfg.seed,
            &cfg.focal,
        )?,
    };
    let trace = refine(&inst, &refine_cfg).context("refine")?;
    write_trace(&trace, output)?;
    let (first, last) = (trace.initial_loss(), trace.final_loss());
    eprintln!(
        "refine: total {:.6} -> {:.6}, neigh {:.6} -> {:.6}, mean center error {:.6} -> {:.6}",
        first.total,
        last.total,
        first.neigh,
        last.neigh,
        mean_center_error(&trace.initial),
        mean_center_error(&trace.final_state)
    );
    Ok(ExitCode::SUCCESS)
}

fn write_trace(trace: &RefineTrace, output: Option<&Path>) -> anyhow::Result<()> {
    let mut csv = csv::Writer::from_writer(writer(output)?);
    csv.write_record(["step", "loc", "neigh", "cls", "total", "churn"])?;
    for s in &trace.steps {
        csv.write_record([
            s.step.to_string(),
            s.loss.loc.to_string(),
            s.loss.neigh.to_string(),
            s.loss.cls.to_string(),
            s.loss.total.to_string(),
            s.churn.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

fn run_synth(cfg: &RunConfig, output: Option<&Path>) -> anyhow::Result<ExitCode> {
    let mut rng = SplitMix64::new(cfg.seed);
    let seeds: Vec<(u64, u64)> = (0..cfg.synth.images)
        .map(|_| (rng.next_u64(), rng.next_u64()))
        .collect();
    let records: Vec<ImageRecord> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &(scene_seed, corruption_seed))| {
            let scene = chaincount_core::synth::SceneSpec {
                seed: scene_seed,
                ..cfg.synth.scene.clone()
            };
            let mut record = generate_scene(&scene)?;
            record.id = format!("synth-{i:04}");
            let corruption = chaincount_core::synth::CorruptionSpec {
                seed: corruption_seed,
                ..cfg.synth.corruption
            };
            corrupt(&record, &corruption)
        })
        .collect::<chaincount_core::Result<_>>()
        .context("synth")?;
    let mut w = writer(output)?;
    dataset::write_dataset(&mut w, &records)?;
    w.flush()?;
    eprintln!(
        "synth: {} records, {} targets",
        records.len(),
        records.iter().map(|r| r.ground_truth.len()).sum::<usize>()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let g = &cfg.gradcheck;
    let report = gradcheck::run(
        cfg.seed,
        g.instances,
        &cfg.refine.weights,
        &cfg.focal,
        g.step,
    )
    .context("gradcheck")?;
    println!(
        "instances {}  partials {}  skipped kinks {}  max relative error {:.3e}  tolerance {:.1e}",
        report.instances,
        report.checked,
        report.skipped_kinks,
        report.max_relative_error,
        g.tolerance
    );
    if report.max_relative_error < g.tolerance {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAILED: gradient mismatch above tolerance");
        Ok(ExitCode::FAILURE)
    }
}
