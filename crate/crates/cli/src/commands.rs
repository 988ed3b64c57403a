use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crossview_core::align::{
    read_checkpoint, read_trace_csv, run_gradcheck_suite, write_checkpoint, write_trace_csv, EmbeddingProvider,
    FeatureTable, LossKind, SuiteConfig, SyntheticWorld, Trainer,
};
use crossview_core::corrgen::{
    read_aligned_dataset, run_pipeline, write_aligned_dataset, AnnotationSet, ScriptedDetector,
};
use crossview_core::eval::{
    evaluate, harmonic_mean, parse_report_csv, read_detections, render_rows, report, targets_from_annotations,
    ReportFormat,
};
use crossview_core::seeding::sub_seed;
use crossview_core::vocab::{
    expand_vocabulary, read_text_bags, validate_bags, write_text_bags, IdentityGenerator, TemplateGenerator,
    VariantGenerator,
};

use crate::config::{GeneratorKind, OutputFormat, ProviderKind};
use crate::{CliError, RunConfig};

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Validation(format!("missing path: {what}")))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn cmd_corrgen(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let aerial = AnnotationSet::read(required(&cfg.paths.aerial_annotations, "paths.aerial_annotations")?)?;
    let ground = AnnotationSet::read(required(&cfg.paths.ground_annotations, "paths.ground_annotations")?)?;
    let target = required(&cfg.paths.aligned, "paths.aligned")?;
    let detector = match &cfg.paths.detector_script {
        Some(p) => ScriptedDetector::read(p)?,
        None => ScriptedDetector::new(),
    };
    let name_map: Vec<(String, String)> = cfg.corrgen.name_map.clone().into_iter().collect();
    let result = run_pipeline(&aerial, &ground, &name_map, &detector, &cfg.pipeline_config()?)?;
    write_aligned_dataset(&result.records, target)?;

    let counts = result.counts_by_category();
    let (direct, inferred) = counts.values().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    let mut s = format!(
        "categories: {} common, {} aerial-only\npairs: {} direct, {} inferred, {} total\n",
        result.partition.common.len(),
        result.partition.unique_aerial.len(),
        direct,
        inferred,
        result.records.len()
    );
    s.push_str("category\tname\tdirect\tinferred\n");
    for (cat, (d, i)) in &counts {
        let name = aerial.categories.get(cat).map_or("?", String::as_str);
        s.push_str(&format!("{cat}\t{name}\t{d}\t{i}\n"));
    }
    s.push_str(&format!("warnings: {}\n", result.warnings.len()));
    for w in &result.warnings {
        s.push_str(&format!("  {w}\n"));
    }
    emit(out, &s)
}

pub fn cmd_vocab(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let source = cfg
        .paths
        .categories
        .as_ref()
        .or(cfg.paths.aerial_annotations.as_ref())
        .ok_or_else(|| CliError::Validation("missing path: paths.categories".into()))?;
    let target = required(&cfg.paths.text_bags, "paths.text_bags")?;
    let set = AnnotationSet::read(source)?;
    let categories: Vec<(u32, String)> = set.categories.into_iter().collect();
    let generator: Box<dyn VariantGenerator> = match cfg.vocab.generator {
        GeneratorKind::Reference => Box::new(TemplateGenerator::with_reference_table()),
        GeneratorKind::Template => Box::new(TemplateGenerator::new()),
        GeneratorKind::Identity => Box::new(IdentityGenerator),
    };
    let expansion = expand_vocabulary(
        &categories,
        generator.as_ref(),
        cfg.vocab.max_variants,
        sub_seed(cfg.seed, "vocab", 0),
    )?;
    write_text_bags(&expansion.bags, target)?;
    let totals = expansion.totals();
    let check = validate_bags(&expansion.bags);
    let mut s = format!(
        "bags: {}\nvariants: {} including canonical names, {} excluding\ncollisions: {}\nwarnings: {}\n",
        expansion.bags.len(),
        totals.with_canonical,
        totals.without_canonical,
        check.collisions.len(),
        expansion.warnings.len()
    );
    for c in &check.collisions {
        s.push_str(&format!("  collision {:?} in categories {:?}\n", c.key, c.categories));
    }
    for w in &expansion.warnings {
        s.push_str(&format!("  category {}: {}\n", w.category_id, w.message));
    }
    emit(out, &s)
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let records = read_aligned_dataset(required(&cfg.paths.aligned, "paths.aligned")?)?;
    let ckpt_path = required(&cfg.paths.checkpoint, "paths.checkpoint")?;
    let trace_path = required(&cfg.paths.trace, "paths.trace")?;
    let bags = match &cfg.paths.text_bags {
        Some(p) => read_text_bags(p)?,
        None => Vec::new(),
    };
    let provider: Box<dyn EmbeddingProvider> = match cfg.train.provider {
        ProviderKind::Synthetic => Box::new(SyntheticWorld::new(cfg.synthetic_config())?),
        ProviderKind::Features => Box::new(FeatureTable::read(required(&cfg.paths.features, "paths.features")?)?),
    };
    let trainer = Trainer::new(&records, &bags, provider.as_ref(), cfg.train_config()?)?;

    let (mut state, mut trace) = if cfg.train.resume && ckpt_path.exists() {
        let state = trainer.restore(&read_checkpoint(ckpt_path)?)?;
        let mut trace = if trace_path.exists() { read_trace_csv(trace_path)? } else { Vec::new() };
        trace.retain(|r| r.step < state.step);
        (state, trace)
    } else {
        (trainer.init_state(), Vec::new())
    };
    let start = state.step;
    trace.extend(trainer.run(&mut state)?);
    write_checkpoint(&trainer.checkpoint(&state), ckpt_path)?;
    write_trace_csv(&trace, trace_path)?;

    let mut s = format!(
        "pairs: {}\nbags: {}\nsteps: {} (from {} to {})\n",
        records.len(),
        bags.len(),
        state.step - start,
        start,
        state.step
    );
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        s.push_str(&format!("total loss: {:.6} -> {:.6}\n", first.total, last.total));
    }
    emit(out, &s)
}

pub fn cmd_gradcheck(cfg: &RunConfig, corrupt: Option<LossKind>, out: &mut dyn Write) -> Result<(), CliError> {
    let g = &cfg.gradcheck;
    let mut s = String::from("loss\th\tmax_rel_error\n");
    let mut failures = Vec::new();
    for &h in &g.h {
        let rows = run_gradcheck_suite(&SuiteConfig {
            instances: g.instances,
            max_dim: g.max_dim,
            max_batch: g.max_batch,
            h,
            temperature: cfg.train.rho,
            similarity: cfg.train.similarity,
            seed: sub_seed(cfg.seed, "gradcheck", 0),
            corrupt,
        })?;
        for r in rows {
            s.push_str(&format!("{}\t{:e}\t{:.3e}\n", r.loss, r.h, r.max_rel_error));
            if r.max_rel_error.is_nan() || r.max_rel_error >= g.tolerance {
                failures.push(format!("{} at h={:e}: {:.3e}", r.loss, r.h, r.max_rel_error));
            }
        }
    }
    emit(out, &s)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed (tolerance {:e}): {}",
            g.tolerance,
            failures.join("; ")
        )))
    }
}

fn report_format(f: OutputFormat) -> ReportFormat {
    match f {
        OutputFormat::Table => ReportFormat::Table,
        OutputFormat::Csv => ReportFormat::Csv,
    }
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let e = &cfg.eval;
    let text = if let (Some(base), Some(novel)) = (e.map_base, e.map_novel) {
        // Split means given directly: only the harmonic mean is computed.
        let hm = harmonic_mean(base, novel)?;
        format!("mAP_base\tmAP_novel\tHM\n{base:.2}\t{novel:.2}\t{hm:.2}\n")
    } else {
        let dets = read_detections(required(&cfg.paths.detections, "paths.detections")?)?;
        let targets = AnnotationSet::read(required(&cfg.paths.targets, "paths.targets")?)?;
        let mut result = evaluate(&e.name, &dets, &targets_from_annotations(&targets));
        if !e.novel.is_empty() {
            let novel: BTreeSet<u32> = e.novel.iter().copied().collect();
            result = result.with_novel(&novel)?;
        }
        let mut text = report(std::slice::from_ref(&result), report_format(e.format));
        if result.no_targets {
            text.push_str("note: no targets; mAP reported as 0\n");
        }
        text
    };
    if let Some(p) = &cfg.paths.report {
        write_file(p, &text)?;
    }
    emit(out, &text)
}

pub fn cmd_report(inputs: &[PathBuf], format: OutputFormat, target: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for p in inputs {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        rows.extend(parse_report_csv(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?);
    }
    let text = render_rows(&rows, report_format(format));
    if let Some(p) = target {
        write_file(p, &text)?;
    }
    emit(out, &text)
}
