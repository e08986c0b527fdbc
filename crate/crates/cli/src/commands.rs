use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dsba::simulator::{load_shards, run_experiment, RunOutput};
use dsba::sparsecomm::trace_csv;
use dsba::{Experiment, Sample, Variant};

use crate::config::FileConfig;
use crate::CliError;

pub const COMPARE_HEADER: &str = "variant,round,effective_passes,subopt,c_max";
const COMPARE_TARGET: f64 = 1e-6;

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), contents).map_err(|e| CliError::Runtime(format!("writing {name}: {e}")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))
}

fn write_artifacts(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    create_dir(dir)?;
    write(dir, "metrics.csv", &out.log.to_csv())?;
    let manifest = serde_json::to_string_pretty(&out.manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(dir, "manifest.json", &manifest)?;
    write(dir, "graph.txt", &out.graph.to_edge_list())?;
    write(dir, "mixing.csv", &out.mixing.to_csv())?;
    if let Some(trace) = &out.trace {
        write(dir, "trace.csv", &trace_csv(trace))?;
    }
    Ok(())
}

fn build_experiment(file: &FileConfig, variant: Option<Variant>) -> Result<(Experiment, dsba::RunConfig), CliError> {
    let cfg = file.run_config(variant)?;
    let exp = Experiment::from_config(&cfg).map_err(CliError::from_core)?;
    Ok((exp, cfg))
}

pub fn cmd_run(file: &FileConfig, out_dir: &Path) -> Result<String, CliError> {
    let (exp, cfg) = build_experiment(file, None)?;
    let out = run_experiment(&exp, &cfg).map_err(CliError::runtime)?;
    write_artifacts(out_dir, &out)?;
    let last = out.log.last();
    Ok(format!(
        "{} rounds ({:?}), final subopt {:.3e}, artifacts in {}",
        out.manifest.rounds_run,
        out.manifest.stop,
        last.map_or(f64::NAN, |r| r.subopt),
        out_dir.display()
    ))
}

pub fn cmd_compare(file: &FileConfig, variants: &[Variant], out_dir: &Path) -> Result<String, CliError> {
    if variants.is_empty() {
        return Err(CliError::Config("no variants to compare".into()));
    }
    let mut configs = Vec::with_capacity(variants.len());
    for &v in variants {
        configs.push(file.run_config(Some(v))?);
    }
    let exp = Experiment::from_config(&configs[0]).map_err(CliError::from_core)?;
    let mut csv = String::from(COMPARE_HEADER);
    csv.push('\n');
    let mut summary = String::new();
    for cfg in &configs {
        let out = run_experiment(&exp, cfg).map_err(CliError::runtime)?;
        let name = cfg.variant.name();
        write_artifacts(&out_dir.join(name), &out)?;
        for r in &out.log.rows {
            let _ = writeln!(csv, "{name},{},{},{:e},{}", r.round, r.effective_passes, r.subopt, r.c_max);
        }
        let passes = out.log.passes_to(COMPARE_TARGET);
        let _ = writeln!(
            summary,
            "{name}: passes to {COMPARE_TARGET:e} = {}",
            passes.map_or("not reached".into(), |p| format!("{p}"))
        );
    }
    create_dir(out_dir)?;
    write(out_dir, "compare.csv", &csv)?;
    summary.push_str(&format!("fingerprint {}, artifacts in {}", exp.fingerprint(), out_dir.display()));
    Ok(summary)
}

fn libsvm_line(s: &Sample) -> String {
    let mut line = format!("{}", s.label);
    for (i, v) in s.features.iter() {
        let _ = write!(line, " {}:{}", i + 1, v);
    }
    line
}

pub fn cmd_prep(file: &FileConfig, out_dir: &Path) -> Result<String, CliError> {
    let data = file.data_source()?;
    let n_nodes = file.graph.n_nodes.ok_or_else(|| CliError::Config("missing required field `graph.n_nodes`".into()))?;
    let seed = file.seed()?;
    let shards = load_shards(&data, file.data.normalize.unwrap_or(true), n_nodes, seed).map_err(CliError::from_core)?;
    create_dir(out_dir)?;
    for (n, shard) in shards.per_node.iter().enumerate() {
        let mut text = String::new();
        for s in shard {
            text.push_str(&libsvm_line(s));
            text.push('\n');
        }
        write(out_dir, &format!("shard_{n}.libsvm"), &text)?;
    }
    let manifest = serde_json::to_string_pretty(&shards.manifest()).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(out_dir, "shards.json", &manifest)?;
    Ok(format!(
        "{} samples, d={}, q_min={}, rho={:.4}, {} shards in {}",
        shards.total,
        shards.dim,
        shards.q_min,
        shards.rho,
        n_nodes,
        out_dir.display()
    ))
}
