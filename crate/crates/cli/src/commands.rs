use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use berngraph::baselines::{predict_baseline, train_lr, train_mlp, FeatureMode, LinearModel, MlpModel};
use berngraph::checkpoint::{load_checkpoint, read_header, save_checkpoint, ModelKind};
use berngraph::cohort::{load_cohort, save_cohort, split, DatasetSplit, EventCohort};
use berngraph::experiment::{ablate, ablation_csv, ablation_std_csv, baseline_features, ArmSettings, Precision};
use berngraph::fsutil::write_atomic;
use berngraph::gnn::ModelParams;
use berngraph::graph::graph_to_json;
use berngraph::metrics::{bootstrap_eval, metrics, MetricsReport, Prediction};
use berngraph::sparse::sparsity;
use berngraph::stats::BernoulliStats;
use berngraph::synth::{generate, SynthConfig};
use berngraph::train::{predict, prepare, prepare_builder, train};
use berngraph::viz::export_viz;
use berngraph::Scalar;
use serde_json::{json, Value};

use crate::config::{render_kv, RunConfig};

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Echo of the resolved configuration; feeding it back with `--config`
/// replays the run.
fn echo_config(cfg: &RunConfig) -> Result<()> {
    write_text(&cfg.out.join("config.txt"), &render_kv(&cfg.resolved))
}

fn open_cohort(cfg: &RunConfig) -> Result<(EventCohort, DatasetSplit)> {
    let path = cfg.cohort_path()?;
    let cohort = load_cohort(path).with_context(|| format!("cannot load cohort {}", path.display()))?;
    let parts = split(&cohort, cfg.ratios, cfg.seed)?;
    Ok((cohort, parts))
}

fn check_row(cfg: &RunConfig, cohort: &EventCohort) -> Result<()> {
    if cfg.row >= cohort.n_patients() {
        bail!("row {} out of range: cohort has {} patients", cfg.row, cohort.n_patients());
    }
    Ok(())
}

fn load_truth(path: &Path, cohort: &EventCohort) -> Result<Vec<Vec<u8>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let doc: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let labels: Vec<Vec<u8>> = serde_json::from_value(
        doc.get("clean_labels")
            .cloned()
            .ok_or_else(|| anyhow!("{} has no clean_labels field", path.display()))?,
    )?;
    if labels.len() != cohort.n_patients() || labels.iter().any(|r| r.len() != cohort.n_drugs()) {
        bail!(
            "{}: clean_labels must be {} rows of {} labels",
            path.display(),
            cohort.n_patients(),
            cohort.n_drugs()
        );
    }
    Ok(labels)
}

fn test_labels(cfg: &RunConfig, cohort: &EventCohort, parts: &DatasetSplit) -> Result<Vec<Vec<u8>>> {
    Ok(match &cfg.truth {
        Some(path) => {
            let truth = load_truth(path, cohort)?;
            parts.test_rows.iter().map(|&r| truth[r].clone()).collect()
        }
        None => parts.test_rows.iter().map(|&r| cohort.labels.dense_row(r)).collect(),
    })
}

fn config_value(cfg: &RunConfig) -> Value {
    json!(cfg.resolved)
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let synth = match &cfg.synth_spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str::<SynthConfig>(&text)
                .with_context(|| format!("{} is not a simulator config", path.display()))?
        }
        None => SynthConfig::planted(cfg.planted)?,
    };
    synth.validate()?;
    echo_config(cfg)?;
    let (cohort, truth) = generate(&synth)?;
    save_cohort(&cohort, &cfg.out.join("cohort.json"))?;
    let observed = sparsity(&cohort.events)?;
    write_json(
        &cfg.out.join("truth.json"),
        &json!({
            "config": synth,
            "expected_sparsity": synth.expected_sparsity(),
            "sparsity": observed,
            "causes": truth.causes,
            "clean_labels": truth.clean_labels,
        }),
    )?;
    println!(
        "simulated {} patients x {} events x {} drugs, sparsity {observed:.4} -> {}",
        cohort.n_patients(),
        cohort.n_events(),
        cohort.n_drugs(),
        cfg.out.join("cohort.json").display()
    );
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> Result<()> {
    let (cohort, parts) = open_cohort(cfg)?;
    echo_config(cfg)?;
    let rows: Vec<usize> = if cfg.train.stats_all_rows {
        (0..cohort.n_patients()).collect()
    } else {
        parts.train_rows.clone()
    };
    let stats = BernoulliStats::estimate_rows(&cohort.events, &rows)?;
    write_json(
        &cfg.out.join("stats.json"),
        &json!({
            "n_rows": stats.n_rows(),
            "n_events": stats.n_events(),
            "rows": if cfg.train.stats_all_rows { "all" } else { "train" },
            "marginals": "marginals.csv",
            "conditionals": "conditionals.csv",
        }),
    )?;
    let mut marg = String::from("event,count,rho\n");
    for (j, (count, rho)) in stats.event_counts().iter().zip(stats.rho()).enumerate() {
        marg.push_str(&format!("{j},{count},{rho}\n"));
    }
    write_text(&cfg.out.join("marginals.csv"), &marg)?;
    let mut cond = String::from("i,j,joint,e_ij\n");
    for c in stats.conditionals() {
        cond.push_str(&format!("{},{},{},{}\n", c.target, c.given, c.joint, c.e));
    }
    write_text(&cfg.out.join("conditionals.csv"), &cond)?;
    println!("statistics over {} rows -> {}", stats.n_rows(), cfg.out.display());
    Ok(())
}

pub fn graph(cfg: &RunConfig) -> Result<()> {
    let (cohort, parts) = open_cohort(cfg)?;
    check_row(cfg, &cohort)?;
    echo_config(cfg)?;
    let (builder, _) = prepare_builder(&cohort, &parts, &cfg.train)?;
    let g = builder.build(&cohort, cfg.row);
    let path = cfg.out.join(format!("graph_row{}.json", cfg.row));
    write_text(&path, &(graph_to_json(&g, &cohort.event_names)? + "\n"))?;
    println!("{} nodes, {} edges -> {}", g.n_nodes(), g.edges.len(), path.display());
    Ok(())
}

fn report_row(r: &MetricsReport) -> Value {
    json!({
        "jaccard": r.jaccard.mean,
        "f1": r.f1.mean,
        "prauc": r.prauc.mean,
        "auroc": r.auroc.mean,
        "avg_drug": r.avg_drug.mean,
    })
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg),
        Precision::F64 => train_as::<f64>(cfg),
    }
}

fn train_as<F: Scalar>(cfg: &RunConfig) -> Result<()> {
    let (cohort, parts) = open_cohort(cfg)?;
    echo_config(cfg)?;
    write_json(&cfg.out.join("split.json"), &serde_json::to_value(&parts)?)?;
    let hyper = config_value(cfg);
    let ckpt = cfg.checkpoint_path();
    let mut history = String::from("epoch,train_loss,val_jaccard,val_f1,val_prauc,val_auroc,val_avg_drug\n");
    match cfg.model {
        ModelKind::Gnn => {
            let (outcome, _) = train::<F>(&cohort, &parts, &cfg.train)?;
            save_checkpoint(&outcome.params, &outcome.state, &hyper, &ckpt)?;
            for rec in &outcome.history {
                history.push_str(&format!("{},{}", rec.epoch, rec.train_loss));
                match &rec.validation {
                    Some(v) => v.means().iter().for_each(|x| history.push_str(&format!(",{x}"))),
                    None => history.push_str(",,,,,"),
                }
                history.push('\n');
            }
            write_json(
                &cfg.out.join("history.json"),
                &json!({
                    "selected_epoch": outcome.selected_epoch,
                    "epochs": outcome.history,
                }),
            )?;
        }
        ModelKind::Lr | ModelKind::Mlp => {
            let mode = if cfg.model == ModelKind::Lr { cfg.lr_features } else { FeatureMode::Encoded };
            let x = baseline_features::<F>(&cohort, &parts, &parts.train_rows, mode, cfg.train.stats_all_rows)?;
            let y: Vec<Vec<u8>> = parts.train_rows.iter().map(|&r| cohort.labels.dense_row(r)).collect();
            let losses = if cfg.model == ModelKind::Lr {
                let out = train_lr::<F>(&x, &y, &cfg.baseline_config())?;
                save_checkpoint(&out.model, &out.state, &hyper, &ckpt)?;
                out.losses
            } else {
                let out = train_mlp::<F>(&x, &y, &cfg.baseline_config())?;
                save_checkpoint(&out.model, &out.state, &hyper, &ckpt)?;
                out.losses
            };
            for (e, loss) in losses.iter().enumerate() {
                history.push_str(&format!("{},{loss},,,,,\n", e + 1));
            }
            write_json(&cfg.out.join("history.json"), &json!({ "train_loss": losses }))?;
        }
    }
    write_text(&cfg.out.join("history.csv"), &history)?;
    println!("trained {} for {} epochs -> {}", cfg.model, cfg.train.epochs, ckpt.display());
    Ok(())
}

fn predict_test<F: Scalar>(
    cfg: &RunConfig,
    kind: ModelKind,
    cohort: &EventCohort,
    parts: &DatasetSplit,
) -> Result<Vec<Prediction>> {
    let path = cfg.checkpoint_path();
    match kind {
        ModelKind::Gnn => {
            let ckpt = load_checkpoint::<F, ModelParams<F>>(&path)?;
            let prepared = prepare(cohort, parts, &cfg.train)?;
            Ok(predict(&ckpt.params, &prepared.test)?)
        }
        ModelKind::Lr | ModelKind::Mlp => {
            let mode = if kind == ModelKind::Lr { cfg.lr_features } else { FeatureMode::Encoded };
            let x = baseline_features::<F>(cohort, parts, &parts.test_rows, mode, cfg.train.stats_all_rows)?;
            if kind == ModelKind::Lr {
                Ok(predict_baseline(&load_checkpoint::<F, LinearModel<F>>(&path)?.params, &x)?)
            } else {
                Ok(predict_baseline(&load_checkpoint::<F, MlpModel<F>>(&path)?.params, &x)?)
            }
        }
    }
}

fn check_shape(cfg: &RunConfig, cohort: &EventCohort) -> Result<ModelKind> {
    let path = cfg.checkpoint_path();
    let header = read_header(&path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let dims = header.model;
    if dims.n_inputs() != cohort.n_events() || dims.n_outputs() != cohort.n_drugs() {
        bail!(
            "checkpoint expects {} events and {} drugs, cohort has {} and {}",
            dims.n_inputs(),
            dims.n_outputs(),
            cohort.n_events(),
            cohort.n_drugs()
        );
    }
    Ok(dims.kind())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let (cohort, parts) = open_cohort(cfg)?;
    let kind = check_shape(cfg, &cohort)?;
    let labels = test_labels(cfg, &cohort, &parts)?;
    echo_config(cfg)?;
    let preds = match cfg.precision {
        Precision::F32 => predict_test::<f32>(cfg, kind, &cohort, &parts)?,
        Precision::F64 => predict_test::<f64>(cfg, kind, &cohort, &parts)?,
    };
    let plain = metrics(&preds, &labels)?;
    let p = &cfg.protocol;
    let boot = bootstrap_eval(&preds, &labels, p.rounds, p.frac, p.seed)?;

    write_json(
        &cfg.out.join("metrics.json"),
        &json!({
            "model": kind,
            "checkpoint": cfg.checkpoint_path(),
            "n_test": labels.len(),
            "labels": if cfg.truth.is_some() { "truth" } else { "cohort" },
            "full_test": plain,
            "bootstrap": boot,
        }),
    )?;
    let mut csv = String::from("round,jaccard,f1,prauc,auroc,avg_drug\n");
    let mut line = |name: String, values: [f64; 5]| {
        csv.push_str(&name);
        values.iter().for_each(|v| csv.push_str(&format!(",{v:.6}")));
        csv.push('\n');
    };
    for (i, r) in boot.rounds.iter().enumerate() {
        line(i.to_string(), r.means());
    }
    line("mean".into(), boot.summary.means());
    line("std".into(), boot.summary.stds());
    write_text(&cfg.out.join("metrics.csv"), &csv)?;
    println!("{}", serde_json::to_string(&report_row(&boot.summary))?);
    Ok(())
}

pub fn ablate_cmd(cfg: &RunConfig) -> Result<()> {
    let (cohort, parts) = open_cohort(cfg)?;
    let truth = cfg.truth.as_deref().map(|p| load_truth(p, &cohort)).transpose()?;
    echo_config(cfg)?;
    let settings = ArmSettings {
        train: cfg.train.clone(),
        baseline: cfg.baseline_config(),
        lr_features: cfg.lr_features,
        precision: cfg.precision,
    };
    let rows = ablate(&cohort, &parts, &cfg.arms, &settings, &cfg.protocol, truth.as_deref())?;
    write_text(&cfg.out.join("ablation.csv"), &ablation_csv(&rows))?;
    write_text(&cfg.out.join("ablation_std.csv"), &ablation_std_csv(&rows))?;
    write_json(&cfg.out.join("ablation.json"), &serde_json::to_value(&rows)?)?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}

pub fn export_viz_cmd(cfg: &RunConfig) -> Result<()> {
    let (cohort, parts) = open_cohort(cfg)?;
    check_row(cfg, &cohort)?;
    if check_shape(cfg, &cohort)? != ModelKind::Gnn {
        bail!("export-viz needs a gnn checkpoint");
    }
    if cfg.k > cohort.n_events() {
        bail!("k = {} exceeds the {} events", cfg.k, cohort.n_events());
    }
    echo_config(cfg)?;
    let ckpt = load_checkpoint::<f64, ModelParams<f64>>(&cfg.checkpoint_path())?;
    let (builder, _) = prepare_builder(&cohort, &parts, &cfg.train)?;
    let g = builder.build(&cohort, cfg.row);
    let viz = export_viz(&ckpt.params, &g, cfg.k, &cohort.event_names)?;
    let path = cfg.out.join(format!("viz_row{}.json", cfg.row));
    write_json(&path, &serde_json::to_value(&viz)?)?;
    println!("{} nodes, top {} flagged -> {}", viz.nodes.len(), cfg.k, path.display());
    Ok(())
}
