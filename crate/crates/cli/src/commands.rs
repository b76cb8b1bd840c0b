use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fable_core::dataset::{generate_synthetic_corpus, Dataset, EditSample};
use fable_core::edit::{apply_overrides, run_fable, trajectory_compare, EditConfig, EditMode};
use fable_core::lm::{
    continue_training, corpus_loss, CorpusItem, LMConfig, Tokenizer, TrainConfig, TransformerLM,
};
use fable_core::metrics::{
    evaluate_sample, mean_and_se, semantic_provider, SampleEvaluation, SemanticProvider,
    DEFAULT_SEMANTIC_PROVIDER,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{AblateArgs, Common, EditArgs, EvalArgs, PretrainArgs, TrajectoryArgs};
use crate::output::{create_dir, write_json, write_table, RunHeader, Table};
use crate::{pool, CliError, Outcome};

pub const PRE_EDITED: &str = "Pre-edited";

pub fn mode_label(mode: EditMode) -> &'static str {
    match mode {
        EditMode::Full => "FABLE",
        EditMode::NoStage1 => "w/o Stage1",
        EditMode::NoStage2 => "w/o Stage2",
    }
}

fn read_overrides(config: &Option<String>) -> Result<Value, CliError> {
    let Some(text) = config else {
        return Ok(json!({}));
    };
    let text = if text.trim_start().starts_with('{') {
        text.clone()
    } else {
        fs::read_to_string(text)
            .map_err(|e| CliError::Usage(format!("cannot read config {text}: {e}")))?
    };
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config is not JSON: {e}")))?;
    if !v.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    Ok(v)
}

fn load_samples(path: &Path) -> Result<Vec<EditSample>, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Dataset::from_json(&text.replace("\r\n", "\n"))
        .map(|d| d.samples)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<TransformerLM, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    TransformerLM::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn edit_config(
    common: &Common,
    overrides: &Value,
    model: &TransformerLM,
) -> Result<EditConfig, CliError> {
    let mut cfg = EditConfig::default()
        .with_overrides(overrides)
        .map_err(|e| CliError::Config(e.to_string()))?;
    cfg.seed = common.seed;
    cfg.validate(model.n_layers())
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn warn_empty(command: &str) {
    eprintln!("warning: dataset has no samples; {command} wrote an empty table");
}

// ---- pretrain ----

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct PretrainConfig {
    model: LMConfig,
    train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    #[serde(default, skip_deserializing)]
    run: Option<RunHeader>,
    items: Vec<CorpusItem>,
}

pub fn pretrain(args: PretrainArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    let overrides = read_overrides(&c.config)?;
    let mut cfg = apply_overrides(&PretrainConfig::default(), &overrides)
        .map_err(|e| CliError::Config(e.to_string()))?;
    cfg.model.seed = c.seed;
    cfg.train.seed = c.seed;
    cfg.model
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.train.steps == 0 || cfg.train.batch_size == 0 || !(cfg.train.lr > 0.0) {
        return Err(CliError::Config(
            "train.steps, train.batch_size and train.lr must be positive".into(),
        ));
    }
    let header = RunHeader {
        command: "pretrain",
        seed: c.seed,
        config: to_value(&cfg),
        inputs: json!({ "dataset": args.dataset, "synthetic": args.synthetic }),
    };

    let corpus = match (&args.dataset, args.synthetic) {
        (_, Some(n)) => {
            create_dir(&c.out)?;
            let world = generate_synthetic_corpus(n, c.seed)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let mut dataset = to_value(&Dataset::new(world.samples.clone()));
            dataset["run"] = to_value(&header);
            write_json(&c.out.join("dataset.json"), &dataset)?;
            write_json(
                &c.out.join("corpus.json"),
                &CorpusFile {
                    run: Some(header.clone()),
                    items: world.corpus.clone(),
                },
            )?;
            world.corpus
        }
        (Some(path), None) => {
            if !path.is_file() {
                return Err(CliError::Usage(format!(
                    "corpus {} does not exist",
                    path.display()
                )));
            }
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let file: CorpusFile = serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("{} is not a corpus file: {e}", path.display()))
            })?;
            create_dir(&c.out)?;
            file.items
        }
        (None, None) => return Err(CliError::Usage("pass --dataset or --synthetic".into())),
    };
    if corpus.is_empty() {
        return Err(CliError::Usage("corpus has no items".into()));
    }

    let mut model = TransformerLM::new(cfg.model.clone(), Tokenizer::default())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let start = Instant::now();
    let log = continue_training(&mut model, &corpus, &cfg.train, |step, loss| {
        if (step + 1) % 100 == 0 {
            eprintln!(
                "step {} loss {loss:.4} ({:.0}s)",
                step + 1,
                start.elapsed().as_secs_f64()
            );
        }
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let final_loss = corpus_loss(&model, &corpus).map_err(|e| CliError::Runtime(e.to_string()))?;

    model
        .save(c.out.join("model.ckpt"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut table = Table::new(&["step", "loss"]);
    for (i, l) in log.losses.iter().enumerate() {
        table.push(vec![json!(i), json!(l)]);
    }
    write_table(&c.out, "training_loss", c.format, &header, &table)?;
    write_json(
        &c.out.join("pretrain.json"),
        &json!({ "run": header, "corpus_items": corpus.len(), "final_corpus_loss": final_loss, "seconds": start.elapsed().as_secs_f64() }),
    )?;
    eprintln!("final corpus loss {final_loss:.6}");
    Ok(Outcome {
        failures: Vec::new(),
    })
}

// ---- edit ----

pub fn edit(args: EditArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    let overrides = read_overrides(&c.config)?;
    let samples = load_samples(&args.dataset)?;
    let model = load_model(&args.model)?;
    let cfg = edit_config(c, &overrides, &model)?;
    let header = RunHeader {
        command: "edit",
        seed: c.seed,
        config: to_value(&cfg),
        inputs: json!({ "dataset": args.dataset, "model": args.model, "mode": args.mode }),
    };
    let edited_dir = c.out.join("edited");
    let reports_dir = c.out.join("reports");
    create_dir(&edited_dir)?;
    create_dir(&reports_dir)?;

    let results = pool::map(&samples, c.jobs, |s| -> Result<Value, String> {
        let out = run_fable(&model, s, &cfg, args.mode).map_err(|e| e.to_string())?;
        let stem = file_stem(&s.id);
        out.model
            .save(edited_dir.join(format!("{stem}.ckpt")))
            .map_err(|e| e.to_string())?;
        write_json(
            &reports_dir.join(format!("{stem}.json")),
            &json!({ "run": header, "report": out.report }),
        )
        .map_err(|e| e.to_string())?;
        let r = &out.report;
        Ok(json!({
            "n_fine_qas": r.n_fine_qas,
            "stage_one_anchored": r.stage_one.as_ref().map(|s| s.anchored_fraction()),
            "stage_two_initial": r.stage_two.as_ref().map(|s| s.residual.initial_probability()),
            "stage_two_final": r.stage_two.as_ref().map(|s| s.residual.final_probability()),
            "seconds": r.stage_one.as_ref().map_or(0.0, |s| s.seconds) + r.stage_two.as_ref().map_or(0.0, |s| s.seconds),
        }))
    });

    let mut table = Table::new(&[
        "sample_id",
        "status",
        "n_fine_qas",
        "stage_one_anchored",
        "stage_two_initial_probability",
        "stage_two_final_probability",
        "seconds",
        "error",
    ]);
    let mut failures = Vec::new();
    let mut edited = Vec::new();
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok(v) => {
                edited.push(json!({ "sample_id": s.id, "checkpoint": format!("{}.ckpt", file_stem(&s.id)) }));
                table.push(vec![
                    json!(s.id),
                    json!("ok"),
                    v["n_fine_qas"].clone(),
                    v["stage_one_anchored"].clone(),
                    v["stage_two_initial"].clone(),
                    v["stage_two_final"].clone(),
                    v["seconds"].clone(),
                    Value::Null,
                ]);
            }
            Err(e) => {
                eprintln!("sample {} failed: {e}", s.id);
                table.push(vec![
                    json!(s.id),
                    json!("failed"),
                    Value::Null,
                    Value::Null,
                    Value::Null,
                    Value::Null,
                    Value::Null,
                    json!(e),
                ]);
                failures.push((s.id.clone(), e));
            }
        }
    }
    write_json(
        &edited_dir.join("manifest.json"),
        &json!({ "run": header, "mode": args.mode, "samples": edited }),
    )?;
    write_table(&c.out, "edit_summary", c.format, &header, &table)?;
    if samples.is_empty() {
        warn_empty("edit");
    }
    Ok(Outcome { failures })
}

// ---- eval ----

const METRIC_COLUMNS: [&str; 7] = [
    "holistic_semantic",
    "holistic_rouge_l",
    "fine_semantic",
    "fine_rouge_l",
    "hr",
    "c_lcs",
    "exact_match",
];

fn metric_values(e: &SampleEvaluation) -> [f64; 7] {
    let v = e.scores.values();
    [
        v[0],
        v[1],
        v[2],
        v[3],
        v[4],
        v[5],
        if e.holistic_exact_match { 1.0 } else { 0.0 },
    ]
}

enum Source {
    Single(Result<TransformerLM, String>),
    PerSample(PathBuf),
}

fn source_for(path: &Path) -> (String, Source) {
    if path.is_dir() {
        let label = fs::read_to_string(path.join("manifest.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<Value>(&t).ok())
            .and_then(|v| serde_json::from_value::<EditMode>(v["mode"].clone()).ok())
            .map(|m| mode_label(m).to_string())
            .unwrap_or_else(|| path.display().to_string());
        (label, Source::PerSample(path.to_path_buf()))
    } else {
        let model = TransformerLM::load(path).map_err(|e| format!("{}: {e}", path.display()));
        (PRE_EDITED.to_string(), Source::Single(model))
    }
}

fn evaluate_with(
    source: &Source,
    sample: &EditSample,
    provider: &dyn SemanticProvider,
) -> Result<SampleEvaluation, String> {
    match source {
        Source::Single(Ok(m)) => evaluate_sample(m, sample, provider).map_err(|e| e.to_string()),
        Source::Single(Err(e)) => Err(e.clone()),
        Source::PerSample(dir) => {
            let path = dir.join(format!("{}.ckpt", file_stem(&sample.id)));
            if !path.is_file() {
                return Err(format!("missing checkpoint {}", path.display()));
            }
            let m = TransformerLM::load(&path).map_err(|e| e.to_string())?;
            evaluate_sample(&m, sample, provider).map_err(|e| e.to_string())
        }
    }
}

fn eval_table() -> Table {
    let mut cols = vec!["label", "sample_id"];
    cols.extend(METRIC_COLUMNS);
    cols.extend(["semantic_provider", "holistic_output", "error"]);
    Table::new(&cols)
}

fn aggregate_rows(table: &mut Table, label: &str, values: &[[f64; 7]]) {
    if values.is_empty() {
        return;
    }
    let stats: Vec<(f64, f64)> = (0..7)
        .map(|c| mean_and_se(&values.iter().map(|v| v[c]).collect::<Vec<_>>()))
        .collect();
    for (name, pick) in [("mean", 0), ("se", 1)] {
        let mut row = vec![json!(label), json!(name)];
        row.extend(
            stats
                .iter()
                .map(|s| json!(if pick == 0 { s.0 } else { s.1 })),
        );
        row.extend([json!(DEFAULT_SEMANTIC_PROVIDER), Value::Null, Value::Null]);
        table.push(row);
    }
}

pub fn eval(args: EvalArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    let overrides = read_overrides(&c.config)?;
    let provider_name = match overrides.as_object().map(|o| o.len()) {
        Some(0) => DEFAULT_SEMANTIC_PROVIDER.to_string(),
        _ => {
            let extra: Vec<&String> = overrides
                .as_object()
                .unwrap()
                .keys()
                .filter(|k| *k != "semantic_provider")
                .collect();
            if let Some(k) = extra.first() {
                return Err(CliError::Config(format!("unknown configuration key {k:?}")));
            }
            overrides["semantic_provider"]
                .as_str()
                .ok_or_else(|| CliError::Config("semantic_provider must be a string".into()))?
                .to_string()
        }
    };
    let provider =
        semantic_provider(&provider_name).map_err(|e| CliError::Config(e.to_string()))?;
    let samples = load_samples(&args.dataset)?;
    create_dir(&c.out)?;
    let header = RunHeader {
        command: "eval",
        seed: c.seed,
        config: json!({ "semantic_provider": provider_name }),
        inputs: json!({ "dataset": args.dataset, "model": args.model }),
    };
    let mut table = eval_table();
    let mut failures = Vec::new();
    for path in &args.model {
        let (label, source) = source_for(path);
        let results = pool::map(&samples, c.jobs, |s| {
            evaluate_with(&source, s, provider.as_ref())
        });
        let mut ok = Vec::new();
        for (s, r) in samples.iter().zip(results) {
            match r {
                Ok(e) => {
                    let v = metric_values(&e);
                    let mut row = vec![json!(label), json!(s.id)];
                    row.extend(v.iter().map(|x| json!(x)));
                    row.extend([
                        json!(e.scores.semantic_provider),
                        json!(e.holistic_output),
                        Value::Null,
                    ]);
                    table.push(row);
                    ok.push(v);
                }
                Err(e) => {
                    let mut row = vec![json!(label), json!(s.id)];
                    row.extend((0..7).map(|_| Value::Null));
                    row.extend([json!(provider_name), Value::Null, json!(e)]);
                    table.push(row);
                    failures.push((format!("{label}/{}", s.id), e));
                }
            }
        }
        aggregate_rows(&mut table, &label, &ok);
    }
    write_table(&c.out, "eval", c.format, &header, &table)?;
    if samples.is_empty() {
        warn_empty("eval");
    }
    Ok(Outcome { failures })
}

// ---- ablate ----

struct Variant {
    label: String,
    mode: EditMode,
    config: EditConfig,
}

fn variant_label(mode: EditMode, tweaks: &serde_json::Map<String, Value>) -> String {
    let mut tags = Vec::new();
    if mode != EditMode::Full || tweaks.is_empty() {
        tags.push(mode_label(mode).to_string());
    }
    for (k, v) in tweaks {
        tags.push(match k.as_str() {
            "expansion_multiplier" => format!("N={v}×S"),
            "edit_layers" => {
                let layers: Vec<String> = v
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|x| x.to_string())
                    .collect();
                format!("L={}", layers.join(","))
            }
            _ => format!("{k}={v}"),
        });
    }
    tags.join(" ")
}

fn parse_variants(
    overrides: &Value,
    common: &Common,
    model: &TransformerLM,
) -> Result<Vec<Variant>, CliError> {
    let obj = overrides.as_object().expect("checked object");
    if let Some(k) = obj.keys().find(|k| *k != "base" && *k != "variants") {
        return Err(CliError::Config(format!(
            "unknown configuration key {k:?} (expected base, variants)"
        )));
    }
    let base_overrides = obj.get("base").cloned().unwrap_or_else(|| json!({}));
    let base = edit_config(common, &base_overrides, model)?;
    let specs: Vec<Value> = match obj.get("variants") {
        Some(Value::Array(v)) => v.clone(),
        Some(_) => return Err(CliError::Config("variants must be an array".into())),
        None => EditMode::ALL.iter().map(|m| json!({ "mode": m })).collect(),
    };
    if specs.is_empty() {
        return Err(CliError::Config("variants is empty".into()));
    }
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut tweaks = spec
            .as_object()
            .cloned()
            .ok_or_else(|| CliError::Config("each variant must be an object".into()))?;
        let label = match tweaks.remove("label") {
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err(CliError::Config("variant label must be a string".into())),
            None => None,
        };
        let mode = match tweaks.remove("mode") {
            Some(v) => serde_json::from_value(v)
                .map_err(|e| CliError::Config(format!("variant mode: {e}")))?,
            None => EditMode::Full,
        };
        let mut config = base
            .with_overrides(&Value::Object(tweaks.clone()))
            .map_err(|e| CliError::Config(e.to_string()))?;
        config.seed = common.seed;
        config
            .validate(model.n_layers())
            .map_err(|e| CliError::Config(e.to_string()))?;
        out.push(Variant {
            label: label.unwrap_or_else(|| variant_label(mode, &tweaks)),
            mode,
            config,
        });
    }
    Ok(out)
}

pub fn ablate(args: AblateArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    let overrides = read_overrides(&c.config)?;
    let samples = load_samples(&args.dataset)?;
    let model = load_model(&args.model)?;
    let variants = parse_variants(&overrides, c, &model)?;
    create_dir(&c.out)?;
    let header = RunHeader {
        command: "ablate",
        seed: c.seed,
        config: json!(variants
            .iter()
            .map(|v| json!({ "label": v.label, "mode": v.mode, "config": v.config }))
            .collect::<Vec<_>>()),
        inputs: json!({ "dataset": args.dataset, "model": args.model }),
    };
    let provider = semantic_provider(DEFAULT_SEMANTIC_PROVIDER).expect("default provider exists");
    let mut cols = vec!["label", "mode", "n_samples", "n_failed"];
    cols.extend(METRIC_COLUMNS);
    let se: Vec<String> = METRIC_COLUMNS.iter().map(|c| format!("{c}_se")).collect();
    cols.extend(se.iter().map(String::as_str));
    let mut table = Table::new(&cols);
    let mut failures = Vec::new();
    for v in &variants {
        eprintln!("variant {}", v.label);
        let results = pool::map(&samples, c.jobs, |s| -> Result<[f64; 7], String> {
            let out = run_fable(&model, s, &v.config, v.mode).map_err(|e| e.to_string())?;
            let e = evaluate_sample(&out.model, s, provider.as_ref()).map_err(|e| e.to_string())?;
            Ok(metric_values(&e))
        });
        let mut ok = Vec::new();
        for (s, r) in samples.iter().zip(results) {
            match r {
                Ok(x) => ok.push(x),
                Err(e) => failures.push((format!("{}/{}", v.label, s.id), e)),
            }
        }
        let stats: Vec<(f64, f64)> = (0..7)
            .map(|c| {
                if ok.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    mean_and_se(&ok.iter().map(|x| x[c]).collect::<Vec<_>>())
                }
            })
            .collect();
        let mut row = vec![
            json!(v.label),
            json!(v.mode),
            json!(samples.len()),
            json!(samples.len() - ok.len()),
        ];
        row.extend(stats.iter().map(|s| finite_or_null(s.0)));
        row.extend(stats.iter().map(|s| finite_or_null(s.1)));
        table.push(row);
    }
    write_table(&c.out, "ablate", c.format, &header, &table)?;
    if samples.is_empty() {
        warn_empty("ablate");
    }
    Ok(Outcome { failures })
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

// ---- trajectory ----

pub fn trajectory(args: TrajectoryArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    let overrides = read_overrides(&c.config)?;
    let samples = load_samples(&args.dataset)?;
    let model = load_model(&args.model)?;
    let cfg = edit_config(c, &overrides, &model)?;
    create_dir(&c.out)?;
    let header = RunHeader {
        command: "trajectory",
        seed: c.seed,
        config: to_value(&cfg),
        inputs: json!({ "dataset": args.dataset, "model": args.model }),
    };
    let results = pool::map(&samples, c.jobs, |s| {
        trajectory_compare(&model, s, &cfg).map_err(|e| e.to_string())
    });

    let mut curves = Table::new(&["sample_id", "mode", "step", "probability"]);
    let mut summary = Table::new(&[
        "sample_id",
        "full_initial",
        "no_stage1_initial",
        "initial_delta",
        "full_steps_to_threshold",
        "no_stage1_steps_to_threshold",
        "starts_higher",
        "converges_no_slower",
    ]);
    let mut failures = Vec::new();
    let (mut higher, mut faster, mut n) = (0usize, 0usize, 0usize);
    for (s, r) in samples.iter().zip(results) {
        let t = match r {
            Ok(t) => t,
            Err(e) => {
                failures.push((s.id.clone(), e));
                continue;
            }
        };
        for (mode, curve) in [
            (EditMode::Full, &t.full),
            (EditMode::NoStage1, &t.no_stage1),
        ] {
            for (step, p) in curve.iter().enumerate() {
                curves.push(vec![json!(s.id), json!(mode), json!(step), json!(p)]);
            }
        }
        n += 1;
        higher += t.starts_higher() as usize;
        faster += t.converges_no_slower() as usize;
        summary.push(vec![
            json!(s.id),
            json!(t.full[0]),
            json!(t.no_stage1[0]),
            json!(t.initial_delta()),
            json!(t.full_steps_to_threshold),
            json!(t.no_stage1_steps_to_threshold),
            json!(t.starts_higher()),
            json!(t.converges_no_slower()),
        ]);
    }
    write_table(&c.out, "trajectory", c.format, &header, &curves)?;
    write_table(&c.out, "trajectory_summary", c.format, &header, &summary)?;
    let frac = |k: usize| {
        if n == 0 {
            Value::Null
        } else {
            json!(k as f64 / n as f64)
        }
    };
    write_json(
        &c.out.join("trajectory_overview.json"),
        &json!({
            "run": header,
            "samples": n,
            "fraction_starts_higher": frac(higher),
            "fraction_converges_no_slower": frac(faster),
            "majority_starts_higher": n > 0 && 2 * higher > n,
            "majority_converges_no_slower": n > 0 && 2 * faster > n,
        }),
    )?;
    if samples.is_empty() {
        warn_empty("trajectory");
    }
    Ok(Outcome { failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_labels() {
        let m = |v: Value| v.as_object().unwrap().clone();
        assert_eq!(variant_label(EditMode::Full, &m(json!({}))), "FABLE");
        assert_eq!(
            variant_label(EditMode::NoStage1, &m(json!({}))),
            "w/o Stage1"
        );
        assert_eq!(
            variant_label(EditMode::Full, &m(json!({"expansion_multiplier": 10}))),
            "N=10×S"
        );
        assert_eq!(
            variant_label(EditMode::Full, &m(json!({"edit_layers": [2, 3]}))),
            "L=2,3"
        );
        assert_eq!(
            variant_label(EditMode::NoStage2, &m(json!({"layer_steps": 5}))),
            "w/o Stage2 layer_steps=5"
        );
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("syn-001"), "syn-001");
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
