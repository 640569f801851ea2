use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;
use wfkit::defense::defend_dataset;
use wfkit::eval::{argmax, run_experiment, ExperimentConfig, ModelKind};
use wfkit::explain::{aggregate_relevance, lrp_w2, lrp_w2_predicted};
use wfkit::features::{write_feature_csv, FeatureSpec};
use wfkit::html::{extract_corpus, run_fp_experiment, FpConfig, HtmlFeatureRow, FEATURE_NAMES, N_HTML_FEATURES};
use wfkit::nn::{
    build_ae, build_cnn, build_mlp, load_model, model_to_json, to_matrix, train, train_classifier, Loss, MlpConfig,
    NeuralModel, TrainConfig,
};
use wfkit::par::{self, ExecMode};
use wfkit::trace::{generate_synthetic, ingest_jsonl, split_iterations, write_jsonl, Dataset};
use wfkit::tune::{mlp_search_space, optimize_from, Params, SearchSpace, TpeSettings, Trial};

use crate::config::{check_train, LrpTarget, RunConfig};
use crate::output::{Stamp, Staged};

pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub mode: ExecMode,
    pub stamp: Stamp,
}

fn load_dataset(ctx: &Ctx) -> Result<Dataset> {
    let ds = if let Some(d) = &ctx.cfg.dataset {
        ingest_jsonl(&d.path).with_context(|| format!("dataset.path: cannot load {}", d.path.display()))?
    } else if let Some(s) = &ctx.cfg.synthetic {
        generate_synthetic(s, ctx.seed).context("synthetic")?
    } else {
        bail!("need a [dataset] path or a [synthetic] section");
    };
    ensure!(!ds.is_empty(), "dataset is empty");
    Ok(ds)
}

fn build_classifier(kind: &ModelKind, dim: usize, n_classes: usize, seed: u64) -> Result<NeuralModel> {
    let m = match kind {
        ModelKind::Mlp(c) => build_mlp(dim, n_classes, c, seed),
        ModelKind::Cnn(c) => build_cnn(dim, n_classes, c, seed),
    };
    m.with_context(|| format!("model does not fit features.dim = {dim}"))
}

fn rows_of(x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| x[i].clone()).collect()
}

fn accuracy(model: &NeuralModel, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    let p = model.predict_proba_batch(to_matrix(x)?.view())?;
    let correct = p.rows().into_iter().zip(y).filter(|(r, &l)| argmax(&r.to_vec()) == l).count();
    Ok(correct as f64 / y.len() as f64)
}

fn csv_bytes(stamp: &Stamp, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = format!("# {}\n", stamp.csv_comment()).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn model_bytes(model: &NeuralModel, stamp: &Stamp, extra: &[(&'static str, serde_json::Value)]) -> Result<Vec<u8>> {
    let mut prov = stamp.provenance();
    prov.extend(extra.iter().cloned());
    let mut s = model_to_json(model, &prov)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn strings<T: ToString>(it: impl IntoIterator<Item = T>) -> Vec<String> {
    it.into_iter().map(|v| v.to_string()).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn synth(ctx: &Ctx) -> Result<Staged> {
    let spec = ctx.cfg.synthetic.clone().unwrap_or_default();
    let ds = generate_synthetic(&spec, ctx.seed).context("synthetic")?;
    let mut buf = Vec::new();
    write_jsonl(&ds, &mut buf, Some(&ctx.stamp.header()))?;
    let mut out = Staged::default();
    out.add("dataset.jsonl", buf);
    Ok(out)
}

#[derive(Serialize)]
struct TrainReport {
    classes: Vec<String>,
    features: FeatureSpec,
    n_train: usize,
    n_test: usize,
    loss_history: Vec<f64>,
    train_accuracy: f64,
    test_accuracy: f64,
}

/// Fit on the first split of the configured plan and score its test part.
pub fn train_cmd(ctx: &Ctx) -> Result<Staged> {
    let features = ctx.cfg.features()?;
    let kind = ctx.cfg.model()?;
    let tcfg = ctx.cfg.train_for(&kind)?.with_seed(ctx.seed);
    let split = ctx.cfg.split()?;
    let ds = load_dataset(ctx)?;
    let model = build_classifier(&kind, features.dim(), ds.n_classes(), ctx.seed)?;

    let x = features.extract_all(&ds.records, ctx.mode)?;
    let y = ds.labels();
    let plan = split_iterations(&ds, split.ratio, 1, ctx.seed)?;
    let s = &plan.iterations[0];
    let (xtr, xte) = (rows_of(&x, &s.train), rows_of(&x, &s.test));
    let ytr: Vec<usize> = s.train.iter().map(|&i| y[i]).collect();
    let yte: Vec<usize> = s.test.iter().map(|&i| y[i]).collect();
    ensure!(
        tcfg.batch_size <= xtr.len(),
        "train.batch_size: {} exceeds the {} training instances",
        tcfg.batch_size,
        xtr.len()
    );
    let trained = train_classifier(model, &to_matrix(&xtr)?, &ytr, &tcfg)?;
    let report = TrainReport {
        classes: ds.classes().to_vec(),
        features,
        n_train: xtr.len(),
        n_test: xte.len(),
        train_accuracy: accuracy(&trained.model, &xtr, &ytr)?,
        test_accuracy: accuracy(&trained.model, &xte, &yte)?,
        loss_history: trained.loss_history,
    };
    log::info!("test accuracy {:.4}", report.test_accuracy);

    let mut out = Staged::default();
    out.add(
        "model.json",
        model_bytes(
            &trained.model,
            &ctx.stamp,
            &[("classes", json!(ds.classes())), ("features", json!(features))],
        )?,
    );
    out.add("train_report.json", ctx.stamp.wrap_json("report", &report)?);
    Ok(out)
}

pub fn eval(ctx: &Ctx) -> Result<Staged> {
    let features = ctx.cfg.features()?;
    let model = ctx.cfg.model()?;
    let train = ctx.cfg.train_for(&model)?;
    let split = ctx.cfg.split()?;
    let policy = ctx.cfg.policy()?;
    let ev = ctx.cfg.eval.clone().unwrap_or_default();
    for (i, t) in ev.sweep.iter().enumerate() {
        ensure!((0.0..1.0).contains(t), "eval.sweep[{i}]: threshold {t} outside [0, 1)");
    }
    build_classifier(&model, features.dim(), 2, ctx.seed)?;
    let ds = load_dataset(ctx)?;
    let exp = ExperimentConfig {
        features,
        model,
        train,
        ratio: split.ratio,
        n_iters: split.n_iters,
        seed: ctx.seed,
        policy,
        task: ev.task,
        sweep: ev.sweep,
        standardize: ev.standardize,
    };
    let report = run_experiment(&ds, &exp, ctx.mode)?;
    let mut out = Staged::default();
    out.add("eval_report.json", ctx.stamp.wrap_json("report", &report)?);
    out.add(
        "eval_report.txt",
        format!("# {}\n{}", ctx.stamp.csv_comment(), report.render_table()).into_bytes(),
    );
    if !report.sweep.is_empty() {
        let rows = report.sweep.iter().map(|r| {
            vec![
                r.threshold.to_string(),
                r.confusion.tp.to_string(),
                r.confusion.fp.to_string(),
                r.confusion.tn.to_string(),
                r.confusion.fn_.to_string(),
                opt(r.tpr),
                opt(r.fpr),
                opt(r.bdr),
            ]
        });
        out.add(
            "sweep.csv",
            csv_bytes(&ctx.stamp, &strings(["threshold", "tp", "fp", "tn", "fn", "tpr", "fpr", "bdr"]), rows)?,
        );
    }
    let rows = report.site_accuracy.iter().map(|(s, a)| vec![s.clone(), a.to_string()]);
    out.add("site_accuracy.csv", csv_bytes(&ctx.stamp, &strings(["site", "accuracy"]), rows)?);
    Ok(out)
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> serde_json::Result<T> {
    serde_json::from_value(json!(s))
}

/// Map sampled parameters onto the MLP and its training settings.
fn apply_params(params: &Params, mlp: &mut MlpConfig, train: &mut TrainConfig) -> Result<()> {
    for (name, v) in params {
        let num = || v.as_f64().with_context(|| format!("tune.space '{name}': expected a number"));
        let int = || {
            v.as_i64()
                .filter(|&i| i > 0)
                .with_context(|| format!("tune.space '{name}': expected a positive integer"))
        };
        let choice = || v.as_str().with_context(|| format!("tune.space '{name}': expected a choice"));
        match name.as_str() {
            "learning_rate" => train.learning_rate = num()?,
            "epochs" => train.epochs = int()? as usize,
            "batch_size" => train.batch_size = int()? as usize,
            "hidden_units" => mlp.hidden_units = [int()? as usize; 2],
            "hidden_units_1" => mlp.hidden_units[0] = int()? as usize,
            "hidden_units_2" => mlp.hidden_units[1] = int()? as usize,
            "keep_prob" => mlp.keep_prob = num()?,
            "l2" => mlp.l2 = num()?,
            "optimizer" => {
                train.optimizer = parse_enum(choice()?)
                    .with_context(|| format!("tune.space 'optimizer': unknown optimizer {v:?}"))?
            }
            "activation" => {
                mlp.activation = parse_enum(choice()?)
                    .with_context(|| format!("tune.space 'activation': unknown activation {v:?}"))?
            }
            _ => bail!("tune.space: unknown parameter '{name}'"),
        }
    }
    Ok(())
}

fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("tune.resume: cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if v.get(wfkit::trace::JSONL_HEADER_KEY).is_some() {
            continue;
        }
        out.push(serde_json::from_value(v).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn tune(ctx: &Ctx) -> Result<Staged> {
    let t = ctx.cfg.tune.clone().unwrap_or_default();
    ensure!(t.budget > 0, "tune.budget: must be at least 1");
    ensure!(t.n_iters > 0, "tune.n_iters: must be at least 1");
    let space = if t.space.is_empty() {
        mlp_search_space()
    } else {
        SearchSpace { dims: t.space.clone() }
    };
    space.validate().context("tune.space")?;
    let base_mlp = match ctx.cfg.model.clone() {
        None => MlpConfig::default(),
        Some(ModelKind::Mlp(m)) => m,
        Some(ModelKind::Cnn(_)) => bail!("model.kind: tuning supports the mlp model only"),
    };
    let base_train = ctx.cfg.train.clone().unwrap_or_else(TrainConfig::mlp);
    // Surface naming errors before any training.
    let probe = wfkit::tune::suggest(&[], &space, ctx.seed);
    apply_params(&probe, &mut base_mlp.clone(), &mut base_train.clone())?;

    let features = ctx.cfg.features()?;
    let split = ctx.cfg.split()?;
    let history = match &t.resume {
        Some(p) => read_trials(p)?,
        None => Vec::new(),
    };
    let ds = load_dataset(ctx)?;
    build_mlp(features.dim(), ds.n_classes(), &base_mlp, ctx.seed)?;
    let x = features.extract_all(&ds.records, ctx.mode)?;
    let y = ds.labels();
    let plan = split_iterations(&ds, split.ratio, t.n_iters, ctx.seed)?;

    let objective = |params: &Params| -> Result<f64> {
        let mut mlp = base_mlp.clone();
        let mut tc = base_train.clone();
        apply_params(params, &mut mlp, &mut tc)?;
        check_train(&tc)?;
        let errs = par::try_map_indexed(ctx.mode, plan.iterations.len(), |i| -> Result<f64> {
            let s = &plan.iterations[i];
            let seed = ctx.seed.wrapping_add(i as u64);
            let xtr = rows_of(&x, &s.train);
            let ytr: Vec<usize> = s.train.iter().map(|&j| y[j]).collect();
            let mut tc = tc.clone().with_seed(seed);
            tc.batch_size = tc.batch_size.min(xtr.len());
            let model = build_mlp(features.dim(), ds.n_classes(), &mlp, seed)?;
            let trained = train_classifier(model, &to_matrix(&xtr)?, &ytr, &tc)?;
            let yte: Vec<usize> = s.test.iter().map(|&j| y[j]).collect();
            Ok(1.0 - accuracy(&trained.model, &rows_of(&x, &s.test), &yte)?)
        })?;
        Ok(errs.iter().sum::<f64>() / errs.len() as f64)
    };
    let outcome = optimize_from(history, objective, &space, t.budget, ctx.seed, t.strategy, &TpeSettings::default())?;

    let mut trials = Vec::new();
    serde_json::to_writer(&mut trials, &json!({ wfkit::trace::JSONL_HEADER_KEY: ctx.stamp.header() }))?;
    trials.push(b'\n');
    for tr in &outcome.history {
        serde_json::to_writer(&mut trials, tr)?;
        trials.push(b'\n');
    }
    let mut out = Staged::default();
    out.add("best_params.json", ctx.stamp.wrap_json("best", &outcome.best)?);
    out.add("trials.jsonl", trials);
    Ok(out)
}

pub fn encode(ctx: &Ctx) -> Result<Staged> {
    let features = ctx.cfg.features()?;
    let enc = ctx.cfg.encode.clone().unwrap_or_default();
    let dim = features.dim();
    let pretrained = match &enc.model {
        Some(p) => {
            let m = load_model(p).with_context(|| format!("encode.model: cannot load {}", p.display()))?;
            ensure!(m.encoder_layers().is_some(), "encode.model: {} is not an autoencoder", p.display());
            ensure!(
                m.input_dim() == dim,
                "encode.model: autoencoder expects {} inputs but features.dim = {dim}",
                m.input_dim()
            );
            Some(m)
        }
        None => None,
    };
    let fresh = match pretrained {
        Some(_) => None,
        None => Some(build_ae(dim, &enc.ae, ctx.seed).context("encode.ae")?),
    };
    let tcfg = ctx.cfg.train.clone().unwrap_or_else(TrainConfig::ae).with_seed(ctx.seed);
    check_train(&tcfg)?;

    let ds = load_dataset(ctx)?;
    let x = to_matrix(&features.extract_all(&ds.records, ctx.mode)?)?;
    let mut out = Staged::default();
    let model = match (pretrained, fresh) {
        (Some(m), _) => m,
        (None, Some(m)) => {
            ensure!(
                tcfg.batch_size <= x.nrows(),
                "train.batch_size: {} exceeds the {} instances",
                tcfg.batch_size,
                x.nrows()
            );
            let trained = train(m, &x, &x, &tcfg)?;
            out.add("ae_model.json", model_bytes(&trained.model, &ctx.stamp, &[("features", json!(features))])?);
            trained.model
        }
        (None, None) => unreachable!(),
    };
    let codes = model.encode_batch(x.view())?;
    let rows: Vec<Vec<f64>> = codes.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut buf = Vec::new();
    write_feature_csv(
        &mut buf,
        &rows,
        &ds.labels(),
        &[ctx.stamp.csv_comment(), format!("classes={}", ds.classes().join(","))],
    )?;
    out.add("encoded.csv", buf);
    Ok(out)
}

pub fn lrp(ctx: &Ctx) -> Result<Staged> {
    let l = ctx.cfg.lrp.clone().context("missing [lrp] section")?;
    let features = ctx.cfg.features()?;
    let model = load_model(&l.model).with_context(|| format!("lrp.model: cannot load {}", l.model.display()))?;
    ensure!(
        model.loss() == Loss::CategoricalCrossEntropy,
        "lrp.model: {} is not a classifier",
        l.model.display()
    );
    ensure!(
        model.input_dim() == features.dim(),
        "lrp.model: model expects {} inputs but features.dim = {}",
        model.input_dim(),
        features.dim()
    );
    let ds = load_dataset(ctx)?;
    if l.target == LrpTarget::True {
        ensure!(
            model.output_dim() == ds.n_classes(),
            "lrp.target: model has {} outputs but the dataset has {} classes",
            model.output_dim(),
            ds.n_classes()
        );
    }
    let n = l.limit.unwrap_or(ds.len()).min(ds.len());
    let records = &ds.records[..n];
    let x = features.extract_all(records, ctx.mode)?;
    let labels = ds.labels();
    let runs = par::try_map_indexed(ctx.mode, n, |i| match l.target {
        LrpTarget::Predicted => lrp_w2_predicted(&model, &x[i]),
        LrpTarget::True => lrp_w2(&model, &x[i], labels[i]),
    })?;
    let agg = aggregate_relevance(&runs)?;

    let mut out = Staged::default();
    let mut buf = Vec::new();
    let rows: Vec<Vec<f64>> = runs.iter().map(|r| r.scores.clone()).collect();
    let targets: Vec<usize> = runs.iter().map(|r| r.target).collect();
    write_feature_csv(
        &mut buf,
        &rows,
        &targets,
        &[ctx.stamp.csv_comment(), "label column is the explained output".to_string()],
    )?;
    out.add("relevance.csv", buf);
    let ranking = agg
        .ranking
        .iter()
        .enumerate()
        .map(|(rank, &f)| vec![(rank + 1).to_string(), f.to_string(), agg.summed[f].to_string()]);
    out.add(
        "relevance_ranking.csv",
        csv_bytes(&ctx.stamp, &strings(["rank", "feature", "summed_relevance"]), ranking)?,
    );
    Ok(out)
}

pub fn defend(ctx: &Ctx) -> Result<Staged> {
    let params = ctx.cfg.defense.context("missing [defense] section")?;
    params.validate().context("defense")?;
    let ds = load_dataset(ctx)?;
    let d = defend_dataset(&ds, &params, ctx.mode)?;
    let mut buf = Vec::new();
    write_jsonl(&d.dataset, &mut buf, Some(&ctx.stamp.header()))?;
    let mut out = Staged::default();
    out.add("defended.jsonl", buf);
    let rows = d.rows.iter().map(|r| {
        vec![
            r.index.to_string(),
            r.label.clone(),
            r.original_bytes.to_string(),
            r.defended_bytes.to_string(),
            r.overhead_percent.to_string(),
        ]
    });
    out.add(
        "overhead.csv",
        csv_bytes(
            &ctx.stamp,
            &strings(["index", "label", "original_bytes", "defended_bytes", "overhead_percent"]),
            rows,
        )?,
    );
    out.add(
        "overhead_summary.json",
        ctx.stamp.wrap_json(
            "summary",
            &json!({
                "defense": params,
                "corpus_overhead_percent": d.corpus_overhead,
                "mean_overhead_percent": d.mean_overhead,
            }),
        )?,
    );
    Ok(out)
}

fn html_rows(ctx: &Ctx) -> Result<Vec<HtmlFeatureRow>> {
    let h = ctx.cfg.html.as_ref().context("missing [html] section")?;
    ensure!(h.dir.is_dir(), "html.dir: {} is not a directory", h.dir.display());
    extract_corpus(&h.dir, &h.meta, ctx.mode).context("html")
}

pub fn htmlfeat(ctx: &Ctx) -> Result<Staged> {
    let rows = html_rows(ctx)?;
    let mut header = strings(["instance_id", "site"]);
    header.extend(strings(FEATURE_NAMES));
    let body = rows.iter().map(|r| {
        let mut v = vec![r.instance_id.clone(), r.site.clone()];
        v.extend(strings(&r.values));
        v
    });
    let mut out = Staged::default();
    out.add("html_features.csv", csv_bytes(&ctx.stamp, &header, body)?);
    Ok(out)
}

fn read_html_features(path: &Path) -> Result<Vec<HtmlFeatureRow>> {
    let ctx = || format!("fp.features: {}", path.display());
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).with_context(ctx)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(ctx)?;
        ensure!(
            rec.len() == N_HTML_FEATURES + 2,
            "fp.features: row {} has {} columns, expected {}",
            i + 1,
            rec.len(),
            N_HTML_FEATURES + 2
        );
        let values = rec
            .iter()
            .skip(2)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("fp.features: row {}", i + 1))?;
        rows.push(HtmlFeatureRow {
            values,
            instance_id: rec[0].to_string(),
            site: rec[1].to_string(),
        });
    }
    Ok(rows)
}

fn read_site_accuracy(path: &Path) -> Result<BTreeMap<String, f64>> {
    let ctx = || format!("fp.site_accuracy: {}", path.display());
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).with_context(ctx)?;
    let mut map = BTreeMap::new();
    for rec in rdr.deserialize::<(String, f64)>() {
        let (site, acc) = rec.with_context(ctx)?;
        map.insert(site, acc);
    }
    Ok(map)
}

#[derive(Serialize)]
struct FpRun<'a> {
    config: &'a FpConfig,
    reports: Vec<wfkit::html::FpReport>,
}

pub fn fp(ctx: &Ctx) -> Result<Staged> {
    let f = ctx.cfg.fp.clone().context("missing [fp] section")?;
    ensure!(!f.thresholds.is_empty(), "fp.thresholds: need at least one threshold");
    for (i, t) in f.thresholds.iter().enumerate() {
        ensure!((0.0..1.0).contains(t), "fp.thresholds[{i}]: {t} outside [0, 1)");
    }
    ensure!(f.ratio > 0.0 && f.ratio < 1.0, "fp.ratio: must lie in (0, 1), got {}", f.ratio);
    ensure!(f.n_iters > 0, "fp.n_iters: must be at least 1");
    check_train(&f.train).context("fp.train")?;
    let rows = match &f.features {
        Some(p) => read_html_features(p)?,
        None => html_rows(ctx)?,
    };
    let acc = read_site_accuracy(&f.site_accuracy)?;
    let mut cfg = FpConfig {
        threshold: f.thresholds[0],
        ratio: f.ratio,
        n_iters: f.n_iters,
        seed: ctx.seed,
        mlp: f.mlp.clone(),
        train: f.train.clone(),
        oversample: f.oversample,
        importance_trees: f.importance_trees,
    };
    let mut reports = Vec::with_capacity(f.thresholds.len());
    for &t in &f.thresholds {
        cfg.threshold = t;
        reports.push(run_fp_experiment(&rows, &acc, &cfg, ctx.mode).with_context(|| format!("threshold {t}"))?);
    }
    let summary = reports.iter().map(|r| {
        vec![
            r.threshold.to_string(),
            r.class_counts[0].to_string(),
            r.class_counts[1].to_string(),
            r.weighted_accuracy.mean.to_string(),
            r.weighted_accuracy.std.to_string(),
            r.weighted_mse.mean.to_string(),
            r.weighted_mse.std.to_string(),
        ]
    });
    let header = strings(["threshold", "n_unfingerprintable", "n_fingerprintable", "wacc_mean", "wacc_std", "wmse_mean", "wmse_std"]);
    let mut out = Staged::default();
    out.add("fp_summary.csv", csv_bytes(&ctx.stamp, &header, summary)?);
    out.add("fp_report.json", ctx.stamp.wrap_json("fp", &FpRun { config: &cfg, reports })?);
    Ok(out)
}

