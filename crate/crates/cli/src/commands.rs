use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use stochid_core::ann::{output_pdf_comparison, train_on_database, MlpModel, TrainConfig, TrainOutcome};
use stochid_core::database::{
    condition_database, correlation_matrix, generate_initial, Database, DbKind, GenerationConfig, IntegrationMethod,
    HYPER_DIM,
};
use stochid_core::qoi::{QoiVector, QOI_DIM};
use stochid_core::robustness::{robustness_study, RobustnessEntry};

use crate::config::PipelineConfig;
use crate::output::{write_csv, write_json, write_run_manifest, write_text, InputRef};
use crate::svg::{heatmap, line_plot, Band, Series, PALETTE};
use crate::Common;

pub const HYPER_NAMES: [&str; HYPER_DIM] = ["delta", "ell", "kappa", "mu"];

fn setup(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &PipelineConfig, default: &str) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.output_dir.join(default));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn database_inputs(dir: &Path) -> Result<Vec<InputRef>> {
    Ok(vec![InputRef::file(&dir.join("manifest.json"))?, InputRef::file(&dir.join("data.csv"))?])
}

pub fn generate(common: &Common, rows: Option<usize>) -> Result<()> {
    let mut cfg = setup(common)?;
    if let Some(n) = rows {
        cfg.n_d = n;
    }
    let gen = GenerationConfig { forward: cfg.forward, admissible: cfg.admissible, seed: cfg.seed };
    let dir = common.out.clone().unwrap_or_else(|| cfg.output_dir.join("db_initial"));
    log::info!("generating {} rows (seed {}) into {}", cfg.n_d, cfg.seed, dir.display());
    let db = generate_initial(cfg.n_d, &gen)?;
    db.save(&dir)?;
    log::info!("wrote {} rows, {} forward evaluations resampled", db.len(), db.manifest.resampled);
    Ok(())
}

pub fn condition(common: &Common, db: Option<PathBuf>, scale: Option<f64>, method: Option<&str>) -> Result<()> {
    let mut cfg = setup(common)?;
    if let Some(s) = scale {
        cfg.conditioning.bandwidth_scale = s;
    }
    if let Some(m) = method {
        cfg.conditioning.method = match m {
            "trapezoid" => IntegrationMethod::Trapezoid,
            "closed-form" | "closed_form" => IntegrationMethod::ClosedForm,
            other => bail!("unknown integration method {other:?} (expected trapezoid or closed-form)"),
        };
    }
    let src = db.unwrap_or_else(|| cfg.output_dir.join("db_initial"));
    let initial = Database::load_kind(&src, DbKind::Initial)?;
    let processed = condition_database(&initial, &cfg.conditioning)?;
    let dir = common.out.clone().unwrap_or_else(|| cfg.output_dir.join("db_processed"));
    processed.save(&dir)?;
    let rec = processed.manifest.conditioning.as_ref().expect("conditioned");
    log::info!("bandwidths h = {:?}", rec.bandwidths_h);
    log::info!("wrote processed database with {} rows to {}", processed.len(), dir.display());
    Ok(())
}

pub fn analyze(common: &Common, db_path: &Path) -> Result<()> {
    let cfg = setup(common)?;
    let db = Database::load(db_path)?;
    let r = correlation_matrix(&db)?;
    let dir = out_dir(common, &cfg, &format!("analysis_{}", db.kind()))?;
    let mut csv = String::from("qoi,H1,H2,H3,H4\n");
    for (k, row) in r.iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        csv.push_str(&format!("Q{},{}\n", k + 1, vals.join(",")));
    }
    write_text(&dir.join("correlation.csv"), &csv)?;
    let rows: Vec<String> = (1..=QOI_DIM).map(|k| format!("Q{k}")).collect();
    let cols: Vec<String> = (1..=HYPER_DIM).map(|j| format!("H{j}")).collect();
    let values: Vec<Vec<f64>> = r.iter().map(|row| row.to_vec()).collect();
    write_text(&dir.join("correlation.svg"), &heatmap(&format!("Correlation ({} database)", db.kind()), &rows, &cols, &values))?;
    write_run_manifest(&dir, "analyze", cfg.seed, database_inputs(db_path)?, json!({ "db": db_path }), &cfg)?;
    for (j, name) in HYPER_NAMES.iter().enumerate() {
        let best = (0..QOI_DIM).max_by(|&a, &b| r[a][j].abs().total_cmp(&r[b][j].abs())).expect("nonempty");
        log::info!("{name}: strongest correlation with Q{} (r = {:.3})", best + 1, r[best][j]);
    }
    Ok(())
}

fn parse_arch(s: &str) -> Result<Vec<usize>> {
    let hidden: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("invalid layer width {p:?} in --arch")))
        .collect::<Result<_>>()?;
    if hidden.is_empty() || hidden.contains(&0) {
        bail!("--arch needs positive layer widths, e.g. 50 or 25,10");
    }
    Ok(hidden)
}

fn arch_label(hidden: &[usize]) -> String {
    hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-")
}

#[derive(Serialize)]
struct RestartSummary {
    seed: u64,
    best_iteration: usize,
    train_mse: f64,
    validation_mse: f64,
    test_mse: f64,
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    database_kind: DbKind,
    database_sha256: String,
    hidden: &'a [usize],
    split_sizes: [usize; 3],
    best_iteration: usize,
    iterations: usize,
    stop_reason: stochid_core::ann::StopReason,
    train_mse: f64,
    validation_mse: f64,
    test_mse: f64,
    r_test: &'a [f64],
    r_all: &'a [f64],
    pdf_l1_distance: Vec<f64>,
    restarts: Vec<Option<RestartSummary>>,
}

fn write_training(dir: &Path, db: &Database, cfg: &TrainConfig, out: &TrainOutcome) -> Result<()> {
    out.model.save(&dir.join("model.json"))?;
    let rep = &out.report;
    let mut report = String::from("iteration,train,validation,test\n");
    for r in &rep.history {
        report.push_str(&format!("{},{:e},{:e},{:e}\n", r.iteration, r.train, r.validation, r.test));
    }
    write_text(&dir.join("train_report.csv"), &report)?;
    let pdfs = output_pdf_comparison(&out.model, db, 256)?;
    for p in &pdfs {
        let name = HYPER_NAMES[p.component];
        write_csv(
            &dir.join(format!("pdf_{name}.csv")),
            &["grid", "output", "target"],
            (0..p.grid.len()).map(|i| vec![p.grid[i], p.output_pdf[i], p.target_pdf[i]]),
        )?;
        let series = [
            Series { label: "network".into(), x: p.grid.clone(), y: p.output_pdf.clone(), color: PALETTE[0], dashed: false },
            Series { label: "target".into(), x: p.grid.clone(), y: p.target_pdf.clone(), color: PALETTE[1], dashed: true },
        ];
        write_text(&dir.join(format!("pdf_{name}.svg")), &line_plot(&format!("pdf of {name}"), name, "density", &series, &[]))?;
    }
    let metrics = TrainMetrics {
        database_kind: db.kind(),
        database_sha256: db.data_sha256(),
        hidden: &cfg.hidden,
        split_sizes: [out.split.train.len(), out.split.validation.len(), out.split.test.len()],
        best_iteration: rep.best_iteration,
        iterations: rep.iterations,
        stop_reason: rep.stop_reason,
        train_mse: rep.train_mse,
        validation_mse: rep.validation_mse,
        test_mse: rep.test_mse,
        r_test: &rep.r_test,
        r_all: &rep.r_all,
        pdf_l1_distance: pdfs.iter().map(|p| p.l1_distance).collect(),
        restarts: out
            .restarts
            .iter()
            .map(|r| {
                r.as_ref().map(|r| RestartSummary {
                    seed: r.seed,
                    best_iteration: r.best_iteration,
                    train_mse: r.train_mse,
                    validation_mse: r.validation_mse,
                    test_mse: r.test_mse,
                })
            })
            .collect(),
    };
    write_json(&dir.join("metrics.json"), &metrics)
}

/// Desk-scale architecture grid for `--sweep`.
const SWEEP: [&[usize]; 7] = [&[10], &[25], &[50], &[100], &[10, 5], &[25, 10], &[50, 25]];

pub fn train(
    common: &Common,
    db_path: &Path,
    arch: Option<&str>,
    restarts: Option<usize>,
    max_iterations: Option<usize>,
    sweep: bool,
) -> Result<()> {
    let cfg = setup(common)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    if let Some(a) = arch {
        tcfg.hidden = parse_arch(a)?;
    }
    if let Some(r) = restarts {
        tcfg.restarts = r;
    }
    if let Some(m) = max_iterations {
        tcfg.max_iterations = m;
    }
    let db = Database::load(db_path)?;
    let dir = out_dir(common, &cfg, &format!("model_{}", db.kind()))?;
    let args = json!({ "db": db_path, "arch": arch, "restarts": restarts, "max_iterations": max_iterations, "sweep": sweep });

    if !sweep {
        let out = train_on_database(&db, &tcfg)?;
        log::info!(
            "{} on {} database: test mse {:.3e}, best iteration {} ({:?}), {:.1} s",
            arch_label(&tcfg.hidden),
            db.kind(),
            out.report.test_mse,
            out.report.best_iteration,
            out.report.stop_reason,
            out.report.wall_time_s
        );
        write_training(&dir, &db, &tcfg, &out)?;
        write_run_manifest(&dir, "train", cfg.seed, database_inputs(db_path)?, args, &tcfg)?;
        return Ok(());
    }

    let mut table = String::from("arch,train_mse,validation_mse,test_mse,best_iteration,r_test_1,r_test_2,r_test_3,r_test_4\n");
    let mut best: Option<(f64, TrainOutcome, TrainConfig)> = None;
    for hidden in SWEEP {
        let c = TrainConfig { hidden: hidden.to_vec(), ..tcfg.clone() };
        let out = train_on_database(&db, &c)?;
        let r = &out.report;
        log::info!("{}: test mse {:.3e}", arch_label(hidden), r.test_mse);
        let rs: Vec<String> = r.r_test.iter().map(|v| format!("{v:e}")).collect();
        table.push_str(&format!(
            "{},{:e},{:e},{:e},{},{}\n",
            arch_label(hidden),
            r.train_mse,
            r.validation_mse,
            r.test_mse,
            r.best_iteration,
            rs.join(",")
        ));
        if best.as_ref().is_none_or(|(m, _, _)| r.test_mse < *m) {
            best = Some((r.test_mse, out, c));
        }
    }
    write_text(&dir.join("sweep.csv"), &table)?;
    let (_, out, c) = best.expect("sweep is nonempty");
    write_training(&dir, &db, &c, &out)?;
    write_run_manifest(&dir, "train", cfg.seed, database_inputs(db_path)?, args, &tcfg)?;
    Ok(())
}

#[derive(Deserialize)]
struct Observation {
    q: Vec<f64>,
}

fn load_observation(path: &Path) -> Result<QoiVector> {
    let text = std::fs::read_to_string(path).map_err(stochid_core::Error::from).with_context(|| format!("reading {}", path.display()))?;
    let obs: Observation = serde_json::from_str(&text).map_err(stochid_core::Error::from).with_context(|| format!("parsing {}", path.display()))?;
    let q = QoiVector::from_slice(&obs.q).with_context(|| format!("observation {}", path.display()))?;
    if !q.is_finite() {
        return Err(stochid_core::Error::Domain("observation has non-finite components".into()).into());
    }
    Ok(q)
}

fn load_model(path: &Path) -> Result<MlpModel> {
    let m = MlpModel::load(path)?;
    if m.input_dim() != QOI_DIM || m.output_dim() != HYPER_DIM {
        return Err(stochid_core::Error::Domain(format!(
            "model maps {} inputs to {} outputs; identification needs {QOI_DIM} to {HYPER_DIM}",
            m.input_dim(),
            m.output_dim()
        ))
        .into());
    }
    Ok(m)
}

pub fn identify(common: &Common, model_path: &Path, obs_path: &Path) -> Result<()> {
    let cfg = setup(common)?;
    let model = load_model(model_path)?;
    let q = load_observation(obs_path)?;
    let h = model.forward(&q.0)?;
    let dir = out_dir(common, &cfg, "identify")?;
    let result = json!({ "q": q.0, "h": h, "names": HYPER_NAMES });
    write_json(&dir.join("h_out.json"), &result)?;
    write_run_manifest(
        &dir,
        "identify",
        cfg.seed,
        vec![InputRef::file(model_path)?, InputRef::file(obs_path)?],
        json!({ "model": model_path, "obs": obs_path }),
        &cfg,
    )?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn parse_levels(s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("invalid dispersion level {p:?}")))
        .collect::<Result<_>>()?;
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        bail!("dispersion levels must be finite and nonnegative");
    }
    Ok(v)
}

#[derive(Serialize)]
struct ComponentRow {
    name: &'static str,
    mean: f64,
    std: f64,
    ci95: [f64; 2],
}

#[derive(Serialize)]
struct LevelRow {
    s: f64,
    skipped: usize,
    input_cov: [f64; QOI_DIM],
    components: Vec<ComponentRow>,
}

fn render_robustness(dir: &Path, entries: &[RobustnessEntry]) -> Result<()> {
    let s: Vec<f64> = entries.iter().map(|e| e.s).collect();
    for (j, name) in HYPER_NAMES.iter().enumerate() {
        let comp = |f: &dyn Fn(&stochid_core::robustness::ComponentSummary) -> f64| -> Vec<f64> {
            entries.iter().map(|e| f(&e.summary.components[j])).collect()
        };
        let mean = Series { label: "mean".into(), x: s.clone(), y: comp(&|c| c.mean), color: PALETTE[0], dashed: false };
        let band = Band { x: s.clone(), lower: comp(&|c| c.ci95[0]), upper: comp(&|c| c.ci95[1]), color: PALETTE[0] };
        write_text(
            &dir.join(format!("ci_{name}.svg")),
            &line_plot(&format!("{name}: mean and 95% interval"), "s", name, &[mean], &[band]),
        )?;
        let series: Vec<Series> = entries
            .iter()
            .filter(|e| e.s > 0.0)
            .enumerate()
            .map(|(k, e)| Series {
                label: format!("s = {}", e.s),
                x: e.summary.components[j].pdf.grid.clone(),
                y: e.summary.components[j].pdf.density.clone(),
                color: PALETTE[k % PALETTE.len()],
                dashed: k >= PALETTE.len(),
            })
            .collect();
        if !series.is_empty() {
            write_text(&dir.join(format!("pdf_{name}.svg")), &line_plot(&format!("pdf of {name}"), name, "density", &series, &[]))?;
        }
    }
    Ok(())
}

pub fn robustness(common: &Common, model_path: &Path, obs: Option<PathBuf>, levels: Option<&str>, samples: Option<usize>) -> Result<()> {
    let mut cfg = setup(common)?;
    if let Some(l) = levels {
        cfg.robustness.s = parse_levels(l)?;
    }
    if let Some(n) = samples {
        cfg.robustness.n_samples = n;
    }
    let obs_path = obs.or_else(|| cfg.robustness.q_obs.clone()).context("no observation file: pass --obs or set robustness.q_obs")?;
    if cfg.robustness.s.is_empty() || cfg.robustness.n_samples == 0 {
        bail!("robustness needs at least one level and one sample");
    }
    let model = load_model(model_path)?;
    let q = load_observation(&obs_path)?;
    let rc = &cfg.robustness;
    let entries = robustness_study(&model, &q, &rc.s, rc.n_samples, cfg.seed, rc.kde_points)?;
    let dir = out_dir(common, &cfg, "robustness")?;
    for e in &entries {
        for (j, name) in HYPER_NAMES.iter().enumerate() {
            let pdf = &e.summary.components[j].pdf;
            write_csv(
                &dir.join(format!("pdf_{name}_{}.csv", e.s)),
                &["grid", "density"],
                pdf.grid.iter().zip(&pdf.density).map(|(g, d)| vec![*g, *d]),
            )?;
        }
    }
    let rows: Vec<LevelRow> = entries
        .iter()
        .map(|e| LevelRow {
            s: e.s,
            skipped: e.skipped,
            input_cov: e.input_cov,
            components: e
                .summary
                .components
                .iter()
                .zip(HYPER_NAMES)
                .map(|(c, name)| ComponentRow { name, mean: c.mean, std: c.std, ci95: c.ci95 })
                .collect(),
        })
        .collect();
    write_json(&dir.join("summary.json"), &json!({ "seed": cfg.seed, "n_samples": rc.n_samples, "q_obs": q.0, "levels": rows }))?;
    render_robustness(&dir, &entries)?;
    write_run_manifest(
        &dir,
        "robustness",
        cfg.seed,
        vec![InputRef::file(model_path)?, InputRef::file(&obs_path)?],
        json!({ "model": model_path, "obs": obs_path }),
        &cfg,
    )?;
    for e in &entries {
        let c = &e.summary.components;
        log::info!(
            "s = {}: delta {:.4} [{:.4}, {:.4}]",
            e.s,
            c[0].mean,
            c[0].ci95[0],
            c[0].ci95[1]
        );
    }
    Ok(())
}
