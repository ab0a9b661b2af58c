use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sacroscan::harness::{self, Case, FoldResult, Manifest, TrainConfig};
use sacroscan::imgproc::{AugmentPolicy, ClaheParams, PrepConfig};
use sacroscan::metrics::{self, CurveSeries};
use sacroscan::nets::{checkpoint, AuxUse, BackboneKind, BackboneSpec, EnsembleModel, Threshold};
use sacroscan::phantom::{self, PhantomSpec};
use sacroscan::stats::{self, Alternative, PairedSample, TestResult};
use sacroscan::{Image, Label};
use serde::Serialize;

use crate::config::RunConfig;
use crate::fail::{CliError, CliResult};
use crate::report;
use crate::{CvArgs, EvalArgs, Globals, PhantomArgs, PrepArgs, PrepFlags, ReportArgs};
use crate::{StatsArgs, StatsTest, ThresholdFlags};

pub const RUN_FILE: &str = "run.json";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.txt";
pub const FOLD_AUC_FILE: &str = "fold_auc.txt";
pub const FOLDS_DIR: &str = "folds";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const DEFAULT_ROI_SIDE: usize = 64;

fn tool_id() -> String {
    format!("sacroscan {}", env!("CARGO_PKG_VERSION"))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
fn prepare_out(g: &Globals, command: &str, force: bool) -> CliResult<PathBuf> {
    let dir = g
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("sacroscan-{command}")));
    let occupied = fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(CliError::refused(format!(
            "{} already exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_text(path, &(text + "\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Writes the resolved config and the run identity next to the outputs.
fn finish_run(dir: &Path, cfg: &RunConfig, g: &Globals, command: &str) -> CliResult<()> {
    cfg.write(dir)?;
    write_json(
        &dir.join(RUN_FILE),
        &serde_json::json!({ "tool": tool_id(), "command": command, "seed": g.seed }),
    )
}

pub fn phantom(g: &Globals, cfg: &mut RunConfig, a: PhantomArgs) -> CliResult<()> {
    let force = cfg.switch("force", a.force)?;
    let mut spec = PhantomSpec::new(cfg.get("patients", a.patients, 400)?, g.seed);
    spec.prevalence = cfg.get("prevalence", a.prevalence, spec.prevalence)?;
    spec.inflammation_delta =
        cfg.get("inflammation_delta", a.inflammation_delta, spec.inflammation_delta)?;
    spec.noise_sigma = cfg.get("noise_sigma", a.noise_sigma, spec.noise_sigma)?;
    spec.aux_coupling = cfg.get("aux_coupling", a.aux_coupling, spec.aux_coupling)?;
    spec.image_height = cfg.get("image_height", a.image_height, spec.image_height)?;
    spec.image_width = cfg.get("image_width", a.image_width, spec.image_width)?;
    spec.density_sigma = cfg.get("density_sigma", a.density_sigma, spec.density_sigma)?;
    spec.validate()?;

    let dir = prepare_out(g, "phantom", force)?;
    let (records, manifest) = phantom::generate_dataset(&spec)?;
    phantom::write_dataset(&dir, &spec, &records, &manifest)?;
    finish_run(&dir, cfg, g, "phantom")?;
    println!(
        "wrote {} images of {} patients to {}",
        records.len(),
        spec.n_patients,
        dir.display()
    );
    Ok(())
}

struct PrepInputs {
    manifest: Manifest,
    template: Image,
    config: PrepConfig,
}

fn prep_inputs(cfg: &mut RunConfig, f: PrepFlags, roi_side: Option<usize>) -> CliResult<PrepInputs> {
    let path_key = |p: Option<PathBuf>| p.map(|p| p.display().to_string());
    let manifest_path: PathBuf = cfg
        .get_opt::<String>("manifest", path_key(f.manifest))?
        .ok_or_else(|| CliError::invalid("--manifest is required"))?
        .into();
    if !manifest_path.is_file() {
        return Err(CliError::invalid(format!(
            "manifest {} not found",
            manifest_path.display()
        )));
    }
    let default_template = manifest_path
        .parent()
        .unwrap_or(Path::new(""))
        .join(phantom::TEMPLATE_FILE);
    let template_path: PathBuf = cfg
        .get(
            "template",
            path_key(f.template),
            default_template.display().to_string(),
        )?
        .into();
    if !template_path.is_file() {
        return Err(CliError::invalid(format!(
            "template {} not found",
            template_path.display()
        )));
    }
    let side = cfg.get("roi_side", f.roi_side, roi_side.unwrap_or(DEFAULT_ROI_SIDE))?;
    if let Some(expected) = roi_side {
        if side != expected {
            return Err(CliError::invalid(format!(
                "roi_side {side} does not match the model input side {expected}"
            )));
        }
    }
    let mut config = PrepConfig::new(side);
    config.normalize = !cfg.switch("no_normalize", f.no_normalize)?;
    config.equalize = !cfg.switch("no_clahe", f.no_clahe)?;
    let defaults = ClaheParams::default();
    let tiles = cfg.get("tiles", f.tiles, defaults.tiles.0)?;
    config.clahe = ClaheParams {
        tiles: (tiles, tiles),
        clip_limit: cfg.get("clip_limit", f.clip_limit, defaults.clip_limit)?,
        ..defaults
    };
    config.clahe.validate()?;
    Ok(PrepInputs {
        manifest: Manifest::load(&manifest_path)?,
        template: Image::load_pgm(&template_path)?,
        config,
    })
}

fn load_cases(inputs: &PrepInputs) -> CliResult<Vec<Case>> {
    Ok(harness::prepare_cases(
        &inputs.manifest,
        &inputs.template,
        &inputs.config,
    )?)
}

pub fn prep(g: &Globals, cfg: &mut RunConfig, a: PrepArgs) -> CliResult<()> {
    let force = cfg.switch("force", a.force)?;
    let inputs = prep_inputs(cfg, a.prep, None)?;
    let dir = prepare_out(g, "prep", force)?;
    let cases = load_cases(&inputs)?;
    let patches = dir.join("patches");
    fs::create_dir_all(&patches).map_err(|e| CliError::io(&patches, e))?;
    let mut log = String::from("case_id,match_row,match_col,score\n");
    for c in &cases {
        let name = format!("{}_{}.pgm", c.patient_id, c.side);
        c.patch.pixels().save_pgm(&patches.join(name))?;
        let m = c.located;
        writeln!(log, "{},{},{},{}", c.case_id, m.row, m.col, m.score).expect("string write");
    }
    write_text(&dir.join("prep_log.csv"), &log)?;
    finish_run(&dir, cfg, g, "prep")?;
    println!("wrote {} patches to {}", cases.len(), patches.display());
    Ok(())
}

fn threshold(cfg: &mut RunConfig, f: ThresholdFlags) -> CliResult<Threshold> {
    let p = cfg.get_opt::<f64>("threshold", f.threshold)?;
    let s = cfg.get_opt::<f64>("threshold_score", f.threshold_score)?;
    let t = match (p, s) {
        (Some(_), Some(_)) => {
            return Err(CliError::invalid(
                "give either threshold or threshold_score, not both",
            ))
        }
        (Some(p), None) => Threshold::Probability(p),
        (None, Some(s)) => Threshold::Score(s),
        (None, None) => Threshold::default(),
    };
    t.probability()?;
    Ok(t)
}

fn members(
    cfg: &mut RunConfig,
    list: Option<String>,
    size: Option<String>,
    side: usize,
) -> CliResult<Vec<BackboneSpec>> {
    let list = cfg.get("backbones", list, "dense,residual".to_string())?;
    let size = cfg.get("net_size", size, "desk".to_string())?;
    let build: fn(BackboneKind, usize) -> BackboneSpec = match size.as_str() {
        "desk" => BackboneSpec::desk,
        "full" => BackboneSpec::new,
        other => {
            return Err(CliError::invalid(format!(
                "net_size must be desk or full, got {other:?}"
            )))
        }
    };
    let specs = list
        .split(',')
        .map(|k| {
            let spec = build(k.parse()?, side);
            spec.validate()?;
            Ok(spec)
        })
        .collect::<sacroscan::Result<Vec<_>>>()?;
    if specs.is_empty() {
        return Err(CliError::invalid("no backbones given"));
    }
    Ok(specs)
}

pub fn cv(g: &Globals, cfg: &mut RunConfig, a: CvArgs) -> CliResult<()> {
    let force = cfg.switch("force", a.force)?;
    let k = cfg.get("folds", a.folds, harness::DEFAULT_FOLDS)?;
    let mut train = TrainConfig::new(g.seed);
    train.epochs = cfg.get("epochs", a.epochs, train.epochs)?;
    train.batch_size = cfg.get("batch_size", a.batch_size, train.batch_size)?;
    train.optimizer.lr = cfg.get("lr", a.lr, train.optimizer.lr)?;
    train.aux_use = AuxUse {
        age: !cfg.switch("no_age", a.no_age)?,
        sex: !cfg.switch("no_sex", a.no_sex)?,
    };
    let no_augment = cfg.switch("no_augment", a.no_augment)?;
    let copies = cfg.get("augment_copies", a.augment_copies, 2usize)?;
    train.threshold = threshold(cfg, a.threshold)?;
    let inputs = prep_inputs(cfg, a.prep, None)?;
    let side = inputs.config.roi_side;
    let members = members(cfg, a.backbones, a.net_size, side)?;
    if !no_augment {
        train.augment = Some(AugmentPolicy {
            copies_per_image: copies,
            ..AugmentPolicy::for_side(side)
        });
    }
    train.validate()?;

    let plan = harness::make_folds(&inputs.manifest, k, g.seed)?;
    let dir = prepare_out(g, "cv", force)?;
    let cases = load_cases(&inputs)?;
    let run = harness::run_cv(&cases, &plan, &train, &members, Some(&dir.join(CHECKPOINT_DIR)))?;

    let folds_dir = dir.join(FOLDS_DIR);
    fs::create_dir_all(&folds_dir).map_err(|e| CliError::io(&folds_dir, e))?;
    let mut fold_auc = String::new();
    for f in &run.folds {
        f.save(&folds_dir.join(format!("fold{}.json", f.fold)))?;
        match f.auc() {
            Some(v) => writeln!(fold_auc, "{v}"),
            None => writeln!(fold_auc, "undefined"),
        }
        .expect("string write");
    }
    write_text(&dir.join(FOLD_AUC_FILE), &fold_auc)?;
    write_json(&dir.join("plan.json"), &plan)?;
    write_json(&dir.join(TRAIN_CONFIG_FILE), &train)?;
    write_json(&dir.join(SUMMARY_FILE), &run.summary)?;
    let text = report::render(&run.folds, &run.summary);
    write_text(&dir.join(REPORT_FILE), &text)?;
    finish_run(&dir, cfg, g, "cv")?;
    print!("{text}");
    Ok(())
}

fn prevalence_grid() -> Vec<f64> {
    let (lo, hi, n) = (0.0005f64, 0.05f64, 100);
    (0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => lo * (hi / lo).powf(i as f64 / (n - 1) as f64),
        })
        .collect()
}

#[derive(Serialize)]
struct EvalSummary {
    checkpoint: PathBuf,
    cases: usize,
    threshold: f64,
    auc: f64,
    auc_ci: metrics::Interval,
    confusion: metrics::ConfusionTable,
    metrics: metrics::BasicMetrics,
}

pub fn eval(g: &Globals, cfg: &mut RunConfig, a: EvalArgs) -> CliResult<()> {
    let force = cfg.switch("force", a.force)?;
    let path: PathBuf = cfg
        .get_opt::<String>("checkpoint", a.checkpoint.map(|p| p.display().to_string()))?
        .ok_or_else(|| CliError::invalid("--checkpoint is required"))?
        .into();
    if !path.is_file() {
        return Err(CliError::invalid(format!("checkpoint {} not found", path.display())));
    }
    let (model, _) = checkpoint::load::<f32>(&path)?;
    let t = threshold(cfg, a.threshold)?.probability()?;
    let resamples = cfg.get("resamples", a.resamples, metrics::DEFAULT_RESAMPLES)?;
    let inputs = prep_inputs(cfg, a.prep, Some(model.input_side()))?;
    let cases = load_cases(&inputs)?;
    let labels: Vec<Label> = cases.iter().map(|c| c.label).collect();
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(CliError::invalid(
            "manifest holds a single class; AUC and the curves are undefined",
        ));
    }
    let probs = predict(&model, &cases)?;

    let dir = prepare_out(g, "eval", force)?;
    let (auc, roc) = metrics::roc_auc(&probs, &labels)?;
    let auc_ci = metrics::bootstrap_cases(
        &probs,
        &labels,
        |p, l| Ok(metrics::roc_auc(p, l)?.0),
        resamples,
        g.seed,
    )?;
    let confusion = metrics::confusion(&probs, &labels, t)?;
    let basic = metrics::basic_metrics(&confusion);
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let (sens_spec, f1_recall) = metrics::threshold_sweep(&probs, &labels, &grid)?;
    let sens = basic.sensitivity.value().expect("both classes present");
    let spec = basic.specificity.value().expect("both classes present");
    let curves: [(&str, &CurveSeries); 4] = [
        ("roc.csv", &roc),
        ("pr.csv", &metrics::pr_curve(&probs, &labels)?),
        ("sens_spec_vs_threshold.csv", &sens_spec),
        ("f1_recall_vs_threshold.csv", &f1_recall),
    ];
    for (name, series) in curves {
        series.save_csv(&dir.join(name))?;
    }
    match metrics::prevalence_series(sens, spec, &prevalence_grid()) {
        Ok(series) => series.save_csv(&dir.join("ppv_npv_vs_prevalence.csv"))?,
        Err(sacroscan::Error::Degenerate(msg)) => {
            eprintln!("warning: no prevalence curve: {msg}")
        }
        Err(e) => return Err(e.into()),
    }
    let mut scores = String::from("case_id,label,probability\n");
    for (c, p) in cases.iter().zip(&probs) {
        writeln!(scores, "{},{},{p}", c.case_id, c.label.index()).expect("string write");
    }
    write_text(&dir.join("probabilities.csv"), &scores)?;
    let summary = EvalSummary {
        checkpoint: path,
        cases: cases.len(),
        threshold: t,
        auc,
        auc_ci,
        confusion,
        metrics: basic,
    };
    write_json(&dir.join("metrics.json"), &summary)?;
    let text = report::render_eval(summary.cases, t, auc, &auc_ci, &confusion, &basic);
    write_text(&dir.join("metrics.txt"), &text)?;
    finish_run(&dir, cfg, g, "eval")?;
    print!("{text}");
    Ok(())
}

fn predict(model: &EnsembleModel<f32>, cases: &[Case]) -> CliResult<Vec<f64>> {
    use rayon::prelude::*;
    Ok(cases
        .par_iter()
        .map(|c| model.predict(&c.patch, &c.aux))
        .collect::<sacroscan::Result<_>>()?)
}

fn parse_cells(table: &str) -> CliResult<Vec<u64>> {
    table
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<u64>()
                .map_err(|_| CliError::invalid(format!("bad table cell {c:?} in {table:?}")))
        })
        .collect()
}

fn read_values(path: &Path) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|v| {
            v.parse::<f64>().map_err(|_| {
                CliError::invalid(format!("{}: not a number: {v:?}", path.display()))
            })
        })
        .collect()
}

fn print_test(r: &TestResult) {
    println!("test = {}", r.test);
    println!("statistic = {}", r.statistic);
    println!("n = {}", r.n);
    let method = match r.method {
        stats::Method::Exact => "exact",
        stats::Method::Approximate => "approximate",
    };
    println!("method = {method}");
    println!("p = {}", r.p);
    if let Some(alt) = r.alternative {
        let alt = match alt {
            Alternative::TwoSided => "two_sided",
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        };
        println!("alternative = {alt}");
    }
    if let Some(z) = r.zeros_dropped {
        println!("zeros_dropped = {z}");
    }
}

pub fn stats(a: StatsArgs) -> CliResult<()> {
    match a.test {
        StatsTest::Wilcoxon { a, b, alternative } => {
            let alternative: Alternative = alternative.parse()?;
            let sample = PairedSample::new(read_values(&a)?, read_values(&b)?)?;
            print_test(&stats::wilcoxon_signed_rank(&sample, alternative)?);
        }
        StatsTest::Kappa { table } => {
            let cells = parse_cells(&table)?;
            let k = (cells.len() as f64).sqrt().round() as usize;
            if k < 2 || k * k != cells.len() {
                return Err(CliError::invalid(format!(
                    "kappa table needs k*k cells with k >= 2, got {}",
                    cells.len()
                )));
            }
            let rows: Vec<Vec<u64>> = cells.chunks(k).map(<[u64]>::to_vec).collect();
            let kappa = stats::cohen_kappa(&rows)?;
            println!("test = cohen_kappa");
            println!("categories = {k}");
            println!("n = {}", cells.iter().sum::<u64>());
            println!("kappa = {kappa:.6}");
        }
        StatsTest::Chi2 { table } => {
            let cells = parse_cells(&table)?;
            if cells.len() != 4 {
                return Err(CliError::invalid(format!(
                    "chi-square table needs 4 cells, got {}",
                    cells.len()
                )));
            }
            print_test(&stats::chi_square_2x2([[cells[0], cells[1]], [cells[2], cells[3]]])?);
        }
    }
    Ok(())
}

pub fn report(g: &Globals, a: ReportArgs) -> CliResult<()> {
    let train: TrainConfig = read_json(&a.run.join(TRAIN_CONFIG_FILE))?;
    let folds_dir = a.run.join(FOLDS_DIR);
    let entries = fs::read_dir(&folds_dir)
        .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", folds_dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut folds = paths
        .iter()
        .map(|p| Ok(FoldResult::load(p)?))
        .collect::<CliResult<Vec<_>>>()?;
    if folds.is_empty() {
        return Err(CliError::invalid(format!("no fold results in {}", folds_dir.display())));
    }
    folds.sort_by_key(|f| f.fold);
    let summary = harness::aggregate(&folds, &train)?;
    let text = report::render(&folds, &summary);
    if let Some(out) = &g.out {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        write_text(&out.join(REPORT_FILE), &text)?;
    }
    print!("{text}");
    Ok(())
}
