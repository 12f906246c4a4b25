//! The `generate`, `train`, `detect` and `eval` subcommands.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ngc::dataset::{generate_splits, load_dataset, save_dataset, Dataset, Split, Truth};
use ngc::metrics::{accuracy, auroc, best_of_sweep, f_measure, per_class_scores, sweep_zeta, zeta_grid, MetricsReport};
use ngc::ood::{detect as detect_batch, Verdict};
use ngc::selection::SelectionState;
use ngc::trainer::{train_epoch, warmup, EpochReport, TrainingState};
use ngc::NgcError;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::persist;

pub const EPOCH_LOG_FILE: &str = "epoch_log.jsonl";
pub const SELECTION_FILE: &str = "selection.csv";
const DETECTION_HEADER: &str = "id,score,verdict,predicted_class";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

fn load(path: &Path, num_classes: usize, split: Split) -> Result<Dataset, CliError> {
    load_dataset(path, num_classes, split).map_err(|e| match e {
        NgcError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::from_core(other, Some(path)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub train_path: PathBuf,
    pub train_len: usize,
    pub test_path: Option<PathBuf>,
    pub test_len: usize,
}

pub fn generate(cfg: &RunConfig) -> Result<GenerateSummary, CliError> {
    let synth = cfg.synthetic.as_ref().ok_or_else(|| CliError::Config {
        field: "synthetic".into(),
        message: "`generate` needs a synthetic section".into(),
    })?;
    let (train, test) = generate_splits(synth)?;
    let train_path = cfg.train_path();
    create_dir(train_path.parent().unwrap_or(Path::new(".")))?;
    save_dataset(&train, &train_path).map_err(|e| CliError::from_core(e, Some(&train_path)))?;
    let mut summary = GenerateSummary {
        train_path,
        train_len: train.len(),
        test_path: None,
        test_len: 0,
    };
    if let Some(test) = test {
        let test_path = cfg.test_path();
        create_dir(test_path.parent().unwrap_or(Path::new(".")))?;
        save_dataset(&test, &test_path).map_err(|e| CliError::from_core(e, Some(&test_path)))?;
        summary.test_len = test.len();
        summary.test_path = Some(test_path);
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub warmup_losses: Vec<f64>,
    pub epochs: Vec<EpochReport>,
    pub selected_count: usize,
}

pub fn train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let train_path = cfg.train_path();
    let ds = load(&train_path, cfg.num_classes(), Split::Train)?;
    let params = cfg.train_params();
    let mut state = TrainingState::new(&ds, &params, cfg.seed)?;
    let warmup_losses = warmup(&mut state, &ds, &params, cfg.training.warmup_epochs)?;

    let out = &cfg.output_dir;
    create_dir(out)?;
    let log_path = out.join(EPOCH_LOG_FILE);
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(io_err(&log_path))?);
    let mut epochs = Vec::with_capacity(cfg.training.epochs);
    for _ in 0..cfg.training.epochs {
        let report = train_epoch(&mut state, &ds, &params)?;
        let line = serde_json::to_string(&report).expect("report serializes");
        writeln!(log, "{line}").map_err(io_err(&log_path))?;
        epochs.push(report);
    }
    log.flush().map_err(io_err(&log_path))?;

    persist::save_model(out, &state.model)?;
    persist::save_prototypes(out, &state.prototypes(&ds)?)?;
    // Without cleaning epochs every sample stands under its given label,
    // matching the prototypes above.
    let selection = if state.epochs_done == 0 {
        SelectionState::all(ds.given_labels(), ds.num_classes())
    } else {
        state.selection.clone()
    };
    write_file(&out.join(SELECTION_FILE), &selection.to_csv(ds.ids()))?;
    Ok(TrainSummary {
        warmup_losses,
        epochs,
        selected_count: selection.selected_count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectSummary {
    pub samples: usize,
    pub rejected: usize,
}

pub fn detect(model_dir: &Path, test_csv: &Path, zeta: f64, out: &Path) -> Result<DetectSummary, CliError> {
    if !(-1.0..=1.0).contains(&zeta) {
        return Err(CliError::Config {
            field: "zeta".into(),
            message: format!("must lie in [-1, 1], got {zeta}"),
        });
    }
    let model = persist::load_model(model_dir)?;
    let prototypes = persist::load_prototypes(model_dir)?;
    let blank = std::fs::read_to_string(test_csv).map_err(io_err(test_csv))?.trim().is_empty();
    let loaded = if blank {
        Err(CliError::Core(NgcError::EmptyDataset))
    } else {
        load(test_csv, model.num_classes(), Split::Test)
    };
    let ds = match loaded {
        Ok(ds) => ds,
        Err(CliError::Core(NgcError::EmptyDataset)) => {
            eprintln!("warning: {} has no samples; writing an empty detection file", test_csv.display());
            write_file(out, &format!("{DETECTION_HEADER}\n"))?;
            return Ok(DetectSummary { samples: 0, rejected: 0 });
        }
        Err(e) => return Err(e),
    };
    let decisions = detect_batch(ds.embeddings(), &model, &prototypes, zeta).map_err(|e| match e {
        NgcError::ShapeMismatch { expected, actual, .. } => CliError::Input {
            path: test_csv.to_path_buf(),
            line: 1,
            message: format!("feature count {actual} does not match the model input width {expected}"),
        },
        other => other.into(),
    })?;
    let mut text = format!("{DETECTION_HEADER}\n");
    let mut rejected = 0;
    for (id, d) in ds.ids().iter().zip(&decisions) {
        let verdict = match d.verdict {
            Verdict::Ind(_) => "ind",
            Verdict::Ood => {
                rejected += 1;
                "ood"
            }
        };
        let _ = writeln!(text, "{id},{},{verdict},{}", d.score, d.predicted_class);
    }
    write_file(out, &text)?;
    Ok(DetectSummary {
        samples: decisions.len(),
        rejected,
    })
}

/// One parsed row of a detection file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRow {
    pub id: u64,
    pub score: f64,
    pub ood: bool,
    pub predicted_class: usize,
}

pub fn parse_detections(path: &Path) -> Result<Vec<DetectionRow>, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let input_err = |line: usize, message: String| CliError::Input {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DETECTION_HEADER => {}
        other => {
            return Err(input_err(1, format!("expected header `{DETECTION_HEADER}`, got `{}`", other.map_or("", |l| l.1))));
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(input_err(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let id = fields[0].parse().map_err(|_| input_err(line_no, format!("bad id `{}`", fields[0])))?;
        let score: f64 = fields[1].parse().map_err(|_| input_err(line_no, format!("bad score `{}`", fields[1])))?;
        if !score.is_finite() {
            return Err(input_err(line_no, format!("non-finite score `{}`", fields[1])));
        }
        let ood = match fields[2] {
            "ind" => false,
            "ood" => true,
            v => return Err(input_err(line_no, format!("verdict must be `ind` or `ood`, got `{v}`"))),
        };
        let predicted_class = fields[3].parse().map_err(|_| input_err(line_no, format!("bad class `{}`", fields[3])))?;
        rows.push(DetectionRow {
            id,
            score,
            ood,
            predicted_class,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions<'a> {
    pub num_classes: usize,
    pub zeta: f64,
    pub sweep_out: Option<&'a Path>,
}

/// Scores a detection file against the labelled test file. Verdicts are
/// recomputed from the stored scores at `zeta`, so the report does not
/// depend on the threshold used at detection time or on row order.
pub fn eval(detection_csv: &Path, truth_csv: &Path, opts: &EvalOptions, out: &Path) -> Result<MetricsReport, CliError> {
    if !(-1.0..=1.0).contains(&opts.zeta) {
        return Err(CliError::Config {
            field: "zeta".into(),
            message: format!("must lie in [-1, 1], got {}", opts.zeta),
        });
    }
    let mut rows = parse_detections(detection_csv)?;
    let truth_ds = load(truth_csv, opts.num_classes, Split::Test)?;
    let truth_labels = truth_ds.truth().ok_or_else(|| CliError::Input {
        path: truth_csv.to_path_buf(),
        line: 1,
        message: "no true_label values; evaluation needs ground truth".into(),
    })?;
    let mismatch = |message: String| CliError::IdMismatch {
        detections: detection_csv.to_path_buf(),
        truth: truth_csv.to_path_buf(),
        message,
    };
    let by_id: BTreeMap<u64, Truth> = truth_ds.ids().iter().copied().zip(truth_labels.iter().copied()).collect();
    rows.sort_by_key(|r| r.id);
    let mut seen = HashSet::new();
    for r in &rows {
        if !seen.insert(r.id) {
            return Err(mismatch(format!("id {} appears twice in the detections", r.id)));
        }
        if !by_id.contains_key(&r.id) {
            return Err(mismatch(format!("id {} has no ground truth", r.id)));
        }
        if r.predicted_class >= opts.num_classes {
            return Err(mismatch(format!(
                "id {} predicts class {} but there are {} classes",
                r.id, r.predicted_class, opts.num_classes
            )));
        }
    }
    if let Some(id) = by_id.keys().find(|id| !seen.contains(id)) {
        return Err(mismatch(format!("id {id} has no detection")));
    }

    let truth: Vec<Truth> = rows.iter().map(|r| by_id[&r.id]).collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let predicted: Vec<usize> = rows.iter().map(|r| r.predicted_class).collect();
    let verdicts: Vec<Verdict> = rows
        .iter()
        .map(|r| if r.score < opts.zeta { Verdict::Ood } else { Verdict::Ind(r.predicted_class) })
        .collect();
    let (ind, ood): (Vec<_>, Vec<_>) = rows.iter().zip(&truth).partition(|(_, t)| !t.is_ood());
    let ind: Vec<f64> = ind.into_iter().map(|(r, _)| r.score).collect();
    let ood: Vec<f64> = ood.into_iter().map(|(r, _)| r.score).collect();

    let mut report = MetricsReport {
        accuracy: accuracy(&predicted, &truth)?,
        auroc: auroc(&ind, &ood)?,
        f_measure: f_measure(&verdicts, &truth, opts.num_classes)?,
        zeta: opts.zeta,
        selected_count: None,
        selected_noise_rate: None,
        per_class: per_class_scores(&verdicts, &truth, opts.num_classes)?,
        best_zeta: None,
        best_f_measure: None,
    };
    if let Some(sweep_path) = opts.sweep_out {
        let sweep = sweep_zeta(&scores, &predicted, &truth, opts.num_classes, &zeta_grid())?;
        let mut text = String::from("zeta,f_measure\n");
        for (z, f) in &sweep {
            let _ = writeln!(text, "{z:.2},{f}");
        }
        write_file(sweep_path, &text)?;
        let (z, f) = best_of_sweep(&sweep).expect("grid is non-empty");
        report.best_zeta = Some(z);
        report.best_f_measure = Some(f);
    }
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(out, &json)?;
    Ok(report)
}
