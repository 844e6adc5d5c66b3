//! Run-directory layout: CSV and JSONL exports, their parsers, and report tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::checkpoint::{encode_checkpoint, Checkpoint};
use super::config::RunConfigFile;
use super::{prepare_output_dir, read_text, write_atomic};
use crate::error::{Error, Result};
use crate::metrics::{ClassDelta, ClassSummary};
use crate::numkit::linalg::RealVector;
use crate::protobank::{PrototypeTrajectory, Snapshot, Trajectories};
use crate::stream::ClassId;
use crate::theory::BoundSuiteReport;
use crate::trainer::{AblationRow, GradSuiteReport, IterationLog, RunRecord, SweepCell};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const IOU_HISTORY_FILE: &str = "iou_history.csv";
pub const ANGLES_FILE: &str = "angles.csv";
pub const TRAJECTORIES_CSV_FILE: &str = "trajectories.csv";
pub const TRAJECTORIES_JSONL_FILE: &str = "trajectories.jsonl";
pub const REFERENCE_FILE: &str = "REFERENCE.md";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Files every run directory contains regardless of output switches.
pub const MANDATORY_FILES: [&str; 8] = [
    CONFIG_FILE,
    SUMMARY_FILE,
    PER_CLASS_FILE,
    IOU_HISTORY_FILE,
    ANGLES_FILE,
    TRAJECTORIES_CSV_FILE,
    TRAJECTORIES_JSONL_FILE,
    REFERENCE_FILE,
];

pub const REFERENCE: &str = "\
# Run directory reference

Empty CSV fields mean the value is undefined (for example forgetting with a single step).
All reals are written in shortest round-trip decimal form.

## config.toml
Complete configuration of the run with every default filled in. Running it again reproduces
this directory byte for byte.

## summary.csv
One row per run.
- `seed`, `variant`
- `miou_all`, `miou_old`, `miou_new`: final-step mean IoU over all, old and new classes
- `oa`, `mean_f1`: overall accuracy and macro F1 at the final step
- `forgetting`: average peak-minus-final group mIoU over groups 1..T-1
- `forgetting_all`: the same over groups 1..T
- `curvature_forgetting_corr`: Pearson correlation of mean curvature and per-class forgetting
- `min_cosine_margin`, `mean_angle`: over final unit prototypes (margin is 1 - cos, angle in degrees)
- `degenerate_time_encodings`: count of time encodings with a zero normalization span

## per_class.csv
`class, first_step, final_iou, forgetting, regret, mean_curvature`; forgetting is peak minus
final IoU, regret sums the excess of 1 - recall over its best step.

## iou_history.csv
`class, step, iou, accuracy` for every step at or after the class was introduced.

## angles.csv
`class_a, class_b, degrees, margin` for each unordered pair of final prototypes.

## trajectories.csv
Long format: `class, first_step, step, tau, component, value`, one row per prototype coordinate.

## trajectories.jsonl
One object per snapshot: `{class, first_step, step, tau, proto}`.

## run_log.jsonl
One object per iteration: `{step, iteration, lr, seg, dist, flow, curve, sep, total}`.

## checkpoints/step_<t>.ckpt
Model after step t in the `protoflow checkpoint v1` text format.
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub variant: String,
    pub miou_all: Option<f64>,
    pub miou_old: Option<f64>,
    pub miou_new: Option<f64>,
    pub oa: f64,
    pub mean_f1: f64,
    pub forgetting: Option<f64>,
    pub forgetting_all: Option<f64>,
    pub curvature_forgetting_corr: Option<f64>,
    pub min_cosine_margin: Option<f64>,
    pub mean_angle: Option<f64>,
    pub degenerate_time_encodings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassRow {
    pub class: ClassId,
    pub first_step: usize,
    pub final_iou: Option<f64>,
    pub forgetting: f64,
    pub regret: f64,
    pub mean_curvature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouHistoryRow {
    pub class: ClassId,
    pub step: usize,
    pub iou: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleRow {
    pub class_a: ClassId,
    pub class_b: ClassId,
    pub degrees: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub class: ClassId,
    pub first_step: usize,
    pub step: usize,
    pub tau: f64,
    pub component: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryLine {
    pub class: ClassId,
    pub first_step: usize,
    pub step: usize,
    pub tau: f64,
    pub proto: Vec<f64>,
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn parse_csv<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r).map_err(|e| Error::Io(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn summary_row(record: &RunRecord) -> SummaryRow {
    let m = &record.metrics;
    SummaryRow {
        seed: record.seed,
        variant: record.variant.name().to_string(),
        miou_all: m.miou_all,
        miou_old: m.miou_old,
        miou_new: m.miou_new,
        oa: m.oa,
        mean_f1: m.mean_f1,
        forgetting: m.forgetting,
        forgetting_all: m.forgetting_all,
        curvature_forgetting_corr: m.curvature_forgetting_corr,
        min_cosine_margin: m.min_cosine_margin,
        mean_angle: m.mean_angle,
        degenerate_time_encodings: record.degenerate_time_encodings,
    }
}

pub fn per_class_rows(record: &RunRecord) -> Vec<PerClassRow> {
    let m = &record.metrics;
    let firsts = record.first_steps();
    m.per_class_forgetting
        .iter()
        .map(|(&c, &f)| PerClassRow {
            class: c,
            first_step: firsts[&c],
            final_iou: m.per_class_iou.get(&c).copied().flatten(),
            forgetting: f,
            regret: m.per_class_regret.get(&c).copied().unwrap_or(0.0),
            mean_curvature: m.per_class_curvature.get(&c).copied().flatten(),
        })
        .collect()
}

pub fn iou_history_rows(record: &RunRecord) -> Vec<IouHistoryRow> {
    let mut rows = Vec::new();
    for (&c, hist) in &record.iou_history {
        let acc = record.accuracy_history.get(&c);
        for (t, iou) in hist.iter().enumerate() {
            let accuracy = acc.and_then(|a| a.get(t).copied().flatten());
            if iou.is_some() || accuracy.is_some() {
                rows.push(IouHistoryRow { class: c, step: t, iou: *iou, accuracy });
            }
        }
    }
    rows
}

pub fn angle_rows(record: &RunRecord) -> Vec<AngleRow> {
    record
        .metrics
        .angles
        .iter()
        .map(|p| AngleRow {
            class_a: p.a,
            class_b: p.b,
            degrees: p.degrees,
            margin: p.margin,
        })
        .collect()
}

pub fn trajectory_rows(trajs: &Trajectories) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (&c, tr) in trajs {
        for s in &tr.snapshots {
            for (k, &v) in s.proto.as_slice().iter().enumerate() {
                rows.push(TrajectoryRow {
                    class: c,
                    first_step: tr.first_step,
                    step: s.step,
                    tau: s.tau,
                    component: k,
                    value: v,
                });
            }
        }
    }
    rows
}

pub fn trajectory_lines(trajs: &Trajectories) -> Vec<TrajectoryLine> {
    trajs
        .iter()
        .flat_map(|(&c, tr)| {
            tr.snapshots.iter().map(move |s| TrajectoryLine {
                class: c,
                first_step: tr.first_step,
                step: s.step,
                tau: s.tau,
                proto: s.proto.as_slice().to_vec(),
            })
        })
        .collect()
}

/// Rebuilds trajectories from snapshot lines, checking ordering and dimensions.
pub fn trajectories_from_lines(lines: Vec<TrajectoryLine>) -> Result<Trajectories> {
    let mut out = Trajectories::new();
    let mut dim = None;
    for (i, l) in lines.into_iter().enumerate() {
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        if l.proto.is_empty() || *dim.get_or_insert(l.proto.len()) != l.proto.len() {
            return Err(bad("prototype dimensions differ".into()));
        }
        if !l.tau.is_finite() {
            return Err(bad("non-finite tau".into()));
        }
        let proto = RealVector::new(l.proto).map_err(|e| bad(e.to_string()))?;
        let tr = out.entry(l.class).or_insert_with(|| PrototypeTrajectory {
            class: l.class,
            first_step: l.first_step,
            snapshots: Vec::new(),
        });
        if tr.first_step != l.first_step || l.step < l.first_step {
            return Err(bad(format!("inconsistent first step for class {}", l.class)));
        }
        if tr.snapshots.last().is_some_and(|s| s.step >= l.step) {
            return Err(bad(format!("steps of class {} are not increasing", l.class)));
        }
        tr.snapshots.push(Snapshot { step: l.step, tau: l.tau, proto });
    }
    Ok(out)
}

pub fn parse_trajectories_jsonl(text: &str) -> Result<Trajectories> {
    trajectories_from_lines(parse_jsonl(text)?)
}

pub fn parse_trajectories_csv(text: &str) -> Result<Trajectories> {
    let rows: Vec<TrajectoryRow> = parse_csv(text)?;
    let mut lines: Vec<TrajectoryLine> = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        let same = lines
            .last()
            .is_some_and(|l| l.class == r.class && l.step == r.step && l.first_step == r.first_step);
        if r.component == 0 {
            lines.push(TrajectoryLine {
                class: r.class,
                first_step: r.first_step,
                step: r.step,
                tau: r.tau,
                proto: vec![r.value],
            });
        } else if let Some(l) = lines.last_mut().filter(|l| same && l.proto.len() == r.component && l.tau == r.tau) {
            l.proto.push(r.value);
        } else {
            return Err(Error::Parse {
                line: i + 2,
                msg: format!("component {} out of order", r.component),
            });
        }
    }
    trajectories_from_lines(lines)
}

pub fn parse_run_log(text: &str) -> Result<Vec<IterationLog>> {
    parse_jsonl(text)
}

/// Writes the full run directory for `record`. `config` is echoed verbatim.
pub fn write_run_bundle(dir: &Path, config: &RunConfigFile, record: &RunRecord, overwrite: bool) -> Result<()> {
    prepare_output_dir(dir, overwrite)?;
    write_atomic(&dir.join(CONFIG_FILE), config.to_toml()?.as_bytes())?;
    write_atomic(&dir.join(SUMMARY_FILE), to_csv(&[summary_row(record)])?.as_bytes())?;
    write_atomic(&dir.join(PER_CLASS_FILE), to_csv(&per_class_rows(record))?.as_bytes())?;
    write_atomic(&dir.join(IOU_HISTORY_FILE), to_csv(&iou_history_rows(record))?.as_bytes())?;
    write_atomic(&dir.join(ANGLES_FILE), to_csv(&angle_rows(record))?.as_bytes())?;
    write_atomic(
        &dir.join(TRAJECTORIES_CSV_FILE),
        to_csv(&trajectory_rows(&record.trajectories))?.as_bytes(),
    )?;
    write_atomic(
        &dir.join(TRAJECTORIES_JSONL_FILE),
        to_jsonl(trajectory_lines(&record.trajectories))?.as_bytes(),
    )?;
    write_atomic(&dir.join(REFERENCE_FILE), REFERENCE.as_bytes())?;
    if config.outputs.run_log {
        write_atomic(&dir.join(RUN_LOG_FILE), to_jsonl(&record.losses)?.as_bytes())?;
    }
    if config.outputs.checkpoints {
        for (t, m) in record.checkpoints.iter().enumerate() {
            let ck = encode_checkpoint(&Checkpoint { step: t, model: m.clone() });
            write_atomic(&dir.join(CHECKPOINT_DIR).join(format!("step_{t}.ckpt")), ck.as_bytes())?;
        }
    }
    Ok(())
}

/// The parts of a run directory needed for cross-run analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    pub config: RunConfigFile,
    pub summary: SummaryRow,
    pub per_class: Vec<PerClassRow>,
}

impl RunDir {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = super::parse_config(&read_text(&dir.join(CONFIG_FILE))?)?;
        let mut summaries: Vec<SummaryRow> = parse_csv(&read_text(&dir.join(SUMMARY_FILE))?)?;
        if summaries.len() != 1 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("{} must hold exactly one row", dir.join(SUMMARY_FILE).display()),
            });
        }
        let per_class = parse_csv(&read_text(&dir.join(PER_CLASS_FILE))?)?;
        Ok(Self {
            config,
            summary: summaries.remove(0),
            per_class,
        })
    }

    pub fn class_summaries(&self) -> Vec<ClassSummary> {
        self.per_class
            .iter()
            .map(|r| ClassSummary {
                class: r.class,
                first_step: r.first_step,
                mean_curvature: r.mean_curvature,
                forgetting: r.forgetting,
                final_iou: r.final_iou.unwrap_or(0.0),
            })
            .collect()
    }
}

pub fn deltas_csv(deltas: &[ClassDelta]) -> Result<String> {
    to_csv(deltas)
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    to_csv(rows)
}

pub fn sweep_csv(cells: &[SweepCell]) -> Result<String> {
    to_csv(cells)
}

/// Heat-map layout: one row per curvature weight, one column per separation weight.
pub fn sweep_heatmap_csv(cells: &[SweepCell], value: impl Fn(&SweepCell) -> f64) -> String {
    let mut seps: Vec<f64> = Vec::new();
    let mut grid: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut curves: Vec<f64> = Vec::new();
    for c in cells {
        if !seps.contains(&c.sep) {
            seps.push(c.sep);
        }
        if !curves.contains(&c.curve) {
            curves.push(c.curve);
        }
        grid.entry(c.curve.to_string()).or_default().push(value(c).to_string());
    }
    let mut out = String::from("curve");
    for s in &seps {
        out.push_str(&format!(",sep={s}"));
    }
    out.push('\n');
    for c in curves {
        out.push_str(&format!("{c},{}\n", grid[&c.to_string()].join(",")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRow {
    pub seed: u64,
    pub case: String,
    pub feature_dim: usize,
    pub classes: usize,
    pub params: usize,
    pub loss: f64,
    pub max_rel_error: f64,
    pub pass: bool,
}

pub fn gradcheck_csv(report: &GradSuiteReport) -> Result<String> {
    let rows: Vec<GradRow> = report
        .cases
        .iter()
        .map(|c| GradRow {
            seed: c.seed,
            case: c.name.clone(),
            feature_dim: c.feature_dim,
            classes: c.classes,
            params: c.params,
            loss: c.loss,
            max_rel_error: c.max_rel_error,
            pass: c.max_rel_error <= report.tolerance,
        })
        .collect();
    to_csv(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub world: usize,
    pub classes: usize,
    pub dim: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub gamma_min: f64,
    pub curvature_energy: f64,
    pub forgetting: f64,
    pub forgetting_se: f64,
    pub forgetting_bound: f64,
    pub regret: f64,
    pub regret_bound: f64,
    pub max_excess: f64,
    pub margin_bound_ok: bool,
    pub forgetting_ok: bool,
    pub regret_ok: bool,
    pub regret_relation_ok: bool,
    pub exact_ok: Option<bool>,
}

pub fn theory_bounds_csv(report: &BoundSuiteReport) -> Result<String> {
    let rows: Vec<BoundRow> = report
        .reports
        .iter()
        .map(|r| BoundRow {
            world: r.world,
            classes: r.classes,
            dim: r.dim,
            horizon: r.horizon,
            sigma: r.sigma,
            gamma_min: r.gamma_min,
            curvature_energy: r.curvature_energy,
            forgetting: r.forgetting,
            forgetting_se: r.forgetting_se,
            forgetting_bound: r.forgetting_bound,
            regret: r.regret,
            regret_bound: r.regret_bound,
            max_excess: r.max_excess,
            margin_bound_ok: r.margin_bound_ok,
            forgetting_ok: r.forgetting_ok,
            regret_ok: r.regret_ok,
            regret_relation_ok: r.regret_relation_ok,
            exact_ok: r.exact_ok,
        })
        .collect();
    to_csv(&rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
