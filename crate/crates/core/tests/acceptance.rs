//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use protoflow::flowfield::{time_signal_experiment, TimeSignalConfig};
use protoflow::io::{write_run_bundle, RunConfigFile, SUMMARY_FILE, PER_CLASS_FILE, TRAJECTORIES_CSV_FILE, TRAJECTORIES_JSONL_FILE};
use protoflow::metrics::{delta_analysis, pearson};
use protoflow::theory::{bound_suite, lemma_suite, WorldGenConfig};
use protoflow::trainer::{
    gradient_suite, run_ablation_suite, run_experiment, run_sweep, standard_config, AblationRow, RunRecord, Variant,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let report = gradient_suite(&seeds, 1e-4).expect("gradient suite runs");
    let elapsed = start.elapsed();
    let max_d = report.cases.iter().map(|c| c.feature_dim).max().unwrap_or(0);
    let max_k = report.cases.iter().map(|c| c.classes).max().unwrap_or(0);
    Outcome {
        pass: report.pass() && within(elapsed, 30) && max_d <= 8 && max_k <= 5,
        detail: format!(
            "{} cases over 20 seeds, worst relative error {:.2e} (limit 1e-4), d<={max_d}, K<={max_k}, {:.1}s (limit 30s)",
            report.cases.len(),
            report.worst(),
            elapsed.as_secs_f64()
        ),
    }
}

fn lemmas() -> Outcome {
    let start = Instant::now();
    let r = lemma_suite(0, 1000, 1000);
    let elapsed = start.elapsed();
    Outcome {
        pass: r.pass() && within(elapsed, 10),
        detail: format!(
            "1000 trajectories: margin-path violations {}, path-curvature violations {}, Lipschitz grid violations {}; min slacks {:.2e}/{:.2e}/{:.2e}; {:.1}s (limit 10s)",
            r.margin_path_violations,
            r.path_curvature_violations,
            r.lipschitz_violations,
            r.min_margin_path_slack,
            r.min_energy_slack,
            r.min_length_slack,
            elapsed.as_secs_f64()
        ),
    }
}

fn bounds() -> Outcome {
    let start = Instant::now();
    let r = bound_suite(0, 200, 100_000, &WorldGenConfig::default()).expect("bound suite runs");
    let elapsed = start.elapsed();
    let gamma_ok = r.reports.iter().all(|w| w.gamma_min >= w.sigma && w.classes <= 5 && w.horizon <= 8);
    Outcome {
        pass: r.pass() && gamma_ok && within(elapsed, 300),
        detail: format!(
            "200 worlds ({} two-class), n=1e5: risk-bound violations {}, forgetting {}, regret {}, regret relation {}, exact-risk mismatches {}; {:.1}s (limit 300s)",
            r.two_class_worlds,
            r.margin_bound_violations,
            r.forgetting_violations,
            r.regret_violations,
            r.regret_relation_violations,
            r.exact_risk_mismatches,
            elapsed.as_secs_f64()
        ),
    }
}

fn row(rows: &[AblationRow], v: Variant) -> &AblationRow {
    rows.iter().find(|r| r.variant == v).expect("variant was run")
}

fn ablation(rows: &[AblationRow], elapsed: Duration) -> Outcome {
    let full = row(rows, Variant::Full);
    let no_curve = row(rows, Variant::NoCurve);
    let fine_tune = row(rows, Variant::FineTune);
    let no_field = row(rows, Variant::NoField);
    let order = full.forgetting < no_curve.forgetting && no_curve.forgetting < fine_tune.forgetting;
    let miou = full.miou_all > no_field.miou_all;
    Outcome {
        pass: order && miou && within(elapsed, 900),
        detail: format!(
            "F: Full {:.4} < NoCurve {:.4} < FineTune {:.4} [{}]; mIoU_all: Full {:.4} > NoField {:.4} [{}]; {:.1}s (limit 900s)",
            full.forgetting,
            no_curve.forgetting,
            fine_tune.forgetting,
            if order { "holds" } else { "violated" },
            full.miou_all,
            no_field.miou_all,
            if miou { "holds" } else { "violated" },
            elapsed.as_secs_f64()
        ),
    }
}

fn correlation(full: &[RunRecord], fine_tune: &[RunRecord]) -> Outcome {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in full {
        for (c, k) in &r.metrics.per_class_curvature {
            if let Some(k) = k {
                xs.push(*k);
                ys.push(r.metrics.per_class_forgetting[c]);
            }
        }
    }
    let rho = pearson(&xs, &ys).expect("equal lengths");
    let (mut favorable, mut total) = (0, 0);
    for (a, b) in full.iter().zip(fine_tune) {
        let firsts = a.first_steps();
        let deltas = delta_analysis(&a.metrics.class_summaries(&firsts), &b.metrics.class_summaries(&firsts))
            .expect("same classes");
        for d in deltas.iter().filter(|d| d.curvature.is_some()) {
            total += 1;
            favorable += usize::from(d.favorable);
        }
    }
    let rho_ok = rho.is_some_and(|r| r > 0.0);
    let majority = 2 * favorable > total;
    Outcome {
        pass: rho_ok && majority,
        detail: format!(
            "pooled Pearson over {} class-runs {} [{}]; favorable quadrant {favorable}/{total} [{}]",
            xs.len(),
            rho.map_or("undefined".into(), |r| format!("{r:.4}")),
            if rho_ok { "> 0" } else { "not > 0" },
            if majority { "strict majority" } else { "no majority" }
        ),
    }
}

fn time_signal() -> Outcome {
    let cfg = TimeSignalConfig::default();
    let mean_mse = |alpha: f64| {
        SEEDS
            .iter()
            .map(|&s| time_signal_experiment(&cfg, alpha, s).expect("experiment runs").trained_mse)
            .sum::<f64>()
            / SEEDS.len() as f64
    };
    let m: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&a| mean_mse(a)).collect();
    Outcome {
        pass: m[0] < m[2] && m[0] <= m[1] && m[1] <= m[2],
        detail: format!(
            "mean one-step MSE at alpha 0 / 0.5 / 1: {:.3e} / {:.3e} / {:.3e}",
            m[0], m[1], m[2]
        ),
    }
}

fn sweep() -> Outcome {
    let cells = run_sweep(&standard_config(0, Variant::Full), &[0.0, 0.1, 0.5], &[0.0, 0.1], &SEEDS)
        .expect("sweep runs");
    let row_mean = |curve: f64| {
        let v: Vec<f64> = cells.iter().filter(|c| c.curve == curve).map(|c| c.forgetting).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (zero, half) = (row_mean(0.0), row_mean(0.5));
    Outcome {
        pass: zero > half,
        detail: format!("mean F of curve=0 row {zero:.4} vs curve=0.5 row {half:.4} (middle row {:.4})", row_mean(0.1)),
    }
}

fn determinism() -> Outcome {
    let cfg = standard_config(11, Variant::Full);
    let tmp = tempfile::tempdir().expect("temp dir");
    let echo = RunConfigFile::from_experiment(&cfg);
    let mut records = Vec::new();
    for name in ["a", "b"] {
        let r = run_experiment(&cfg).expect("run");
        write_run_bundle(&tmp.path().join(name), &echo, &r, false).expect("bundle");
        records.push(r);
    }
    let files = [SUMMARY_FILE, PER_CLASS_FILE, TRAJECTORIES_CSV_FILE, TRAJECTORIES_JSONL_FILE];
    let same_files = files.iter().all(|f| {
        std::fs::read(tmp.path().join("a").join(f)).expect("written")
            == std::fs::read(tmp.path().join("b").join(f)).expect("written")
    });
    let same_record = records[0] == records[1];
    Outcome {
        pass: same_files && same_record,
        detail: format!(
            "metrics CSVs and trajectory exports byte-identical: {same_files}; full RunRecord equal: {same_record}"
        ),
    }
}

fn separation(rows: &[AblationRow]) -> Outcome {
    let full = row(rows, Variant::Full).min_cosine_margin;
    let no_sep = row(rows, Variant::NoSep).min_cosine_margin;
    Outcome {
        pass: full > no_sep,
        detail: format!("mean final min cosine margin Full {full:.4} vs NoSep {no_sep:.4}"),
    }
}

fn main() -> ExitCode {
    let mut results: BTreeMap<u8, Outcome> = BTreeMap::new();
    let mut report = |id: u8, o: Outcome| {
        println!("criterion {id}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.insert(id, o);
    };

    report(1, gradients());
    report(2, lemmas());
    report(3, bounds());

    let start = Instant::now();
    let variants = [Variant::Full, Variant::NoCurve, Variant::FineTune, Variant::NoField, Variant::NoSep];
    let (runs, rows) =
        run_ablation_suite(&standard_config(0, Variant::Full), &variants, &SEEDS).expect("ablation suite runs");
    report(4, ablation(&rows, start.elapsed()));
    report(5, correlation(&runs[&Variant::Full], &runs[&Variant::FineTune]));
    report(6, time_signal());
    report(7, sweep());
    report(8, determinism());
    report(9, separation(&rows));

    let failed: Vec<u8> = results.iter().filter(|(_, o)| !o.pass).map(|(id, _)| *id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
