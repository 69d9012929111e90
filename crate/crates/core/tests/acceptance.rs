//! One line per acceptance criterion. Criteria 1-7 and 9 are hard
//! properties and fail the target when violated. Criterion 8 is a
//! directional claim on a toy task: its outcome is reported as measured,
//! and the target only requires that the experiment completes with finite
//! metrics inside its time budget.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use focc::check::{self, Level, PropertyReport};
use focc::config::{RunConfig, SweepParam};
use focc::experiment::{run, RunSummary};
use focc::lattice;
use focc::training::ObjectiveKind;

const EXPERIMENT_BUDGET_SECS: f64 = 30.0 * 60.0;

struct Line {
    id: u8,
    passed: bool,
    hard: bool,
    detail: String,
}

fn property(id: u8, report: PropertyReport, max_seconds: Option<f64>) -> Line {
    let in_time = max_seconds.is_none_or(|m| report.seconds < m);
    let mut detail = format!("{}: {} ({:.2}s)", report.name, report.detail, report.seconds);
    if !in_time {
        detail.push_str(&format!(", over the {:.0}s budget", max_seconds.unwrap_or_default()));
    }
    Line {
        id,
        passed: report.passed && in_time,
        hard: true,
        detail,
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn directional_experiment() -> Line {
    let fail = |detail: String| Line {
        id: 8,
        passed: false,
        hard: true,
        detail,
    };
    let base = match RunConfig::load(&workspace_root().join("configs/toy_focce.json")) {
        Ok(c) => c,
        Err(e) => return fail(format!("cannot load configs/toy_focce.json: {e}")),
    };
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-toy");
    let start = Instant::now();

    let mut baseline = base.clone();
    baseline.train.objective = ObjectiveKind::DeformedBaseline;
    baseline.focce = None;
    let mut arms: Vec<(String, RunConfig)> = vec![("deformed".into(), baseline)];
    for lg in [0.01, 0.05, 0.25] {
        match base.with_param(SweepParam::LambdaGamma, lg) {
            Ok(c) => arms.push((format!("focce lambda_gamma={lg}"), c)),
            Err(e) => return fail(format!("bad sweep value {lg}: {e}")),
        }
    }

    let mut medians = Vec::new();
    for (name, cfg) in &arms {
        let dir = out.join(name.replace(' ', "_"));
        let summary: RunSummary = match run(cfg, Some(&dir)) {
            Ok(s) => s,
            Err(e) => return fail(format!("{name} did not complete: {e}")),
        };
        let per_seed: Vec<String> = summary
            .seeds
            .iter()
            .map(|s| format!("{:.4}", s.test_token_error_rate))
            .collect();
        let m = summary.median_test_token_error_rate();
        println!("    {name:<26} median test TER {m:.4}  seeds [{}]", per_seed.join(", "));
        if !m.is_finite() || summary.seeds.len() < 5 {
            return fail(format!("{name}: invalid summary"));
        }
        medians.push(m);
    }
    let secs = start.elapsed().as_secs_f64();
    let (deformed, l01, l05, l25) = (medians[0], medians[1], medians[2], medians[3]);
    let beats_baseline = l05 < deformed;
    let intermediate_best = l05 < l01 && l05 < l25;
    let verdict = |b: bool| if b { "holds" } else { "does not hold" };
    let claims = beats_baseline && intermediate_best;
    Line {
        id: 8,
        passed: claims && secs < EXPERIMENT_BUDGET_SECS,
        hard: secs >= EXPERIMENT_BUDGET_SECS,
        detail: format!(
            "lambda_gamma=0.05 below deformed baseline ({l05:.4} vs {deformed:.4}): {}; \
             intermediate lambda_gamma best ({l01:.4} / {l05:.4} / {l25:.4}): {}; {secs:.0}s; runs in {}",
            verdict(beats_baseline),
            verdict(intermediate_best),
            out.display()
        ),
    }
}

fn main() -> ExitCode {
    let c = Level::Full.counts();
    let mut lines = vec![
        property(1, check::forward_oracle(c.tables, 101, &lattice::likelihood), Some(10.0)),
        property(2, check::streaming_oracle(c.tables, 102), Some(10.0)),
        property(3, check::reduction_suite(c.tables, c.seeds, 103), None),
        property(4, check::gradient_suite(c.seeds, 104), None),
        property(5, check::isolation_suite(c.seeds, 105), None),
        property(6, check::flow_suite(c.seeds, 106), None),
        property(7, check::causality_suite(c.probes, 107), None),
        property(9, check::decoder_suite(c.models, 109), None),
    ];
    for l in &lines {
        println!("criterion {}: {} - {}", l.id, if l.passed { "PASS" } else { "FAIL" }, l.detail);
    }
    println!("criterion 8: running toy experiment (4 arms x 5 seeds)");
    let eight = directional_experiment();
    println!(
        "criterion 8: {} - {}",
        if eight.passed { "PASS" } else { "FAIL" },
        eight.detail
    );
    lines.push(eight);
    lines.sort_by_key(|l| l.id);
    let hard_failures: Vec<u8> = lines.iter().filter(|l| !l.passed && l.hard).map(|l| l.id).collect();
    let soft_failures: Vec<u8> = lines.iter().filter(|l| !l.passed && !l.hard).map(|l| l.id).collect();
    println!(
        "summary: {}/{} criteria pass",
        lines.iter().filter(|l| l.passed).count(),
        lines.len()
    );
    if !soft_failures.is_empty() {
        println!("reported without failing the target: criterion {soft_failures:?} (measured outcome of a toy experiment)");
    }
    if hard_failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failing criteria: {hard_failures:?}");
        ExitCode::FAILURE
    }
}
