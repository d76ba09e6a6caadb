//! End-to-end acceptance checks. Runs every experiment with its default
//! five seeds, so expect this to take several minutes in an optimized build.
//!
//! One PASS/FAIL line is written per criterion (straight to stdout, past the
//! test harness capture); the test fails if any criterion does.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use serde_json::json;

use conjflow::harness::{run_experiment, verify, Aggregate, ExperimentId, ExperimentSpec};
use conjflow::training::ModelKind;

struct Criterion {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn report(c: &Criterion) {
    let line = format!(
        "{} {}: {}\n",
        if c.passed { "PASS" } else { "FAIL" },
        c.id,
        c.detail
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

struct Runs {
    dir: tempfile::TempDir,
    results: HashMap<(ExperimentId, ModelKind), Option<Aggregate>>,
}

impl Runs {
    fn run(&mut self, experiment: ExperimentId, model: ModelKind) -> Option<Aggregate> {
        let overrides = json!({ "out_dir": self.dir.path() });
        let spec = ExperimentSpec::with_overrides(experiment, model, &overrides).unwrap();
        let agg = run_experiment(&spec).unwrap().aggregate;
        if let Some(a) = &agg {
            eprintln!(
                "{experiment} {}: L_acc {:.3e} L_extrap {:.3e} time {:.1}s ({} diverged)",
                model.label(),
                a.l_acc.mean,
                a.l_extrap.mean,
                a.wall_seconds.mean,
                a.diverged
            );
        }
        self.results.insert((experiment, model), agg);
        agg
    }
}

fn fmt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.3e}"))
}

fn ac1(runs: &mut Runs) -> Criterion {
    let start = Instant::now();
    let ncf_t = runs.run(ExperimentId::FhForward, ModelKind::NcfT);
    runs.run(ExperimentId::FhForward, ModelKind::Ncf);
    let mlp = runs.run(ExperimentId::FhForward, ModelKind::Mlp);
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let ok_ncf_t = ncf_t
        .as_ref()
        .is_some_and(|a| a.l_acc.mean <= 1e-2 && a.l_extrap.mean <= 1e-1);
    let ok_mlp = mlp
        .as_ref()
        .is_some_and(|a| a.l_acc.mean <= 1e-2 && a.l_extrap.mean >= 1.0);
    Criterion {
        id: "AC-1",
        passed: ok_ncf_t && ok_mlp && minutes <= 15.0,
        detail: format!(
            "FH NCF-T L_acc {} (<= 1e-2) L_extrap {} (<= 1e-1); MLP L_acc {} (<= 1e-2) L_extrap {} (>= 1); {:.1} min (<= 15)",
            fmt(ncf_t.as_ref().map(|a| a.l_acc.mean)),
            fmt(ncf_t.as_ref().map(|a| a.l_extrap.mean)),
            fmt(mlp.as_ref().map(|a| a.l_acc.mean)),
            fmt(mlp.as_ref().map(|a| a.l_extrap.mean)),
            minutes
        ),
    }
}

fn extrap(runs: &Runs, experiment: ExperimentId, model: ModelKind) -> Option<f64> {
    runs.results
        .get(&(experiment, model))?
        .as_ref()
        .map(|a| a.l_extrap.mean)
}

fn acc(runs: &Runs, experiment: ExperimentId, model: ModelKind) -> Option<f64> {
    runs.results
        .get(&(experiment, model))?
        .as_ref()
        .map(|a| a.l_acc.mean)
}

fn ac2(runs: &Runs) -> Criterion {
    let e = |m| extrap(runs, ExperimentId::FhForward, m);
    let (t, f, m) = (e(ModelKind::NcfT), e(ModelKind::Ncf), e(ModelKind::Mlp));
    let passed = match (t, f, m) {
        (Some(t), Some(f), Some(m)) => 10.0 * t <= f && 10.0 * f <= m,
        _ => false,
    };
    Criterion {
        id: "AC-2",
        passed,
        detail: format!(
            "FH L_extrap NCF-T {} < NCF {} < MLP {}, each by >= 10x",
            fmt(t),
            fmt(f),
            fmt(m)
        ),
    }
}

fn ac3(runs: &mut Runs) -> Criterion {
    let exp = ExperimentId::HhInverse;
    let ncf_t = runs.run(exp, ModelKind::NcfT);
    let ncf = runs.run(exp, ModelKind::Ncf);
    let mlp = runs.run(exp, ModelKind::Mlp);
    let node = runs.run(exp, ModelKind::Node);
    let ok_ncf_t = ncf_t
        .as_ref()
        .is_some_and(|a| a.l_extrap.mean <= 1e-1 && a.l_extrap.mean <= 3.0 * a.l_acc.mean);
    let mlp_ratio = mlp.as_ref().map(|a| a.l_extrap.mean / a.l_acc.mean);
    let ncf_time = [&ncf, &ncf_t]
        .iter()
        .filter_map(|a| a.as_ref().map(|a| a.wall_seconds.mean))
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    let node_time = node.as_ref().map(|a| a.wall_seconds.mean);
    let time_ratio = node_time.zip(ncf_time).map(|(n, f)| n / f);
    Criterion {
        id: "AC-3",
        passed: ok_ncf_t && mlp_ratio.is_some_and(|r| r >= 1e3) && time_ratio.is_some_and(|r| r >= 2.0),
        detail: format!(
            "HH NCF-T L_acc {} L_extrap {} (<= 1e-1 and <= 3x L_acc); MLP extrap/acc {} (>= 1e3); NODE/NCF time {} (>= 2)",
            fmt(ncf_t.as_ref().map(|a| a.l_acc.mean)),
            fmt(ncf_t.as_ref().map(|a| a.l_extrap.mean)),
            fmt(mlp_ratio),
            fmt(time_ratio)
        ),
    }
}

fn ac4(runs: &mut Runs) -> Criterion {
    let exp = ExperimentId::LvForward;
    runs.run(exp, ModelKind::Mlp);
    runs.run(exp, ModelKind::NcfT);
    let (m, t) = (
        acc(runs, exp, ModelKind::Mlp),
        acc(runs, exp, ModelKind::NcfT),
    );
    Criterion {
        id: "AC-4",
        passed: m.is_some_and(|m| m >= 0.3) && t.is_some_and(|t| t <= 1e-1),
        detail: format!(
            "LV MLP L_acc {} (>= 0.3); NCF-T L_acc {} (<= 1e-1)",
            fmt(m),
            fmt(t)
        ),
    }
}

fn ac5(runs: &mut Runs) -> Criterion {
    let exp = ExperimentId::FhNonlinear;
    runs.run(exp, ModelKind::Mlp);
    runs.run(exp, ModelKind::Ncf);
    runs.run(exp, ModelKind::NcfT);
    let a = |m| acc(runs, exp, m);
    let (m, f, t) = (a(ModelKind::Mlp), a(ModelKind::Ncf), a(ModelKind::NcfT));
    Criterion {
        id: "AC-5",
        passed: m.is_some_and(|m| m <= 1e-3)
            && f.is_some_and(|f| f >= 0.3)
            && t.is_some_and(|t| t >= 0.3),
        detail: format!(
            "near-origin FH MLP L_acc {} (<= 1e-3); NCF {} and NCF-T {} (>= 0.3)",
            fmt(m),
            fmt(f),
            fmt(t)
        ),
    }
}

fn suite(id: &'static str, report: verify::SuiteReport, max_seconds: Option<f64>) -> Criterion {
    let in_time = max_seconds.is_none_or(|s| report.seconds <= s);
    let mut detail = report.summary();
    if let Some(s) = max_seconds {
        detail.push_str(&format!(" (time limit {s} s)"));
    }
    Criterion {
        id,
        passed: report.passed() && in_time,
        detail,
    }
}

#[test]
fn acceptance_criteria() {
    // Start on a fresh line after libtest's "test ... " prefix.
    let _ = std::io::stdout().write_all(b"\n");
    let mut criteria = vec![
        suite(
            "AC-6",
            verify::group_properties(100, 0).unwrap(),
            Some(30.0),
        ),
        suite("AC-7", verify::coupling_round_trips(1000, 0).unwrap(), None),
        suite("AC-8", verify::gradients(0).unwrap(), None),
        suite("AC-9", verify::theorem1_conjugation().unwrap(), None),
        suite("AC-10", verify::initializers(100, 0).unwrap(), None),
    ];
    criteria.iter().for_each(report);

    let mut runs = Runs {
        dir: tempfile::tempdir().unwrap(),
        results: HashMap::new(),
    };
    let c = ac1(&mut runs);
    report(&c);
    criteria.push(c);
    let c = ac2(&runs);
    report(&c);
    criteria.push(c);
    for f in [ac3, ac4, ac5] {
        let c = f(&mut runs);
        report(&c);
        criteria.push(c);
    }

    let failed: Vec<&str> = criteria
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.id)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
