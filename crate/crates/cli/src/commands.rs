use std::path::Path;
use std::time::Instant;

use adaptive_sensing::allocation;
use adaptive_sensing::harness::{
    self, bounds_table, estimate_gain_with, lambda_comparison, output::CsvSink, output::Manifest, run_trial_traced,
    tail_check_lemma1, ExperimentSpec, Policy,
};
use adaptive_sensing::{from_db, CoefficientSource};
use serde::Serialize;

use crate::args::{parse_policies, parse_source, Common, Settings};
use crate::Failure;

/// Output directory, manifest and timer shared by every command.
struct Run {
    settings: Settings,
    manifest: Manifest,
    start: Instant,
}

impl Run {
    fn new(command: &str, settings: Settings, extra: serde_json::Value) -> Result<Self, Failure> {
        std::fs::create_dir_all(&settings.out_dir).map_err(|e| {
            Failure::usage(format!("out_dir: cannot create {}: {e}", settings.out_dir.display()))
        })?;
        let mut params = serde_json::to_value(&settings).expect("settings serialize");
        if let (Some(obj), serde_json::Value::Object(more)) = (params.as_object_mut(), extra) {
            obj.extend(more);
        }
        Ok(Run {
            manifest: Manifest::new(command, params),
            settings,
            start: Instant::now(),
        })
    }

    fn sink(&mut self, name: &str) -> Result<CsvSink<std::fs::File>, Failure> {
        self.manifest.outputs.push(name.to_string());
        Ok(CsvSink::create(&self.settings.out_dir.join(name))?)
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.settings.out_dir.join(name)
    }

    /// Write the manifest whatever the outcome, then pass the outcome on.
    fn finish(mut self, rows: usize, outcome: Result<(), Failure>) -> Result<(), Failure> {
        self.manifest.rows_written = rows;
        self.manifest.wall_time_s = self.start.elapsed().as_secs_f64();
        self.manifest.complete = outcome.is_ok();
        if let Err(f) = &outcome {
            self.manifest.error = Some(f.message.clone());
        }
        let path = self.settings.out_dir.join("manifest.json");
        self.manifest.write(&path)?;
        self.settings.progress(1, format!("manifest: {}", path.display()));
        outcome
    }

    fn pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
        Ok(harness::with_workers(self.settings.workers, f)?)
    }
}

pub fn bounds(common: &Common, source: Option<&str>) -> Result<(), Failure> {
    let settings = Settings::resolve(common, 1, Vec::new())?;
    let sources: Vec<CoefficientSource> = settings
        .q
        .iter()
        .map(|&q| parse_source(source, q))
        .collect::<Result<_, _>>()?;
    let mut run = Run::new("bounds", settings, serde_json::json!({ "source": source }))?;
    let mut sink = run.sink("bounds.csv")?;
    let outcome = (|| -> Result<(), Failure> {
        let s = &run.settings;
        for config in s.configs_at_r(1.0)? {
            let i = s.q.iter().position(|&q| q == config.q).expect("q from settings");
            let rows = run.pool(|| bounds_table(&config, &s.r_db, sources[i]))??;
            for row in &rows {
                sink.push(row)?;
            }
            s.progress(1, format!("p={} q={}: {} rows", config.p, config.q, rows.len()));
        }
        Ok(())
    })();
    println!("wrote {} rows to {}", sink.rows(), run.path("bounds.csv").display());
    let rows = sink.rows();
    run.finish(rows, outcome)
}

pub fn sweep_lambda(common: &Common) -> Result<(), Failure> {
    let settings = Settings::resolve(common, 1, Vec::new())?;
    let mut run = Run::new("sweep-lambda", settings, serde_json::Value::Null)?;
    let mut sink = run.sink("lambda.csv")?;
    let outcome = (|| -> Result<(), Failure> {
        let s = &run.settings;
        let grid: Vec<f64> = (0..s.lambda_grid_points)
            .map(|i| i as f64 / (s.lambda_grid_points - 1) as f64)
            .collect();
        for config in s.configs_at_r(1.0)? {
            for &db in &s.r_db {
                let row = run.pool(|| lambda_comparison(&config, &[db], &grid, s.mc_samples_first_stage, s.base_seed))??;
                sink.push(&row[0])?;
                s.progress(1, format!("p={} q={} r={db} dB: λ bound {:.4}", config.p, config.q, row[0].lambda_bound));
            }
        }
        Ok(())
    })();
    println!("wrote {} rows to {}", sink.rows(), run.path("lambda.csv").display());
    let rows = sink.rows();
    run.finish(rows, outcome)
}

#[derive(Serialize)]
struct DiagnosticsRow {
    policy: Policy,
    p: f64,
    q: f64,
    r_db: f64,
    gain_std_db: f64,
    mean_posterior_risk: f64,
    analytic_nonadaptive_error: f64,
    oracle_gain_bound_db: f64,
    lambda_undetermined: bool,
    wall_time_s: f64,
}

pub fn sweep_gain(common: &Common, policies: &[String]) -> Result<(), Failure> {
    let policies = parse_policies(policies)?;
    let settings = Settings::resolve(common, 2000, policies)?;
    let specs: Vec<ExperimentSpec> = settings
        .configs_at_r(1.0)?
        .into_iter()
        .map(|config| ExperimentSpec {
            config,
            r_db: settings.r_db.clone(),
            policies: settings.policies.clone(),
            trials: settings.trials,
            base_seed: settings.base_seed,
            mc_samples_first_stage: settings.mc_samples_first_stage,
            lambda_grid_points: settings.lambda_grid_points,
        })
        .collect();
    for spec in &specs {
        spec.validate().map_err(Failure::invalid)?;
    }
    if settings.trials == 1 {
        eprintln!("warning: one trial per point; std_error is NaN (unavailable)");
    }
    let note = if settings.trials == 1 {
        "std_error unavailable with a single trial"
    } else {
        ""
    };
    let mut run = Run::new("sweep-gain", settings, serde_json::json!({ "note": note }))?;
    let mut gain = run.sink("gain.csv")?;
    let mut diag = run.sink("diagnostics.csv")?;
    let outcome = (|| -> Result<(), Failure> {
        let s = &run.settings;
        for spec in &specs {
            run.pool(|| {
                estimate_gain_with(spec, |row, d| {
                    gain.push(row)?;
                    diag.push(&DiagnosticsRow {
                        policy: row.policy,
                        p: row.p,
                        q: row.q,
                        r_db: row.r_db,
                        gain_std_db: d.gain_std_db,
                        mean_posterior_risk: d.mean_posterior_risk,
                        analytic_nonadaptive_error: d.analytic_nonadaptive_error,
                        oracle_gain_bound_db: d.oracle_gain_bound_db,
                        lambda_undetermined: d.lambda_undetermined,
                        wall_time_s: d.wall_time_s,
                    })?;
                    s.progress(
                        1,
                        format!(
                            "p={} q={} r={} dB {}: gain {:.3} dB (bound {:.3} dB)",
                            row.p, row.q, row.r_db, row.policy, row.gain_db, row.bound_gain_db
                        ),
                    );
                    Ok(())
                })
            })??;
        }
        Ok(())
    })();
    println!("wrote {} rows to {}", gain.rows(), run.path("gain.csv").display());
    let rows = gain.rows();
    run.finish(rows, outcome)
}

#[derive(Serialize)]
struct TailRow {
    p: f64,
    q: f64,
    gamma: f64,
    r_db: f64,
    lambda: f64,
    epsilon: f64,
    trials: usize,
    empirical_freq: f64,
    bound_freq: f64,
    threshold: f64,
    cp_gamma: f64,
    passed: bool,
}

pub fn tail_check(common: &Common, epsilon: f64, lambda: f64, r_db: f64) -> Result<(), Failure> {
    let settings = Settings::resolve(common, 10_000, Vec::new())?;
    if !(epsilon > 0.0) {
        return Err(Failure::usage(format!("epsilon: must be > 0, got {epsilon}")));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Failure::usage(format!("lambda: must lie in (0, 1], got {lambda}")));
    }
    if settings.trials < 100 {
        return Err(Failure::usage(format!("trials: need at least 100, got {}", settings.trials)));
    }
    let configs = settings.configs_at_r(from_db(r_db))?;
    let extra = serde_json::json!({ "epsilon": epsilon, "lambda": lambda, "tail_r_db": r_db });
    let mut run = Run::new("tail-check", settings, extra)?;
    let mut sink = run.sink("tail_check.csv")?;
    let outcome = (|| -> Result<(), Failure> {
        let s = &run.settings;
        for config in &configs {
            let t = run.pool(|| tail_check_lemma1(config, lambda, epsilon, s.trials, s.base_seed))??;
            println!(
                "{} p={} q={} γ={:.4} ε={epsilon}: empirical {:.4} vs bound {:.4}",
                if t.passed() { "PASS" } else { "FAIL" },
                config.p,
                config.q,
                config.gamma(),
                t.empirical_freq,
                t.bound_freq
            );
            sink.push(&TailRow {
                p: config.p,
                q: config.q,
                gamma: config.gamma(),
                r_db,
                lambda,
                epsilon,
                trials: t.trials,
                empirical_freq: t.empirical_freq,
                bound_freq: t.bound_freq,
                threshold: t.threshold,
                cp_gamma: t.cp_gamma,
                passed: t.passed(),
            })?;
        }
        Ok(())
    })();
    let rows = sink.rows();
    run.finish(rows, outcome)
}

pub fn trial(common: &Common, policy: &str, lambda: Option<f64>, r_db: f64) -> Result<(), Failure> {
    let settings = Settings::resolve(common, 1, Vec::new())?;
    let policy: Policy = policy.parse().map_err(Failure::invalid)?;
    let configs = settings.configs_at_r(from_db(r_db))?;
    if configs.len() != 1 {
        return Err(Failure::usage("p, q: trial takes a single p and a single q"));
    }
    let config = configs[0];
    if let Some(l) = lambda {
        if !(0.0..=1.0).contains(&l) {
            return Err(Failure::usage(format!("lambda: must lie in [0, 1], got {l}")));
        }
    }
    let extra = serde_json::json!({ "policy": policy, "lambda": lambda, "trial_r_db": r_db });
    let mut run = Run::new("trial", settings, extra)?;
    run.manifest.outputs.push("trial.json".into());
    let outcome = (|| -> Result<(), Failure> {
        let lambda = match lambda {
            Some(l) => l,
            None if policy.is_two_stage() => {
                allocation::first_stage_bound(&config, CoefficientSource::default_for(config.q))?.lambda_frac
            }
            None => 0.0,
        };
        let (outcome, signal, trajectory) = run_trial_traced(&config, policy, lambda, run.settings.base_seed)?;
        let body = serde_json::json!({
            "config": config,
            "policy": policy,
            "lambda": lambda,
            "outcome": outcome,
            "signal": signal,
            "trajectory": trajectory,
        });
        write_json(&run.path("trial.json"), &body)?;
        println!("{}", serde_json::to_string_pretty(&body).expect("json"));
        Ok(())
    })();
    run.finish(1, outcome)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json");
    std::fs::write(path, text + "\n").map_err(|e| adaptive_sensing::Error::Io(e).into())
}
