use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_representation, speed, ExperimentConfig, HarnessError, NavigationEnv};
use crate::approximator::{Checkpoint, Network, CHECKPOINT_VERSION};
use crate::midlevel::RepresentationSpec;
use crate::sac::{evaluate, train, EvalReport, FailureBreakdown, SacError, TrainRecord};
use crate::scene::Outcome;

/// Overrides `experiment.output_dir`.
pub const OUTPUT_ENV: &str = "FLOWFACT_OUT";
/// Size of the worker pool used by sweeps and the renderer.
pub const THREADS_ENV: &str = "FLOWFACT_THREADS";

const MANIFEST: &str = "manifest.json";
const CHECKPOINT: &str = "checkpoint.ffck";
const TRAIN_LOG: &str = "training.jsonl";
const FINAL_EVAL: &str = "eval.json";

fn io<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> HarnessError + '_ {
    move |e| HarnessError::Io(format!("{}: {e}", path.display()))
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of `config.toml`, the effective single-seed configuration.
    pub config_hash: String,
    pub seed: u64,
    pub environment: String,
    pub representation: String,
    pub train_speed: String,
    pub train_fps: f64,
    pub crate_version: String,
    pub checkpoint_version: u32,
    pub files: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub policy: Network<f32>,
    pub log: Vec<TrainRecord>,
    /// Greedy evaluation at the training speed mode and frame rate.
    pub final_eval: EvalReport,
    /// True when a matching finished run was found in `dir` and reused.
    pub reused: bool,
}

/// Evaluation speed mode and frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCondition {
    pub speed: String,
    pub fps: f64,
}

/// Configuration of a single run: one representation and one seed. Fields
/// that cannot influence the run (output location, sweep lists, sweep
/// evaluation conditions) are reset so the hash identifies the run itself.
fn run_config(cfg: &ExperimentConfig, repr: &RepresentationSpec, seed: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.experiment.representation = repr.to_string();
    c.experiment.seeds = vec![seed];
    c.experiment.output_dir = PathBuf::from(".");
    c.experiment.eval_speeds.clear();
    c.experiment.eval_fps.clear();
    c.sweep = Default::default();
    c.sac.seed = seed;
    c
}

fn make_env(cfg: &ExperimentConfig, repr: &RepresentationSpec, cond: &EvalCondition) -> Result<NavigationEnv, HarnessError> {
    NavigationEnv::new(
        cfg.environment()?,
        speed(&cond.speed)?,
        cond.fps,
        cfg.scene.clone(),
        cfg.camera.clone(),
        cfg.midlevel.clone(),
        repr.clone(),
    )
}

fn eval_policy(
    cfg: &ExperimentConfig,
    repr: &RepresentationSpec,
    policy: &Network<f32>,
    cond: &EvalCondition,
) -> Result<EvalReport, HarnessError> {
    let mut env = make_env(cfg, repr, cond)?;
    Ok(evaluate(policy, &mut env, cfg.experiment.eval_episodes, cfg.experiment.eval_seed)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text).map_err(io(path))
}

fn read_log(path: &Path) -> Result<Vec<TrainRecord>, HarnessError> {
    let f = File::open(path).map_err(io(path))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(io(path))?;
            serde_json::from_str(&line).map_err(|e| HarnessError::Format {
                file: path.display().to_string(),
                offset: 0,
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn try_reuse(dir: &Path, manifest: &RunManifest) -> Option<(Network<f32>, Vec<TrainRecord>)> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
    let old: RunManifest = serde_json::from_str(&text).ok()?;
    if old.config_hash != manifest.config_hash || old.crate_version != manifest.crate_version {
        return None;
    }
    let policy = Checkpoint::load(&dir.join(CHECKPOINT)).ok()?.network::<f32>("policy").ok()?;
    let log = read_log(&dir.join(TRAIN_LOG)).ok()?;
    Some((policy, log))
}

/// Train one agent and write `config.toml`, `training.jsonl`,
/// `checkpoint.ffck`, `eval.json` and `manifest.json` into `dir`. A finished
/// run with the same configuration hash in `dir` is reused instead of
/// retrained; its evaluation is recomputed from the checkpoint.
pub fn train_run(
    cfg: &ExperimentConfig,
    repr: &RepresentationSpec,
    seed: u64,
    dir: &Path,
) -> Result<RunOutput, HarnessError> {
    let rc = run_config(cfg, repr, seed);
    rc.validate()?;
    let manifest = RunManifest {
        config_hash: rc.hash(),
        seed,
        environment: rc.environment()?.to_string(),
        representation: repr.to_string(),
        train_speed: rc.experiment.train_speed.clone(),
        train_fps: rc.experiment.train_fps,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        checkpoint_version: CHECKPOINT_VERSION,
        files: [ "config.toml", TRAIN_LOG, CHECKPOINT, FINAL_EVAL].map(String::from).to_vec(),
    };
    let train_cond = EvalCondition {
        speed: rc.experiment.train_speed.clone(),
        fps: rc.experiment.train_fps,
    };

    if let Some((policy, log)) = try_reuse(dir, &manifest) {
        let final_eval = eval_policy(&rc, repr, &policy, &train_cond)?;
        return Ok(RunOutput {
            dir: dir.to_path_buf(),
            manifest,
            policy,
            log,
            final_eval,
            reused: true,
        });
    }

    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let _ = std::fs::remove_file(dir.join(MANIFEST));
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, rc.to_toml()).map_err(io(&cfg_path))?;

    let mut env = make_env(&rc, repr, &train_cond)?;
    let log_path = dir.join(TRAIN_LOG);
    let mut sink = BufWriter::new(File::create(&log_path).map_err(io(&log_path))?);
    let result = train(&mut env, &rc.sac, Some(&mut sink));
    sink.flush().map_err(io(&log_path))?;
    let out = match result {
        Ok(o) => o,
        Err(SacError::Diverged { step, reason, checkpoint }) => {
            let p = dir.join("diverged.ffck");
            checkpoint.save(&p)?;
            return Err(HarnessError::Numeric(format!(
                "training diverged at step {step}: {reason}; last parameters saved to {}",
                p.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let mut ck = out.agent.to_checkpoint();
    ck.metadata["representation"] = serde_json::Value::String(repr.to_string());
    ck.metadata["config_hash"] = serde_json::Value::String(manifest.config_hash.clone());
    ck.save(&dir.join(CHECKPOINT))?;
    let policy = out.agent.policy.clone();
    let final_eval = eval_policy(&rc, repr, &policy, &train_cond)?;
    write_json(&dir.join(FINAL_EVAL), &final_eval)?;
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        manifest,
        policy,
        log: out.log,
        final_eval,
        reused: false,
    })
}

/// Evaluate a saved checkpoint under each condition. The representation is
/// taken from the checkpoint when recorded there.
pub fn eval_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    conditions: &[EvalCondition],
) -> Result<Vec<(EvalCondition, EvalReport)>, HarnessError> {
    let ck = Checkpoint::load(checkpoint)?;
    let policy = ck.network::<f32>("policy")?;
    let repr = match ck.metadata.get("representation").and_then(|v| v.as_str()) {
        Some(s) => parse_representation(s)?,
        None => cfg.representation()?,
    };
    conditions
        .iter()
        .map(|c| Ok((c.clone(), eval_policy(cfg, &repr, &policy, c)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Composition,
    Complementarity,
    Fps,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Composition => "composition",
            SweepKind::Complementarity => "complementarity",
            SweepKind::Fps => "fps",
        }
    }

    pub fn compositions(self, cfg: &ExperimentConfig) -> Vec<String> {
        match self {
            SweepKind::Composition => cfg.sweep.composition.clone(),
            SweepKind::Complementarity => cfg.sweep.complementarity.clone(),
            SweepKind::Fps => cfg.sweep.fps.clone(),
        }
    }

    /// Speed sweeps evaluate every configured speed mode at the training
    /// frame rate; the frame-rate sweep evaluates every configured rate at
    /// the training speed mode.
    pub fn conditions(self, cfg: &ExperimentConfig) -> Vec<EvalCondition> {
        let e = &cfg.experiment;
        match self {
            SweepKind::Composition | SweepKind::Complementarity => e
                .eval_speeds
                .iter()
                .map(|s| EvalCondition {
                    speed: s.clone(),
                    fps: e.train_fps,
                })
                .collect(),
            SweepKind::Fps => e
                .eval_fps
                .iter()
                .map(|&fps| EvalCondition {
                    speed: e.train_speed.clone(),
                    fps,
                })
                .collect(),
        }
    }
}

/// One evaluation episode; reports are rebuilt from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub sweep: String,
    pub composition: String,
    pub environment: String,
    pub speed: String,
    pub fps: f64,
    pub seed: u64,
    pub episode: usize,
    pub outcome: Outcome,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
}

/// One (composition, environment, condition) cell aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub composition: String,
    pub environment: String,
    pub speed: String,
    pub fps: f64,
    pub seeds: Vec<u64>,
    /// Success rate of each seed, in `seeds` order.
    pub success_rates: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std: f64,
    /// Outcome counts pooled over all seeds and episodes.
    pub breakdown: FailureBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<Cell>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate episode records into cells, keeping first-seen order.
pub fn build_report(records: &[EpisodeRecord]) -> SweepReport {
    type Key = (String, String, String, u64);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<&EpisodeRecord>> = HashMap::new();
    for r in records {
        let key = (r.composition.clone(), r.environment.clone(), r.speed.clone(), r.fps.to_bits());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    let cells = order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let mut seeds: Vec<u64> = Vec::new();
            for r in rs {
                if !seeds.contains(&r.seed) {
                    seeds.push(r.seed);
                }
            }
            let success_rates: Vec<f64> = seeds
                .iter()
                .map(|s| {
                    let b = FailureBreakdown::from_outcomes(rs.iter().filter(|r| r.seed == *s).map(|r| &r.outcome));
                    b.success_rate()
                })
                .collect();
            let (mean, std) = mean_std(&success_rates);
            Cell {
                composition: key.0,
                environment: key.1,
                speed: key.2,
                fps: f64::from_bits(key.3),
                seeds,
                success_rates,
                mean,
                std,
                breakdown: FailureBreakdown::from_outcomes(rs.iter().map(|r| &r.outcome)),
            }
        })
        .collect();
    SweepReport { cells }
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_else(|| "-".into())
}

impl SweepReport {
    /// Success-rate table, tab separated.
    pub fn success_table(&self) -> String {
        let mut s = String::from("composition\tenvironment\tspeed\tfps\tseeds\tmean_success\tstd_success\n");
        for c in &self.cells {
            s += &format!(
                "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\n",
                c.composition,
                c.environment,
                c.speed,
                c.fps,
                c.seeds.len(),
                c.mean,
                c.std
            );
        }
        s
    }

    /// Failure breakdown table, tab separated. Shares are percentages of
    /// OOB + collision failures; timeouts are listed separately.
    pub fn failure_table(&self) -> String {
        let mut s = String::from(
            "composition\tenvironment\tspeed\tfps\tepisodes\tsuccesses\toob\tcollisions\ttimeouts\toob_pct\tcollision_pct\tratio\n",
        );
        for c in &self.cells {
            let b = &c.breakdown;
            s += &format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                c.composition,
                c.environment,
                c.speed,
                c.fps,
                b.episodes,
                b.successes,
                b.oob,
                b.collisions,
                b.timeouts,
                pct(b.oob_share),
                pct(b.collision_share),
                b.ratio.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into()),
            );
        }
        s
    }
}

/// Write `report.json`, `report.tsv` and `failures.tsv` into `dir`.
pub fn write_report(report: &SweepReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    write_json(&dir.join("report.json"), report)?;
    let p = dir.join("report.tsv");
    std::fs::write(&p, report.success_table()).map_err(io(&p))?;
    let p = dir.join("failures.tsv");
    std::fs::write(&p, report.failure_table()).map_err(io(&p))
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let f = File::open(path).map_err(io(path))?;
    let mut offset = 0usize;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io(path))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Format {
                file: path.display().to_string(),
                offset: offset + e.column().saturating_sub(1),
                message: e.to_string(),
            })?);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Train every (composition, seed) cell of a sweep in parallel, evaluate
/// each checkpoint under the sweep's conditions, and write
/// `episodes.jsonl` plus the report files into `out/<sweep>/`.
pub fn run_sweep(cfg: &ExperimentConfig, kind: SweepKind, out: &Path) -> Result<SweepReport, HarnessError> {
    cfg.validate()?;
    let compositions: Vec<RepresentationSpec> = kind
        .compositions(cfg)
        .iter()
        .map(|s| parse_representation(s))
        .collect::<Result<_, _>>()?;
    let conditions = kind.conditions(cfg);
    let environment = cfg.environment()?.to_string();
    let root = out.join(kind.name());
    let cells: Vec<(&RepresentationSpec, u64)> = compositions
        .iter()
        .flat_map(|r| cfg.experiment.seeds.iter().map(move |&s| (r, s)))
        .collect();

    let per_cell: Vec<Vec<EpisodeRecord>> = cells
        .par_iter()
        .map(|&(repr, seed)| {
            let dir = root.join(repr.to_string().replace('+', "_")).join(format!("seed_{seed}"));
            let run = train_run(cfg, repr, seed, &dir)?;
            let mut records = Vec::new();
            for cond in &conditions {
                let report = if *cond
                    == (EvalCondition {
                        speed: cfg.experiment.train_speed.clone(),
                        fps: cfg.experiment.train_fps,
                    }) {
                    run.final_eval.clone()
                } else {
                    eval_policy(cfg, repr, &run.policy, cond)?
                };
                records.extend(report.results.iter().enumerate().map(|(i, r)| EpisodeRecord {
                    sweep: kind.name().into(),
                    composition: repr.to_string(),
                    environment: environment.clone(),
                    speed: cond.speed.clone(),
                    fps: cond.fps,
                    seed,
                    episode: i,
                    outcome: r.outcome,
                    steps: r.steps,
                    episode_return: r.episode_return,
                }));
            }
            Ok(records)
        })
        .collect::<Result<_, HarnessError>>()?;

    // Order records by composition, then condition, then seed.
    let mut records: Vec<EpisodeRecord> = Vec::new();
    for (ci, _) in compositions.iter().enumerate() {
        for cond in &conditions {
            for (k, _) in cfg.experiment.seeds.iter().enumerate() {
                let cell = &per_cell[ci * cfg.experiment.seeds.len() + k];
                records.extend(cell.iter().filter(|r| r.speed == cond.speed && r.fps == cond.fps).cloned());
            }
        }
    }
    std::fs::create_dir_all(&root).map_err(io(&root))?;
    let ep_path = root.join("episodes.jsonl");
    let mut w = BufWriter::new(File::create(&ep_path).map_err(io(&ep_path))?);
    for r in &records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io(&ep_path))?;
    }
    w.flush().map_err(io(&ep_path))?;
    let report = build_report(&records);
    write_report(&report, &root)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(comp: &str, speed: &str, seed: u64, outcome: Outcome) -> EpisodeRecord {
        EpisodeRecord {
            sweep: "composition".into(),
            composition: comp.into(),
            environment: "StraightRoad".into(),
            speed: speed.into(),
            fps: 12.0,
            seed,
            episode: 0,
            outcome,
            steps: 10,
            episode_return: 0.0,
        }
    }

    #[test]
    fn report_aggregates_per_seed() {
        let mut rs = Vec::new();
        for (seed, succ) in [(0, 3), (1, 1)] {
            for i in 0..4 {
                let o = if i < succ { Outcome::Success } else { Outcome::Oob };
                rs.push(rec("ego", "high", seed, o));
            }
        }
        rs.push(rec("ego", "low", 0, Outcome::Collision));
        let r = build_report(&rs);
        assert_eq!(r.cells.len(), 2);
        let c = &r.cells[0];
        assert_eq!(c.success_rates, vec![0.75, 0.25]);
        assert!((c.mean - 0.5).abs() < 1e-12);
        assert!((c.std - (0.125f64).sqrt()).abs() < 1e-12);
        assert_eq!(c.breakdown.oob, 4);
        assert_eq!(r.cells[1].std, 0.0);
        assert_eq!(r.cells[1].breakdown.ratio, Some(0.0));
    }

    #[test]
    fn episodes_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let rs = vec![rec("ego+obj", "low", 2, Outcome::Timeout), rec("obj", "high", 1, Outcome::Success)];
        let text: String = rs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        std::fs::write(&p, text).unwrap();
        assert_eq!(read_episodes(&p).unwrap(), rs);
        std::fs::write(&p, "{\"sweep\": 3}\n").unwrap();
        assert!(matches!(read_episodes(&p), Err(HarnessError::Format { .. })));
    }
}
