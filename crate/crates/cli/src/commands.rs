use crate::config::{self, RunConfig};
use crate::serve::{self, ServeOptions, ServeSim};
use crate::{verify, ClipChoice, Cli, Command, GlobalArgs};
use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use strider_core::adapter::{collect_dataset, train_adapter, AdapterDataset};
use strider_core::env::{c_high_features, AgentState, QuadrupedEnv, C_HIGH_DIM, STATE_DIM};
use strider_core::eval::{
    emit_report, end_effector_iou, heading_deviation, pca_project, recording_speed_mse, reference_arc, MetricReport,
    RecordingMeta,
};
use strider_core::nn::{Checkpoint, CheckpointMeta};
use strider_core::nav::{astar, path_to_commands, Cell, GridMap, Pose};
use strider_core::policy::{GatingKind, GatingNet, Level, McpPolicy};
use strider_core::refmotion::{
    default_speed_profile, default_turns, derive_high_level, gait_for_speed, load_clip, pace_speed_profile, save_clip,
    synthesize_heading_clip, synthesize_speed_clip, Command as Directive, ReferenceClip, FRAME_RATE,
};
use strider_core::trainer::{checkpoint_normalizer, run_script, run_stage, train_imitation, ActMode, Flow, Objective, PpoTrainer};

pub enum Failure {
    /// Bad invocation or configuration; exit status 2.
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig, Failure> {
    let mut sets = g.set.iter().map(|s| config::parse_assignment(s)).collect::<Result<Vec<_>, _>>().map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = g.seed {
        sets.push(("seed".into(), seed.into()));
    }
    for (key, dir) in [("paths.data", &g.data_dir), ("paths.checkpoints", &g.checkpoint_dir), ("paths.reports", &g.report_dir)] {
        if let Some(d) = dir {
            sets.push((key.into(), d.to_string_lossy().into_owned().into()));
        }
    }
    config::load(g.config.as_deref(), &sets).map_err(|e| Failure::Usage(e.to_string()))
}

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Command::Verify = cli.command {
        return verify_cmd();
    }
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::GenData { kind, out } => gen_data(&cfg, kind, out)?,
        Command::TrainImitate { objective, clip, stop_at } => train_imitate(&cfg, objective.into(), clip, stop_at)?,
        Command::CollectAdapterData { objective, checkpoint, clip, records, with_c_low } => {
            collect(&cfg, objective.into(), checkpoint, clip, records, with_c_low)?
        }
        Command::TrainAdapter { objective, dataset, lambda_adv, name } => adapter(&cfg, objective.into(), dataset, lambda_adv, name)?,
        Command::Finetune { objective, checkpoint, adapter, no_adapter, clip } => {
            if adapter.is_none() && !no_adapter {
                return Err(Failure::Usage(
                    "finetune needs --adapter <checkpoint>; pass --no-adapter to train the high-level gating from scratch".into(),
                ));
            }
            finetune(&cfg, objective.into(), checkpoint, adapter, clip)?
        }
        Command::Evaluate { objective, checkpoint, clip, recordings } => evaluate(&cfg, objective.into(), &checkpoint, clip, recordings)?,
        Command::Navigate { map, cruise, checkpoint } => navigate(&cfg, &map, cruise, checkpoint)?,
        Command::Serve { checkpoint, port, ws_port, host, max_ticks } => serve_cmd(&cfg, &checkpoint, port, ws_port, host, max_ticks)?,
        Command::Verify => unreachable!(),
    }
    Ok(())
}

fn verify_cmd() -> Result<(), Failure> {
    let results = verify::run_all();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Run(anyhow::anyhow!("{} of {} suites failed", results.iter().filter(|r| !r.passed).count(), results.len())))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn default_clip(cfg: &RunConfig, objective: Objective) -> PathBuf {
    cfg.paths.data.join(format!("{}.jsonl", objective.as_str()))
}

fn read_clip(path: &Path) -> Result<ReferenceClip> {
    load_clip(path).with_context(|| format!("cannot load clip {} (run gen-data first)", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn imitation_dir(cfg: &RunConfig, objective: Objective) -> PathBuf {
    cfg.paths.checkpoints.join(format!("imitation_{}", objective.as_str()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

struct JsonLines(std::io::BufWriter<std::fs::File>);

impl JsonLines {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self(std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?)))
    }

    fn push<T: Serialize>(&mut self, value: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.0, value)?;
        self.0.write_all(b"\n")?;
        self.0.flush()
    }
}

pub fn synthesize(cfg: &RunConfig, kind: ClipChoice) -> Result<ReferenceClip> {
    let s = &cfg.clip.synth;
    let d = cfg.clip.duration_s;
    Ok(match kind {
        ClipChoice::Speed => synthesize_speed_clip(&cfg.model, s, &default_speed_profile(), d)?,
        ClipChoice::Pace => synthesize_speed_clip(&cfg.model, s, &pace_speed_profile(), d)?,
        ClipChoice::Heading => synthesize_heading_clip(&cfg.model, s, &default_turns(), d)?,
    })
}

fn gen_data(cfg: &RunConfig, kind: ClipChoice, out: Option<PathBuf>) -> Result<()> {
    let path = out.unwrap_or_else(|| cfg.paths.data.join(format!("{}.jsonl", kind.as_str())));
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    std::fs::create_dir_all(&dir)?;
    let clip = synthesize(cfg, kind)?;
    save_clip(&clip, &path)?;
    let stem = path.file_stem().map_or("clip".into(), |s| s.to_string_lossy().into_owned());
    cfg.write_next_to(&dir, &stem)?;
    println!("wrote {} ({} frames, sha256 {})", path.display(), clip.len(), clip.sha256());
    Ok(())
}

fn train_imitate(cfg: &RunConfig, objective: Objective, clip: Option<PathBuf>, stop_at: Option<f64>) -> Result<()> {
    let clip = read_clip(&clip.unwrap_or_else(|| default_clip(cfg, objective)))?;
    let dir = imitation_dir(cfg, objective);
    std::fs::create_dir_all(&dir)?;
    cfg.write_next_to(&dir, "run")?;
    let mut metrics = JsonLines::create(&dir.join("metrics.jsonl"))?;
    let mut best_seen = f64::NEG_INFINITY;
    let latest = dir.join("latest.json");
    let best_path = dir.join("best.json");
    let out = train_imitation(
        &clip,
        objective,
        &cfg.policy,
        &cfg.imitation,
        cfg.model.clone(),
        cfg.env.clone(),
        cfg.rewards.clone(),
        cfg.seed,
        &mut |rec, t| {
            metrics.push(rec)?;
            if let Some(e) = rec.eval_reward {
                log::info!("iteration {} eval {e:.4} (best {:.4}) after {:.0} s", rec.iteration, rec.best_eval_reward.unwrap_or(e), rec.wall_s);
                t.checkpoint().save(&latest)?;
                if e > best_seen {
                    best_seen = e;
                    t.checkpoint().save(&best_path)?;
                }
                if stop_at.is_some_and(|s| e >= s) {
                    return Ok(Flow::Stop);
                }
            }
            Ok(Flow::Continue)
        },
    )?;
    out.best.save(&best_path)?;
    out.last.save(&latest)?;
    println!("best eval reward {:.4} after {} iterations; checkpoint {}", out.best_eval_reward, out.history.len(), best_path.display());
    Ok(())
}

fn load_policy(cfg: &RunConfig, path: &Path) -> Result<(Checkpoint, McpPolicy, strider_core::env::ObsNormalizer)> {
    let ck = read_checkpoint(path)?;
    let policy = McpPolicy::from_checkpoint(&ck, cfg.policy.sigma2)?;
    let normalizer = checkpoint_normalizer(&ck)?;
    Ok((ck, policy, normalizer))
}

fn collect(cfg: &RunConfig, objective: Objective, checkpoint: Option<PathBuf>, clip: Option<PathBuf>, records: Option<usize>, with_c_low: bool) -> Result<()> {
    let ck_path = checkpoint.unwrap_or_else(|| imitation_dir(cfg, objective).join("best.json"));
    let (_, policy, normalizer) = load_policy(cfg, &ck_path)?;
    let clip = read_clip(&clip.unwrap_or_else(|| default_clip(cfg, objective)))?;
    let n = records.unwrap_or(cfg.adapter.records);
    let ds = collect_dataset(&policy, &normalizer, &clip, &cfg.model, &cfg.env, n, cfg.seed)?;
    std::fs::create_dir_all(&cfg.paths.data)?;
    let name = format!("adapter_{}", objective.as_str());
    let path = cfg.paths.data.join(format!("{name}.jsonl"));
    ds.save(&path, with_c_low)?;
    cfg.write_next_to(&cfg.paths.data, &name)?;
    println!(
        "wrote {} ({} records, {} held out, {} diverged episodes)",
        path.display(),
        ds.manifest.records,
        ds.manifest.heldout,
        ds.manifest.diverged
    );
    Ok(())
}

fn adapter(cfg: &RunConfig, objective: Objective, dataset: Option<PathBuf>, lambda_adv: Option<f64>, name: Option<String>) -> Result<()> {
    let path = dataset.unwrap_or_else(|| cfg.paths.data.join(format!("adapter_{}.jsonl", objective.as_str())));
    let ds = AdapterDataset::load(&path).with_context(|| format!("cannot load dataset {}", path.display()))?;
    let mut gan = cfg.adapter.gan.clone();
    if let Some(l) = lambda_adv {
        gan.lambda_adv = l;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let generator = GatingNet::new(GatingKind::HighLevel, ds.manifest.state_dim, C_HIGH_DIM, &cfg.policy.gating_hidden, ds.manifest.k, &mut rng);
    let out = train_adapter(&ds, generator, &gan, cfg.seed)?;
    let dir = cfg.paths.checkpoints.join(name.unwrap_or_else(|| format!("adapter_{}", objective.as_str())));
    std::fs::create_dir_all(&dir)?;
    let mut ck = Checkpoint::new(CheckpointMeta {
        stage: format!("adapter_{}", objective.as_str()),
        seed: cfg.seed,
        k: ds.manifest.k,
        created_at: format!("epoch {}", gan.epochs),
        obs_scale: None,
    });
    ck.insert(GatingKind::HighLevel.net_name(), &out.generator.net);
    ck.insert("discriminator", &out.discriminator.net);
    ck.save(&dir.join("adapter.json"))?;
    write_json(&dir.join("report.json"), &out.report)?;
    let mut hist = JsonLines::create(&dir.join("history.jsonl"))?;
    for e in &out.history {
        hist.push(e)?;
    }
    let mut resolved = cfg.clone();
    resolved.adapter.gan = gan;
    resolved.write_next_to(&dir, "run")?;
    let r = &out.report;
    println!(
        "held-out L1 {:.5}, discriminator accuracy {:.3}, PCA overlap {:.3}; checkpoint {}",
        r.heldout_l1,
        r.d_accuracy,
        r.pca_overlap,
        dir.join("adapter.json").display()
    );
    Ok(())
}

fn finetune(cfg: &RunConfig, objective: Objective, checkpoint: Option<PathBuf>, adapter: Option<PathBuf>, clip: Option<PathBuf>) -> Result<()> {
    let base = read_checkpoint(&checkpoint.unwrap_or_else(|| imitation_dir(cfg, objective).join("best.json")))?;
    let anchor = match &adapter {
        Some(p) => Some(read_checkpoint(p)?.net(GatingKind::HighLevel.net_name())?),
        None => None,
    };
    let clip = read_clip(&clip.unwrap_or_else(|| default_clip(cfg, objective)))?;
    let mut trainer = PpoTrainer::finetune(
        &base,
        anchor,
        &clip,
        objective,
        &cfg.policy,
        cfg.finetune.ppo.clone(),
        cfg.schedule.clone(),
        cfg.model.clone(),
        cfg.env.clone(),
        cfg.rewards.clone(),
        cfg.seed,
    )?;
    let suffix = if adapter.is_some() { "" } else { "_no_adapter" };
    let dir = cfg.paths.checkpoints.join(format!("finetune_{}{suffix}", objective.as_str()));
    std::fs::create_dir_all(&dir)?;
    cfg.write_next_to(&dir, "run")?;
    let mut metrics = JsonLines::create(&dir.join("metrics.jsonl"))?;
    let latest = dir.join("latest.json");
    let out = run_stage(&mut trainer, &cfg.finetune, &mut |rec, t| {
        metrics.push(rec)?;
        if let Some(e) = rec.eval_reward {
            log::info!("iteration {} eval {e:.4} l_reg {:.3e}", rec.iteration, rec.update.l_reg);
            t.checkpoint().save(&latest)?;
        }
        Ok(Flow::Continue)
    })?;
    out.best.save(&dir.join("best.json"))?;
    out.last.save(&latest)?;
    println!("best eval reward {:.4}; checkpoint {}", out.best_eval_reward, dir.join("best.json").display());
    Ok(())
}

/// Frame of `clip` whose derived speed is closest to `speed`.
fn frame_near_speed(clip: &ReferenceClip, speed: f64) -> usize {
    (0..clip.len().saturating_sub(1))
        .filter_map(|i| derive_high_level(clip, i).ok().map(|c| (i, (c.speed - speed).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |x| x.0)
}

const EVAL_SPEEDS: [f64; 3] = [1.0, 2.5, 3.5];
const RECORDING_S: f64 = 5.0;

fn evaluate(cfg: &RunConfig, objective: Objective, checkpoint: &Path, clip: Option<PathBuf>, n: usize) -> Result<()> {
    if n < 2 {
        bail!("evaluation needs at least 2 recordings per scenario");
    }
    let (ck, policy, normalizer) = load_policy(cfg, checkpoint)?;
    let clip = read_clip(&clip.unwrap_or_else(|| default_clip(cfg, objective)))?;
    let mut report = MetricReport {
        config_hash: hex::encode(Sha256::digest(cfg.to_json().as_bytes())),
        checkpoint_hash: file_sha256(checkpoint)?,
        ..MetricReport::default()
    };
    let policy_id = ck.meta.stage.clone();
    let mut falls = 0usize;
    match objective {
        Objective::Speed => {
            let mut weights = Vec::new();
            for &speed in &EVAL_SPEEDS {
                let gait = serde_json::to_value(gait_for_speed(speed)?.name)?.as_str().unwrap_or("gait").to_string();
                let start = frame_near_speed(&clip, speed);
                let reference: Vec<AgentState> = (0..clip.len())
                    .filter(|&i| derive_high_level(&clip, i).is_ok_and(|c| (c.speed - speed).abs() < 0.3))
                    .map(|i| clip.state(i).clone())
                    .collect();
                for r in 0..n {
                    let meta = RecordingMeta { policy_id: policy_id.clone(), seed: cfg.seed + r as u64, scenario: format!("{gait}_{speed}") };
                    let script = [(RECORDING_S, Directive::new(speed, 0.0))];
                    let (rec, err) = run_script(&policy, &normalizer, &cfg.model, &cfg.env, clip.state(start), &script, objective, ActMode::Sample, meta.seed, meta)?;
                    falls += usize::from(err.is_some() || rec.len() + 1 < (RECORDING_S * FRAME_RATE as f64) as usize);
                    let id = format!("{gait}_{r}");
                    report.push(&format!("speed_mse_{gait}"), &id, recording_speed_mse(&rec));
                    if !reference.is_empty() {
                        let iou = end_effector_iou(&rec.states, &reference, 0.02)?;
                        report.push(&format!("iou_{gait}"), &id, iou.average);
                    }
                    for s in &rec.states {
                        let w = policy.gating(Level::High).gate(&normalizer.state(s), &c_high_features(speed, 0.0))?;
                        weights.push(w);
                    }
                }
            }
            if weights.len() >= 10 {
                let pca = pca_project(&weights)?;
                report.points.insert("gating_pca".into(), weights.iter().map(|w| pca.project(w)).collect());
            }
        }
        Objective::Heading => {
            let start = frame_near_speed(&clip, cfg.clip.synth.heading_speed);
            let rate = cfg.clip.synth.turn_rate;
            for (label, angle) in [("left_90", 0.5), ("right_90", -0.5), ("left_180", 1.0), ("right_180", -1.0)] {
                let angle = angle * std::f64::consts::PI;
                let v = cfg.clip.synth.heading_speed;
                let script = [(1.0, Directive::new(v, 0.0)), (angle.abs() / rate, Directive::new(v, angle)), (1.0, Directive::new(v, 0.0))];
                for r in 0..n {
                    let meta = RecordingMeta { policy_id: policy_id.clone(), seed: cfg.seed + r as u64, scenario: label.into() };
                    let (rec, err) = run_script(&policy, &normalizer, &cfg.model, &cfg.env, clip.state(start), &script, objective, ActMode::Sample, meta.seed, meta)?;
                    falls += usize::from(err.is_some());
                    let track = rec.track();
                    let arc = reference_arc(&script, FRAME_RATE, track[0]);
                    let dev = heading_deviation(&track, &arc)?;
                    let id = format!("{label}_{r}");
                    report.push(&format!("angular_deg_{label}"), &id, dev.angular_deg);
                    report.push(&format!("positional_m_{label}"), &id, dev.positional_m);
                }
            }
        }
    }
    let dir = cfg.paths.reports.join(format!("eval_{}", ck.meta.stage));
    let files = emit_report(&report, &dir)?;
    cfg.write_next_to(&dir, "run")?;
    for (k, v) in report.summary() {
        println!("{k}: {:.4e} ± {:.1e}", v.mean, v.std);
    }
    if falls > 0 {
        log::warn!("{falls} recordings ended early");
    }
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct NavPlan {
    map: String,
    cell_size: f64,
    path: Vec<[usize; 2]>,
    commands: Vec<(f64, Directive)>,
    duration_s: f64,
    /// Largest distance from a path cell centre to the replayed track.
    replay_max_miss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    executed: Option<BTreeMap<String, f64>>,
}

fn navigate(cfg: &RunConfig, map_path: &Path, cruise: Option<f64>, checkpoint: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(map_path).with_context(|| format!("cannot read map {}", map_path.display()))?;
    let cell = cfg.nav.cell_size_mm as f64 / 1000.0;
    let map = GridMap::parse(&text, cell)?;
    let start = map.start().context("map has no start cell `S`")?;
    let goal = *map.find(Cell::Goal).first().context("map has no goal cell `G`")?;
    let path = astar(&map, start, goal)?.with_context(|| format!("goal {goal:?} is unreachable from {start:?}"))?;
    if path.len() < 2 {
        bail!("start and goal coincide");
    }
    let pose = Pose { position: map.center(start), yaw: 0.0 };
    let seq = path_to_commands(&map, &path, cruise.unwrap_or(cfg.nav.cruise), pose)?;
    let track = seq.replay(pose, 120.0);
    let miss = path
        .iter()
        .map(|&p| {
            let c = map.center(p);
            track.iter().map(|q| (q.position[0] - c[0]).hypot(q.position[1] - c[1])).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let executed = match checkpoint {
        Some(ck) => {
            let (_, policy, normalizer) = load_policy(cfg, &ck)?;
            let mut env = QuadrupedEnv::new(cfg.model.clone(), cfg.env.clone())?;
            env.reset_nominal(0.0)?;
            let meta = RecordingMeta { policy_id: ck.display().to_string(), seed: cfg.seed, scenario: "navigate".into() };
            let (rec, err) =
                run_script(&policy, &normalizer, &cfg.model, &cfg.env, &env.observe(), &seq.segments, Objective::Heading, ActMode::Mean, cfg.seed, meta)?;
            let t = rec.track();
            let dev = heading_deviation(&t, &reference_arc(&seq.segments, FRAME_RATE, t[0]))?;
            let mut m = BTreeMap::new();
            m.insert("angular_deg".into(), dev.angular_deg);
            m.insert("positional_m".into(), dev.positional_m);
            m.insert("completed".into(), f64::from(u8::from(err.is_none() && !dev.truncated)));
            Some(m)
        }
        None => None,
    };
    let plan = NavPlan {
        map: map_path.display().to_string(),
        cell_size: cell,
        path: path.iter().map(|p| [p.0, p.1]).collect(),
        duration_s: seq.duration(),
        commands: seq.segments.clone(),
        replay_max_miss: miss,
        executed,
    };
    let dir = cfg.paths.reports.join("navigate");
    std::fs::create_dir_all(&dir)?;
    let stem = map_path.file_stem().map_or("map".into(), |s| s.to_string_lossy().into_owned());
    write_json(&dir.join(format!("{stem}.plan.json")), &plan)?;
    cfg.write_next_to(&dir, &stem)?;
    println!("path of {} cells, {} commands over {:.2} s", path.len(), seq.segments.len(), seq.duration());
    for (d, c) in &seq.segments {
        println!("  {d:.3} s  speed {:.3}  turn {:+.4}", c.speed, c.heading_delta);
    }
    Ok(())
}

fn serve_cmd(cfg: &RunConfig, checkpoint: &Path, port: Option<u16>, ws_port: Option<u16>, host: Option<String>, max_ticks: Option<u64>) -> Result<()> {
    let (_, policy, normalizer) = load_policy(cfg, checkpoint)?;
    let mut env = QuadrupedEnv::new(cfg.model.clone(), cfg.env.clone())?;
    env.reset_nominal(0.0)?;
    let start = env.observe();
    debug_assert_eq!(normalizer.scale.len(), STATE_DIM);
    let sim = ServeSim::new(policy, normalizer, cfg.model.clone(), cfg.env.clone(), start, cfg.seed)?;
    let ws = ws_port.unwrap_or(cfg.serve.ws_port);
    let opts = ServeOptions {
        host: host.unwrap_or_else(|| cfg.serve.host.clone()),
        port: port.unwrap_or(cfg.serve.port),
        ws_port: (ws != 0).then_some(ws),
        tick_hz: cfg.serve.tick_hz,
        client_buffer: cfg.serve.client_buffer,
        max_ticks,
    };
    let handle = serve::start(sim, &opts)?;
    println!("serving NDJSON on {}", handle.addr);
    if let Some(a) = handle.ws_addr {
        println!("serving WebSocket on ws://{a}");
    }
    let summary = handle.join()?;
    println!("{} ticks, {} clients, {} frames dropped", summary.ticks, summary.clients, summary.frames_dropped);
    Ok(())
}
