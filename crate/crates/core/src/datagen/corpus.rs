//! Planted-signal procedure corpora emitted in the ingestion format.
//!
//! Each team performs one procedure. Its duration class is planted first and
//! then four cues are written into the streams:
//!
//! * speech rate of every member except the head surgeon, high for slow
//!   procedures and low for fast ones. Mean-pooled features see this.
//! * the head surgeon's speech rate (their broadcast to the team). The other
//!   members compensate so the expected number of speakers per window does
//!   not move, which hides the cue from pooled speech counts.
//! * the head surgeon's behavioral class, written into the paralinguistic
//!   frames of their turns. The other members' levels are drawn so every
//!   axis stays balanced at one half overall.
//! * run-length structure of the non-leader speech: a Markov chain with
//!   class-dependent persistence at a fixed marginal rate.
//!
//! `noise` in `[0, 1]` shrinks every cue towards its class-independent value
//! by the factor `1 - noise^e`, with one exponent `e` per cue. At noise 1
//! nothing distinguishes the classes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{BehavioralClass, Level};
use crate::ingest::{
    save_procedure, window_bounds, ActionEvent, IngestError, MemberProfile, ParaFrame,
    PositionSample, ProcedureRecord, Role, SpeechTurn, WINDOW_SECONDS,
};
use crate::model::{DurationBoundaries, DurationClass};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw paralinguistic values of the Low and High level of each axis
/// (loudness, alpha ratio in dB, HNR in dB).
pub const LOW_CENTER: [f64; 3] = [0.3, -18.0, 4.0];
pub const HIGH_CENTER: [f64; 3] = [0.9, -6.0, 12.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub team_count: usize,
    /// Inclusive team size range.
    pub team_size: (usize, usize),
    pub duration_mean_min: f64,
    pub duration_std_min: f64,
    /// Number of slow, medium and fast procedures.
    pub class_mix: [usize; 3],
    pub noise: f64,
    /// Per-window speech probability of members other than the head surgeon
    /// (slow, medium, fast).
    pub speech_rate: [f64; 3],
    /// Class-independent speech rate the per-class rates shrink towards.
    pub neutral_speech_rate: f64,
    /// Per-window speech probability of the head surgeon (slow, medium, fast).
    pub leader_rate: [f64; 3],
    /// Head surgeon behavioral class (slow, medium, fast).
    pub leader_class: [BehavioralClass; 3],
    /// Relative speech propensity per role (in `Role::ALL` order). The
    /// non-leader rate is spread over the members in proportion to these
    /// weights, keeping its mean; the head surgeon's entry is unused.
    pub role_speech_weight: [f64; 6],
    /// Persistence of non-leader speech across windows (slow, medium, fast).
    pub persistence: [f64; 3],
    /// Noise exponents of the speech-rate, leader-rate, leader-class and
    /// persistence cues. Small exponents make a cue fade early.
    pub noise_exponent: [f64; 4],
    /// Per-window absence probability of the circulating nurse and "other".
    pub absence_rate: f64,
    /// Per-window probability that a present member performs an action.
    pub action_rate: f64,
    pub position_interval: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 7,
            team_count: 14,
            team_size: (5, 5),
            duration_mean_min: 12.0,
            duration_std_min: 2.5,
            class_mix: [2, 10, 2],
            noise: 0.5,
            speech_rate: [1.0, 0.4, 0.0],
            neutral_speech_rate: 0.3,
            leader_rate: [0.9, 0.45, 0.0],
            leader_class: [
                BehavioralClass::CalmLeader,
                BehavioralClass::EngagedCooperative,
                BehavioralClass::CalmCooperative,
            ],
            role_speech_weight: [1.0; 6],
            persistence: [0.3, 0.15, 0.0],
            noise_exponent: [0.25, 8.0, 1.0, 1.0],
            absence_rate: 0.08,
            action_rate: 0.5,
            position_interval: 5.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::InvalidConfig(m.to_string()));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.team_count == 0 {
            return bad("team_count must be positive");
        }
        if self.class_mix.iter().sum::<usize>() != self.team_count {
            return bad("class_mix must sum to team_count");
        }
        if self.class_mix.contains(&0) {
            return bad("every duration class needs at least one procedure");
        }
        let (lo, hi) = self.team_size;
        if lo < 4 || hi > 6 || lo > hi {
            return bad("team_size must lie within [4, 6]");
        }
        if !(self.duration_std_min > 0.0 && self.duration_mean_min > 3.0 * self.duration_std_min) {
            return bad("durations need mean > 3 std > 0");
        }
        let rates = self
            .speech_rate
            .iter()
            .chain(&self.persistence)
            .chain(&self.leader_rate)
            .chain([
                &self.neutral_speech_rate,
                &self.noise,
                &self.absence_rate,
                &self.action_rate,
            ]);
        if !rates.copied().all(unit) {
            return bad("rates, persistence and noise must lie in [0, 1]");
        }
        if self.leader_class.contains(&BehavioralClass::Silent) {
            return bad("leader classes must be speaking classes");
        }
        if self.role_speech_weight.iter().any(|w| !(*w > 0.0)) {
            return bad("role speech weights must be positive");
        }
        if self.noise_exponent.iter().any(|e| !(*e > 0.0)) || !(self.position_interval > 0.0) {
            return bad("noise exponents and position interval must be positive");
        }
        Ok(())
    }

    fn strength(&self, cue: usize) -> f64 {
        1.0 - self.noise.powf(self.noise_exponent[cue])
    }
}

/// Planted parameters of one procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedProcedure {
    pub procedure_id: String,
    pub team_id: String,
    pub planted_class: DurationClass,
    pub duration: f64,
    pub team_size: usize,
    pub leader_id: String,
    pub speech_rate: f64,
    pub persistence: f64,
    pub leader_class: BehavioralClass,
    /// Probability that a head-surgeon turn carries `leader_class`.
    pub leader_class_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GeneratorConfig,
    pub boundaries: DurationBoundaries,
    pub procedures: Vec<PlantedProcedure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<ProcedureRecord>,
    pub manifest: Manifest,
}

impl Corpus {
    /// Writes `<id>.jsonl` per procedure plus `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DatagenError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for r in &self.records {
            save_procedure(r, dir.join(format!("{}.jsonl", r.procedure_id)))?;
        }
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatagenError> {
        let dir = dir.as_ref();
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let records = manifest
            .procedures
            .iter()
            .map(|p| crate::ingest::load_procedure(dir.join(format!("{}.jsonl", p.procedure_id))))
            .collect::<Result<_, _>>()?;
        Ok(Corpus { records, manifest })
    }

    pub fn label_of(&self, procedure_id: &str) -> Option<DurationClass> {
        self.manifest
            .procedures
            .iter()
            .find(|p| p.procedure_id == procedure_id)
            .map(|p| p.planted_class)
    }
}

fn roles_for(size: usize) -> Vec<Role> {
    let mut roles = vec![
        Role::HeadSurgeon,
        Role::AssistantSurgeon,
        Role::ScrubNurse,
        Role::CirculatingNurse,
    ];
    if size >= 5 {
        roles.push(Role::Anesthesiologist);
    }
    if size >= 6 {
        roles.push(Role::Other);
    }
    roles
}

fn station(role: Role) -> (f64, f64, f64) {
    match role {
        Role::HeadSurgeon => (0.0, 0.0, 0.2),
        Role::AssistantSurgeon => (1.0, 0.0, 0.2),
        Role::ScrubNurse => (0.5, 1.0, 0.3),
        Role::CirculatingNurse => (3.0, 3.0, 0.8),
        Role::Anesthesiologist => (-1.5, 0.5, 0.3),
        Role::Other => (2.0, -2.0, 0.5),
    }
}

fn action_vocabulary(role: Role) -> &'static [(&'static str, &'static str)] {
    match role {
        Role::HeadSurgeon => &[("cut", "tissue"), ("drill", "bone"), ("place", "implant")],
        Role::AssistantSurgeon => &[("hold", "retractor"), ("suction", "field")],
        Role::ScrubNurse => &[("pass", "instrument"), ("count", "sponges")],
        Role::CirculatingNurse => &[("fetch", "supplies"), ("document", "chart")],
        Role::Anesthesiologist => &[("monitor", "vitals"), ("adjust", "anesthesia")],
        Role::Other => &[("observe", "field")],
    }
}

/// Planted durations (seconds) for each class, redrawn until the μ ± σ
/// boundaries of the full set and of every leave-one-out subset reproduce
/// the planted labels.
fn draw_durations(
    config: &GeneratorConfig,
    classes: &[DurationClass],
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mu = config.duration_mean_min * 60.0;
    let sigma = config.duration_std_min * 60.0;
    loop {
        let durations: Vec<f64> = classes
            .iter()
            .map(|c| {
                let z = match c {
                    DurationClass::Slow => rng.gen_range(1.6..2.4),
                    DurationClass::Medium => rng.gen_range(-0.6..0.6),
                    DurationClass::Fast => -rng.gen_range(1.6..2.4),
                };
                ((mu + z * sigma) * 10.0).round() / 10.0
            })
            .collect();
        let consistent = |idx: &[usize]| {
            let d: Vec<f64> = idx.iter().map(|&i| durations[i]).collect();
            let b = DurationBoundaries::fit(&d).expect("non-empty");
            (0..durations.len()).all(|i| b.classify(durations[i]) == classes[i])
        };
        let all: Vec<usize> = (0..durations.len()).collect();
        let loo_ok = (0..durations.len()).all(|skip| {
            let idx: Vec<usize> = all.iter().copied().filter(|&i| i != skip).collect();
            consistent(&idx)
        });
        if consistent(&all) && loo_ok {
            return durations;
        }
    }
}

fn levels(class: BehavioralClass) -> [bool; 3] {
    let (a, c, d) = class.levels().expect("speaking class");
    // axis order follows the frame layout: loudness, alpha ratio, hnr
    [a == Level::High, d == Level::High, c == Level::High]
}

fn markov_speech(rng: &mut impl Rng, windows: usize, rate: f64, persistence: f64) -> Vec<bool> {
    let mut out = Vec::with_capacity(windows);
    let mut prev = rng.gen_bool(rate);
    out.push(prev);
    for _ in 1..windows {
        let p = if prev {
            rate + persistence * (1.0 - rate)
        } else {
            rate * (1.0 - persistence)
        };
        prev = rng.gen_bool(p.clamp(0.0, 1.0));
        out.push(prev);
    }
    out
}

struct ProcedurePlan<'a> {
    config: &'a GeneratorConfig,
    index: usize,
    class: DurationClass,
    duration: f64,
    size: usize,
}

fn generate_procedure(
    plan: &ProcedurePlan,
    rng: &mut ChaCha8Rng,
) -> (ProcedureRecord, PlantedProcedure) {
    let cfg = plan.config;
    let c = plan.class.index();
    let team_id = format!("team-{:02}", plan.index + 1);
    let procedure_id = format!("proc-{:02}", plan.index + 1);
    let roles = roles_for(plan.size);
    let members: Vec<MemberProfile> = roles
        .iter()
        .map(|r| MemberProfile {
            member_id: format!("{team_id}-{}", r.as_str()),
            role: *r,
        })
        .collect();

    let base_rate =
        cfg.neutral_speech_rate + (cfg.speech_rate[c] - cfg.neutral_speech_rate) * cfg.strength(0);
    let mean_leader = cfg.leader_rate.iter().sum::<f64>() / 3.0;
    let leader_rate = mean_leader + (cfg.leader_rate[c] - mean_leader) * cfg.strength(1);
    let others = (roles.len() - 1) as f64;
    // the others absorb the leader's deviation from the mean leader rate
    let speech_rate = ((mean_leader + others * base_rate - leader_rate) / others).clamp(0.0, 1.0);
    let mean_persistence = cfg.persistence.iter().sum::<f64>() / 3.0;
    let persistence = mean_persistence + (cfg.persistence[c] - mean_persistence) * cfg.strength(3);
    let weight_sum: f64 = roles[1..]
        .iter()
        .map(|r| cfg.role_speech_weight[r.index()])
        .sum();
    let member_rate = |r: Role| {
        (speech_rate * cfg.role_speech_weight[r.index()] * others / weight_sum).clamp(0.0, 1.0)
    };
    let leader_class = cfg.leader_class[c];
    let leader_p = cfg.strength(2);

    // Expected leader share of turns and the High probability other members
    // need per axis so that every axis stays balanced overall.
    let expected_turns = leader_rate + others * speech_rate;
    let share = if expected_turns > 0.0 {
        leader_rate / expected_turns
    } else {
        0.0
    };
    let leader_levels = levels(leader_class);
    let other_high: [f64; 3] = std::array::from_fn(|a| {
        let leader_high = leader_p * f64::from(u8::from(leader_levels[a])) + (1.0 - leader_p) * 0.5;
        ((0.5 - share * leader_high) / (1.0 - share)).clamp(0.0, 1.0)
    });

    let bounds = window_bounds(plan.duration, WINDOW_SECONDS);
    let w = bounds.len();
    let mut present = vec![vec![true; w]; roles.len()];
    let mut speaks = vec![vec![false; w]; roles.len()];
    for (m, role) in roles.iter().enumerate() {
        if matches!(role, Role::CirculatingNurse | Role::Other) {
            for p in present[m].iter_mut() {
                *p = !rng.gen_bool(cfg.absence_rate);
            }
        }
        speaks[m] = match role {
            Role::HeadSurgeon => (0..w).map(|_| rng.gen_bool(leader_rate)).collect(),
            _ => markov_speech(rng, w, member_rate(*role), persistence),
        };
        for t in 0..w {
            speaks[m][t] &= present[m][t];
        }
    }

    let utterance_jitter = [0.08, 1.5, 1.5];
    let frame_jitter = [0.03, 0.5, 0.5];
    let mut record = ProcedureRecord {
        procedure_id: procedure_id.clone(),
        team_id: team_id.clone(),
        duration: plan.duration,
        members: members.clone(),
        speech_turns: Vec::new(),
        position_samples: Vec::new(),
        action_events: Vec::new(),
        frames: Vec::new(),
    };
    let round = |v: f64| (v * 1000.0).round() / 1000.0;

    for (t, &(start, end)) in bounds.iter().enumerate() {
        for (m, role) in roles.iter().enumerate() {
            let id = &members[m].member_id;
            if !present[m][t] {
                continue;
            }
            if speaks[m][t] {
                let class_levels = if *role == Role::HeadSurgeon {
                    if rng.gen_bool(leader_p) {
                        leader_levels
                    } else {
                        std::array::from_fn(|_| rng.gen_bool(0.5))
                    }
                } else {
                    std::array::from_fn(|a| rng.gen_bool(other_high[a]))
                };
                let len = rng.gen_range(2.0..6.0);
                let s = round(rng.gen_range(start + 0.5..end - len - 0.5));
                let e = round(s + len);
                record.speech_turns.push(SpeechTurn {
                    member_id: id.clone(),
                    start: s,
                    end: e,
                });
                let center: [f64; 3] = std::array::from_fn(|a| {
                    let base = if class_levels[a] {
                        HIGH_CENTER[a]
                    } else {
                        LOW_CENTER[a]
                    };
                    base + Normal::new(0.0, utterance_jitter[a]).unwrap().sample(rng)
                });
                let mut ft = s + 0.25;
                while ft < e {
                    let v: [f64; 3] = std::array::from_fn(|a| {
                        round(center[a] + Normal::new(0.0, frame_jitter[a]).unwrap().sample(rng))
                    });
                    record.frames.push(ParaFrame {
                        member_id: id.clone(),
                        t: round(ft),
                        loudness: v[0],
                        alpha_ratio: v[1],
                        hnr: v[2],
                    });
                    ft += 0.5;
                }
            }
            if rng.gen_bool(cfg.action_rate) {
                let vocab = action_vocabulary(*role);
                let (verb, object) = vocab[rng.gen_range(0..vocab.len())];
                let s = round(rng.gen_range(start..start + 0.5 * (end - start)));
                let e = round(rng.gen_range(s + 1.0..end));
                record.action_events.push(ActionEvent {
                    member_id: id.clone(),
                    verb: verb.into(),
                    object: object.into(),
                    start: s,
                    end: e.min(plan.duration),
                });
            }
        }
    }

    // positions on a fixed clock, only while present
    let mut t = 0.0;
    let mut walk: Vec<(f64, f64)> = roles
        .iter()
        .map(|r| (station(*r).0, station(*r).1))
        .collect();
    while t <= plan.duration {
        let window = bounds
            .iter()
            .position(|&(s, e)| t >= s && t < e)
            .unwrap_or(w - 1);
        for (m, role) in roles.iter().enumerate() {
            if !present[m][window] {
                continue;
            }
            let (sx, sy, spread) = station(*role);
            let noise = Normal::new(0.0, spread).unwrap();
            walk[m] = (
                0.5 * walk[m].0 + 0.5 * (sx + noise.sample(rng)),
                0.5 * walk[m].1 + 0.5 * (sy + noise.sample(rng)),
            );
            record.position_samples.push(PositionSample {
                member_id: members[m].member_id.clone(),
                t: round(t),
                x: round(walk[m].0),
                y: round(walk[m].1),
            });
        }
        t += cfg.position_interval;
    }

    let planted = PlantedProcedure {
        procedure_id,
        team_id,
        planted_class: plan.class,
        duration: plan.duration,
        team_size: plan.size,
        leader_id: members[0].member_id.clone(),
        speech_rate,
        persistence,
        leader_class,
        leader_class_probability: leader_p,
    };
    (record, planted)
}

/// Generates a corpus; identical configs give identical corpora.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<Corpus, DatagenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut classes: Vec<DurationClass> = DurationClass::ALL
        .iter()
        .zip(config.class_mix)
        .flat_map(|(&c, n)| std::iter::repeat_n(c, n))
        .collect();
    classes.shuffle(&mut rng);
    let durations = draw_durations(config, &classes, &mut rng);
    let sizes: Vec<usize> = (0..config.team_count)
        .map(|_| rng.gen_range(config.team_size.0..=config.team_size.1))
        .collect();

    let mut records = Vec::with_capacity(config.team_count);
    let mut procedures = Vec::with_capacity(config.team_count);
    for i in 0..config.team_count {
        let mut proc_rng = ChaCha8Rng::seed_from_u64(config.seed);
        proc_rng.set_stream(i as u64 + 1);
        let plan = ProcedurePlan {
            config,
            index: i,
            class: classes[i],
            duration: durations[i],
            size: sizes[i],
        };
        let (record, planted) = generate_procedure(&plan, &mut proc_rng);
        record.validate()?;
        records.push(record);
        procedures.push(planted);
    }
    Ok(Corpus {
        records,
        manifest: Manifest {
            config: config.clone(),
            boundaries: DurationBoundaries::fit(&durations).expect("non-empty"),
            procedures,
        },
    })
}
