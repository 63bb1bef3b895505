//! The pipeline stages. Each reads its inputs, writes its outputs into the
//! run directory and records both in a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use fade_core::diffusion::{default_model, train_base, NoisePredictor};
use fade_core::evaluation::{
    ablation_run, accuracies, evaluate, inflection_sweep, InflectionCurve,
};
use fade_core::fade::{unlearn, write_trace_csv, FadeConfig};
use fade_core::mesh::{delta_ranks, load_adapters, AdapterCheckpoint};
use fade_core::neighborhood::{
    build_adjacency, similarity_ranking, agreement_sweep, world_embedding_table, AdjacencySet, Embedder,
    EmbeddingTable, PenultimateEmbedder,
};
use fade_core::world::{ConceptId, ConceptWorld};
use serde::{Deserialize, Serialize};

use crate::config::{EmbedderKind, LabConfig};
use crate::error::{CliError, CliResult, Stage};
use crate::manifest::{run_id, sha256_hex, InputRecord, OutputRecord, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    World,
    TrainBase,
    Neighborhood,
    Unlearn,
    Evaluate,
    Inflect,
    Ablate,
    Theorem1,
}

/// Input slots and their default file names inside the run directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Input {
    World,
    Base,
    Adjacency,
    Adapters,
}

impl Input {
    pub fn key(self) -> &'static str {
        match self {
            Input::World => "world",
            Input::Base => "base",
            Input::Adjacency => "adjacency",
            Input::Adapters => "adapters",
        }
    }

    pub fn default_file(self) -> &'static str {
        match self {
            Input::World => "world.json",
            Input::Base => "base.json",
            Input::Adjacency => "adjacency.json",
            Input::Adapters => "mesh.json",
        }
    }
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::World => "world",
            Subcommand::TrainBase => "train-base",
            Subcommand::Neighborhood => "neighborhood",
            Subcommand::Unlearn => "unlearn",
            Subcommand::Evaluate => "evaluate",
            Subcommand::Inflect => "inflect",
            Subcommand::Ablate => "ablate",
            Subcommand::Theorem1 => "theorem1",
        }
    }

    /// The config key that `--seed` overrides.
    pub fn seed_key(self) -> &'static str {
        match self {
            Subcommand::World => "world.seed",
            Subcommand::TrainBase => "train.seed",
            Subcommand::Neighborhood => "neighborhood.seed",
            Subcommand::Unlearn => "fade.seed",
            Subcommand::Evaluate | Subcommand::Inflect | Subcommand::Ablate => "eval.seed",
            Subcommand::Theorem1 => "theorem1.seed",
        }
    }

    pub fn seed(self, cfg: &LabConfig) -> u64 {
        match self {
            Subcommand::World => cfg.world.seed,
            Subcommand::TrainBase => cfg.train.seed,
            Subcommand::Neighborhood => cfg.neighborhood.seed,
            Subcommand::Unlearn => cfg.fade.seed,
            Subcommand::Evaluate | Subcommand::Inflect | Subcommand::Ablate => cfg.eval.seed,
            Subcommand::Theorem1 => cfg.theorem1.seed,
        }
    }

    pub fn inputs(self, identity: bool) -> Vec<Input> {
        use Input::*;
        match self {
            Subcommand::World => vec![],
            Subcommand::TrainBase | Subcommand::Neighborhood | Subcommand::Theorem1 => vec![World],
            Subcommand::Unlearn | Subcommand::Ablate => vec![World, Base, Adjacency],
            Subcommand::Evaluate | Subcommand::Inflect if identity => vec![World, Base, Adjacency],
            Subcommand::Evaluate | Subcommand::Inflect => vec![World, Base, Adjacency, Adapters],
        }
    }
}

/// One invocation: the resolved config plus where to read and write.
#[derive(Debug, Clone)]
pub struct RunRequest {
    pub subcommand: Subcommand,
    pub config: LabConfig,
    pub out: PathBuf,
    /// Explicit input paths; missing slots default to the run directory.
    pub inputs: BTreeMap<Input, PathBuf>,
    pub identity: bool,
}

impl RunRequest {
    fn input_path(&self, slot: Input) -> PathBuf {
        self.inputs
            .get(&slot)
            .cloned()
            .unwrap_or_else(|| self.out.join(slot.default_file()))
    }
}

/// Loaded inputs, each read once so the checksum matches the bytes used.
struct Loaded {
    records: BTreeMap<String, InputRecord>,
    texts: BTreeMap<Input, (PathBuf, String)>,
}

impl Loaded {
    fn read(req: &RunRequest) -> CliResult<Self> {
        let mut records = BTreeMap::new();
        let mut texts = BTreeMap::new();
        for slot in req.subcommand.inputs(req.identity) {
            let path = req.input_path(slot);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::input(&path, format!("cannot read {} input: {e}", slot.key())))?;
            let path = path.canonicalize().unwrap_or(path);
            records.insert(
                slot.key().to_string(),
                InputRecord {
                    path: path.clone(),
                    sha256: sha256_hex(text.as_bytes()),
                },
            );
            texts.insert(slot, (path, text));
        }
        Ok(Self { records, texts })
    }

    fn text(&self, slot: Input) -> (&Path, &str) {
        let (p, t) = &self.texts[&slot];
        (p, t)
    }

    fn world(&self) -> CliResult<ConceptWorld> {
        let (path, text) = self.text(Input::World);
        ConceptWorld::from_json(text).map_err(|e| CliError::input(path, e.to_string()))
    }

    fn base(&self) -> CliResult<NoisePredictor> {
        let (path, text) = self.text(Input::Base);
        NoisePredictor::from_json(text).map_err(|e| CliError::input(path, e.to_string()))
    }

    fn adjacency(&self, cfg: &LabConfig) -> CliResult<AdjacencySet> {
        let (path, text) = self.text(Input::Adjacency);
        let adj: AdjacencySet = serde_json::from_str(text).map_err(|e| CliError::input(path, e.to_string()))?;
        if adj.target != cfg.neighborhood.target() {
            return Err(CliError::input(
                path,
                format!(
                    "adjacency set is for concept {} but neighborhood.target is {}",
                    adj.target, cfg.neighborhood.target
                ),
            ));
        }
        AdjacencySet::new(adj.target, adj.neighbors).map_err(|e| CliError::input(path, e.to_string()))
    }

    /// The base model with the stored adapters loaded.
    fn unlearned(&self, base: &NoisePredictor) -> CliResult<NoisePredictor> {
        let (path, text) = self.text(Input::Adapters);
        let set = AdapterCheckpoint::from_json(text).map_err(|e| CliError::input(path, e.to_string()))?;
        let mut model = base.clone();
        load_adapters(&mut model, set).map_err(|e| CliError::input(path, e.to_string()))?;
        Ok(model)
    }
}

/// Collects output files as they are written.
struct Outputs<'a> {
    dir: &'a Path,
    records: Vec<OutputRecord>,
}

impl Outputs<'_> {
    fn put(&mut self, file: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(file);
        std::fs::write(&path, bytes).map_err(|source| CliError::Output { path, source })?;
        self.records.push(OutputRecord {
            file: file.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn csv(&mut self, file: &str, write: impl FnOnce(&mut Vec<u8>) -> fade_core::Result<()>) -> CliResult<()> {
        let mut buf = Vec::new();
        write(&mut buf).stage("csv output")?;
        self.put(file, &buf)
    }
}

/// Runs one subcommand and writes its manifest.
pub fn execute(req: &RunRequest) -> CliResult<RunManifest> {
    let clock = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    std::fs::create_dir_all(&req.out).map_err(|source| CliError::Output {
        path: req.out.clone(),
        source,
    })?;
    let loaded = Loaded::read(req)?;
    let mut out = Outputs {
        dir: &req.out,
        records: Vec::new(),
    };
    let cfg = &req.config;
    match req.subcommand {
        Subcommand::World => run_world(cfg, &mut out)?,
        Subcommand::TrainBase => run_train(cfg, &loaded, &mut out)?,
        Subcommand::Neighborhood => run_neighborhood(cfg, &loaded, &mut out)?,
        Subcommand::Unlearn => run_unlearn(cfg, &loaded, &mut out)?,
        Subcommand::Evaluate => run_evaluate(cfg, &loaded, req.identity, &mut out)?,
        Subcommand::Inflect => run_inflect(cfg, &loaded, req.identity, &mut out)?,
        Subcommand::Ablate => run_ablate(cfg, &loaded, &mut out)?,
        Subcommand::Theorem1 => run_theorem1(cfg, &loaded, &mut out)?,
    }
    let manifest = RunManifest {
        run_id: run_id(req.subcommand, cfg, req.identity, &loaded.records),
        subcommand: req.subcommand,
        config: cfg.clone(),
        seed: req.subcommand.seed(cfg),
        identity: req.identity,
        inputs: loaded.records,
        outputs: out.records,
        started_unix,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    manifest.write(&req.out)?;
    Ok(manifest)
}

/// Re-runs a manifest into `out`, refusing if any input has changed.
pub fn replay(manifest: &RunManifest, out: &Path) -> CliResult<RunManifest> {
    let slots = manifest.subcommand.inputs(manifest.identity);
    let mut inputs = BTreeMap::new();
    for slot in slots {
        let rec = manifest
            .inputs
            .get(slot.key())
            .ok_or_else(|| CliError::input(out, format!("manifest has no {} input", slot.key())))?;
        let bytes = std::fs::read(&rec.path).map_err(|e| CliError::input(&rec.path, e.to_string()))?;
        if sha256_hex(&bytes) != rec.sha256 {
            return Err(CliError::input(&rec.path, "checksum differs from the manifest"));
        }
        inputs.insert(slot, rec.path.clone());
    }
    execute(&RunRequest {
        subcommand: manifest.subcommand,
        config: manifest.config.clone(),
        out: out.to_path_buf(),
        inputs,
        identity: manifest.identity,
    })
}

fn run_world(cfg: &LabConfig, out: &mut Outputs) -> CliResult<()> {
    let world = ConceptWorld::build(&cfg.world).stage("world")?;
    out.put("world.json", world.to_json().stage("world")?.as_bytes())?;
    let mut text = String::from("concept_id,family,prior");
    for j in 0..world.dimension {
        text.push_str(&format!(",mean_{j}"));
    }
    for j in 0..world.dimension {
        text.push_str(&format!(",variance_{j}"));
    }
    text.push('\n');
    for c in &world.concepts {
        text.push_str(&format!("{},{},{:?}", c.id, c.family, c.prior));
        for v in c.mean.iter().chain(&c.variance) {
            text.push_str(&format!(",{v:?}"));
        }
        text.push('\n');
    }
    out.put("concepts.csv", text.as_bytes())
}

fn accuracy_csv(rows: &[(ConceptId, f64)]) -> String {
    let mut text = String::from("concept_id,accuracy\n");
    for (c, a) in rows {
        text.push_str(&format!("{c},{a:?}\n"));
    }
    text
}

fn run_train(cfg: &LabConfig, loaded: &Loaded, out: &mut Outputs) -> CliResult<()> {
    let world = loaded.world()?;
    let mut model = default_model(&world, cfg.model.seed).stage("model init")?;
    let trace = train_base(&mut model, &world, &cfg.train).stage("base training")?;
    out.put("base.json", model.to_json().stage("checkpoint")?.as_bytes())?;
    out.csv("train_loss.csv", |w| trace.write_csv(w))?;
    let ids: Vec<ConceptId> = world.concept_ids().collect();
    let acc = accuracies(&model, &world, &ids, &cfg.eval).stage("base accuracy")?;
    out.put("base_accuracy.csv", accuracy_csv(&acc).as_bytes())
}

/// Mean-embedding table under the configured embedder.
pub fn neighborhood_table(world: &ConceptWorld, cfg: &LabConfig) -> fade_core::Result<EmbeddingTable> {
    let n = &cfg.neighborhood;
    let embedder = match n.embedder {
        EmbedderKind::Raw => Embedder::raw(world.dimension)?,
        EmbedderKind::Penultimate => Embedder::ClassifierPenultimate(PenultimateEmbedder::train(world, &n.penultimate)?),
    };
    world_embedding_table(world, &embedder, n.samples, n.seed)
}

/// Similarity in the data space itself, used to bucket concepts for the
/// inflection sweep.
pub fn ground_truth_table(world: &ConceptWorld, cfg: &LabConfig) -> fade_core::Result<EmbeddingTable> {
    world_embedding_table(world, &Embedder::raw(world.dimension)?, cfg.neighborhood.samples, cfg.neighborhood.seed)
}

fn run_neighborhood(cfg: &LabConfig, loaded: &Loaded, out: &mut Outputs) -> CliResult<()> {
    let world = loaded.world()?;
    let table = neighborhood_table(&world, cfg).stage("neighborhood")?;
    let target = cfg.neighborhood.target();
    let adj = build_adjacency(&table, target, cfg.neighborhood.k).stage("neighborhood")?;
    let ranking = AdjacencySet {
        target,
        neighbors: similarity_ranking(&table, target).stage("neighborhood")?,
    };
    let json = serde_json::to_string_pretty(&adj).expect("adjacency serializes");
    out.put("adjacency.json", json.as_bytes())?;
    out.csv("adjacency.csv", |w| adj.write_csv(w))?;
    out.csv("similarity.csv", |w| ranking.write_csv(w))
}

fn run_unlearn(cfg: &LabConfig, loaded: &Loaded, out: &mut Outputs) -> CliResult<()> {
    let world = loaded.world()?;
    let base = loaded.base()?;
    let adj = loaded.adjacency(cfg)?;
    let fade = FadeConfig::new(adj, cfg.fade).stage("unlearning config")?;
    let outcome = unlearn(&base, &world, &fade).stage("unlearning")?;
    let adapters = outcome.model.adapters();
    out.put("mesh.json", AdapterCheckpoint::new(adapters.clone()).to_json().stage("checkpoint")?.as_bytes())?;
    out.csv("fade_trace.csv", |w| write_trace_csv(&outcome.trace, w))?;
    let mut text = String::from("matrix,numerical_rank,adapter_rank\n");
    for (name, rank, limit) in delta_ranks(adapters, 1e-9).stage("adapter ranks")? {
        text.push_str(&format!("{name},{rank},{limit}\n"));
    }
    out.put("delta_ranks.csv", text.as_bytes())
}

fn unlearned_or_identity(loaded: &Loaded, base: &NoisePredictor, identity: bool) -> CliResult<NoisePredictor> {
    if identity {
        Ok(base.clone())
    } else {
        loaded.unlearned(base)
    }
}

fn retain_set(cfg: &LabConfig, world: &ConceptWorld, adj: &AdjacencySet) -> Vec<ConceptId> {
    if cfg.report.retain.is_empty() {
        world
            .concept_ids()
            .filter(|&c| c != adj.target && !adj.contains(c))
            .collect()
    } else {
        cfg.report.retain.iter().map(|&c| ConceptId(c)).collect()
    }
}

fn run_evaluate(cfg: &LabConfig, loaded: &Loaded, identity: bool, out: &mut Outputs) -> CliResult<()> {
    let world = loaded.world()?;
    let base = loaded.base()?;
    let adj = loaded.adjacency(cfg)?;
    let unlearned = unlearned_or_identity(loaded, &base, identity)?;
    let retain = retain_set(cfg, &world, &adj);
    let report = evaluate(&base, &unlearned, &world, adj.target, &adj.ids(), &retain, &cfg.eval).stage("evaluation")?;
    out.csv("eval_summary.csv", |w| report.write_summary_csv(w))?;
    out.csv("eval_neighbors.csv", |w| report.write_neighbors_csv(w))?;
    out.csv("eval_retain.csv", |w| report.write_retain_csv(w))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    out.put("eval_report.json", json.as_bytes())
}

fn run_inflect(cfg: &LabConfig, loaded: &Loaded, identity: bool, out: &mut Outputs) -> CliResult<()> {
    let world = loaded.world()?;
    let base = loaded.base()?;
    let adj = loaded.adjacency(cfg)?;
    let unlearned = unlearned_or_identity(loaded, &base, identity)?;
    let table = ground_truth_table(&world, cfg).stage("inflection")?;
    let sweep = |tag: &str, m: &NoisePredictor| -> CliResult<InflectionCurve> {
        inflection_sweep(tag, m, &world, &table, adj.target, cfg.report.buckets, &cfg.eval).stage("inflection")
    };
    let before = sweep("base", &base)?;
    let after = sweep("unlearned", &unlearned)?;
    out.csv("inflection_base.csv", |w| before.write_csv(w))?;
    out.csv("inflection_unlearned.csv", |w| after.write_csv(w))
}

fn run_ablate(cfg: &LabConfig, loaded: &Loaded, out: &mut Outputs) -> CliResult<()> {
    let world = loaded.world()?;
    let base = loaded.base()?;
    let adj = loaded.adjacency(cfg)?;
    let template = FadeConfig::new(adj, cfg.fade).stage("unlearning config")?;
    let table = ablation_run(&base, &world, &template, &cfg.ablation.seeds, &cfg.eval).stage("ablation")?;
    out.csv("ablation.csv", |w| table.write_csv(w))?;
    let mut text = String::from("guidance,erasing,adjacency,seed,a_er,a_adj,erb\n");
    for row in &table.rows {
        let t = row.toggles;
        for r in &row.runs {
            text.push_str(&format!(
                "{},{},{},{},{:?},{:?},{:?}\n",
                t.guidance, t.erasing, t.adjacency, r.seed, r.a_er, r.a_adj, r.erb
            ));
        }
    }
    out.put("ablation_runs.csv", text.as_bytes())
}

fn run_theorem1(cfg: &LabConfig, loaded: &Loaded, out: &mut Outputs) -> CliResult<()> {
    let world = loaded.world()?;
    let curve = agreement_sweep(&world, &cfg.theorem1).stage("agreement sweep")?;
    out.csv("theorem1.csv", |w| curve.write_csv(w))
}
