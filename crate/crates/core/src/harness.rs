//! Training, robustness sweeps, the penalization ablation, bound certification
//! and the alpha tuning report. Every command writes CSV with a `#` header
//! block carrying the artifact version, schema, config hash and seeds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{apply_perturbation, CartPoleParams, EnvId, EnvParams, PendulumParams};
use crate::nn::Checkpoint;
use crate::qrdqn::{self, QrdqnConfig, QrdqnLogRow, QuantileNetwork};
use crate::quantile::{PenaltyConfig, StdNormalization};
use crate::rng::{derive_seed, seeded};
use crate::tabular::chi_square::{chi_square_divergence, TrajectoryDistribution};
use crate::tabular::random_simplex_point;
use crate::tabular::verify::{verify_chi_square_ball, VerifyOptions};
use crate::tqc::{self, GaussianPolicy, TqcConfig, TqcLogRow};
use crate::{Error, Result};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variables `CHISQRL_<KEY>` override config keys; `__` separates
/// table levels, so `CHISQRL_QRDQN__LR=1e-3` sets `qrdqn.lr`.
pub const ENV_PREFIX: &str = "CHISQRL_";

/// Eval episodes in [`cmd_train`] reset from this stream of the run seed.
const EVAL_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub multiplier: String,
    pub grid: Vec<f64>,
    pub episodes: usize,
    /// Defaults to `<out_dir>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
    /// Overrides the alpha stored in the checkpoint.
    pub eval_alpha: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            multiplier: "relative_mass".into(),
            grid: (5..=20).map(|k| k as f64 / 10.0).collect(),
            episodes: 20,
            checkpoint: None,
            eval_alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub cases: usize,
    /// Extra cases drawn with `alpha > alpha_max`.
    pub infeasible_cases: usize,
    pub seed: u64,
    pub tol: f64,
    pub min_outcomes: usize,
    pub max_outcomes: usize,
    /// Returns are drawn uniformly from `[−return_bound, return_bound]`.
    pub return_bound: f64,
    /// Added to the closed form to exercise the failure path.
    pub closed_form_offset: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            cases: 200,
            infeasible_cases: 50,
            seed: 0,
            tol: 1e-4,
            min_outcomes: 2,
            max_outcomes: 6,
            return_bound: 5.0,
            closed_form_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvId,
    pub seed: u64,
    pub total_steps: u64,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
    pub cartpole: CartPoleParams,
    pub pendulum: PendulumParams,
    pub qrdqn: QrdqnConfig,
    pub tqc: TqcConfig,
    pub sweep: SweepSection,
    pub verify: VerifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvId::CartPole,
            seed: 0,
            total_steps: 50_000,
            eval_episodes: 20,
            out_dir: PathBuf::from("runs"),
            cartpole: CartPoleParams::default(),
            pendulum: PendulumParams::default(),
            qrdqn: QrdqnConfig::default(),
            tqc: TqcConfig::default(),
            sweep: SweepSection::default(),
            verify: VerifySection::default(),
        }
    }
}

fn scalar_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env_params().validate()?;
        self.qrdqn.validate()?;
        self.tqc.validate()?;
        if self.eval_episodes == 0 || self.sweep.episodes == 0 {
            return Err(Error::Config("episode counts must be >= 1".into()));
        }
        if self.sweep.grid.is_empty() || self.sweep.grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("sweep grid must be non-empty with positive values".into()));
        }
        let v = &self.verify;
        if v.min_outcomes < 2 || v.max_outcomes < v.min_outcomes || !(v.tol > 0.0) || !(v.return_bound > 0.0) {
            return Err(Error::Config("verify needs 2 <= min_outcomes <= max_outcomes, tol > 0, return_bound > 0".into()));
        }
        Ok(())
    }

    /// Sets a dotted key such as `qrdqn.alpha`. The raw text is read as a TOML
    /// value and falls back to a string. Unknown keys are rejected.
    pub fn set_key(&mut self, key: &str, raw: &str) -> Result<()> {
        let attempt = |value: toml::Value| -> Result<Self> {
            let mut root = toml::Value::try_from(&*self).map_err(config_err)?;
            let parts: Vec<&str> = key.split('.').collect();
            let mut table = root.as_table_mut().expect("config is a table");
            for part in &parts[..parts.len() - 1] {
                table = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
            }
            table.insert(parts[parts.len() - 1].to_string(), value);
            root.try_into().map_err(|e| Error::Config(format!("{key} = {raw}: {e}")))
        };
        let updated = attempt(scalar_value(raw)).or_else(|e| attempt(toml::Value::String(raw.into())).map_err(|_| e))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Applies `CHISQRL_*` pairs from `vars`, ignoring everything else.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_lowercase().replace("__", "."), v)))
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            self.set_key(&k, &v)?;
        }
        Ok(())
    }

    /// The `alpha` flag: sets both agents.
    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        self.set_key("qrdqn.alpha", &alpha.to_string())?;
        self.set_key("tqc.alpha", &alpha.to_string())
    }

    pub fn env_params(&self) -> EnvParams {
        match self.env {
            EnvId::CartPole => EnvParams::CartPole(self.cartpole),
            EnvId::Pendulum => EnvParams::Pendulum(self.pendulum),
        }
    }

    /// First 16 hex digits of the SHA-256 of the serialized config.
    /// Output paths are excluded so relocated runs share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.sweep.checkpoint = None;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A CSV document: `# key=value` metadata lines, a column header, data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDoc {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvDoc {
    pub fn new(schema: &str, config_hash: &str, seeds: &[u64], columns: &[&str]) -> Self {
        let seeds = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        Self {
            meta: vec![
                ("artifact_version".into(), ARTIFACT_VERSION.into()),
                ("schema".into(), schema.into()),
                ("config_hash".into(), config_hash.into()),
                ("seeds".into(), seeds),
            ],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns).map_err(std::io::Error::from)?;
        for row in &self.rows {
            w.write_record(row).map_err(std::io::Error::from)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.render()?)?;
        Ok(())
    }
}

/// The column header and data rows of a rendered CSV, without metadata.
pub fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn num(x: f64) -> String {
    x.to_string()
}

pub fn qrdqn_log_doc(log: &[QrdqnLogRow], config_hash: &str, seed: u64) -> CsvDoc {
    let mut doc = CsvDoc::new(
        "qrdqn_log/1",
        config_hash,
        &[seed],
        &["step", "episode", "return", "loss", "epsilon", "alpha_eff_train", "alpha_eff_test"],
    );
    for r in log {
        doc.push(vec![
            r.step.to_string(),
            r.episode.to_string(),
            num(r.ret),
            num(r.loss),
            num(r.epsilon),
            num(r.alpha_eff_train),
            num(r.alpha_eff_test),
        ]);
    }
    doc
}

pub fn tqc_log_doc(log: &[TqcLogRow], config_hash: &str, seed: u64) -> CsvDoc {
    let mut doc = CsvDoc::new(
        "tqc_log/1",
        config_hash,
        &[seed],
        &["step", "episode", "return", "critic_loss", "actor_loss", "eta"],
    );
    for r in log {
        doc.push(vec![
            r.step.to_string(),
            r.episode.to_string(),
            num(r.ret),
            num(r.critic_loss),
            num(r.actor_loss),
            num(r.eta),
        ]);
    }
    doc
}

/// A frozen policy as stored in a checkpoint.
#[derive(Debug, Clone)]
pub enum Policy {
    Discrete(QuantileNetwork),
    Continuous(GaussianPolicy),
}

impl Policy {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.section("qrdqn.meta").is_ok() {
            Ok(Self::Discrete(qrdqn::network_from_checkpoint(ck)?))
        } else if ck.section("tqc.meta").is_ok() {
            Ok(Self::Continuous(tqc::policy_from_checkpoint(ck)?))
        } else {
            Err(Error::Checkpoint("neither a QR-DQN nor a TQC checkpoint".into()))
        }
    }

    /// Greedy returns: `ξ_α`-greedy for the discrete agent, the mean action
    /// for the continuous one (which ignores `penalty`).
    pub fn evaluate(&self, penalty: &PenaltyConfig, env: &EnvParams, episodes: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            Self::Discrete(net) => qrdqn::evaluate(net, penalty, env, episodes, seed),
            Self::Continuous(p) => tqc::evaluate(p, env, episodes, seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub log: CsvDoc,
    pub eval_returns: Vec<f64>,
}

/// Trains QR-DQN on cart-pole or TQC on pendulum and writes
/// `checkpoint.bin`, `log.csv`, `eval.csv` and `config.toml` under `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let env = cfg.env_params();
    let hash = cfg.hash();
    let eval_seed = derive_seed(cfg.seed, EVAL_STREAM);
    let (checkpoint, log, eval_returns) = match cfg.env {
        EnvId::CartPole => {
            let run = qrdqn::run_training(&env, &cfg.qrdqn, cfg.seed, cfg.total_steps)?;
            let penalty = cfg.qrdqn.penalty(cfg.qrdqn.alpha_eff_test());
            let returns = qrdqn::evaluate(&run.agent.online, &penalty, &env, cfg.eval_episodes, eval_seed)?;
            (run.agent.checkpoint(), qrdqn_log_doc(&run.log, &hash, cfg.seed), returns)
        }
        EnvId::Pendulum => {
            let run = tqc::run_training(&env, &cfg.tqc, cfg.seed, cfg.total_steps)?;
            let returns = tqc::evaluate(&run.agent.policy, &env, cfg.eval_episodes, eval_seed)?;
            (run.agent.checkpoint(), tqc_log_doc(&run.log, &hash, cfg.seed), returns)
        }
    };
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir)?;
    checkpoint.write(&dir.join("checkpoint.bin"))?;
    log.write(&dir.join("log.csv"))?;
    let mut eval = CsvDoc::new("eval/1", &hash, &[cfg.seed], &["episode", "return"]);
    for (k, r) in eval_returns.iter().enumerate() {
        eval.push(vec![k.to_string(), num(*r)]);
    }
    eval.write(&dir.join("eval.csv"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(TrainArtifacts { dir, checkpoint, log, eval_returns })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub env: EnvParams,
    pub multiplier: String,
    pub grid: Vec<f64>,
    pub episodes: usize,
    /// Penalty used for greedy action selection when `penalize_test` is set.
    pub eval_alpha: f64,
    pub penalize_test: bool,
    pub std_normalization: StdNormalization,
    pub seed: u64,
}

impl SweepSpec {
    pub fn alpha_eff_test(&self) -> f64 {
        if self.penalize_test {
            self.eval_alpha
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.episodes == 0 {
            return Err(Error::InvalidArgument("sweep needs a non-empty grid and >= 1 episode".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub multiplier: f64,
    pub mean: f64,
    /// Population standard deviation over episodes.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub normalized_mean: f64,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub multiplier: String,
    pub rows: Vec<SweepRow>,
    pub training_alpha: f64,
    pub alpha_eff_test: f64,
}

/// Divides each mean by the curve's best mean. Curves whose best mean is
/// negative use `best / mean`, so the best point is still exactly 1 and
/// worse points fall below it.
pub fn normalize_curve(means: &[f64]) -> Vec<f64> {
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    means
        .iter()
        .map(|&m| {
            if m == best {
                1.0
            } else if best > 0.0 {
                m / best
            } else {
                best / m
            }
        })
        .collect()
}

/// Evaluates `policy` at every grid value. Grid point `i` resets its
/// episodes from `derive_seed(spec.seed, i)`.
pub fn run_sweep(policy: &Policy, training_alpha: f64, spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let penalty = PenaltyConfig::new(spec.alpha_eff_test(), spec.std_normalization);
    let mut rows = Vec::with_capacity(spec.grid.len());
    for (i, &value) in spec.grid.iter().enumerate() {
        let env = apply_perturbation(&spec.env, &spec.multiplier, value)?;
        let returns = policy.evaluate(&penalty, &env, spec.episodes, derive_seed(spec.seed, i as u64))?;
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        rows.push(SweepRow {
            multiplier: value,
            mean,
            std: var.sqrt(),
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            normalized_mean: 0.0,
            returns,
        });
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    for (row, norm) in rows.iter_mut().zip(normalize_curve(&means)) {
        row.normalized_mean = norm;
    }
    Ok(SweepReport { multiplier: spec.multiplier.clone(), rows, training_alpha, alpha_eff_test: spec.alpha_eff_test() })
}

impl SweepReport {
    pub fn to_csv(&self, config_hash: &str, seeds: &[u64]) -> CsvDoc {
        let mut doc = CsvDoc::new(
            "sweep/1",
            config_hash,
            seeds,
            &["multiplier", "mean", "std", "min", "max", "normalized_mean", "returns"],
        )
        .with_meta("multiplier_name", &self.multiplier)
        .with_meta("training_alpha", self.training_alpha)
        .with_meta("alpha_eff_test", self.alpha_eff_test);
        for r in &self.rows {
            let returns = r.returns.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";");
            doc.push(vec![num(r.multiplier), num(r.mean), num(r.std), num(r.min), num(r.max), num(r.normalized_mean), returns]);
        }
        doc
    }
}

/// Sweep spec from the config's `sweep` section and the checkpoint's alpha.
pub fn sweep_spec(cfg: &RunConfig, checkpoint_alpha: f64) -> SweepSpec {
    SweepSpec {
        env: cfg.env_params(),
        multiplier: cfg.sweep.multiplier.clone(),
        grid: cfg.sweep.grid.clone(),
        episodes: cfg.sweep.episodes,
        eval_alpha: cfg.sweep.eval_alpha.unwrap_or(checkpoint_alpha),
        penalize_test: cfg.qrdqn.penalize_test,
        std_normalization: cfg.qrdqn.std_normalization,
        seed: derive_seed(cfg.seed, EVAL_STREAM),
    }
}

/// Loads the checkpoint read-only, sweeps it, and writes `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<(SweepReport, PathBuf)> {
    cfg.validate()?;
    let path = cfg.sweep.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoint.bin"));
    let ck = Checkpoint::read(&path)?;
    let alpha = ck.scalar("alpha")?;
    let report = run_sweep(&Policy::from_checkpoint(&ck)?, alpha, &sweep_spec(cfg, alpha))?;
    let out = cfg.out_dir.join("sweep.csv");
    report
        .to_csv(&cfg.hash(), &[cfg.seed])
        .with_meta("checkpoint", path.display())
        .write(&out)?;
    Ok((report, out))
}

pub const ABLATION_MODES: [(&str, bool, bool); 4] =
    [("full", true, true), ("train_only", true, false), ("test_only", false, true), ("none", false, false)];

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub label: &'static str,
    pub penalize_train: bool,
    pub penalize_test: bool,
    pub alpha_eff_train: f64,
    pub alpha_eff_test: f64,
    pub report: SweepReport,
    pub csv: CsvDoc,
}

/// Trains and sweeps QR-DQN under each penalize_train/penalize_test
/// combination with shared seeds. Modes with the same training penalty share
/// one training run. Writes `ablate/<label>/{log,sweep}.csv`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRun>> {
    cfg.validate()?;
    if cfg.env != EnvId::CartPole {
        return Err(Error::InvalidArgument("the ablation runs the discrete agent on cart-pole".into()));
    }
    let env = cfg.env_params();
    let mut trained: Vec<(bool, qrdqn::QrdqnRun)> = Vec::new();
    let mut out = Vec::with_capacity(4);
    for (label, train, test) in ABLATION_MODES {
        let mut mode_cfg = cfg.clone();
        mode_cfg.qrdqn.penalize_train = train;
        mode_cfg.qrdqn.penalize_test = test;
        let hash = mode_cfg.hash();
        // Training only sees alpha_eff_train, so train-penalized modes share a run.
        let shared = train && cfg.qrdqn.alpha != 0.0;
        if !trained.iter().any(|(k, _)| *k == shared) {
            trained.push((shared, qrdqn::run_training(&env, &mode_cfg.qrdqn, cfg.seed, cfg.total_steps)?));
        }
        let run = &trained.iter().find(|(k, _)| *k == shared).expect("trained above").1;
        let spec = sweep_spec(&mode_cfg, cfg.qrdqn.alpha);
        let report = run_sweep(&Policy::Discrete(run.agent.online.clone()), cfg.qrdqn.alpha, &spec)?;
        let (aet, aev) = (mode_cfg.qrdqn.alpha_eff_train(), mode_cfg.qrdqn.alpha_eff_test());
        let csv = report
            .to_csv(&hash, &[cfg.seed])
            .with_meta("mode", label)
            .with_meta("penalize_train", train)
            .with_meta("penalize_test", test)
            .with_meta("alpha_eff_train", aet);
        let dir = cfg.out_dir.join("ablate").join(label);
        csv.write(&dir.join("sweep.csv"))?;
        let mut log = qrdqn_log_doc(&run.log, &hash, cfg.seed);
        log.rows.iter_mut().for_each(|r| {
            r[5] = num(aet);
            r[6] = num(aev);
        });
        log.write(&dir.join("log.csv"))?;
        out.push(AblationRun {
            label,
            penalize_train: train,
            penalize_test: test,
            alpha_eff_train: aet,
            alpha_eff_test: aev,
            report,
            csv,
        });
    }
    Ok(out)
}

/// Random return law with Dirichlet(1) probabilities and uniform returns.
pub fn random_case(n_outcomes: usize, return_bound: f64, rng: &mut crate::rng::Rng) -> Result<TrajectoryDistribution> {
    use rand::Rng as _;
    let probs = random_simplex_point(n_outcomes, rng);
    let returns: Vec<f64> = (0..n_outcomes).map(|_| rng.gen_range(-return_bound..=return_bound)).collect();
    TrajectoryDistribution::from_parts(&probs, &returns)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub case: usize,
    pub feasible: bool,
    pub n_outcomes: usize,
    pub alpha: f64,
    pub alpha_max: f64,
    pub oracle: f64,
    pub closed_form: f64,
    pub gap: f64,
    /// `|D(q*‖p0) − alpha|` for the equality-case law; NaN when infeasible.
    pub boundary_error: f64,
    /// `|E_{q*}[R] − oracle|`; NaN when infeasible.
    pub expectation_gap: f64,
    pub certified: bool,
    pub failure: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
}

impl VerifyReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.certified).count()
    }

    /// Infeasible cases whose oracle value sits strictly above the closed form.
    pub fn strict_lower_bound_cases(&self) -> usize {
        self.rows.iter().filter(|r| !r.feasible && r.oracle - r.closed_form > 1e-6).count()
    }

    pub fn to_csv(&self, config_hash: &str, seed: u64) -> CsvDoc {
        let mut doc = CsvDoc::new(
            "verify_bound/1",
            config_hash,
            &[seed],
            &[
                "case", "feasible", "n_outcomes", "alpha", "alpha_max", "oracle", "closed_form", "gap",
                "boundary_error", "expectation_gap", "certified", "failure",
            ],
        );
        for r in &self.rows {
            doc.push(vec![
                r.case.to_string(),
                r.feasible.to_string(),
                r.n_outcomes.to_string(),
                num(r.alpha),
                num(r.alpha_max),
                num(r.oracle),
                num(r.closed_form),
                num(r.gap),
                num(r.boundary_error),
                num(r.expectation_gap),
                r.certified.to_string(),
                r.failure.clone(),
            ]);
        }
        doc
    }
}

/// Certifies the closed-form worst-case value on `cases` random feasible
/// radii and checks the lower bound on `infeasible_cases` radii beyond
/// `alpha_max`.
pub fn verify_bound(v: &VerifySection) -> Result<VerifyReport> {
    use rand::Rng as _;
    let mut rng = seeded(v.seed);
    let mut rows = Vec::with_capacity(v.cases + v.infeasible_cases);
    for case in 0..v.cases + v.infeasible_cases {
        let want_feasible = case < v.cases;
        let n = rng.gen_range(v.min_outcomes..=v.max_outcomes);
        let td = random_case(n, v.return_bound, &mut rng)?;
        let amax = crate::tabular::chi_square::alpha_max(&td);
        let alpha = if want_feasible {
            amax * (1.0 - rng.gen::<f64>())
        } else {
            amax * rng.gen_range(1.05..3.0)
        };
        let opts = VerifyOptions {
            tol: v.tol,
            closed_form_offset: v.closed_form_offset,
            oracle: crate::tabular::oracle::OracleConfig { seed: derive_seed(v.seed, case as u64), ..Default::default() },
        };
        let res = verify_chi_square_ball(&td, alpha, &opts)?;
        let (mut boundary_error, mut expectation_gap) = (f64::NAN, f64::NAN);
        let mut failure = res.failure.clone();
        if res.feasible {
            boundary_error = (chi_square_divergence(&res.worst_case.probs(), &td.probs())? - alpha).abs();
            expectation_gap = (res.worst_case.mean() - res.exact_min).abs();
            if failure.is_none() && expectation_gap > v.tol {
                failure = Some(format!("worst-case expectation off the oracle by {expectation_gap:e}"));
            }
        }
        rows.push(VerifyRow {
            case,
            feasible: res.feasible,
            n_outcomes: n,
            alpha,
            alpha_max: amax,
            oracle: res.exact_min,
            closed_form: res.closed_form,
            gap: res.exact_min - res.closed_form,
            boundary_error,
            expectation_gap,
            certified: failure.is_none(),
            failure: failure.unwrap_or_default(),
        });
    }
    Ok(VerifyReport { rows })
}

/// Runs [`verify_bound`] and writes `verify_bound.csv`. The caller decides the
/// exit status from [`VerifyReport::failures`].
pub fn cmd_verify_bound(cfg: &RunConfig) -> Result<(VerifyReport, PathBuf)> {
    cfg.validate()?;
    let report = verify_bound(&cfg.verify)?;
    let out = cfg.out_dir.join("verify_bound.csv");
    report.to_csv(&cfg.hash(), cfg.verify.seed).write(&out)?;
    Ok((report, out))
}

pub const TUNING_GUIDANCE: &str = "As a rule of thumb for choosing α, we can look at the empirical mean and variance \
at the end of the trajectories to see if the environment has rewards that fluctuate a lot. The smaller the \
mean/variance ratio, the more likely we are to penalise our environment. For HalfCheetah-v3, the mean/variance \
ratio is about approximately 100, so we will favour smaller penalties than for Walker2d where the mean/variance \
ratio is about 50 or 10 for Hopper-v3.";

#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    pub episodes: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// `mean / variance`; `+∞` when the variance is zero.
    pub ratio: f64,
}

impl TuningReport {
    pub fn from_returns(returns: &[f64]) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::EmptyLog("no returns to summarize".into()));
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let variance = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let ratio = if variance == 0.0 { f64::INFINITY } else { mean / variance };
        Ok(Self { episodes: returns.len(), mean, variance, ratio })
    }

    pub fn suggestion(&self) -> &'static str {
        if self.ratio >= 100.0 {
            "ratio >= 100: favour small penalties"
        } else if self.ratio >= 50.0 {
            "ratio in [50, 100): moderate penalties"
        } else {
            "ratio < 50: larger penalties are more likely to pay off"
        }
    }

    pub fn render(&self) -> String {
        format!(
            "episodes={}\nmean={}\nvariance={}\nratio={}\nsuggestion={}\n\n{}\n",
            self.episodes,
            self.mean,
            self.variance,
            if self.ratio.is_infinite() { "inf".to_string() } else { self.ratio.to_string() },
            self.suggestion(),
            TUNING_GUIDANCE
        )
    }
}

/// The `return` column of a log or eval CSV.
pub fn read_returns(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(std::io::Error::from)?;
    let headers = reader.headers().map_err(std::io::Error::from)?.clone();
    let col = headers
        .iter()
        .position(|h| h == "return")
        .ok_or_else(|| Error::Config(format!("{} has no `return` column", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(std::io::Error::from)?;
        let v: f64 = record[col].parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        out.push(v);
    }
    Ok(out)
}

/// Mean/variance ratio over the last `window` returns of each log, pooled.
pub fn cmd_tuning_report(paths: &[PathBuf], window: usize) -> Result<TuningReport> {
    let mut pooled = Vec::new();
    for p in paths {
        let returns = read_returns(p)?;
        pooled.extend_from_slice(&returns[returns.len().saturating_sub(window)..]);
    }
    TuningReport::from_returns(&pooled)
}
