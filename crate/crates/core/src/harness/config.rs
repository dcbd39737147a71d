//! Experiment configuration: a flat `key = value` file split into `[problem]`, `[schedule]` and
//! `[run]` sections. `#` starts a comment.
//!
//! ```text
//! [problem]
//! kind = ssp
//! seed = 132
//! beta_prime = 0.03
//!
//! [schedule]
//! alpha0 = 11
//! beta0 = 5.5
//! exponent_a = 1
//!
//! [run]
//! horizon = 200000
//! n_reps = 100
//! base_seed = 1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Where a finite MDP comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MdpSource {
    File(PathBuf),
    Garnet { seed: u64, states: usize, actions: usize, branching: usize, reference_state: usize },
}

/// Where a quadratic game comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GameSource {
    File(PathBuf),
    Random { seed: u64, players: usize, action_dim: usize, constraints: usize },
}

/// Scalar affine problem, optionally driven by a Markov chain read from a kernel file.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericSpec {
    pub a_x: f64,
    pub b_x: f64,
    pub a_y: f64,
    pub b_y: f64,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub noise_x: f64,
    pub noise_y: f64,
    pub slow_noiseless: bool,
    pub chain: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Generic(GenericSpec),
    Ssp { source: MdpSource, beta_prime: Option<f64> },
    Polyak { source: MdpSource, gamma: f64 },
    Gne { source: GameSource, alpha_prime: Option<f64>, beta_prime: Option<f64>, noise_scale: f64 },
}

impl ProblemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Generic(_) => "generic",
            ProblemSpec::Ssp { .. } => "ssp",
            ProblemSpec::Polyak { .. } => "polyak",
            ProblemSpec::Gne { .. } => "gne",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub alpha0: f64,
    pub beta0: f64,
    pub exponent_a: f64,
    pub horizon: usize,
    pub n_reps: usize,
    pub base_seed: u64,
    /// Number of log-spaced checkpoints between 100 and the horizon.
    pub checkpoints: usize,
    /// Fraction of the checkpoint decades, counted back from the horizon, used for rate fits.
    /// `None` means the last decade.
    pub rate_window: Option<f64>,
    pub output_dir: PathBuf,
    /// Also record `‖x_n − x*(y_n)‖²`.
    pub track: bool,
    /// Also record the composite Moreau-envelope Lyapunov value.
    pub lyapunov: bool,
    /// Write the per-replication trajectory CSV.
    pub trajectory: bool,
}

pub const MIN_HORIZON: usize = 1000;
pub const DEFAULT_CHECKPOINTS: usize = 30;

/// Raw `section.key → (value, line)` table with consumption tracking, so that unknown keys can
/// be reported.
struct Table {
    entries: BTreeMap<String, (String, usize)>,
    used: std::collections::BTreeSet<String>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    Error::config("section", format!("line {}: unterminated header `{line}`", lineno + 1))
                })?;
                section = name.trim().to_string();
                if !["problem", "schedule", "run"].contains(&section.as_str()) {
                    return Err(Error::config(&section, format!("line {}: unknown section", lineno + 1)));
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config("syntax", format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            if section.is_empty() {
                return Err(Error::config(k.trim(), format!("line {}: key outside any section", lineno + 1)));
            }
            let key = format!("{section}.{}", k.trim());
            if entries.insert(key.clone(), (v.trim().to_string(), lineno + 1)).is_some() {
                return Err(Error::config(&key, format!("line {}: duplicate key", lineno + 1)));
            }
        }
        Ok(Self { entries, used: Default::default() })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).map(|(v, _)| v.clone());
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(key, format!("cannot parse `{v}`"))),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::config(key, "missing"))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| Error::config(key, format!("cannot parse `{s}`"))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key).as_deref() {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
        }
    }

    fn path(&mut self, key: &str, base: Option<&Path>) -> Option<PathBuf> {
        self.raw(key).map(|v| match base {
            Some(b) if Path::new(&v).is_relative() => b.join(v),
            _ => PathBuf::from(v),
        })
    }

    fn finish(self) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !self.used.contains(*k)) {
            Some((k, (_, line))) => Err(Error::config(k, format!("line {line}: unknown key"))),
            None => Ok(()),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 { Ok(v) } else { Err(Error::config(key, format!("{v} must be positive"))) }
}

impl ExperimentConfig {
    /// Parses config text. Relative file paths are resolved against `base_dir` when given.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut t = Table::parse(text)?;
        let kind: String = t.require("problem.kind")?;
        let mdp_source = |t: &mut Table| -> Result<MdpSource> {
            let reference_state = t.get("problem.reference_state")?.unwrap_or(0);
            match t.path("problem.model", base_dir) {
                Some(p) => Ok(MdpSource::File(p)),
                None => Ok(MdpSource::Garnet {
                    seed: t.require("problem.seed")?,
                    states: t.get("problem.states")?.unwrap_or(3),
                    actions: t.get("problem.actions")?.unwrap_or(2),
                    branching: t.get("problem.branching")?.unwrap_or(3),
                    reference_state,
                }),
            }
        };
        let problem = match kind.as_str() {
            "generic" => {
                let c = t.list("problem.c")?.unwrap_or_else(|| vec![0.0]);
                let d = t.list("problem.d")?.unwrap_or_else(|| vec![0.0]);
                ProblemSpec::Generic(GenericSpec {
                    a_x: t.get("problem.a_x")?.unwrap_or(0.5),
                    b_x: t.get("problem.b_x")?.unwrap_or(0.0),
                    a_y: t.get("problem.a_y")?.unwrap_or(0.5),
                    b_y: t.get("problem.b_y")?.unwrap_or(0.0),
                    c,
                    d,
                    noise_x: t.get("problem.noise_x")?.unwrap_or(0.0),
                    noise_y: t.get("problem.noise_y")?.unwrap_or(0.0),
                    slow_noiseless: t.bool("problem.slow_noiseless", false)?,
                    chain: t.path("problem.chain", base_dir),
                })
            }
            "ssp" => {
                let source = mdp_source(&mut t)?;
                let beta_prime = t.get::<f64>("problem.beta_prime")?.map(|v| positive("problem.beta_prime", v)).transpose()?;
                ProblemSpec::Ssp { source, beta_prime }
            }
            "polyak" => {
                let source = mdp_source(&mut t)?;
                let gamma: f64 = t.get("problem.gamma")?.unwrap_or(0.8);
                if !(0.0..1.0).contains(&gamma) {
                    return Err(Error::config("problem.gamma", format!("{gamma} not in [0, 1)")));
                }
                ProblemSpec::Polyak { source, gamma }
            }
            "gne" => {
                let source = match t.path("problem.model", base_dir) {
                    Some(p) => GameSource::File(p),
                    None => GameSource::Random {
                        seed: t.require("problem.seed")?,
                        players: t.get("problem.players")?.unwrap_or(3),
                        action_dim: t.get("problem.action_dim")?.unwrap_or(2),
                        constraints: t.get("problem.constraints")?.unwrap_or(2),
                    },
                };
                let alpha_prime = t.get::<f64>("problem.alpha_prime")?.map(|v| positive("problem.alpha_prime", v)).transpose()?;
                let beta_prime = t.get::<f64>("problem.beta_prime")?.map(|v| positive("problem.beta_prime", v)).transpose()?;
                let noise_scale: f64 = t.get("problem.noise_scale")?.unwrap_or(1.0);
                if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
                    return Err(Error::config("problem.noise_scale", format!("{noise_scale} must be nonnegative")));
                }
                ProblemSpec::Gne { source, alpha_prime, beta_prime, noise_scale }
            }
            other => {
                return Err(Error::config("problem.kind", format!("`{other}` is not one of generic, ssp, polyak, gne")));
            }
        };

        let alpha0 = positive("schedule.alpha0", t.require("schedule.alpha0")?)?;
        let beta0 = positive("schedule.beta0", t.require("schedule.beta0")?)?;
        let exponent_a: f64 = t.get("schedule.exponent_a")?.unwrap_or(1.0);
        if !(exponent_a > 0.5 && exponent_a <= 1.0) {
            return Err(Error::config("schedule.exponent_a", format!("{exponent_a} not in (0.5, 1]")));
        }

        let horizon: usize = t.require("run.horizon")?;
        if horizon < MIN_HORIZON {
            return Err(Error::config("run.horizon", format!("{horizon} is below {MIN_HORIZON}")));
        }
        let n_reps: usize = t.get("run.n_reps")?.unwrap_or(1);
        if n_reps == 0 {
            return Err(Error::config("run.n_reps", "must be at least 1"));
        }
        let checkpoints: usize = t.get("run.checkpoints")?.unwrap_or(DEFAULT_CHECKPOINTS);
        if checkpoints < 2 {
            return Err(Error::config("run.checkpoints", "need at least 2"));
        }
        let rate_window: Option<f64> = t.get("run.rate_window")?;
        if let Some(w) = rate_window
            && !(w > 0.0 && w <= 1.0) {
                return Err(Error::config("run.rate_window", format!("{w} not in (0, 1]")));
            }
        let cfg = Self {
            problem,
            alpha0,
            beta0,
            exponent_a,
            horizon,
            n_reps,
            base_seed: t.get("run.base_seed")?.unwrap_or(1),
            checkpoints,
            rate_window,
            output_dir: t.path("run.output_dir", base_dir).unwrap_or_else(|| PathBuf::from("out")),
            track: t.bool("run.track", false)?,
            lyapunov: t.bool("run.lyapunov", false)?,
            trajectory: t.bool("run.trajectory", true)?,
        };
        t.finish()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// Canonical text form. Parsing it gives back an equal config, and it is the input of
    /// [`hash`](Self::hash). The output directory is left out so that relocating a run keeps
    /// its hash.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[problem]\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("kind", self.problem.kind().to_string());
        let mdp = |kv: &mut dyn FnMut(&str, String), src: &MdpSource| match src {
            MdpSource::File(p) => kv("model", p.display().to_string()),
            MdpSource::Garnet { seed, states, actions, branching, reference_state } => {
                kv("seed", seed.to_string());
                kv("states", states.to_string());
                kv("actions", actions.to_string());
                kv("branching", branching.to_string());
                kv("reference_state", reference_state.to_string());
            }
        };
        match &self.problem {
            ProblemSpec::Generic(g) => {
                kv("a_x", fmt(g.a_x));
                kv("b_x", fmt(g.b_x));
                kv("a_y", fmt(g.a_y));
                kv("b_y", fmt(g.b_y));
                kv("c", g.c.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(", "));
                kv("d", g.d.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(", "));
                kv("noise_x", fmt(g.noise_x));
                kv("noise_y", fmt(g.noise_y));
                kv("slow_noiseless", g.slow_noiseless.to_string());
                if let Some(p) = &g.chain {
                    kv("chain", p.display().to_string());
                }
            }
            ProblemSpec::Ssp { source, beta_prime } => {
                mdp(&mut kv, source);
                if let Some(b) = beta_prime {
                    kv("beta_prime", fmt(*b));
                }
            }
            ProblemSpec::Polyak { source, gamma } => {
                mdp(&mut kv, source);
                kv("gamma", fmt(*gamma));
            }
            ProblemSpec::Gne { source, alpha_prime, beta_prime, noise_scale } => {
                match source {
                    GameSource::File(p) => kv("model", p.display().to_string()),
                    GameSource::Random { seed, players, action_dim, constraints } => {
                        kv("seed", seed.to_string());
                        kv("players", players.to_string());
                        kv("action_dim", action_dim.to_string());
                        kv("constraints", constraints.to_string());
                    }
                }
                if let Some(a) = alpha_prime {
                    kv("alpha_prime", fmt(*a));
                }
                if let Some(b) = beta_prime {
                    kv("beta_prime", fmt(*b));
                }
                kv("noise_scale", fmt(*noise_scale));
            }
        }
        let _ = write!(
            s,
            "\n[schedule]\nalpha0 = {}\nbeta0 = {}\nexponent_a = {}\n\n[run]\nhorizon = {}\nn_reps = {}\nbase_seed = {}\ncheckpoints = {}\n",
            fmt(self.alpha0),
            fmt(self.beta0),
            fmt(self.exponent_a),
            self.horizon,
            self.n_reps,
            self.base_seed,
            self.checkpoints
        );
        if let Some(w) = self.rate_window {
            let _ = writeln!(s, "rate_window = {}", fmt(w));
        }
        let _ = write!(s, "track = {}\nlyapunov = {}\ntrajectory = {}\n", self.track, self.lyapunov, self.trajectory);
        s
    }

    /// Hex SHA-256 of [`to_text`](Self::to_text).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Comment line that opens every output file.
    pub fn header_line(&self) -> String {
        format!("# config_hash={} seed={}", self.hash(), self.base_seed)
    }
}

/// Shortest text that parses back to the same `f64`.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SSP: &str = "[problem]\nkind = ssp\nseed = 132 # garnet\nbeta_prime = 0.03\n\n[schedule]\nalpha0 = 11\nbeta0 = 5.5\n\n[run]\nhorizon = 200000\nn_reps = 100\n";

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(SSP, None).unwrap();
        assert_eq!(cfg.problem, ProblemSpec::Ssp {
            source: MdpSource::Garnet { seed: 132, states: 3, actions: 2, branching: 3, reference_state: 0 },
            beta_prime: Some(0.03),
        });
        assert_eq!(cfg.exponent_a, 1.0);
        assert_eq!(cfg.checkpoints, DEFAULT_CHECKPOINTS);
        let again = ExperimentConfig::parse(&cfg.to_text(), None).unwrap();
        assert_eq!(again.to_text(), cfg.to_text());
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = ExperimentConfig::parse(SSP, None).unwrap();
        let b = ExperimentConfig::parse(&SSP.replace(" = ", "=").replace("11", "11.0"), None).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse(&SSP.replace("alpha0 = 11", "alpha0 = 12"), None).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::parse(text, None) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(&SSP.replace("[schedule]", "[schedule]\nexponent_a = 0.4")), "schedule.exponent_a");
        assert_eq!(field_of(&SSP.replace("horizon = 200000", "horizon = 10")), "run.horizon");
        assert_eq!(field_of(&SSP.replace("n_reps = 100", "n_reps = 0")), "run.n_reps");
        assert_eq!(field_of(&SSP.replace("alpha0 = 11\n", "")), "schedule.alpha0");
        assert_eq!(field_of(&SSP.replace("beta0 = 5.5", "beta0 = fast")), "schedule.beta0");
        assert_eq!(field_of(&SSP.replace("kind = ssp", "kind = sarsa")), "problem.kind");
        assert_eq!(field_of(&format!("{SSP}colour = blue\n")), "run.colour");
        assert_eq!(field_of(&SSP.replace("seed = 132 # garnet\n", "")), "problem.seed");
    }

    #[test]
    fn relative_model_paths_resolve_against_the_config_directory() {
        let text = "[problem]\nkind = polyak\nmodel = m.txt\n[schedule]\nalpha0 = 1\nbeta0 = 8\n[run]\nhorizon = 1000\n";
        let cfg = ExperimentConfig::parse(text, Some(Path::new("/data/cfg"))).unwrap();
        assert_eq!(cfg.problem, ProblemSpec::Polyak { source: MdpSource::File("/data/cfg/m.txt".into()), gamma: 0.8 });
    }
}
