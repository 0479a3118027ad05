//! Experiment configuration: flat `key = value` files plus overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::Geometry;
use crate::noise::NoiseKind;
use crate::phantom::preset_style;
use crate::retrieval::{FillPolicy, UpdateMode};

/// Where the autocorrelation support used for the recovery comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SacSource {
    /// `S - S` for the support box estimated from the phantom.
    Support,
    /// The box `[-h : h]^d` implied by `beta`.
    Geometry,
}

/// Every setting a command can use. All randomness derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub k0: f64,
    /// Hole half-extent; when set, `k0` is chosen so that `floor(1 + m k0) = w`.
    pub w: Option<usize>,
    pub sac: SacSource,
    /// Margin of the support estimate, in samples.
    pub margin: usize,
    pub phantom: String,
    pub seed: u64,
    pub noise: Vec<NoiseKind>,
    /// Half-width (uniform) or standard deviation (Gaussian) of additive noise.
    pub noise_scale: f64,
    /// Global SNR of Poisson noise.
    pub snr: f64,
    pub trials: usize,
    pub bins: usize,
    pub hio_iters: usize,
    pub er_iters: usize,
    pub restarts: usize,
    pub feedback: f64,
    pub mode: UpdateMode,
    pub positivity: bool,
    pub fill: FillPolicy,
    pub sigma_floor: f64,
    pub truncate: bool,
    pub symmetrize: bool,
    pub svd_cap: usize,
    /// Reuse SVDs stored under `<output>/svd_cache`.
    pub svd_cache: bool,
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub k0s: Vec<f64>,
    pub betas: Vec<f64>,
    pub ws: Vec<usize>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 2,
            n: 32,
            m: 3,
            beta: 1.5,
            k0: 2.0,
            w: None,
            sac: SacSource::Support,
            margin: 1,
            phantom: "signed64".into(),
            seed: 1,
            noise: Vec::new(),
            noise_scale: 1.0,
            snr: 1000.0,
            trials: 100,
            bins: 40,
            hio_iters: 2000,
            er_iters: 0,
            restarts: 1,
            feedback: 0.9,
            mode: UpdateMode::DouglasRachford,
            positivity: false,
            fill: FillPolicy::None,
            sigma_floor: 1e-14,
            truncate: false,
            symmetrize: false,
            svd_cap: crate::spectral::DEFAULT_SVD_CAP,
            svd_cache: false,
            ns: Vec::new(),
            ms: Vec::new(),
            k0s: Vec::new(),
            betas: Vec::new(),
            ws: Vec::new(),
            output: PathBuf::from("out"),
        }
    }
}

/// Offsets that separate the random streams derived from the top-level seed.
pub const NOISE_STREAM: u64 = 1 << 32;
pub const HIO_STREAM: u64 = 2 << 32;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

pub fn parse_fill(value: &str) -> Result<FillPolicy> {
    match value {
        "none" => Ok(FillPolicy::None),
        "full" => Ok(FillPolicy::Full),
        other => match other.strip_prefix("annular:") {
            Some(t) => Ok(FillPolicy::Annular(parse("fill", t)?)),
            None => Err(Error::Config(format!(
                "invalid fill policy '{other}' (none, full or annular:T)"
            ))),
        },
    }
}

pub fn parse_mode(value: &str) -> Result<UpdateMode> {
    match value {
        "douglas_rachford" => Ok(UpdateMode::DouglasRachford),
        "classical" => Ok(UpdateMode::Classical),
        other => Err(Error::Config(format!("invalid update mode '{other}'"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "d" => self.d = parse(key, v)?,
            "N" | "n" => self.n = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "k0" => self.k0 = parse(key, v)?,
            "w" => self.w = if v == "none" { None } else { Some(parse(key, v)?) },
            "sac" => {
                self.sac = match v {
                    "support" => SacSource::Support,
                    "geometry" => SacSource::Geometry,
                    _ => return Err(Error::Config(format!("invalid sac source '{v}'"))),
                }
            }
            "margin" => self.margin = parse(key, v)?,
            "phantom" => self.phantom = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "noise" => {
                self.noise = if v == "none" { Vec::new() } else { parse_list(key, v)? }
            }
            "noise_scale" => self.noise_scale = parse(key, v)?,
            "snr" => self.snr = parse(key, v)?,
            "trials" => self.trials = parse(key, v)?,
            "bins" => self.bins = parse(key, v)?,
            "hio_iters" => self.hio_iters = parse(key, v)?,
            "er_iters" => self.er_iters = parse(key, v)?,
            "restarts" => self.restarts = parse(key, v)?,
            "feedback" => self.feedback = parse(key, v)?,
            "mode" => self.mode = parse_mode(v)?,
            "positivity" => self.positivity = parse_bool(key, v)?,
            "fill" => self.fill = parse_fill(v)?,
            "sigma_floor" => self.sigma_floor = parse(key, v)?,
            "truncate" => self.truncate = parse_bool(key, v)?,
            "symmetrize" => self.symmetrize = parse_bool(key, v)?,
            "svd_cap" => self.svd_cap = parse(key, v)?,
            "svd_cache" => self.svd_cache = parse_bool(key, v)?,
            "ns" => self.ns = parse_list(key, v)?,
            "ms" => self.ms = parse_list(key, v)?,
            "k0s" => self.k0s = parse_list(key, v)?,
            "betas" => self.betas = parse_list(key, v)?,
            "ws" => self.ws = parse_list(key, v)?,
            "output" => self.output = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k, v)
    }

    /// Parses a config file body on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.merge_str(text)?;
        Ok(cfg)
    }

    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Serializes back to the `key = value` form.
    pub fn to_key_values(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in json.as_object().expect("config is an object") {
            let text = match v {
                serde_json::Value::Null => "none".to_string(),
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) if items.is_empty() && k == "noise" => "none".into(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|x| x.as_str().map(str::to_string).unwrap_or_else(|| x.to_string()))
                    .collect::<Vec<_>>()
                    .join(","),
                other if k == "fill" => fill_text(&serde_json::from_value(other.clone()).expect("fill")),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {text}\n"));
        }
        out
    }

    /// The geometry, with `k0` replaced when `w` is given.
    pub fn geometry(&self) -> Result<Geometry> {
        let k0 = match self.w {
            Some(0) => return Err(Error::Config("w must be at least 1".into())),
            Some(w) => k0_for_w(w, self.m),
            None => self.k0,
        };
        Geometry::new(self.d, self.n, self.m, self.beta, k0).map_err(|e| Error::Config(e.to_string()))
    }

    /// Geometry for a swept hole size.
    pub fn geometry_for_w(&self, w: usize) -> Result<Geometry> {
        let mut c = self.clone();
        c.w = Some(w);
        c.geometry()
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        preset_style(&self.phantom).map_err(|e| Error::Config(e.to_string()))?;
        for &w in &self.ws {
            self.geometry_for_w(w)?;
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.feedback > 0.0 && self.feedback <= 1.0) {
            return Err(Error::Config("feedback must lie in (0, 1]".into()));
        }
        if self.snr.is_nan() || self.snr <= 0.0 || self.noise_scale.is_nan() || self.noise_scale < 0.0 {
            return Err(Error::Config("snr must be positive and noise_scale nonnegative".into()));
        }
        if self.sigma_floor.is_nan() || self.sigma_floor < 0.0 {
            return Err(Error::Config("sigma_floor must be nonnegative".into()));
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::Config("output directory is empty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn noise_seed(&self) -> u64 {
        self.seed.wrapping_add(NOISE_STREAM)
    }

    pub fn hio_seed(&self) -> u64 {
        self.seed.wrapping_add(HIO_STREAM)
    }

    /// The single noise model of commands that take one.
    pub fn single_noise(&self) -> Result<Option<NoiseKind>> {
        match self.noise.as_slice() {
            [] => Ok(None),
            [k] => Ok(Some(*k)),
            _ => Err(Error::Config("this command takes a single noise model".into())),
        }
    }
}

/// `k0` placed mid-way so that `floor(1 + m k0) = w` despite rounding.
pub fn k0_for_w(w: usize, m: usize) -> f64 {
    (w as f64 - 0.5) / m as f64
}

fn fill_text(f: &FillPolicy) -> String {
    match f {
        FillPolicy::None => "none".into(),
        FillPolicy::Full => "full".into(),
        FillPolicy::Annular(t) => format!("annular:{t}"),
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_files_and_overrides() {
        let text = "# a comment\nN = 16\nm=2\n\nk0s = 1, 2.5\nfill = annular:3\nnoise = gaussian,poisson\nw = 4\n";
        let mut cfg = ExperimentConfig::parse_str(text).unwrap();
        assert_eq!(cfg.n, 16);
        assert_eq!(cfg.m, 2);
        assert_eq!(cfg.k0s, vec![1.0, 2.5]);
        assert_eq!(cfg.fill, FillPolicy::Annular(3));
        assert_eq!(cfg.noise, vec![NoiseKind::Gaussian, NoiseKind::Poisson]);
        assert_eq!(cfg.geometry().unwrap().w(), 4);
        cfg.apply_override("m=3").unwrap();
        assert_eq!(cfg.m, 3);
        assert_eq!(cfg.geometry().unwrap().w(), 4);
    }

    #[test]
    fn errors_are_config_errors() {
        for bad in ["bogus = 1", "N = x", "no equals sign", "fill = half", "positivity = maybe"] {
            assert!(matches!(ExperimentConfig::parse_str(bad), Err(Error::Config(_))), "{bad}");
        }
        let cfg = ExperimentConfig::parse_str("beta = 3").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig::parse_str("phantom = nope").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn k0_for_w_hits_every_width() {
        for m in 1..6 {
            for w in 1..40 {
                let k0 = k0_for_w(w, m);
                assert_eq!((1.0 + m as f64 * k0).floor() as usize, w);
            }
        }
    }

    #[test]
    fn key_value_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("fill", "annular:2").unwrap();
        cfg.set("ws", "3,5").unwrap();
        cfg.set("noise", "uniform").unwrap();
        cfg.set("w", "6").unwrap();
        let back = ExperimentConfig::parse_str(&cfg.to_key_values()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let default_back = ExperimentConfig::parse_str(&ExperimentConfig::default().to_key_values()).unwrap();
        assert_eq!(default_back, ExperimentConfig::default());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
