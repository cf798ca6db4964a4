use std::path::{Path, PathBuf};

use clap::Args;
use ellav::corpus::LanguageConfig;
use ellav::decode::DecodeConfig;
use ellav::eval::DEFAULT_P_LIST;
use ellav::models::TrainConfig;
use ellav::seqbuild::{SeqVariant, VariantKind};
use ellav::tensornn::ModelConfig;
use ellav::util::write_atomic;
use ellav::Error;
use serde::{Deserialize, Serialize};

/// Fully resolved settings of one run. Config files hold one JSON object in
/// this shape; manifests are the same object plus the command and version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub n: usize,
    pub start: u64,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub gar: Option<PathBuf>,
    pub nar: Option<PathBuf>,
    pub checkpoints: PathBuf,
    pub variant: VariantKind,
    pub adv: u32,
    pub variants: Vec<VariantKind>,
    pub seeds: Vec<u64>,
    pub p_list: Vec<f64>,
    pub prompt_frames: usize,
    /// Evaluate on this many cross-speaker hard cases instead of continuation.
    pub hard: Option<usize>,
    pub threshold: f64,
    pub language: LanguageConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n: 4000,
            start: 0,
            out: None,
            corpus: None,
            test_corpus: None,
            gar: None,
            nar: None,
            checkpoints: PathBuf::from("checkpoints"),
            variant: VariantKind::Ellav,
            adv: 0,
            variants: VariantKind::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            p_list: DEFAULT_P_LIST.to_vec(),
            prompt_frames: 12,
            hard: None,
            threshold: 1e-4,
            language: LanguageConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
        serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })
    }

    pub fn seq_variant(&self) -> Result<SeqVariant, Error> {
        SeqVariant::new(self.variant, self.adv)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.language.validate()?;
        self.model.validate()?;
        self.decode.validate()?;
        if self.p_list.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("p-list values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Writes the manifest: this config plus command, version and threads.
    pub fn write_manifest(&self, path: &Path, command: &str, threads: Option<usize>) -> Result<(), Error> {
        let mut v = serde_json::to_value(self).expect("config serialises");
        let obj = v.as_object_mut().expect("config is an object");
        obj.insert("command".into(), command.into());
        obj.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        obj.insert("threads".into(), threads.map_or(serde_json::Value::Null, Into::into));
        let mut line = serde_json::to_string(&v).expect("manifest serialises");
        line.push('\n');
        write_atomic(path, line.as_bytes())
    }
}

// aliases keep clap from treating these as multi-value arguments
type VariantList = Vec<VariantKind>;
type SeedList = Vec<u64>;
type PList = Vec<f64>;

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<T>().map_err(|e| format!("{x}: {e}")))
        .collect()
}

fn parse_p_list(s: &str) -> Result<PList, String> {
    if s == "default" {
        Ok(DEFAULT_P_LIST.to_vec())
    } else {
        parse_list(s)
    }
}

fn parse_variants(s: &str) -> Result<VariantList, String> {
    if s == "all" {
        Ok(VariantKind::ALL.to_vec())
    } else {
        parse_list(s)
    }
}

/// Command-line overrides, one per config field.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Single-object JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 1 guarantees bit-exact determinism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub start: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub gar: Option<PathBuf>,
    #[arg(long, global = true)]
    pub nar: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long, global = true)]
    pub variant: Option<VariantKind>,
    #[arg(long, global = true)]
    pub adv: Option<u32>,
    /// Comma-separated variant names, or `all`.
    #[arg(long, global = true, value_parser = parse_variants)]
    pub variants: Option<VariantList>,
    #[arg(long, global = true, value_parser = parse_list::<u64>)]
    pub seeds: Option<SeedList>,
    /// Comma-separated top-p values, or `default` for the 13-point list.
    #[arg(long, global = true, value_parser = parse_p_list)]
    pub p_list: Option<PList>,
    #[arg(long, global = true)]
    pub prompt_frames: Option<usize>,
    #[arg(long, global = true)]
    pub hard: Option<usize>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,

    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub batch_tokens: Option<usize>,
    #[arg(long, global = true)]
    pub peak_lr: Option<f64>,
    #[arg(long, global = true)]
    pub warmup: Option<u64>,

    #[arg(long, global = true)]
    pub n_layers: Option<usize>,
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub n_heads: Option<usize>,
    #[arg(long, global = true)]
    pub d_ff: Option<usize>,
    #[arg(long, global = true)]
    pub max_seq_len: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,

    #[arg(long, global = true)]
    pub top_p: Option<f64>,
    #[arg(long, global = true)]
    pub max_phoneme_frames: Option<u32>,
    #[arg(long, global = true)]
    pub inf_factor: Option<f64>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub decode_seed: Option<u64>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl Flags {
    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set!(self.seed => c.seed);
        set!(self.n => c.n);
        set!(self.start => c.start);
        set!(self.checkpoints => c.checkpoints);
        set!(self.variant => c.variant);
        set!(self.adv => c.adv);
        set!(self.variants => c.variants);
        set!(self.seeds => c.seeds);
        set!(self.p_list => c.p_list);
        set!(self.prompt_frames => c.prompt_frames);
        set!(self.threshold => c.threshold);
        set!(self.steps => c.train.steps);
        set!(self.batch_tokens => c.train.batch_tokens);
        set!(self.peak_lr => c.train.peak_lr);
        set!(self.warmup => c.train.warmup);
        set!(self.n_layers => c.model.n_layers);
        set!(self.d_model => c.model.d_model);
        set!(self.n_heads => c.model.n_heads);
        set!(self.d_ff => c.model.d_ff);
        set!(self.max_seq_len => c.model.max_seq_len);
        set!(self.dropout => c.model.dropout);
        set!(self.top_p => c.decode.top_p);
        set!(self.max_phoneme_frames => c.decode.max_phoneme_frames);
        set!(self.inf_factor => c.decode.inf_factor);
        set!(self.temperature => c.decode.temperature);
        set!(self.decode_seed => c.decode.seed);
        for (src, dst) in [
            (&self.out, &mut c.out),
            (&self.corpus, &mut c.corpus),
            (&self.test_corpus, &mut c.test_corpus),
            (&self.gar, &mut c.gar),
            (&self.nar, &mut c.nar),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        if self.hard.is_some() {
            c.hard = self.hard;
        }
        c.validate()?;
        Ok(c)
    }
}
