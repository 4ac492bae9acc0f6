//! Command-line front end.
//!
//! Most commands read a TOML run config whose file references are relative
//! to the config file. Flags override config values, which override
//! built-in defaults. Every artifact carries a header with the SHA-256 of
//! the effective config and the seeds in force.

use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basemodel::{FrozenBase, SyntheticBase, SyntheticBaseSection};
use crate::biaslists::{self, BiasingList, WordPool};
use crate::decoder::{decode_corpus, read_jsonl, write_jsonl, NBestRecord, SearchOptions};
use crate::error::Error;
use crate::rescore::{self, LambdaPair, ToyLm};
use crate::score::{self, ScoreOptions, ScoreReport};
use crate::seed;
use crate::synth::{self, SynthConfig};
use crate::tcpgen::check::gradcheck;
use crate::tcpgen::{self, Checkpoint, TcpgenParams, TrainConfig};
use crate::textproc::{self, load_word_list, Corpus, PieceId, Vocab, HEADER_PREFIX};
use crate::trie::PrefixTree;


const STREAM_LISTS: u64 = 31;
const STREAM_INIT: u64 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub vocab: String,
    pub lm_text: String,
    pub train: String,
    pub dev: String,
    pub test: String,
    pub d_emb: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListSection {
    pub top_k: usize,
    pub distractors: usize,
    pub case_augment: bool,
}

impl Default for ListSection {
    fn default() -> Self {
        ListSection {
            top_k: 500,
            distractors: 1000,
            case_augment: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam: usize,
    pub nbest: usize,
    pub max_len: usize,
    pub ool: bool,
    pub trace: bool,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            beam: 10,
            nbest: 10,
            max_len: 64,
            ool: true,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescoreSection {
    pub lm_k: f64,
    pub grid_step: f64,
}

impl Default for RescoreSection {
    fn default() -> Self {
        RescoreSection {
            lm_k: 0.5,
            grid_step: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub data: DataSection,
    pub base: SyntheticBaseSection,
    #[serde(default)]
    pub lists: ListSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub rescore: RescoreSection,
    #[serde(default)]
    pub score: ScoreSection,
    /// How the data was generated, when it came from `synth-data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

fn default_seed() -> u64 {
    17
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let d = &cfg.data;
        for rel in [&d.vocab, &d.lm_text, &d.train, &d.dev, &d.test, &cfg.base.rare_words, &cfg.base.ilm] {
            if !dir.join(rel).exists() {
                return Err(Error::Config(format!("{}: referenced file {rel:?} does not exist", path.display())).into());
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub run: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: Seeds,
}

impl Header {
    fn new(command: &str, config_hash: String, seeds: Seeds) -> Self {
        Header {
            tool: "ctxbias".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            seeds,
        }
    }

    fn of(command: &str, cfg: &RunConfig) -> Self {
        Self::new(
            command,
            cfg.hash(),
            Seeds {
                run: cfg.seed,
                base: Some(cfg.base.seed),
                train: Some(cfg.train.seed),
            },
        )
    }

    fn line(&self) -> String {
        format!("{HEADER_PREFIX}{}\n", serde_json::to_string(self).expect("header serializes"))
    }
}

/// A JSON report: `{"header": ..., "payload": ...}`.
#[derive(Serialize, Deserialize)]
pub struct Report<T> {
    pub header: Header,
    pub payload: T,
}

fn write_report<T: Serialize>(path: &Path, header: Header, payload: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(&Report { header, payload })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_report<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Report<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_lines<S: AsRef<str>>(path: &Path, header: &Header, lines: &[S]) -> anyhow::Result<()> {
    let mut out = header.line();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_vocab(path: &Path, header: &Header, vocab: &Vocab) -> anyhow::Result<()> {
    let pieces: Vec<&str> = (0..vocab.len() as u32).map(|i| vocab.piece(PieceId(i))).collect();
    write_lines(path, header, &pieces)
}

fn save_corpus(path: &Path, header: &Header, corpus: &Corpus) -> anyhow::Result<()> {
    corpus.save_jsonl(path)?;
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(&serde_json::json!({ "header": header }))?;
    std::fs::write(path, format!("{line}\n{body}")).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn save_lists(path: &Path, header: &Header, lists: &[BiasingList]) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Rec<'a> {
        id: &'a str,
        words: &'a [String],
    }
    let recs: Vec<Rec> = lists
        .iter()
        .map(|l| Rec {
            id: &l.utterance,
            words: &l.words,
        })
        .collect();
    Ok(write_jsonl(path, header, &recs)?)
}

pub fn load_lists(path: &Path) -> anyhow::Result<HashMap<String, Vec<String>>> {
    Ok(biaslists::load_lists(path)?
        .into_iter()
        .map(|l| (l.utterance, l.words))
        .collect())
}

/// Run config plus everything loaded from it.
struct Ctx {
    cfg: RunConfig,
    dir: PathBuf,
    vocab: Vocab,
    base: SyntheticBase,
}

impl Ctx {
    fn load(path: &Path, adjust: impl FnOnce(&mut RunConfig)) -> anyhow::Result<Self> {
        let mut cfg = RunConfig::load(path)?;
        adjust(&mut cfg);
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let vocab = Vocab::load(&dir.join(&cfg.data.vocab), cfg.data.d_emb)?;
        let base_cfg = cfg.base.resolve(&dir)?;
        let base = SyntheticBase::new(vocab.clone(), base_cfg)?;
        Ok(Ctx { cfg, dir, vocab, base })
    }

    fn split(&self, name: &str) -> anyhow::Result<Corpus> {
        let d = &self.cfg.data;
        let rel = match name {
            "train" => &d.train,
            "dev" => &d.dev,
            "test" => &d.test,
            "lm-text" | "lm_text" => &d.lm_text,
            other => return Err(Error::Config(format!("unknown split {other:?}")).into()),
        };
        Ok(Corpus::load_jsonl(&self.dir.join(rel))?)
    }

    fn header(&self, command: &str) -> Header {
        Header::of(command, &self.cfg)
    }

    fn search(&self) -> SearchOptions {
        SearchOptions {
            beam: self.cfg.decode.beam,
            nbest: self.cfg.decode.nbest,
            max_len: self.cfg.decode.max_len,
            trace: self.cfg.decode.trace,
        }
    }

    fn rare_list(&self) -> anyhow::Result<Vec<String>> {
        let lm_text = self.split("lm-text")?;
        Ok(biaslists::full_rare_list(&textproc::word_freq(&lm_text), self.cfg.lists.top_k))
    }

    /// Per-utterance lists: reference hits plus `n` distractors from `pool`.
    fn utterance_lists(&self, corpus: &Corpus, pool: &WordPool, n: usize) -> anyhow::Result<Vec<BiasingList>> {
        corpus
            .utterances
            .iter()
            .map(|u| {
                let s = seed::derive(self.cfg.seed, &[STREAM_LISTS, seed::key_of(&u.id)]);
                Ok(biaslists::utterance_list(&u.id, &u.words, pool, n, s)?)
            })
            .collect()
    }

    fn load_checkpoint(&self, path: &Path) -> anyhow::Result<Checkpoint> {
        Ok(Checkpoint::load(path, self.vocab.len(), self.vocab.d_emb(), self.base.d_dec())?)
    }

    /// Decode `corpus`, biased when a checkpoint and lists are given.
    fn decode(
        &self,
        corpus: &Corpus,
        biased: Option<(&Checkpoint, &HashMap<String, Vec<String>>)>,
        workers: usize,
    ) -> anyhow::Result<Vec<NBestRecord>> {
        let opts = self.search();
        let cache: HashMap<String, Vec<PieceId>> = match biased {
            Some((_, lists)) => {
                let mut cache = HashMap::new();
                for words in lists.values() {
                    for w in words {
                        if !cache.contains_key(w) {
                            cache.insert(w.clone(), self.vocab.tokenize(w)?);
                        }
                    }
                }
                cache
            }
            None => HashMap::new(),
        };
        let augment = self.cfg.lists.case_augment;
        let trees = |u: &textproc::Utterance| -> crate::Result<Option<PrefixTree>> {
            let Some((_, lists)) = biased else { return Ok(None) };
            let words = lists.get(&u.id).ok_or_else(|| Error::MissingList(u.id.clone()))?;
            let tree = if augment {
                PrefixTree::build_cached(&self.vocab, &textproc::augment_case(words), &cache)?
            } else {
                PrefixTree::build_cached(&self.vocab, words, &cache)?
            };
            Ok(Some(tree))
        };
        let head = biased.map(|(ck, _)| {
            (
                &ck.params,
                ck.embeddings.as_ref().unwrap_or(self.base.embeddings()),
                self.cfg.decode.ool,
            )
        });
        let lists = decode_corpus(&self.base, &corpus.utterances, head, trees, &opts, workers)?;
        Ok(lists.iter().map(|l| NBestRecord::from_list(l, &self.vocab)).collect())
    }
}

fn top1(records: &[NBestRecord]) -> HashMap<String, Vec<String>> {
    records.iter().map(|r| (r.id.clone(), r.best_words())).collect()
}

fn list_sets(lists: &HashMap<String, Vec<String>>) -> HashMap<String, HashSet<String>> {
    lists
        .iter()
        .map(|(id, w)| (id.clone(), w.iter().cloned().collect()))
        .collect()
}

fn oov_set(train: &Corpus, refs: &Corpus, hyps: &HashMap<String, Vec<String>>) -> HashSet<String> {
    let words = refs
        .utterances
        .iter()
        .flat_map(|u| u.words.iter())
        .chain(hyps.values().flatten())
        .map(String::as_str);
    score::oov_words(train, words)
}

#[derive(Parser)]
#[command(name = "ctxbias", version, about = "Contextual biasing with a tree-constrained pointer generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a BPE wordpiece vocabulary from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Generate the synthetic benchmark and its run config.
    SynthData(SynthArgs),
    /// Decode a split with the frozen base and list words with above-average error.
    ExtractErrorList(ExtractArgs),
    /// Write the full rare-word list and per-utterance biasing lists.
    BuildLists(BuildListsArgs),
    /// Train the biasing head with the base model frozen.
    Train(TrainArgs),
    /// Beam-search decode to N-best lists.
    Decode(DecodeArgs),
    /// Rescore N-best lists with an external LM and internal-LM subtraction.
    Rescore(RescoreArgs),
    /// Compute WER, R-WER and OOV WER.
    Score(ScoreArgs),
    /// Decode and score across biasing-list sizes.
    Sweep(SweepArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Serialize)]
struct BuildVocabArgs {
    /// Corpus in JSON Lines (`{"id", "ref"}` per line).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 32)]
    d_emb: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 0.9)]
    acc_common: f64,
    #[arg(long, default_value_t = 0.5)]
    acc_rare: f64,
    #[arg(long, default_value_t = 0.8)]
    snr: f64,
    #[arg(long, default_value_t = 32)]
    d_emb: usize,
    #[arg(long, default_value_t = 32)]
    d_dec: usize,
    #[arg(long)]
    n_words: Option<usize>,
    #[arg(long)]
    n_lm_text: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_dev: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
}

#[derive(Args)]
struct ConfigArg {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ListSource {
    /// Rare words: everything outside the most frequent `top_k`.
    Rare,
    /// A given word list, used whole for every utterance.
    Ontology,
}

#[derive(Args)]
struct BuildListsArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_enum, default_value = "rare")]
    source: ListSource,
    /// Word list for `--source ontology`.
    #[arg(long)]
    words: Option<PathBuf>,
    #[arg(long)]
    distractors: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Also write the full rare-word list here.
    #[arg(long)]
    rare_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Word list that training lists are drawn from.
    #[arg(long)]
    list: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    distractors: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the out-of-list entry.
    #[arg(long)]
    no_ool: bool,
    #[arg(long)]
    train_embeddings: bool,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, default_value = "test")]
    split: String,
    /// Biasing head; omit for the unbiased baseline.
    #[arg(long, requires = "lists")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    lists: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    nbest: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    no_ool: bool,
    /// Record the per-step generation probability.
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RescoreArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    nbest: PathBuf,
    /// Dev N-best lists; when given the lambdas are tuned on them.
    #[arg(long)]
    dev_nbest: Option<PathBuf>,
    #[arg(long, default_value = "dev")]
    dev_split: String,
    #[arg(long, conflicts_with = "dev_nbest")]
    lambda_ilm: Option<f64>,
    #[arg(long, conflicts_with = "dev_nbest")]
    lambda_ext: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Reference corpus (JSON Lines).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// N-best file (top hypothesis is scored) or a corpus file.
    #[arg(long)]
    hyp: PathBuf,
    /// Per-utterance biasing lists for R-WER.
    #[arg(long)]
    lists: Option<PathBuf>,
    /// Training corpus defining OOV words.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    normalize: bool,
    /// Include edit operations per utterance.
    #[arg(long)]
    verbose: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_delimiter = ',', default_value = "0,100,500,1000,2000")]
    distractors: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::InvalidSearch(_)) => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::BuildVocab(a) => build_vocab(a),
        Command::SynthData(a) => synth_data(a),
        Command::ExtractErrorList(a) => extract_error_list(a),
        Command::BuildLists(a) => build_lists(a),
        Command::Train(a) => train(a),
        Command::Decode(a) => decode(a),
        Command::Rescore(a) => rescore(a),
        Command::Score(a) => score_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn build_vocab(a: BuildVocabArgs) -> anyhow::Result<()> {
    let corpus = Corpus::load_jsonl(&a.corpus)?;
    let vocab = textproc::build_vocab(&corpus, a.size, a.d_emb)?;
    let header = Header::new("build-vocab", hash_json(&a), Seeds { run: 0, base: None, train: None });
    write_vocab(&a.out, &header, &vocab)
}

fn synth_data(a: SynthArgs) -> anyhow::Result<()> {
    let d = SynthConfig::default();
    let scfg = SynthConfig {
        n_words: a.n_words.unwrap_or(d.n_words),
        n_lm_text: a.n_lm_text.unwrap_or(d.n_lm_text),
        n_train: a.n_train.unwrap_or(d.n_train),
        n_dev: a.n_dev.unwrap_or(d.n_dev),
        n_test: a.n_test.unwrap_or(d.n_test),
        top_k: a.top_k.unwrap_or(d.top_k),
        vocab_size: a.vocab_size.unwrap_or(d.vocab_size),
        seed: a.seed,
        ..d
    };
    let data = synth::generate(&scfg, a.d_emb)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let cfg = RunConfig {
        seed: a.seed,
        data: DataSection {
            vocab: "vocab.txt".into(),
            lm_text: "lm_text.jsonl".into(),
            train: "train.jsonl".into(),
            dev: "dev.jsonl".into(),
            test: "test.jsonl".into(),
            d_emb: a.d_emb,
        },
        base: SyntheticBaseSection {
            d_dec: a.d_dec,
            acc_common: a.acc_common,
            acc_rare: a.acc_rare,
            snr: a.snr,
            seed: a.seed,
            rare_words: "rare_words.txt".into(),
            ilm: "ilm.json".into(),
        },
        lists: ListSection {
            top_k: scfg.top_k,
            ..Default::default()
        },
        train: TrainConfig {
            seed: a.seed,
            ..Default::default()
        },
        decode: DecodeSection::default(),
        rescore: RescoreSection::default(),
        score: ScoreSection::default(),
        synth: Some(scfg),
    };
    let header = Header::of("synth-data", &cfg);
    let out = |name: &str| a.out.join(name);
    write_vocab(&out("vocab.txt"), &header, &data.vocab)?;
    save_corpus(&out("lm_text.jsonl"), &header, &data.lm_text)?;
    save_corpus(&out("train.jsonl"), &header, &data.train)?;
    save_corpus(&out("dev.jsonl"), &header, &data.dev)?;
    save_corpus(&out("test.jsonl"), &header, &data.test)?;
    write_lines(&out("rare_words.txt"), &header, &data.rare_words)?;
    write_lines(&out("lexicon.txt"), &header, &data.lexicon)?;
    std::fs::write(out("ilm.json"), serde_json::to_string(&data.ilm)?).map_err(|e| Error::io(out("ilm.json"), e))?;
    let toml = toml::to_string(&cfg)?;
    std::fs::write(out("config.toml"), toml).map_err(|e| Error::io(out("config.toml"), e))?;
    Ok(())
}

fn extract_error_list(a: ExtractArgs) -> anyhow::Result<()> {
    let ctx = Ctx::load(&a.cfg.config, |c| {
        if let Some(b) = a.beam {
            c.decode.beam = b;
            c.decode.nbest = c.decode.nbest.min(b);
        }
    })?;
    let corpus = ctx.split(&a.split)?;
    let decoded = ctx.decode(&corpus, None, a.workers)?;
    let hyps = top1(&decoded);
    let alignments: Vec<_> = corpus.utterances.iter().map(|u| score::align(&u.words, &hyps[&u.id])).collect();
    let list = biaslists::error_based_list(&alignments)?;
    write_lines(&a.out, &ctx.header("extract-error-list"), &list)
}

fn build_lists(a: BuildListsArgs) -> anyhow::Result<()> {
    let ctx = Ctx::load(&a.cfg.config, |c| {
        if let Some(n) = a.distractors {
            c.lists.distractors = n;
        }
        if let Some(k) = a.top_k {
            c.lists.top_k = k;
        }
    })?;
    let header = ctx.header("build-lists");
    let corpus = ctx.split(&a.split)?;
    let lists = match a.source {
        ListSource::Rare => {
            let rare = ctx.rare_list()?;
            if let Some(p) = &a.rare_out {
                write_lines(p, &header, &rare)?;
            }
            ctx.utterance_lists(&corpus, &WordPool::new(&rare), ctx.cfg.lists.distractors)?
        }
        ListSource::Ontology => {
            let Some(path) = &a.words else {
                return Err(Error::Config("--source ontology needs --words".into()).into());
            };
            let global = BiasingList::ontology(load_word_list(path)?);
            corpus
                .utterances
                .iter()
                .map(|u| BiasingList {
                    utterance: u.id.clone(),
                    ..global.clone()
                })
                .collect()
        }
    };
    save_lists(&a.out, &header, &lists)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let ctx = Ctx::load(&a.cfg.config, |c| {
        let t = &mut c.train;
        if let Some(e) = a.epochs {
            t.epochs = e;
        }
        if let Some(lr) = a.lr {
            t.peak_lr = lr;
        }
        if let Some(n) = a.distractors {
            t.distractors = n;
        }
        if let Some(s) = a.seed {
            t.seed = s;
        }
        if a.no_ool {
            t.ool = false;
        }
        if a.train_embeddings {
            t.train_embeddings = true;
        }
    })?;
    let list = load_word_list(&a.list)?;
    let train_corpus = ctx.split("train")?;
    let dev = ctx.split("dev")?;
    let tc = &ctx.cfg.train;
    let params = TcpgenParams::init(ctx.vocab.d_emb(), ctx.base.d_dec(), seed::derive(tc.seed, &[STREAM_INIT]));
    let (ck, log) = tcpgen::train(params, &train_corpus, Some(&dev), &ctx.base, &list, tc)?;
    let header = ctx.header("train");
    let mut json: serde_json::Value = serde_json::from_str(&ck.to_json(ctx.vocab.len())?)?;
    json["header"] = serde_json::to_value(&header)?;
    let mut text = serde_json::to_string_pretty(&json)?;
    text.push('\n');
    std::fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    if let Some(p) = &a.log {
        write_report(p, header, &log)?;
    }
    Ok(())
}

fn decode(a: DecodeArgs) -> anyhow::Result<()> {
    let ctx = Ctx::load(&a.cfg.config, |c| {
        let d = &mut c.decode;
        if let Some(b) = a.beam {
            d.beam = b;
        }
        // an explicit --nbest is validated, the config value follows the beam
        match a.nbest {
            Some(n) => d.nbest = n,
            None => d.nbest = d.nbest.min(d.beam),
        }
        if let Some(m) = a.max_len {
            d.max_len = m;
        }
        if a.no_ool {
            d.ool = false;
        }
        if a.trace {
            d.trace = true;
        }
    })?;
    let corpus = ctx.split(&a.split)?;
    let records = match (&a.checkpoint, &a.lists) {
        (Some(ck), Some(lists)) => {
            let ck = ctx.load_checkpoint(ck)?;
            let lists = load_lists(lists)?;
            ctx.decode(&corpus, Some((&ck, &lists)), a.workers)?
        }
        _ => ctx.decode(&corpus, None, a.workers)?,
    };
    Ok(write_jsonl(&a.out, &ctx.header("decode"), &records)?)
}

#[derive(Serialize, Deserialize)]
pub struct RescoreReport {
    pub lambdas: LambdaPair,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tune: Option<rescore::TuneResult>,
}

fn rescore(a: RescoreArgs) -> anyhow::Result<()> {
    let ctx = Ctx::load(&a.cfg.config, |c| {
        if let Some(s) = a.grid_step {
            c.rescore.grid_step = s;
        }
    })?;
    let lm = ToyLm::estimate(&ctx.vocab, &ctx.split("lm-text")?, ctx.cfg.rescore.lm_k)?;
    let mut lists: Vec<NBestRecord> = read_jsonl(&a.nbest)?;
    rescore::annotate(&ctx.base, &lm, &mut lists)?;
    let (lambdas, tune) = match &a.dev_nbest {
        Some(dev_path) => {
            let mut dev: Vec<NBestRecord> = read_jsonl(dev_path)?;
            rescore::annotate(&ctx.base, &lm, &mut dev)?;
            let refs: HashMap<String, Vec<String>> = ctx
                .split(&a.dev_split)?
                .utterances
                .into_iter()
                .map(|u| (u.id, u.words))
                .collect();
            let t = rescore::tune(&dev, &refs, ctx.cfg.rescore.grid_step)?;
            (t.best, Some(t))
        }
        None => (LambdaPair::new(a.lambda_ilm.unwrap_or(0.0), a.lambda_ext.unwrap_or(0.0))?, None),
    };
    let reranked: Vec<NBestRecord> = lists.iter().map(|l| rescore::rerank(l, lambdas)).collect();
    let header = ctx.header("rescore");
    write_jsonl(&a.out, &header, &reranked)?;
    if let Some(p) = &a.report {
        write_report(p, header, &RescoreReport { lambdas, tune })?;
    }
    Ok(())
}

/// Top hypotheses from an N-best file, or references from a corpus file.
fn load_hyps(path: &Path) -> anyhow::Result<HashMap<String, Vec<String>>> {
    let values: Vec<serde_json::Value> = read_jsonl(path)?;
    let mut out = HashMap::new();
    for (i, v) in values.iter().enumerate() {
        let id = v["id"]
            .as_str()
            .ok_or_else(|| anyhow::anyhow!("{}: record {} has no id", path.display(), i + 1))?;
        let text = if let Some(hyps) = v.get("hyps") {
            hyps.get(0).and_then(|h| h["text"].as_str()).unwrap_or("")
        } else if let Some(r) = v.get("ref").and_then(|r| r.as_str()) {
            r
        } else {
            v["text"].as_str().unwrap_or("")
        };
        out.insert(id.to_string(), text.split_whitespace().map(str::to_string).collect());
    }
    Ok(out)
}

fn score_cmd(a: ScoreArgs) -> anyhow::Result<()> {
    let refs = Corpus::load_jsonl(&a.reference)?;
    let hyps = load_hyps(&a.hyp)?;
    let lists = a.lists.as_deref().map(load_lists).transpose()?.map(|l| list_sets(&l));
    let oov = match &a.train {
        Some(p) => Some(oov_set(&Corpus::load_jsonl(p)?, &refs, &hyps)),
        None => None,
    };
    let opts = ScoreOptions {
        normalize: a.normalize,
        verbose: a.verbose,
    };
    let report = score::score_corpus(&refs, &hyps, lists.as_ref(), oov.as_ref(), opts)?;
    #[derive(Serialize)]
    struct Effective {
        normalize: bool,
        verbose: bool,
        lists: bool,
        oov: bool,
    }
    let header = Header::new(
        "score",
        hash_json(&Effective {
            normalize: a.normalize,
            verbose: a.verbose,
            lists: a.lists.is_some(),
            oov: a.train.is_some(),
        }),
        Seeds { run: 0, base: None, train: None },
    );
    match &a.out {
        Some(p) => write_report(p, header, &report)?,
        None => println!("{}", summary(&report)),
    }
    Ok(())
}

fn rate_str(r: &Option<score::ClassRate>) -> String {
    match r {
        Some(c) => match c.rate {
            Some(x) => format!("{x:.6}"),
            None if c.infinite => "inf".into(),
            None => "n/a".into(),
        },
        None => "n/a".into(),
    }
}

fn summary(r: &ScoreReport) -> String {
    format!(
        "utterances {} ref_tokens {} wer {:.6} r_wer {} oov_wer {}",
        r.n_utterances,
        r.n_ref,
        r.wer,
        rate_str(&r.r_wer),
        rate_str(&r.oov_wer)
    )
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let ctx = Ctx::load(&a.cfg.config, |_| {})?;
    let corpus = ctx.split(&a.split)?;
    let train_corpus = ctx.split("train")?;
    let ck = ctx.load_checkpoint(&a.checkpoint)?;
    let pool = WordPool::new(&ctx.rare_list()?);
    let header = ctx.header("sweep");
    let mut csv = header.line();
    csv.push_str("distractors,wer,r_wer,oov_wer\n");
    for &n in &a.distractors {
        let lists = ctx.utterance_lists(&corpus, &pool, n)?;
        let lists: HashMap<String, Vec<String>> = lists.into_iter().map(|l| (l.utterance, l.words)).collect();
        let hyps = top1(&ctx.decode(&corpus, Some((&ck, &lists)), a.workers)?);
        let oov = oov_set(&train_corpus, &corpus, &hyps);
        let opts = ScoreOptions {
            normalize: ctx.cfg.score.normalize,
            verbose: false,
        };
        let r = score::score_corpus(&corpus, &hyps, Some(&list_sets(&lists)), Some(&oov), opts)?;
        writeln!(csv, "{n},{:.6},{},{}", r.wer, rate_str(&r.r_wer), rate_str(&r.oov_wer)).expect("string write");
    }
    std::fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))?;
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> anyhow::Result<()> {
    let report = gradcheck(a.configs, a.seed, a.step, a.tolerance)?;
    println!(
        "gradcheck: {} configs, {} entries, max relative error {:.3e} ({})",
        report.configs,
        report.checked,
        report.max_rel_error,
        if report.passed { "pass" } else { "FAIL" }
    );
    if let Some(p) = &a.out {
        let header = Header::new("gradcheck", hash_json(&a), Seeds { run: a.seed, base: None, train: None });
        write_report(p, header, &report)?;
    }
    if !report.passed {
        bail!("gradient check failed: {}", report.worst.unwrap_or_default());
    }
    Ok(())
}
