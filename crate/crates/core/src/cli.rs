//! The `tuplecrf` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical failure, 1 anything
//! else (malformed input files, inconsistent data).

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::embeddings::{
    count_tuple_groups, indicator_embeddings, load_external_vectors, ser_embedding_set, ser_embeddings, OovPolicy,
};
use crate::error::Error;
use crate::evaluation::{
    combo_predict, combo_select, independent_mode, precision_from_sets, predict_topk, Averaging, EvalReport, GoldIndex,
    TypeSets, DEFAULT_TOP_K,
};
use crate::io::{
    load_annotations, load_features, load_model, read_annotation_records, read_predictions, read_vocabularies,
    read_word_vectors, save_model, write_annotations, write_features, write_json, write_predictions,
    write_vocabularies, write_word_vectors, AnnotationRecord, FeatureTable, ModelFile, PredictionRecord, ScoredTuple,
};
use crate::learning::{fobos_train, StepSchedule, TrainConfig, DEFAULT_RANK_TOLERANCE};
use crate::model::{rank_report, MatrixRank, Model};
use crate::synth::{generate, SynthConfig};
use crate::types::{build_vocabulary, ChainSpec, Dataset, EmbeddingSet, EmbeddingSource, TUPLE_ARGUMENT_TYPES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// A problem with the command line itself rather than the data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(
    name = "tuplecrf",
    version,
    about = "Low-rank bilinear chain CRFs for semantic tuple prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic problem from a random low-rank model.
    Synth(SynthArgs),
    /// Build semantic-equivalence label embeddings from annotations.
    BuildSer(BuildSerArgs),
    /// Train a model with nuclear-norm regularized likelihood.
    Train(TrainArgs),
    /// Write the top-k tuples for every image in a feature file.
    Predict(PredictArgs),
    /// Per-argument-type precision of predictions against gold annotations.
    Eval(EvalArgs),
    /// Singular values, effective ranks and nuclear norms of a model.
    Inspect(InspectArgs),
    /// Pick the best model per argument type on validation data.
    Combo(ComboArgs),
    /// Train over a grid of unary penalties and report rank and precision.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// TOML file with synth settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labels per position, comma separated.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<usize>>,
    /// Embedding dimension per position, comma separated.
    #[arg(long, value_delimiter = ',')]
    embedding_dims: Option<Vec<usize>>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    heldout: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct BuildSerArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Existing vocabulary file; built from the annotations when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Vocabulary size per argument type when building one.
    #[arg(long, default_value_t = 400)]
    max_vocab: usize,
    /// Argument type names in chain order when building a vocabulary.
    #[arg(long, value_delimiter = ',')]
    types: Option<Vec<String>>,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Embedding choice for one argument type: `TYPE=indicator`, `TYPE=ser`
/// (computed from the training annotations), `TYPE=ser:PATH` or
/// `TYPE=external:PATH` (vector files).
#[derive(Clone, Debug, PartialEq)]
struct EmbeddingChoice {
    argument_type: String,
    source: EmbeddingSource,
    path: Option<PathBuf>,
}

impl FromStr for EmbeddingChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (ty, rest) = s
            .split_once('=')
            .ok_or_else(|| format!("expected TYPE=SOURCE, got {s:?}"))?;
        let (kind, path) = match rest.split_once(':') {
            Some((k, p)) if !p.is_empty() => (k, Some(PathBuf::from(p))),
            Some(_) => return Err(format!("empty path in {s:?}")),
            None => (rest, None),
        };
        let source = match (kind, &path) {
            ("indicator", None) => EmbeddingSource::Indicator,
            ("ser", _) => EmbeddingSource::Ser,
            ("external", Some(_)) => EmbeddingSource::External,
            ("external", None) => return Err("external embeddings need a path (external:PATH)".into()),
            _ => {
                return Err(format!(
                    "unknown embedding source {rest:?} (indicator | ser[:PATH] | external:PATH)"
                ))
            }
        };
        if ty.is_empty() {
            return Err(format!("missing argument type in {s:?}"));
        }
        Ok(EmbeddingChoice {
            argument_type: ty.to_owned(),
            source,
            path,
        })
    }
}

#[derive(Args, Debug, Clone)]
struct TrainingData {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Vocabulary file; built from the annotations when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    max_vocab: usize,
    /// Per-type embedding source, repeatable. Unlisted types use indicators.
    #[arg(long = "emb")]
    embeddings: Vec<EmbeddingChoice>,
    /// Handling of vocabulary tokens missing from vector files.
    #[arg(long, default_value = "fail")]
    oov: OovPolicy,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    schedule: Option<StepSchedule>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainFlags {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut c: TrainConfig = match &self.config {
            Some(p) => read_toml(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { c.$field = v; })*
            };
        }
        set!(c1 => c1, c2 => c2, step => base_step, max_iter => max_iter,
             schedule => step_schedule, tolerance => tolerance, seed => seed);
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: TrainingData,
    #[command(flatten)]
    flags: TrainFlags,
    /// Model output file.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration training log (tab separated).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    /// Drop the label-label potentials before decoding.
    #[arg(long)]
    independent: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Gold annotation file.
    #[arg(long)]
    gold: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Average per image instead of over all predictions.
    #[arg(long = "macro")]
    macro_average: bool,
    /// Ignore predictions for images without gold annotations.
    #[arg(long)]
    skip_unknown: bool,
    /// Argument type names in chain order.
    #[arg(long, value_delimiter = ',')]
    types: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Relative singular value cutoff for effective rank.
    #[arg(long, default_value_t = DEFAULT_RANK_TOLERANCE)]
    tolerance: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `NAME=PATH` pair naming a model file.
#[derive(Clone, Debug)]
struct NamedModel {
    name: String,
    path: PathBuf,
}

impl FromStr for NamedModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once('=') {
            Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok(NamedModel {
                name: n.to_owned(),
                path: p.into(),
            }),
            _ => Err(format!("expected NAME=PATH, got {s:?}")),
        }
    }
}

#[derive(Args, Debug)]
struct ComboArgs {
    /// Candidate model, repeatable; earlier models win ties.
    #[arg(long = "model", required = true)]
    models: Vec<NamedModel>,
    #[arg(long)]
    features: PathBuf,
    /// Annotations used to choose a model per argument type.
    #[arg(long)]
    validation: PathBuf,
    /// Annotations to report the combined precision on.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    /// JSON file with the assignment and the test report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: TrainingData,
    #[command(flatten)]
    flags: TrainFlags,
    /// Unary penalties to train with.
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1,1,10")]
    c1_grid: Vec<f64>,
    /// Annotations to measure precision on (the training set when absent).
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    /// Relative singular value cutoff for effective rank.
    #[arg(long, default_value_t = DEFAULT_RANK_TOLERANCE)]
    rank_tolerance: f64,
    /// CSV output.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_io() => EXIT_IO,
        Some(err) if err.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::BuildSer(a) => cmd_build_ser(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Combo(a) => cmd_combo(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------------- synth

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut c: SynthConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field.clone() { c.$field = v; })* };
    }
    set!(
        labels,
        embedding_dims,
        input_dim,
        rank,
        samples,
        heldout,
        noise,
        scale,
        seed
    );
    c.validate().map_err(|e| match e {
        Error::InvalidArgument(m) => usage(m),
        other => other.into(),
    })?;
    let data = generate(&c)?;
    let dir = &a.out_dir;
    let spec = &data.model.spec;

    for (name, samples) in [("train", &data.train), ("heldout", &data.heldout)] {
        write_features(
            &dir.join(format!("{name}_features.jsonl")),
            samples.iter().map(|s| (s.image_id.as_str(), &s.features)),
        )?;
        let records: Vec<AnnotationRecord> = samples
            .iter()
            .map(|s| AnnotationRecord {
                image_id: s.image_id.clone(),
                tuples: vec![spec.decode(&s.tuple)],
                line: 0,
            })
            .collect();
        write_annotations(&dir.join(format!("{name}.jsonl")), &records)?;
    }
    write_vocabularies(&dir.join("vocab.json"), spec.vocabularies())?;
    for (t, vocab) in spec.vocabularies().iter().enumerate() {
        write_word_vectors(
            &dir.join(format!("emb_{}.txt", vocab.argument_type())),
            vocab,
            data.model.embeddings.matrix(t),
        )?;
    }
    save_model(&ModelFile::new(data.model.clone(), None), &dir.join("truth.model"))?;
    write_toml(&dir.join("synth.toml"), &c)?;
    eprintln!(
        "wrote {} training and {} held-out images to {}",
        data.train.len(),
        data.heldout.len(),
        dir.display()
    );
    Ok(())
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = toml::to_string(value).context("serializing config")?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(())
}

// --------------------------------------------------------------- build-ser

fn default_types(arity: usize) -> Vec<String> {
    if arity == TUPLE_ARGUMENT_TYPES.len() {
        TUPLE_ARGUMENT_TYPES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..arity).map(|t| format!("pos{t}")).collect()
    }
}

fn record_arity(records: &[AnnotationRecord]) -> anyhow::Result<usize> {
    records
        .iter()
        .flat_map(|r| r.tuples.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| anyhow!(Error::EmptyCorpus))
}

/// Vocabularies from a file, or the most frequent tokens per position.
fn vocabularies_for(
    records: &[AnnotationRecord],
    vocab: Option<&Path>,
    max_vocab: usize,
    types: Option<&[String]>,
) -> anyhow::Result<Vec<crate::types::Vocabulary>> {
    if let Some(p) = vocab {
        return Ok(read_vocabularies(p)?);
    }
    let arity = record_arity(records)?;
    let types = match types {
        Some(t) if t.len() != arity => {
            return Err(usage(format!("{} type names for tuples of arity {arity}", t.len())))
        }
        Some(t) => t.to_vec(),
        None => default_types(arity),
    };
    types
        .iter()
        .enumerate()
        .map(|(t, name)| {
            let corpus: Vec<Vec<&str>> = records
                .iter()
                .map(|r| r.tuples.iter().map(|tuple| tuple[t].as_str()).collect())
                .collect();
            Ok(build_vocabulary(name, &corpus, max_vocab)?)
        })
        .collect()
}

fn cmd_build_ser(a: &BuildSerArgs) -> anyhow::Result<()> {
    let records = read_annotation_records(&a.annotations, None)?;
    let vocabs = vocabularies_for(&records, a.vocab.as_deref(), a.max_vocab, a.types.as_deref())?;
    // Tuples with a token outside the vocabulary take no part in counting.
    let groups: Vec<_> = records
        .iter()
        .map(|r| {
            r.tuples
                .iter()
                .filter(|tuple| tuple.len() == vocabs.len())
                .filter_map(|tuple| {
                    tuple
                        .iter()
                        .zip(&vocabs)
                        .map(|(tok, v)| v.lookup(tok))
                        .collect::<Option<Vec<usize>>>()
                })
                .collect()
        })
        .collect();
    for (t, vocab) in vocabs.iter().enumerate() {
        let counts = count_tuple_groups(&groups, vocab.argument_type(), vocab.len(), t);
        let m = ser_embeddings(&counts);
        write_word_vectors(&a.out_dir.join(format!("ser_{}.txt", vocab.argument_type())), vocab, &m)?;
    }
    if a.vocab.is_none() {
        write_vocabularies(&a.out_dir.join("vocab.json"), &vocabs)?;
    }
    Ok(())
}

// ------------------------------------------------------------------- train

/// Loaded training inputs.
struct Prepared {
    dataset: Dataset,
    embeddings: EmbeddingSet,
    features: FeatureTable,
}

fn vector_file_dim(path: &Path) -> anyhow::Result<usize> {
    let entries = read_word_vectors(path, None)?;
    entries
        .first()
        .map(|(_, v)| v.len())
        .ok_or_else(|| anyhow!("{}: no vectors", path.display()))
}

fn prepare(data: &TrainingData) -> anyhow::Result<Prepared> {
    let features = load_features(&data.features)?;
    let dim = features
        .dim()
        .ok_or_else(|| anyhow!("{}: no feature vectors", data.features.display()))?;
    let records = read_annotation_records(&data.annotations, None)?;
    let vocabs = vocabularies_for(&records, data.vocab.as_deref(), data.max_vocab, None)?;
    let spec = ChainSpec::new(vocabs, dim)?;
    let (dataset, excluded) = load_annotations(&data.annotations, &spec, &features)?;
    for ex in &excluded {
        eprintln!(
            "excluded {} ({}:{}): {}",
            ex.image_id,
            data.annotations.display(),
            ex.line,
            ex.reason
        );
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let embeddings = embeddings_for(&dataset, &data.embeddings, data.oov)?;
    Ok(Prepared {
        dataset,
        embeddings,
        features,
    })
}

fn embeddings_for(dataset: &Dataset, choices: &[EmbeddingChoice], oov: OovPolicy) -> anyhow::Result<EmbeddingSet> {
    let spec = &dataset.spec;
    let mut by_type: HashMap<&str, &EmbeddingChoice> = HashMap::new();
    for c in choices {
        if spec.position_of(&c.argument_type).is_none() {
            return Err(usage(format!(
                "unknown argument type {:?} in --emb (known: {})",
                c.argument_type,
                spec.argument_types().join(", ")
            )));
        }
        if by_type.insert(&c.argument_type, c).is_some() {
            return Err(usage(format!("--emb given twice for {}", c.argument_type)));
        }
    }
    let indicator = indicator_embeddings(spec);
    let mut ser = None;
    let mut matrices = Vec::with_capacity(spec.len());
    let mut sources = Vec::with_capacity(spec.len());
    for (t, vocab) in spec.vocabularies().iter().enumerate() {
        let choice = by_type.get(vocab.argument_type());
        let (m, source): (DMatrix<f64>, EmbeddingSource) = match choice {
            None => (indicator.matrix(t).clone(), EmbeddingSource::Indicator),
            Some(c) => match (&c.source, &c.path) {
                (EmbeddingSource::Indicator, _) => (indicator.matrix(t).clone(), EmbeddingSource::Indicator),
                (source, Some(path)) => {
                    let dim = vector_file_dim(path)?;
                    (load_external_vectors(path, vocab, dim, oov)?, *source)
                }
                (EmbeddingSource::Ser, None) => {
                    let set = ser.get_or_insert_with(|| ser_embedding_set(dataset));
                    (set.matrix(t).clone(), EmbeddingSource::Ser)
                }
                (EmbeddingSource::External, None) => unreachable!("rejected when parsing"),
            },
        };
        matrices.push(m);
        sources.push(source);
    }
    Ok(EmbeddingSet::new(matrices, sources)?)
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let config = a.flags.resolve()?;
    let prep = prepare(&a.data)?;
    let outcome = fobos_train(&prep.dataset, &prep.embeddings, &config)?;
    if let Some(log) = &a.log {
        let mut text = String::from("iteration\tobjective\tloss\tnuclear_sum\tranks\n");
        for r in &outcome.log {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        std::fs::write(log, text).map_err(|e| Error::Io {
            path: log.clone(),
            source: e,
        })?;
    }
    let last = outcome.log.last().expect("log has the initial record");
    eprintln!(
        "trained on {} images: {} iterations, objective {:.6}",
        prep.dataset.len(),
        last.iteration,
        last.objective
    );
    let model = Model::new(prep.dataset.spec, prep.embeddings, outcome.params)?;
    save_model(&ModelFile::new(model, Some(config)), &a.out)?;
    Ok(())
}

// ----------------------------------------------------------------- predict

fn load_for_prediction(path: &Path, independent: bool) -> anyhow::Result<Model> {
    let mut model = load_model(path)?.model;
    if independent {
        model.params = independent_mode(&model.params);
    }
    Ok(model)
}

fn cmd_predict(a: &PredictArgs) -> anyhow::Result<()> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let model = load_for_prediction(&a.model, a.independent)?;
    let features = load_features(&a.features)?;
    let records = features
        .iter()
        .map(|(id, x)| {
            let p = predict_topk(&model, id, x, a.k)?;
            Ok(PredictionRecord {
                image_id: p.image_id,
                predictions: p
                    .top_k
                    .iter()
                    .map(|(y, s)| ScoredTuple {
                        tuple: model.spec.decode(y),
                        score: *s,
                    })
                    .collect(),
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    write_predictions(&a.out, &records)?;
    Ok(())
}

// -------------------------------------------------------------------- eval

/// Assigns ids to tokens per position on first sight.
struct Interner {
    ids: Vec<HashMap<String, usize>>,
}

impl Interner {
    fn new(positions: usize) -> Self {
        Interner {
            ids: vec![HashMap::new(); positions],
        }
    }

    fn intern(&mut self, t: usize, token: &str) -> usize {
        let map = &mut self.ids[t];
        let next = map.len();
        *map.entry(token.to_owned()).or_insert(next)
    }

    fn tuple(&mut self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().enumerate().map(|(t, tok)| self.intern(t, tok)).collect()
    }
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let gold_records = read_annotation_records(&a.gold, None)?;
    let arity = record_arity(&gold_records)?;
    let types = match &a.types {
        Some(t) if t.len() != arity => {
            return Err(usage(format!("{} type names for tuples of arity {arity}", t.len())))
        }
        Some(t) => t.clone(),
        None => default_types(arity),
    };
    let mut interner = Interner::new(arity);
    let mut gold = GoldIndex::default();
    for r in &gold_records {
        let tuples: Vec<Vec<usize>> = r.tuples.iter().map(|y| interner.tuple(y)).collect();
        gold.insert(&r.image_id, tuples.iter().map(Vec::as_slice), arity);
    }
    let predictions = read_predictions(&a.predictions)?;
    let mut sets: Vec<(String, TypeSets)> = Vec::with_capacity(predictions.len());
    for p in &predictions {
        if gold.get(&p.image_id).is_none() && a.skip_unknown {
            continue;
        }
        let mut s: TypeSets = vec![Default::default(); arity];
        for st in &p.predictions {
            if st.tuple.len() != arity {
                return Err(Error::dims(format!("predicted tuple for {}", p.image_id), arity, st.tuple.len()).into());
            }
            for (t, l) in interner.tuple(&st.tuple).into_iter().enumerate() {
                s[t].insert(l);
            }
        }
        sets.push((p.image_id.clone(), s));
    }
    let type_refs: Vec<&str> = types.iter().map(String::as_str).collect();
    let averaging = if a.macro_average {
        Averaging::Macro
    } else {
        Averaging::Micro
    };
    let report = precision_from_sets(
        sets.iter().map(|(id, s)| (id.as_str(), s)),
        &gold,
        &type_refs,
        averaging,
    )?;
    print!("{report}");
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- inspect

fn rank_table(report: &[MatrixRank]) -> String {
    let mut s = String::from("matrix\tshape\trank\tnuclear_norm\tsingular_values\n");
    for r in report {
        let sv: Vec<String> = r.singular_values.iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(
            s,
            "{}\t{}x{}\t{}\t{:.6}\t{}",
            r.name,
            r.shape.0,
            r.shape.1,
            r.effective_rank,
            r.nuclear_norm,
            sv.join(",")
        );
    }
    s
}

fn cmd_inspect(a: &InspectArgs) -> anyhow::Result<()> {
    if !(a.tolerance.is_finite() && a.tolerance >= 0.0) {
        return Err(usage("--tolerance must be finite and >= 0"));
    }
    let file = load_model(&a.model)?;
    let report = rank_report(&file.model.params, a.tolerance);
    let emb: Vec<String> = file
        .model
        .spec
        .argument_types()
        .iter()
        .zip(file.model.embeddings.sources())
        .zip(file.model.embeddings.dims())
        .map(|((t, s), n)| format!("{t}={s}({n})"))
        .collect();
    println!("embeddings\t{}", emb.join(" "));
    print!("{}", rank_table(&report));
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

// ------------------------------------------------------------------- combo

#[derive(Serialize)]
struct ComboOutput {
    assignment: crate::evaluation::ComboAssignment,
    model_names: Vec<String>,
    test: EvalReport,
}

fn cmd_combo(a: &ComboArgs) -> anyhow::Result<()> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let mut seen = std::collections::HashSet::new();
    for m in &a.models {
        if !seen.insert(&m.name) {
            return Err(usage(format!("model name {} given twice", m.name)));
        }
    }
    let loaded = a
        .models
        .iter()
        .map(|m| Ok((m.name.clone(), load_model(&m.path)?.model)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let models: Vec<(&str, &Model)> = loaded.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let spec = &models[0].1.spec;
    let features = load_features(&a.features)?;
    let (validation, _) = load_annotations(&a.validation, spec, &features)?;
    let (test, _) = load_annotations(&a.test, spec, &features)?;
    let assignment = combo_select(&models, &validation, a.k)?;
    let sets = test
        .images
        .iter()
        .map(|img| {
            Ok((
                img.image_id.as_str(),
                combo_predict(&assignment, &models, &img.features, a.k)?,
            ))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let types = spec.argument_types();
    let report = precision_from_sets(
        sets.iter().map(|(id, s)| (*id, s)),
        &GoldIndex::from_dataset(&test),
        &types,
        Averaging::Micro,
    )?;
    println!(
        "type\tmodel\t{}",
        a.models.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join("\t")
    );
    for (t, ty) in types.iter().enumerate() {
        let vals: Vec<String> = assignment.validation.iter().map(|v| format!("{:.4}", v[t])).collect();
        println!("{ty}\t{}\t{}", assignment.models[t], vals.join("\t"));
    }
    print!("{report}");
    if let Some(out) = &a.out {
        write_json(
            out,
            &ComboOutput {
                assignment,
                model_names: a.models.iter().map(|m| m.name.clone()).collect(),
                test: report,
            },
        )?;
    }
    Ok(())
}

// ------------------------------------------------------------------- sweep

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<()> {
    if a.c1_grid.is_empty() || a.c1_grid.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(usage("--c1-grid needs finite values >= 0"));
    }
    let base = a.flags.resolve()?;
    let prep = prepare(&a.data)?;
    let eval_set = match &a.eval {
        Some(p) => load_annotations(p, &prep.dataset.spec, &prep.features)?.0,
        None => prep.dataset.clone(),
    };
    let types = prep.dataset.spec.argument_types();
    let mut csv = String::from("c1");
    let names = crate::types::ModelParams::zeros_like(&prep.dataset.spec, &prep.embeddings).matrix_names();
    for n in &names {
        let _ = write!(csv, ",rank_{n}");
    }
    csv.push_str(",mean_rank_W");
    for t in &types {
        let _ = write!(csv, ",precision_{t}");
    }
    csv.push_str(",mean_precision\n");
    for &c1 in &a.c1_grid {
        let config = TrainConfig { c1, ..base.clone() };
        let outcome = fobos_train(&prep.dataset, &prep.embeddings, &config)?;
        let ranks = rank_report(&outcome.params, a.rank_tolerance);
        let model = Model::new(prep.dataset.spec.clone(), prep.embeddings.clone(), outcome.params)?;
        let report = crate::evaluation::evaluate(&model, &eval_set, a.k)?;
        let _ = write!(csv, "{c1}");
        for r in &ranks {
            let _ = write!(csv, ",{}", r.effective_rank);
        }
        let w = model.params.unary.len();
        let mean_w = ranks[..w].iter().map(|r| r.effective_rank as f64).sum::<f64>() / w as f64;
        let _ = write!(csv, ",{mean_w}");
        for p in &report.per_type {
            let _ = write!(csv, ",{}", p.precision);
        }
        let _ = writeln!(csv, ",{}", report.mean_precision);
        eprintln!(
            "c1={c1}: mean W rank {mean_w}, mean precision {:.4}",
            report.mean_precision
        );
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.into(),
            source: e,
        })?;
    }
    std::fs::write(&a.out, csv).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    Ok(())
}
