//! End-to-end processing of sentence-image records: graphs, encoders,
//! alignment, channels, tagging and evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array2, Ix1, Ix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{
    build_pmi_channel, build_pos_channel, build_sd_channel, fuse_channels, w_gcn, ChannelParams, PmiStats,
    ScalarTable,
};
use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::corpus::{load_corpus, Record};
use crate::encoder::{transformer_stack, AttributeTransformer, CrossModalAttention, VisualProjection};
use crate::error::{Error, Result};
use crate::graph::{
    build_textual_graph, embed_edges, embed_nodes, EmbeddingSource, LabelTable, LabelVocabulary, Modality,
    PrecomputedEmbeddings,
};
use crate::nn::Mlp;
use crate::ot::{fused_align, AlignParams, AlignmentResult};
use crate::rng::stream;
use crate::train::Example;
use crate::tagging::{
    argmax_grid, decode_grid, encode_quintuples, joint_loss, main_loss, predict_grid, quintuple_to_raw, tag_name,
    MatchCounts, PredictionHead, RawQuintuple, TagGrid, TagSpace,
};

/// Vocabulary-dependent lookup tables and corpus statistics.
#[derive(Clone, Debug)]
pub struct Resources {
    pub vocab: LabelVocabulary,
    pub embeddings: EmbeddingSource,
    pub pmi: PmiStats,
    pub dependency_table: LabelTable,
    pub visual_relation_table: LabelTable,
    pub pos_table: LabelTable,
    pub sd_table: ScalarTable,
    pub co_table: ScalarTable,
}

impl Resources {
    /// Tables are hashed from label names, so `vocab` must already hold
    /// every label the records use.
    pub fn new(vocab: LabelVocabulary, embeddings: EmbeddingSource, pmi: PmiStats, config: &PipelineConfig) -> Self {
        let seed = config.seed;
        Self {
            dependency_table: LabelTable::hashed(&vocab.dependency_labels, "dep", seed, config.edge_dim),
            visual_relation_table: LabelTable::hashed(&vocab.visual_relation_labels, "visual-rel", seed, config.edge_dim),
            pos_table: LabelTable::hashed(&vocab.pos_labels, "pos", seed, config.channel_dim),
            sd_table: ScalarTable::hashed("sd", 0, config.sd_cap, seed, config.channel_dim),
            co_table: ScalarTable::hashed("co", -1, config.co_cap, seed, config.channel_dim),
            vocab,
            embeddings,
            pmi,
        }
    }
}

/// All parameters, drawn from named streams of one seed.
#[derive(Clone, Debug)]
pub struct Model {
    pub text_encoder: Vec<AttributeTransformer>,
    pub visual_projection: VisualProjection,
    pub visual_encoder: Vec<AttributeTransformer>,
    pub cross_modal: CrossModalAttention,
    pub pos_channel: ChannelParams,
    pub sd_channel: ChannelParams,
    pub co_channel: ChannelParams,
    pub fusion: Mlp,
    pub head: PredictionHead,
}

impl Model {
    pub fn init(config: &PipelineConfig, tags: TagSpace) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let d = config.text_dim;
        let layers = |name: &str| {
            let mut rng = stream(seed, name);
            (0..config.encoder_layers)
                .map(|_| AttributeTransformer::init(&mut rng, d, config.edge_dim, 4 * d))
                .collect::<Vec<_>>()
        };
        let mut fusion_dims = vec![3 * d];
        fusion_dims.extend(std::iter::repeat_n(d, config.fusion_hidden_layers + 1));
        Ok(Self {
            text_encoder: layers("encoder/text"),
            visual_projection: VisualProjection::init(&mut stream(seed, "encoder/visual-projection"), config.visual_dim, d),
            visual_encoder: layers("encoder/visual"),
            cross_modal: CrossModalAttention::init(&mut stream(seed, "encoder/cross-modal"), d, config.heads)?,
            pos_channel: ChannelParams::init(&mut stream(seed, "channels/pos"), config.channel_dim, d),
            sd_channel: ChannelParams::init(&mut stream(seed, "channels/sd"), config.channel_dim, d),
            co_channel: ChannelParams::init(&mut stream(seed, "channels/co"), config.channel_dim, d),
            fusion: Mlp::init(&mut stream(seed, "channels/fusion"), &fusion_dims),
            head: PredictionHead::init(&mut stream(seed, "tagging/head"), d, tags.len()),
        })
    }
}

pub fn head_to_checkpoint(head: &PredictionHead) -> Checkpoint {
    let mut ckpt = Checkpoint::default();
    ckpt.push("head.weight", head.weight.clone().into_dyn());
    ckpt.push("head.bias", head.bias.clone().into_dyn());
    ckpt
}

pub fn head_from_checkpoint(ckpt: &Checkpoint, model_dim: usize, tags: usize) -> Result<PredictionHead> {
    let get = |name: &str| {
        ckpt.get(name)
            .cloned()
            .ok_or_else(|| Error::Encoding(format!("checkpoint lacks tensor {name}")))
    };
    let weight = get("head.weight")?
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::Encoding("head.weight is not a matrix".into()))?;
    let bias = get("head.bias")?
        .into_dimensionality::<Ix1>()
        .map_err(|_| Error::Encoding("head.bias is not a vector".into()))?;
    if weight.dim() != (tags, 2 * model_dim) {
        return Err(Error::shape("head.weight", format!("({tags}, {})", 2 * model_dim), format!("{:?}", weight.dim())));
    }
    if bias.len() != tags {
        return Err(Error::shape("head.bias", tags, bias.len()));
    }
    Ok(PredictionHead { weight, bias })
}

/// Frozen representation of one record, up to the prediction head.
#[derive(Clone, Debug)]
pub struct Features {
    pub alignment: AlignmentResult,
    /// Enhanced word representations `S`, `n x d_T`.
    pub s_rep: Array2<f64>,
    pub sd_matrix: Array2<i64>,
    pub co_matrix: Array2<i64>,
    /// W-GCN weights of the Pos, Sd and Co channels.
    pub channel_weights: [Array2<f64>; 3],
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimings {
    pub encode: Duration,
    pub align: Duration,
    pub channels: Duration,
    pub tagging: Duration,
}

impl StageTimings {
    fn add(&mut self, other: &StageTimings) {
        self.encode += other.encode;
        self.align += other.align;
        self.channels += other.channels;
        self.tagging += other.tagging;
    }
}

pub fn compute_features(
    record: &Record,
    model: &Model,
    resources: &Resources,
    config: &PipelineConfig,
    align: &AlignParams,
) -> Result<(Features, StageTimings)> {
    let mut timings = StageTimings::default();
    let vocab = &resources.vocab;
    let start = Instant::now();

    let text_graph = build_textual_graph(&record.sentence, vocab);
    let text_nodes: Vec<(&str, usize)> = record
        .sentence
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let x_text = embed_nodes(&record.id, Modality::Text, &text_nodes, config.text_dim, &resources.embeddings)?;
    let z_text = embed_edges(&text_graph.edges, &resources.dependency_table, &vocab.dependency_labels)?;
    let h_text = transformer_stack(&model.text_encoder, x_text.matrix().view(), &z_text, text_graph.edges.adjacency())?;

    let visual = &record.visual;
    let object_names: Vec<&str> = visual
        .object_labels
        .iter()
        .map(|&id| vocab.object_labels.name(id).expect("interned at ingestion"))
        .collect();
    let visual_nodes: Vec<(&str, usize)> = object_names
        .iter()
        .zip(&visual.source_indices)
        .map(|(&name, &i)| (name, i))
        .collect();
    let x_visual = embed_nodes(&record.id, Modality::Visual, &visual_nodes, config.visual_dim, &resources.embeddings)?;
    let projected = model.visual_projection.forward(x_visual.matrix().view())?;
    let z_visual = embed_edges(&visual.edges, &resources.visual_relation_table, &vocab.visual_relation_labels)?;
    let h_visual = transformer_stack(&model.visual_encoder, projected.view(), &z_visual, visual.edges.adjacency())?;
    let cross = model.cross_modal.forward(h_text.view(), h_visual.view())?;
    timings.encode = start.elapsed();

    let start = Instant::now();
    let alignment = fused_align(
        h_visual.view(),
        h_text.view(),
        visual.edges.adjacency(),
        text_graph.edges.adjacency(),
        align,
    )?;
    timings.align = start.elapsed();

    let start = Instant::now();
    let o = cross.fused.view();
    let pos = build_pos_channel(&record.sentence, &resources.pos_table, &vocab.pos_labels)?;
    let pos_out = w_gcn(&pos, o, &model.pos_channel)?;
    drop(pos);
    let sd = build_sd_channel(&text_graph, &resources.sd_table, config.sd_cap)?;
    let sd_out = w_gcn(&sd, o, &model.sd_channel)?;
    let co = build_pmi_channel(&resources.pmi, &record.sentence, &resources.co_table, config.co_cap);
    let co_out = w_gcn(&co, o, &model.co_channel)?;
    let s_rep = fuse_channels(pos_out.output.view(), sd_out.output.view(), co_out.output.view(), &model.fusion)?;
    timings.channels = start.elapsed();

    if s_rep.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite word representation".into()));
    }
    Ok((
        Features {
            alignment,
            s_rep,
            sd_matrix: sd.matrix.expect("sd channel keeps its matrix"),
            co_matrix: co.matrix.expect("co channel keeps its matrix"),
            channel_weights: [pos_out.weights, sd_out.weights, co_out.weights],
        },
        timings,
    ))
}

/// Per-record figures in the run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub id: String,
    pub tokens: usize,
    pub objects: usize,
    pub wd_cost: f64,
    pub gwd_cost: f64,
    pub loss_graph: f64,
    pub l_main: f64,
    pub joint_loss: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
    pub predicted_quintuples: Vec<RawQuintuple>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub alpha: f64,
    pub lambda: f64,
    pub records: Vec<RecordReport>,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    pub fn mean(&self, field: impl Fn(&RecordReport) -> f64) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(field).sum::<f64>() / self.records.len() as f64
    }
}

/// Everything needed to evaluate records.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub model: Model,
    pub resources: Resources,
}

/// Everything the run produced for one record, for exports.
#[derive(Clone, Debug)]
pub struct RecordOutcome {
    pub report: RecordReport,
    pub features: Features,
    pub grid: TagGrid,
}

impl Pipeline {
    /// Reads the label inventory, corpus and optional side files named in
    /// `config`, and initialises the model.
    pub fn load(config: &PipelineConfig, corpus: &Path) -> Result<(Self, Vec<Record>)> {
        let (pipeline, mut corpora) = Self::load_many(config, &[corpus])?;
        Ok((pipeline, corpora.pop().expect("one corpus requested")))
    }

    /// Like [`Pipeline::load`] for several corpora sharing one vocabulary.
    /// Without a cache file, co-occurrence statistics come from the first.
    pub fn load_many(config: &PipelineConfig, corpora: &[&Path]) -> Result<(Self, Vec<Vec<Record>>)> {
        config.validate()?;
        let mut vocab = match &config.labels {
            Some(path) => LabelVocabulary::load(path)?,
            None => LabelVocabulary::default(),
        };
        let records = corpora
            .iter()
            .map(|path| load_corpus(path, &mut vocab, config.max_tokens, config.max_objects))
            .collect::<Result<Vec<_>>>()?;
        let pmi = match &config.pmi_cache {
            Some(path) => PmiStats::load(path)?,
            None => PmiStats::from_corpus(records.iter().take(1).flatten().map(|r| r.sentence.tokens())),
        };
        let pipeline = Self::with_records(config, vocab, pmi)?;
        Ok((pipeline, records))
    }

    pub fn with_records(config: &PipelineConfig, vocab: LabelVocabulary, pmi: PmiStats) -> Result<Self> {
        let embeddings = match &config.embeddings {
            Some(path) => EmbeddingSource::Precomputed(PrecomputedEmbeddings::load(path)?),
            None => EmbeddingSource::Hashed { seed: config.seed },
        };
        let space = TagSpace::of(&vocab);
        let mut model = Model::init(config, space)?;
        if let Some(path) = &config.head {
            model.head = head_from_checkpoint(&Checkpoint::load(path)?, config.text_dim, space.len())?;
        }
        Ok(Self {
            config: config.clone(),
            model,
            resources: Resources::new(vocab, embeddings, pmi, config),
        })
    }

    pub fn tag_space(&self) -> TagSpace {
        TagSpace::of(&self.resources.vocab)
    }

    pub fn features(&self, record: &Record, align: &AlignParams) -> Result<(Features, StageTimings)> {
        compute_features(record, &self.model, &self.resources, &self.config, align)
            .map_err(|e| e.in_record(&record.id))
    }

    /// Runs one record with the given balance coefficients.
    pub fn process(&self, record: &Record, alpha: f64, lambda: f64) -> Result<(RecordOutcome, StageTimings)> {
        let align = AlignParams {
            alpha,
            ..self.config.align_params()
        };
        let (features, mut timings) = self.features(record, &align)?;
        let start = Instant::now();
        let outcome = self.tag(record, features, lambda).map_err(|e| e.in_record(&record.id))?;
        timings.tagging = start.elapsed();
        Ok((outcome, timings))
    }

    fn tag(&self, record: &Record, features: Features, lambda: f64) -> Result<RecordOutcome> {
        let space = self.tag_space();
        let n = record.sentence.len();
        let probs = predict_grid(features.s_rep.view(), &self.model.head)?;
        let gold_grid = encode_quintuples(&record.gold, n, space)?;
        let l_main = main_loss(&probs, &gold_grid)?;
        if !l_main.is_finite() {
            return Err(Error::Numerical(format!("main loss is {l_main}")));
        }
        let grid = argmax_grid(&probs, space)?;
        let predicted = decode_grid(&grid);
        let counts = MatchCounts::of(&predicted, &record.gold);
        let alignment = &features.alignment;
        let report = RecordReport {
            id: record.id.clone(),
            tokens: n,
            objects: record.visual.len(),
            wd_cost: alignment.wd_cost,
            gwd_cost: alignment.gwd_cost,
            loss_graph: alignment.loss_graph,
            l_main,
            joint_loss: joint_loss(l_main, alignment.loss_graph, lambda)?,
            correct: counts.correct,
            predicted: counts.predicted,
            gold: counts.gold,
            predicted_quintuples: predicted
                .iter()
                .map(|q| quintuple_to_raw(q, &self.resources.vocab))
                .collect(),
        };
        Ok(RecordOutcome { report, features, grid })
    }

    /// Frozen features and gold grids for head training.
    pub fn examples(&self, records: &[Record]) -> Result<Vec<Example>> {
        let align = self.config.align_params();
        let space = self.tag_space();
        records
            .par_iter()
            .map(|r| {
                let (features, _) = self.features(r, &align)?;
                let gold = encode_quintuples(&r.gold, r.sentence.len(), space).map_err(|e| e.in_record(&r.id))?;
                Ok(Example {
                    id: r.id.clone(),
                    s_rep: features.s_rep,
                    gold,
                    gold_quintuples: r.gold.clone(),
                })
            })
            .collect()
    }

    /// Processes records in parallel; the report lists them in input order.
    pub fn run_with(&self, records: &[Record], alpha: f64, lambda: f64) -> Result<(RunReport, StageTimings)> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config("alpha", format!("must lie in [0, 1], got {alpha}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be non-negative, got {lambda}")));
        }
        let results = records
            .par_iter()
            .map(|r| self.process(r, alpha, lambda).map(|(o, t)| (o.report, t)))
            .collect::<Result<Vec<_>>>()?;
        let mut timings = StageTimings::default();
        let mut counts = MatchCounts::default();
        let mut reports = Vec::with_capacity(results.len());
        for (report, t) in results {
            timings.add(&t);
            counts.add(MatchCounts {
                correct: report.correct,
                predicted: report.predicted,
                gold: report.gold,
            });
            reports.push(report);
        }
        let metrics = counts.metrics();
        Ok((
            RunReport {
                seed: self.config.seed,
                alpha,
                lambda,
                records: reports,
                correct: counts.correct,
                predicted: counts.predicted,
                gold: counts.gold,
                precision: metrics.precision,
                recall: metrics.recall,
                f1: metrics.f1,
            },
            timings,
        ))
    }

    pub fn run(&self, records: &[Record]) -> Result<(RunReport, StageTimings)> {
        self.run_with(records, self.config.alpha, self.config.lambda)
    }

    /// One run per `(alpha, lambda)` pair, alpha-major.
    pub fn sweep(&self, records: &[Record], alphas: &[f64], lambdas: &[f64]) -> Result<Vec<RunReport>> {
        let mut rows = Vec::with_capacity(alphas.len() * lambdas.len());
        for &alpha in alphas {
            for &lambda in lambdas {
                rows.push(self.run_with(records, alpha, lambda)?.0);
            }
        }
        Ok(rows)
    }

    /// Writes the record's node cost, transport plan, predicted tag grid and
    /// channel matrices as tab-separated files with header labels. Returns
    /// the written paths.
    pub fn export(&self, records: &[Record], record_id: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let record = records
            .iter()
            .find(|r| r.id == record_id)
            .ok_or_else(|| Error::UnknownRecord(record_id.to_string()))?;
        let (outcome, _) = self.process(record, self.config.alpha, self.config.lambda)?;
        let vocab = &self.resources.vocab;
        let tokens: Vec<&str> = record.sentence.tokens().iter().map(String::as_str).collect();
        let objects: Vec<&str> = record
            .visual
            .object_labels
            .iter()
            .map(|&id| vocab.object_labels.name(id).expect("interned at ingestion"))
            .collect();
        let alignment = &outcome.features.alignment;
        let fmt_f = |v: &f64| v.to_string();
        let fmt_i = |v: &i64| v.to_string();
        let files = [
            ("cost", delimited(&objects, &tokens, &alignment.node_cost.values, fmt_f)),
            ("plan", delimited(&objects, &tokens, &alignment.plan.values, fmt_f)),
            ("grid", delimited(&tokens, &tokens, outcome.grid.cells(), |&t| tag_name(vocab, t).to_string())),
            ("sd", delimited(&tokens, &tokens, &outcome.features.sd_matrix, fmt_i)),
            ("co", delimited(&tokens, &tokens, &outcome.features.co_matrix, fmt_i)),
            ("pos-weights", delimited(&tokens, &tokens, &outcome.features.channel_weights[0], fmt_f)),
            ("sd-weights", delimited(&tokens, &tokens, &outcome.features.channel_weights[1], fmt_f)),
            ("co-weights", delimited(&tokens, &tokens, &outcome.features.channel_weights[2], fmt_f)),
        ];
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let stem = file_stem(record_id);
        let mut written = Vec::new();
        for (name, text) in files {
            let path = out_dir.join(format!("{stem}.{name}.tsv"));
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn clean_header(label: &str) -> String {
    label.replace(['\t', '\n', '\r'], " ")
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Tab-separated matrix: a header row of column labels, then one line per
/// row starting with its label.
pub fn delimited<T>(rows: &[&str], cols: &[&str], matrix: &Array2<T>, fmt: impl Fn(&T) -> String) -> String {
    let mut out = String::new();
    for c in cols {
        write!(out, "\t{}", clean_header(c)).unwrap();
    }
    out.push('\n');
    for (label, row) in rows.iter().zip(matrix.rows()) {
        out.push_str(&clean_header(label));
        for v in row {
            write!(out, "\t{}", fmt(v)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Reads a file written by [`delimited`] back into row labels, column labels
/// and cells.
pub fn parse_delimited(text: &str) -> (Vec<String>, Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let cols = lines
        .next()
        .map(|h| h.split('\t').skip(1).map(String::from).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for line in lines {
        let mut fields = line.split('\t');
        rows.push(fields.next().unwrap_or_default().to_string());
        cells.push(fields.map(String::from).collect());
    }
    (rows, cols, cells)
}
