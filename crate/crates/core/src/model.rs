//! The full hierarchy: shared word representation, one encoder per task and
//! the task heads on top of them.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::config::{EmbedConfig, EncoderConfig, RunConfig};
use crate::coref::{decode_clusters, Candidates, CorefConfig, CorefHead};
use crate::corpus::{Document, RelationInstance, Span, TaggedSpan};
use crate::crf::{self, BilouTagset, CrfParams};
use crate::embedder::{
    load_word_vectors, CachedContext, CharCnn, ContextualEmbedder, Embedder, HashContext,
    SentenceRef, Vocabulary, WordTable, WordVectors,
};
use crate::encoder::{BiRecurrentEncoder, HierarchyWiring, Source};
use crate::layers::Linear;
use crate::metrics::{restrict_to_mentions, CorefTally, Tally, TaskMetrics};
use crate::params::{Group, ParamId, ParamStore};
use crate::relation::{candidate_pairs, decode_relations, RelationConfig, RelationHead};
use crate::tensor::{sigmoid, Matrix};
use crate::{metrics, Error, Result, Task};

/// Everything needed to rebuild the architecture; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub tasks: Vec<Task>,
    pub order: Vec<Task>,
    pub seed: u64,
    pub embed: EmbedConfig,
    pub encoder: EncoderConfig,
    pub crf_mask_invalid: bool,
    pub coref: CorefConfig,
    pub relation: RelationConfig,
    pub word_vocab: Vec<String>,
    pub char_vocab: Vec<String>,
    pub ner_labels: Vec<String>,
    pub emd_labels: Vec<String>,
    pub relation_types: Vec<String>,
}

impl ModelSpec {
    /// Derive vocabularies and label sets from the training documents.
    pub fn from_config(cfg: &RunConfig, train: &[&Document]) -> Result<(Self, Option<WordVectors>)> {
        let mut words = Vocabulary::new();
        let mut chars = Vocabulary::new();
        let mut ner = BTreeSet::new();
        let mut emd = BTreeSet::new();
        let mut rel = BTreeSet::new();
        for doc in train {
            for tok in doc.tokens() {
                words.insert(tok);
                for ch in tok.chars() {
                    chars.insert(ch.encode_utf8(&mut [0u8; 4]));
                }
            }
            ner.extend(doc.ner.iter().map(|s| s.label.clone()));
            emd.extend(doc.mentions.iter().map(|s| s.label.clone()));
            rel.extend(doc.relations.iter().map(|r| r.rel_type.clone()));
        }
        let mut vectors = None;
        if cfg.embed.word {
            if let Some(path) = &cfg.embed.word_vectors {
                let dim = cfg.embed.word_dim;
                let wv = load_word_vectors(path, dim)?;
                words = wv.vocab.clone();
                vectors = Some(wv);
            }
        }
        if cfg.tasks.contains(&Task::Re) && rel.is_empty() {
            return Err(Error::Config(
                "data: relation extraction is configured but the training data has no relations".into(),
            ));
        }
        let spec = Self {
            tasks: cfg.tasks.clone(),
            order: cfg.order.clone(),
            seed: cfg.seed,
            embed: cfg.embed.clone(),
            encoder: cfg.encoder.clone(),
            crf_mask_invalid: cfg.crf_mask_invalid,
            coref: cfg.coref.clone(),
            relation: cfg.relation.clone(),
            word_vocab: words.entries().to_vec(),
            char_vocab: chars.entries().to_vec(),
            ner_labels: ner.into_iter().collect(),
            emd_labels: emd.into_iter().collect(),
            relation_types: rel.into_iter().collect(),
        };
        Ok((spec, vectors))
    }
}

/// Emission layer plus CRF parameters for a tagging task.
#[derive(Clone, Debug)]
pub struct TaggingHead {
    pub tagset: BilouTagset,
    pub emission: Linear,
    pub transitions: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
    pub mask: Option<CrfParams>,
}

impl TaggingHead {
    fn new(
        store: &mut ParamStore,
        task: Task,
        labels: &[String],
        input_dim: usize,
        mask: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let tagset = BilouTagset::new(labels);
        let k = tagset.num_tags();
        let group = Group::of_task(task);
        let prefix = format!("{task}.crf");
        let emission = Linear::new(store, &format!("{task}.emission"), group, input_dim, k, rng);
        let transitions = store.add(format!("{prefix}.transitions"), group, Matrix::zeros(k, k));
        let start = store.add(format!("{prefix}.start"), group, Matrix::zeros(1, k));
        let stop = store.add(format!("{prefix}.stop"), group, Matrix::zeros(1, k));
        let mask = mask.then(|| CrfParams::zeros(k).masked(&tagset));
        Self {
            tagset,
            emission,
            transitions,
            start,
            stop,
            mask,
        }
    }

    /// Transition, start and stop nodes with the validity mask applied.
    fn crf_vars(&self, graph: &mut Graph, store: &ParamStore) -> (Var, Var, Var) {
        let mut t = graph.param(store, self.transitions);
        let mut s = graph.param(store, self.start);
        let mut e = graph.param(store, self.stop);
        if let Some(m) = &self.mask {
            let mt = graph.constant(m.transitions.clone());
            let ms = graph.constant(Matrix::row_vector(m.start.clone()));
            let me = graph.constant(Matrix::row_vector(m.stop.clone()));
            t = graph.add(t, mt);
            s = graph.add(s, ms);
            e = graph.add(e, me);
        }
        (t, s, e)
    }

    pub fn crf_params(&self, store: &ParamStore) -> CrfParams {
        let mut p = CrfParams {
            transitions: store.value(self.transitions).clone(),
            start: store.value(self.start).data().to_vec(),
            stop: store.value(self.stop).data().to_vec(),
        };
        if let Some(m) = &self.mask {
            p.transitions.add_assign(&m.transitions);
            for (a, b) in p.start.iter_mut().zip(&m.start) {
                *a += b;
            }
            for (a, b) in p.stop.iter_mut().zip(&m.stop) {
                *a += b;
            }
        }
        p
    }
}

/// Per-sentence activations of the embedding and each computed encoder.
pub struct SentenceStates {
    pub embedding: Var,
    pub layers: BTreeMap<Task, Var>,
}

/// Sentence states of a document, with the document-level embedding rows
/// and CR output (`n × ·`, sentences concatenated).
pub struct DocumentStates {
    pub sentences: Vec<SentenceStates>,
    pub embedding: Var,
    pub cr: Option<Var>,
}

/// Decoded output for one document; `None` for tasks not requested.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DocPrediction {
    pub doc_id: String,
    pub ner: Option<Vec<TaggedSpan>>,
    pub mentions: Option<Vec<TaggedSpan>>,
    pub relations: Option<Vec<ScoredRelation>>,
    pub clusters: Option<Vec<Vec<Span>>>,
}

/// A decoded relation with the probability that passed the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRelation {
    pub relation: RelationInstance,
    pub p: f64,
}

/// Where relation candidates come from at prediction time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadSource {
    /// EMD predictions when the model has EMD, gold heads otherwise.
    Auto,
    Gold,
}

pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub embedder: Embedder,
    pub wiring: HierarchyWiring,
    pub encoders: BTreeMap<Task, BiRecurrentEncoder>,
    pub ner: Option<TaggingHead>,
    pub emd: Option<TaggingHead>,
    pub coref: Option<CorefHead>,
    pub relation: Option<RelationHead>,
}

impl Model {
    /// Build a freshly initialised model for `cfg` from its training data.
    pub fn new(cfg: &RunConfig, train: &[&Document]) -> Result<Self> {
        let (spec, vectors) = ModelSpec::from_config(cfg, train)?;
        Self::build(spec, vectors)
    }

    /// Build from a spec. Parameters are initialised from `spec.seed`;
    /// `vectors` (when given) seed the word table.
    pub fn build(spec: ModelSpec, vectors: Option<WordVectors>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let wiring = HierarchyWiring::standard(&spec.tasks, &spec.order)?;

        let word = if spec.embed.word {
            let vocab = Vocabulary::from_entries(spec.word_vocab.clone());
            let wv = match vectors {
                Some(v) => v,
                None => {
                    let dim = spec.embed.word_dim;
                    let mut m = Matrix::uniform(vocab.len(), dim, 0.1, &mut rng);
                    m.row_mut(crate::embedder::PAD_INDEX).fill(0.0);
                    WordVectors { vocab, matrix: m }
                }
            };
            Some(WordTable::register(
                &mut store,
                "embed.words",
                wv,
                spec.embed.word_trainable,
            ))
        } else {
            None
        };
        let chars = if spec.embed.chars {
            Some(CharCnn::new(
                &mut store,
                "embed.chars",
                Vocabulary::from_entries(spec.char_vocab.clone()),
                &spec.embed.char_cnn,
                &mut rng,
            )?)
        } else {
            None
        };
        let context: Option<Box<dyn ContextualEmbedder>> = if spec.embed.context {
            Some(match &spec.embed.context_cache {
                Some(path) => Box::new(CachedContext::load(path, spec.embed.context_dim)?),
                None => Box::new(HashContext {
                    dim: spec.embed.context_dim,
                    seed: spec.seed,
                }),
            })
        } else {
            None
        };
        let embedder = Embedder {
            word,
            chars,
            context,
        };
        if embedder.width() == 0 {
            return Err(Error::Config("embed: every word representation is disabled".into()));
        }

        let h = spec.encoder.hidden;
        let mut encoders = BTreeMap::new();
        for task in wiring.tasks() {
            let input_dim: usize = wiring
                .inputs(task)
                .iter()
                .map(|s| match s {
                    Source::Embedding => embedder.width(),
                    Source::Task(_) => 2 * h,
                })
                .sum();
            let enc = BiRecurrentEncoder::new(
                &mut store,
                &format!("{task}.encoder"),
                Group::of_task(task),
                input_dim,
                h,
                spec.encoder.layers,
                &mut rng,
            )?;
            let mut enc = enc;
            enc.dropout = spec.encoder.dropout;
            encoders.insert(task, enc);
        }
        let mut ner = None;
        let mut emd = None;
        let mut coref = None;
        let mut relation = None;
        for task in wiring.tasks() {
            match task {
                Task::Ner => {
                    ner = Some(TaggingHead::new(
                        &mut store,
                        task,
                        &spec.ner_labels,
                        2 * h,
                        spec.crf_mask_invalid,
                        &mut rng,
                    ))
                }
                Task::Emd => {
                    emd = Some(TaggingHead::new(
                        &mut store,
                        task,
                        &spec.emd_labels,
                        2 * h,
                        spec.crf_mask_invalid,
                        &mut rng,
                    ))
                }
                Task::Cr => {
                    coref = Some(CorefHead::new(
                        &mut store,
                        "cr.head",
                        2 * h,
                        embedder.width(),
                        spec.coref.clone(),
                        &mut rng,
                    )?)
                }
                Task::Re => {
                    relation = Some(RelationHead::new(
                        &mut store,
                        "re.head",
                        2 * h,
                        spec.relation_types.clone(),
                        spec.relation.clone(),
                        &mut rng,
                    )?)
                }
            }
        }
        Ok(Self {
            spec,
            store,
            embedder,
            wiring,
            encoders,
            ner,
            emd,
            coref,
            relation,
        })
    }

    pub fn has(&self, task: Task) -> bool {
        self.wiring.contains(task)
    }

    /// Input width of every encoder.
    pub fn encoder_input_dims(&self) -> BTreeMap<Task, usize> {
        self.encoders.iter().map(|(t, e)| (*t, e.input_dim)).collect()
    }

    fn tagging_head(&self, task: Task) -> Result<&TaggingHead> {
        match task {
            Task::Ner => self.ner.as_ref(),
            Task::Emd => self.emd.as_ref(),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("model has no {task} tagger")))
    }

    /// `tasks` plus every task whose encoder feeds them.
    pub fn closure(&self, tasks: &[Task]) -> BTreeSet<Task> {
        let mut out = BTreeSet::new();
        for &t in tasks {
            if self.has(t) {
                out.insert(t);
                out.extend(self.wiring.ancestors(t));
            }
        }
        out
    }

    /// Run the embedder and the encoders of `needed` (which must be closed
    /// under [`Model::closure`]) over one sentence. A CR encoder run here
    /// treats the sentence as a one-sentence document.
    pub fn encode_sentence(
        &self,
        graph: &mut Graph,
        sentence: &SentenceRef<'_>,
        needed: &BTreeSet<Task>,
    ) -> Result<SentenceStates> {
        let embedding = self.embedder.embed_sentence(graph, &self.store, sentence)?;
        let mut states = SentenceStates {
            embedding,
            layers: BTreeMap::new(),
        };
        for task in self.wiring.tasks() {
            if !needed.contains(&task) {
                continue;
            }
            let input = self.encoder_input(graph, task, &states)?;
            let out = self.encoders[&task].encode(graph, &self.store, input)?;
            states.layers.insert(task, out);
        }
        Ok(states)
    }

    /// `[g_e ; g_lower ...]` for `task`, from already computed states.
    fn encoder_input(&self, graph: &mut Graph, task: Task, states: &SentenceStates) -> Result<Var> {
        let parts: Vec<Var> = self
            .wiring
            .inputs(task)
            .iter()
            .map(|s| match s {
                Source::Embedding => Ok(states.embedding),
                Source::Task(o) => states.layers.get(o).copied().ok_or_else(|| {
                    Error::Config(format!("encoder for {task} needs {o}, which was not computed"))
                }),
            })
            .collect::<Result<_>>()?;
        Ok(graph.concat_cols(&parts))
    }

    /// Sentence states for every sentence of `doc`, plus the CR encoder run
    /// once over the whole document when `needed` contains CR.
    pub fn encode_document(
        &self,
        graph: &mut Graph,
        doc: &Document,
        needed: &BTreeSet<Task>,
    ) -> Result<DocumentStates> {
        let offsets = doc.sentence_offsets();
        let per_sentence: BTreeSet<Task> = needed.iter().copied().filter(|&t| t != Task::Cr).collect();
        let mut sentences = Vec::with_capacity(doc.sentences.len());
        let mut cr_inputs = Vec::new();
        for s in 0..doc.sentences.len() {
            let sref = Self::sentence_ref(doc, s, &offsets);
            let st = self.encode_sentence(graph, &sref, &per_sentence)?;
            if needed.contains(&Task::Cr) {
                cr_inputs.push(self.encoder_input(graph, Task::Cr, &st)?);
            }
            sentences.push(st);
        }
        let rows: Vec<Var> = sentences.iter().map(|st| st.embedding).collect();
        let embedding = graph.concat_rows(&rows);
        let cr = if cr_inputs.is_empty() {
            None
        } else {
            let input = graph.concat_rows(&cr_inputs);
            Some(self.encoders[&Task::Cr].encode(graph, &self.store, input)?)
        };
        Ok(DocumentStates {
            sentences,
            embedding,
            cr,
        })
    }

    pub fn sentence_ref<'a>(doc: &'a Document, sent: usize, offsets: &[usize]) -> SentenceRef<'a> {
        SentenceRef {
            doc_id: &doc.doc_id,
            offset: offsets[sent],
            tokens: &doc.sentences[sent],
        }
    }

    fn emissions(&self, graph: &mut Graph, states: &SentenceStates, task: Task) -> Result<Var> {
        let head = self.tagging_head(task)?;
        let g = states.layers[&task];
        Ok(head.emission.forward(graph, &self.store, g))
    }

    /// CRF negative log-likelihood of the gold spans of one sentence.
    pub fn tagging_loss(
        &self,
        graph: &mut Graph,
        states: &SentenceStates,
        task: Task,
        gold: &[TaggedSpan],
        len: usize,
    ) -> Result<Var> {
        let head = self.tagging_head(task)?;
        let tags = head.tagset.spans_to_tags(gold, len)?;
        let em = self.emissions(graph, states, task)?;
        let (t, s, e) = head.crf_vars(graph, &self.store);
        Ok(crf::nll_node(graph, em, t, s, e, &tags))
    }

    /// Sentence-local Viterbi spans.
    pub fn decode_tagging(
        &self,
        graph: &mut Graph,
        states: &SentenceStates,
        task: Task,
    ) -> Result<Vec<TaggedSpan>> {
        let head = self.tagging_head(task)?;
        let em = self.emissions(graph, states, task)?;
        let path = crf::viterbi(graph.value(em), &head.crf_params(&self.store));
        Ok(head.tagset.tags_to_spans(&path))
    }

    fn relation_head(&self) -> Result<&RelationHead> {
        self.relation
            .as_ref()
            .ok_or_else(|| Error::Config("model has no relation head".into()))
    }

    /// Relation BCE over all ordered pairs of gold head last tokens in the
    /// sentence; `None` when fewer than two heads exist.
    pub fn relation_loss(
        &self,
        graph: &mut Graph,
        states: &SentenceStates,
        doc: &Document,
        sent: usize,
        offsets: &[usize],
    ) -> Result<Option<Var>> {
        let head = self.relation_head()?;
        let off = offsets[sent];
        let local = doc.sentence_spans(&doc.mentions, sent);
        let mut tokens: Vec<usize> = local.iter().map(|s| s.end).collect();
        tokens.sort_unstable();
        tokens.dedup();
        if tokens.len() < 2 {
            return Ok(None);
        }
        let pairs = candidate_pairs(&tokens);
        let len = doc.sentences[sent].len();
        let gold: Vec<(usize, usize, String)> = doc
            .relations
            .iter()
            .filter(|r| {
                (off..off + len).contains(&r.arg1.end) && (off..off + len).contains(&r.arg2.end)
            })
            .map(|r| (r.arg1.end - off, r.arg2.end - off, r.rel_type.clone()))
            .collect();
        let targets = head.targets(&pairs, &gold);
        let logits = head.forward(graph, &self.store, states.layers[&Task::Re], &pairs)?;
        Ok(Some(head.loss(graph, logits, &targets)))
    }

    /// Relations among `heads` (document-level spans inside sentence `sent`).
    fn decode_sentence_relations(
        &self,
        graph: &mut Graph,
        states: &SentenceStates,
        heads: &[TaggedSpan],
        off: usize,
    ) -> Result<Vec<ScoredRelation>> {
        let head = self.relation_head()?;
        let by_last: BTreeMap<usize, Span> =
            heads.iter().map(|s| (s.end - off, s.span())).collect();
        let tokens: Vec<usize> = by_last.keys().copied().collect();
        if tokens.len() < 2 {
            return Ok(Vec::new());
        }
        let pairs = candidate_pairs(&tokens);
        let logits = head.forward(graph, &self.store, states.layers[&Task::Re], &pairs)?;
        let probs = graph.value(logits).map(sigmoid);
        let decoded = decode_relations(
            &pairs,
            &probs,
            &by_last,
            &head.types,
            head.config.threshold,
        );
        let row_of: BTreeMap<(usize, usize), usize> =
            pairs.iter().enumerate().map(|(r, &p)| (p, r)).collect();
        Ok(decoded
            .into_iter()
            .map(|rel| {
                let r = row_of[&(rel.arg1.end - off, rel.arg2.end - off)];
                let k = head.types.iter().position(|t| *t == rel.rel_type).unwrap_or(0);
                ScoredRelation {
                    p: probs.get(r, k),
                    relation: rel,
                }
            })
            .collect())
    }

    fn coref_head(&self) -> Result<&CorefHead> {
        self.coref
            .as_ref()
            .ok_or_else(|| Error::Config("model has no coreference head".into()))
    }

    /// Coreference loss for a whole document.
    pub fn coref_loss(&self, graph: &mut Graph, doc: &Document) -> Result<Var> {
        let head = self.coref_head()?;
        let needed = self.closure(&[Task::Cr]);
        let states = self.encode_document(graph, doc, &needed)?;
        let g = states.cr.expect("CR states requested");
        let fwd = head.forward(graph, &self.store, g, states.embedding, doc, &Candidates::Predicted)?;
        Ok(head.loss(graph, &fwd, &doc.clusters))
    }

    /// Decode the requested tasks on one document.
    pub fn predict(
        &self,
        doc: &Document,
        tasks: &[Task],
        gold_mentions: bool,
        heads: HeadSource,
    ) -> Result<DocPrediction> {
        let want: BTreeSet<Task> = tasks.iter().copied().filter(|t| self.has(*t)).collect();
        let mut wanted: Vec<Task> = want.iter().copied().collect();
        let predicted_heads = want.contains(&Task::Re) && heads == HeadSource::Auto && self.has(Task::Emd);
        if predicted_heads {
            wanted.push(Task::Emd);
        }
        let needed = self.closure(&wanted);
        let mut graph = Graph::new();
        let offsets = doc.sentence_offsets();
        let states = self.encode_document(&mut graph, doc, &needed)?;
        let mut out = DocPrediction {
            doc_id: doc.doc_id.clone(),
            ..Default::default()
        };
        let mut ner = Vec::new();
        let mut mentions = Vec::new();
        let mut relations = Vec::new();
        for (s, st) in states.sentences.iter().enumerate() {
            let off = offsets[s] as isize;
            if want.contains(&Task::Ner) {
                let spans = self.decode_tagging(&mut graph, &st, Task::Ner)?;
                ner.extend(spans.iter().map(|x| x.shifted(off)));
            }
            let mut sent_mentions = Vec::new();
            if want.contains(&Task::Emd) || predicted_heads {
                let spans = self.decode_tagging(&mut graph, &st, Task::Emd)?;
                sent_mentions = spans.iter().map(|x| x.shifted(off)).collect();
            }
            if want.contains(&Task::Re) {
                let heads: Vec<TaggedSpan> = if predicted_heads {
                    sent_mentions.clone()
                } else {
                    let local = doc.sentence_spans(&doc.mentions, s);
                    local.iter().map(|x| x.shifted(off)).collect()
                };
                relations.extend(self.decode_sentence_relations(
                    &mut graph,
                    &st,
                    &heads,
                    offsets[s],
                )?);
            }
            if want.contains(&Task::Emd) {
                mentions.extend(sent_mentions);
            }
        }
        if want.contains(&Task::Ner) {
            out.ner = Some(ner);
        }
        if want.contains(&Task::Emd) {
            out.mentions = Some(mentions);
        }
        if want.contains(&Task::Re) {
            out.relations = Some(relations);
        }
        if want.contains(&Task::Cr) {
            let head = self.coref_head()?;
            let g = states.cr.expect("CR states requested");
            let x = states.embedding;
            let cands = if gold_mentions {
                Candidates::Gold(doc.cluster_mentions())
            } else {
                Candidates::Predicted
            };
            let fwd = head.forward(&mut graph, &self.store, g, x, doc, &cands)?;
            let mut clusters = decode_clusters(&fwd.scores);
            if gold_mentions {
                let gold: BTreeSet<Span> = doc.cluster_mentions().into_iter().collect();
                clusters = restrict_to_mentions(&clusters, &gold);
            }
            out.clusters = Some(clusters);
        }
        Ok(out)
    }

    /// Corpus-level (micro-averaged) metrics for `task` on `docs`.
    pub fn evaluate(&self, task: Task, docs: &[&Document], gold_mentions: bool) -> Result<TaskMetrics> {
        if !self.has(task) {
            return Err(Error::Config(format!("model has no {task} task to evaluate")));
        }
        let mut tally = Tally::default();
        let mut coref = CorefTally::default();
        for doc in docs {
            let p = self.predict(doc, &[task], gold_mentions, HeadSource::Auto)?;
            match task {
                Task::Ner => tally.add(&metrics::span_tally(p.ner.as_deref().unwrap_or(&[]), &doc.ner)),
                Task::Emd => tally.add(&metrics::span_tally(
                    p.mentions.as_deref().unwrap_or(&[]),
                    &doc.mentions,
                )),
                Task::Re => {
                    let pred: Vec<RelationInstance> = p
                        .relations
                        .unwrap_or_default()
                        .into_iter()
                        .map(|r| r.relation)
                        .collect();
                    tally.add(&metrics::relation_tally(&pred, &doc.relations));
                }
                Task::Cr => coref.add(&CorefTally::of(
                    p.clusters.as_deref().unwrap_or(&[]),
                    &doc.clusters,
                )),
            }
        }
        Ok(match task {
            Task::Ner | Task::Emd => TaskMetrics::Span(tally.prf()),
            Task::Re => TaskMetrics::Relation(tally.prf()),
            Task::Cr => TaskMetrics::Coref(coref.report()),
        })
    }

    /// Token representations of a free-standing sentence at `layer`
    /// (`None` = the embedding layer).
    pub fn sentence_states(&self, tokens: &[String], layer: Option<Task>) -> Result<Matrix> {
        if let Some(t) = layer {
            if !self.has(t) {
                return Err(Error::Probe(format!("model has no g_{t} layer")));
            }
        }
        let needed = layer.map(|t| self.closure(&[t])).unwrap_or_default();
        let mut graph = Graph::new();
        let sref = SentenceRef {
            doc_id: "probe",
            offset: 0,
            tokens,
        };
        let st = self.encode_sentence(&mut graph, &sref, &needed)?;
        let v = match layer {
            None => st.embedding,
            Some(t) => st.layers[&t],
        };
        Ok(graph.value(v).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticConfig};

    fn small_config(setup: &str) -> RunConfig {
        let mut cfg = RunConfig::parse(&format!("setup = {setup}\ndata.synthetic_docs = 4")).unwrap();
        cfg.encoder.hidden = 4;
        cfg.embed.word_dim = 5;
        cfg.embed.context_dim = 3;
        cfg.embed.char_cnn.filters_per_width = 3;
        cfg.embed.char_cnn.char_dim = 4;
        cfg.coref.hidden = 6;
        cfg.coref.feature_dim = 3;
        cfg.relation.hidden = 5;
        cfg
    }

    #[test]
    fn wiring_dimensions_follow_the_order() {
        let docs = generate_synthetic_corpus(1, 4, &SyntheticConfig::default());
        let refs: Vec<&Document> = docs.iter().collect();
        let a = Model::new(&small_config("A"), &refs).unwrap();
        let l = Model::new(&small_config("L"), &refs).unwrap();
        let w = a.embedder.width();
        assert_eq!(w, 5 + 6 + 3);
        assert_eq!(a.encoder_input_dims()[&Task::Ner], w);
        assert_eq!(a.encoder_input_dims()[&Task::Emd], w + 8);
        assert_eq!(l.encoder_input_dims()[&Task::Ner], w + 8);
        assert_eq!(l.encoder_input_dims()[&Task::Emd], w);
        assert_eq!(a.encoder_input_dims()[&Task::Cr], w + 8);
    }

    #[test]
    fn predictions_cover_requested_tasks() {
        let docs = generate_synthetic_corpus(2, 3, &SyntheticConfig::default());
        let refs: Vec<&Document> = docs.iter().collect();
        let m = Model::new(&small_config("A"), &refs).unwrap();
        let p = m.predict(&docs[0], &Task::ALL, false, HeadSource::Auto).unwrap();
        assert!(p.ner.is_some() && p.mentions.is_some() && p.relations.is_some() && p.clusters.is_some());
        let gm = m.predict(&docs[0], &[Task::Cr], true, HeadSource::Auto).unwrap();
        let gold: BTreeSet<Span> = docs[0].cluster_mentions().into_iter().collect();
        for c in gm.clusters.unwrap() {
            assert!(c.iter().all(|s| gold.contains(s)));
        }
    }

    #[test]
    fn losses_are_finite_and_reach_parameters() {
        let docs = generate_synthetic_corpus(3, 2, &SyntheticConfig::default());
        let refs: Vec<&Document> = docs.iter().collect();
        let m = Model::new(&small_config("A"), &refs).unwrap();
        let doc = &docs[0];
        let offsets = doc.sentence_offsets();
        let mut g = Graph::new();
        let needed = m.closure(&[Task::Re]);
        let sref = Model::sentence_ref(doc, 0, &offsets);
        let st = m.encode_sentence(&mut g, &sref, &needed).unwrap();
        let gold = doc.sentence_spans(&doc.ner, 0);
        let l = m.tagging_loss(&mut g, &st, Task::Ner, &gold, sref.tokens.len()).unwrap();
        assert!(g.scalar(l).is_finite() && g.scalar(l) > 0.0);
        let c = m.coref_loss(&mut g, doc).unwrap();
        assert!(g.scalar(c).is_finite());
        let grads = g.backward(c);
        assert!(grads.keys().any(|id| m.store.get(*id).group == Group::Cr));
        assert!(grads.keys().all(|id| m.store.get(*id).group != Group::Re));
    }
}
