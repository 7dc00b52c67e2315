//! Co-prediction model: backbone, soft tokens, mask embeddings and the soft verbalizer.
//!
//! Both masks are scored against one shared verbalizer:
//! `p_pos[y] = sigmoid(h_pmask · v_y + b_y)` and `p_neg[y] = sigmoid(h_nmask · v_y + b_y)`.

pub mod autograd;
mod backbone;
mod checkpoint;
mod tokenizer;

use std::borrow::Cow;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, MentionExample, TypeVocabulary};
use crate::error::{Error, Result};
use crate::prompt::{self, MarkerMap, PromptStyle, BELONGS_TO, RATHER_THAN};
use autograd::{Gradients, Graph, Matrix, ParamId, ParamStore, Var};

pub use backbone::{Backbone, Dropout, TinyBackbone, TinyBackboneConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use tokenizer::{type_words, WordTokenizer};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-label probabilities from the two mask slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoPredictionScores {
    pub p_pos: Vec<f64>,
    pub p_neg: Vec<f64>,
}

impl CoPredictionScores {
    pub fn new(p_pos: Vec<f64>, p_neg: Vec<f64>) -> Result<Self> {
        if p_pos.len() != p_neg.len() {
            return Err(Error::invalid(
                "scores",
                format!("{} PMASK vs {} NMASK entries", p_pos.len(), p_neg.len()),
            ));
        }
        if let Some(bad) = p_pos.iter().chain(&p_neg).find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid("scores", format!("{bad} is not a probability")));
        }
        Ok(Self { p_pos, p_neg })
    }

    pub fn len(&self) -> usize {
        self.p_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_pos.is_empty()
    }
}

/// Pre-sigmoid verbalizer outputs. `neg` is `None` for the standard prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct CoPredictionLogits {
    pub pos: Vec<f64>,
    pub neg: Option<Vec<f64>>,
}

impl CoPredictionLogits {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// For the standard prompt the NMASK score is reported as `1 - p_pos`.
    pub fn scores(&self) -> CoPredictionScores {
        let p_pos: Vec<f64> = self.pos.iter().map(|&z| sigmoid(z)).collect();
        let p_neg = match &self.neg {
            Some(neg) => neg.iter().map(|&z| sigmoid(z)).collect(),
            None => self.pos.iter().map(|&z| sigmoid(-z)).collect(),
        };
        CoPredictionScores { p_pos, p_neg }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    /// `t × hidden` label embeddings.
    pub embeddings: ParamId,
    /// `1 × t` label biases.
    pub bias: ParamId,
}

/// Initializes each label embedding to the mean input embedding of the words
/// in its type path; biases start at zero.
pub fn init_verbalizer<B: Backbone>(
    vocab: &TypeVocabulary,
    backbone: &B,
    store: &mut ParamStore,
) -> Result<Verbalizer> {
    let d = backbone.hidden_dim();
    let tok = backbone.tokenizer();
    let mut emb = Matrix::zeros(vocab.len(), d);
    for y in 0..vocab.len() {
        let ids: Vec<usize> = type_words(vocab.path(y))
            .iter()
            .filter_map(|w| tok.lookup(w))
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyTypeTokenization(vocab.path(y).to_string()));
        }
        let row = emb.row_mut(y);
        for &id in &ids {
            for (r, v) in row.iter_mut().zip(backbone.token_embedding(store, id)) {
                *r += v;
            }
        }
        for r in row.iter_mut() {
            *r /= ids.len() as f64;
        }
    }
    Ok(Verbalizer {
        embeddings: store.add("verbalizer.embeddings", emb, true),
        bias: store.add("verbalizer.bias", Matrix::zeros(1, vocab.len()), false),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    /// `n_soft × hidden`; `None` when there are no soft tokens.
    pub soft: Option<ParamId>,
    pub pmask: ParamId,
    pub nmask: ParamId,
}

/// Soft tokens are drawn from a normal matching the spread of the backbone's
/// token embeddings; both masks start as copies of the `[MASK]` embedding.
pub fn init_special_tokens<B: Backbone>(
    n_soft: usize,
    backbone: &B,
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> SpecialTokens {
    let d = backbone.hidden_dim();
    let table = store.get(backbone.token_embeddings()).data();
    let mean = table.iter().sum::<f64>() / table.len() as f64;
    let var = table.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / table.len() as f64;
    let std = var.sqrt().max(1e-6);
    let normal = Normal::new(mean, std).expect("finite std");
    let soft = (n_soft > 0).then(|| {
        let m = Matrix::from_fn(n_soft, d, |_, _| normal.sample(rng));
        store.add("prompt.soft", m, false)
    });
    let mask = backbone.mask_embedding(store);
    let pmask = store.add("prompt.pmask", Matrix::from_vec(1, d, mask.clone()), false);
    let nmask = store.add("prompt.nmask", Matrix::from_vec(1, d, mask), false);
    SpecialTokens { soft, pmask, nmask }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_soft: usize,
    pub style: PromptStyle,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_soft: 2,
            style: PromptStyle::CoPrediction,
        }
    }
}

/// A prompt mapped onto embedding rows, ready for the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPrompt {
    sources: Vec<(ParamId, usize)>,
    pmask: usize,
    nmask: Option<usize>,
}

impl EncodedPrompt {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn pmask(&self) -> usize {
        self.pmask
    }

    pub fn nmask(&self) -> Option<usize> {
        self.nmask
    }
}

/// Trims context tokens so the whole prompt (plus `[CLS]`/`[SEP]`) fits in
/// `max_len`. Tokens farthest from the mention go first; the mention itself
/// is never cut.
pub fn fit_to_length(
    example: &MentionExample,
    n_soft: usize,
    style: PromptStyle,
    max_len: usize,
) -> Result<Cow<'_, MentionExample>> {
    let m = example.mention.len();
    let literals = BELONGS_TO.split_whitespace().count()
        + match style {
            PromptStyle::CoPrediction => RATHER_THAN.split_whitespace().count() + 2,
            PromptStyle::Standard => 1,
        };
    // [CLS] + context mention + soft + template mention + literals/masks + [SEP]
    let fixed = 2 + n_soft + 2 * m + literals;
    if fixed > max_len {
        return Err(Error::MentionTooLong { mention: m, max_len });
    }
    let budget = max_len - fixed;
    let (l, r) = (example.left.len(), example.right.len());
    if l + r <= budget {
        return Ok(Cow::Borrowed(example));
    }
    let (mut keep_l, mut keep_r) = (l, r);
    while keep_l + keep_r > budget {
        if keep_l >= keep_r {
            keep_l -= 1;
        } else {
            keep_r -= 1;
        }
    }
    let mut out = example.clone();
    out.left = example.left[l - keep_l..].to_vec();
    out.right = example.right[..keep_r].to_vec();
    Ok(Cow::Owned(out))
}

/// One forward pass kept alive for back-propagation.
pub struct Forward<'a> {
    graph: Graph<'a>,
    logits: Var,
    hidden: Var,
    t: usize,
}

impl Forward<'_> {
    pub fn logits(&self) -> CoPredictionLogits {
        let m = self.graph.value(self.logits);
        CoPredictionLogits {
            pos: m.row(0).to_vec(),
            neg: (m.rows() > 1).then(|| m.row(1).to_vec()),
        }
    }

    /// Hidden states at `[PMASK]` (row 0) and `[NMASK]` (row 1, if present).
    pub fn mask_hidden(&self) -> &Matrix {
        self.graph.value(self.hidden)
    }

    /// Back-propagates the loss gradient w.r.t. the logits into `grads`.
    pub fn backward(&self, d_pos: &[f64], d_neg: Option<&[f64]>, grads: &mut Gradients) {
        assert_eq!(d_pos.len(), self.t);
        let rows = self.graph.value(self.logits).rows();
        let mut seed = Vec::with_capacity(rows * self.t);
        seed.extend_from_slice(d_pos);
        if rows > 1 {
            let d_neg = d_neg.expect("NMASK gradient for a co-prediction forward");
            assert_eq!(d_neg.len(), self.t);
            seed.extend_from_slice(d_neg);
        }
        self.graph
            .backward(self.logits, Matrix::from_vec(rows, self.t, seed), grads);
    }
}

pub struct CoPredictionModel<B: Backbone = TinyBackbone> {
    backbone: B,
    store: ParamStore,
    vocabulary: Arc<TypeVocabulary>,
    markers: MarkerMap,
    special: SpecialTokens,
    verbalizer: Verbalizer,
    config: ModelConfig,
}

impl<B: Backbone> CoPredictionModel<B> {
    /// Adds the prompt and verbalizer parameters to `store`, which must
    /// already hold the backbone's parameters.
    pub fn new(
        backbone: B,
        mut store: ParamStore,
        vocabulary: Arc<TypeVocabulary>,
        config: ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let markers = MarkerMap::standard(config.n_soft);
        let tok = backbone.tokenizer();
        let mut marker_words: Vec<&str> = (0..config.n_soft)
            .map(|i| markers.soft(i).expect("n_soft markers"))
            .collect();
        marker_words.extend([markers.pmask(), markers.nmask()]);
        if let Some(hit) = marker_words.iter().find(|m| tok.lookup(m).is_some()) {
            return Err(Error::MarkerCollision(hit.to_string()));
        }
        let special = init_special_tokens(config.n_soft, &backbone, &mut store, rng);
        let verbalizer = init_verbalizer(&vocabulary, &backbone, &mut store)?;
        Ok(Self {
            backbone,
            store,
            vocabulary,
            markers,
            special,
            verbalizer,
            config,
        })
    }

    pub fn backbone(&self) -> &B {
        &self.backbone
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn vocabulary(&self) -> &Arc<TypeVocabulary> {
        &self.vocabulary
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn style(&self) -> PromptStyle {
        self.config.style
    }

    pub fn special_tokens(&self) -> SpecialTokens {
        self.special
    }

    pub fn verbalizer(&self) -> Verbalizer {
        self.verbalizer
    }

    pub fn markers(&self) -> &MarkerMap {
        &self.markers
    }

    pub fn check_vocabulary(&self, dataset: &Dataset) -> Result<()> {
        if dataset.vocabulary.as_ref() != self.vocabulary.as_ref() {
            return Err(Error::VocabularyMismatch(format!(
                "model has {} types, dataset `{}` has {}",
                self.vocabulary.len(),
                dataset.split_name,
                dataset.vocabulary.len()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, example: &MentionExample) -> Result<EncodedPrompt> {
        let style = self.config.style;
        let fitted = fit_to_length(example, self.config.n_soft, style, self.backbone.max_len())?;
        let instance = prompt::build_prompt_instance(&fitted, self.config.n_soft, style);
        let rendered = prompt::render(&instance, &self.markers)?;
        let tok = self.backbone.tokenizer();
        let table = self.backbone.token_embeddings();
        let mut sources = Vec::with_capacity(rendered.tokens.len() + 2);
        sources.push((table, tok.cls_id()));
        for (i, t) in rendered.tokens.iter().enumerate() {
            let src = if i == rendered.pmask {
                (self.special.pmask, 0)
            } else if Some(i) == rendered.nmask {
                (self.special.nmask, 0)
            } else if let Some(k) = (0..self.config.n_soft).find(|&k| self.markers.soft(k) == Some(t)) {
                (self.special.soft.expect("soft slots exist"), k)
            } else {
                (table, tok.id(t))
            };
            sources.push(src);
        }
        sources.push((table, tok.sep_id()));
        Ok(EncodedPrompt {
            sources,
            pmask: rendered.pmask + 1,
            nmask: rendered.nmask.map(|p| p + 1),
        })
    }

    /// Runs the model; `dropout` is `Some` in training mode only.
    pub fn forward(&self, encoded: &EncodedPrompt, dropout: Option<&mut Dropout>) -> Forward<'_> {
        let mut g = Graph::new(&self.store);
        let inputs = g.gather(encoded.sources.clone());
        let hidden = self.backbone.encode_embeddings(&mut g, inputs, dropout);
        let mut rows = vec![encoded.pmask];
        rows.extend(encoded.nmask);
        let mask_hidden = g.select_rows(hidden, rows);
        let labels = g.param(self.verbalizer.embeddings);
        let bias = g.param(self.verbalizer.bias);
        let scores = g.matmul_t(mask_hidden, labels);
        let logits = g.add_row(scores, bias);
        Forward {
            graph: g,
            logits,
            hidden: mask_hidden,
            t: self.vocabulary.len(),
        }
    }

    pub fn logits(&self, example: &MentionExample) -> Result<CoPredictionLogits> {
        let enc = self.encode(example)?;
        Ok(self.forward(&enc, None).logits())
    }

    /// Evaluation-mode co-prediction scores for one example.
    pub fn score(&self, example: &MentionExample) -> Result<CoPredictionScores> {
        Ok(self.logits(example)?.scores())
    }

    /// Evaluation-mode scores for many examples, computed in parallel and
    /// returned in input order.
    pub fn score_all(&self, examples: &[MentionExample]) -> Result<Vec<CoPredictionScores>> {
        examples.par_iter().map(|ex| self.score(ex)).collect()
    }

    /// Hidden vector at `[PMASK]`, for exporting representations.
    pub fn pmask_representation(&self, example: &MentionExample) -> Result<Vec<f64>> {
        let enc = self.encode(example)?;
        Ok(self.forward(&enc, None).mask_hidden().row(0).to_vec())
    }
}

impl CoPredictionModel<TinyBackbone> {
    /// Builds a seeded tiny model whose tokenizer covers `tokenizer_words`,
    /// the type path words and the prompt literals.
    pub fn tiny<'a>(
        vocabulary: Arc<TypeVocabulary>,
        tokenizer_words: impl IntoIterator<Item = &'a str>,
        backbone_config: TinyBackboneConfig,
        config: ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let type_ws: Vec<String> = vocabulary.paths().iter().flat_map(|p| type_words(p)).collect();
        let literal_ws = BELONGS_TO
            .split_whitespace()
            .chain(RATHER_THAN.split_whitespace());
        let words: Vec<String> = literal_ws
            .map(str::to_string)
            .chain(type_ws)
            .chain(tokenizer_words.into_iter().map(str::to_string))
            .collect();
        let tokenizer = WordTokenizer::build(words.iter().map(String::as_str));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = TinyBackbone::new(backbone_config, tokenizer, &mut store, &mut rng)?;
        Self::new(backbone, store, vocabulary, config, &mut rng)
    }

    /// Tiny model with a tokenizer built from every word in `datasets`.
    pub fn tiny_for(
        datasets: &[&Dataset],
        backbone_config: TinyBackboneConfig,
        config: ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let first = datasets
            .first()
            .ok_or_else(|| Error::invalid("datasets", "at least one dataset is required"))?;
        for ds in datasets {
            if *ds.vocabulary != *first.vocabulary {
                return Err(Error::VocabularyMismatch(format!(
                    "`{}` and `{}` use different type vocabularies",
                    first.split_name, ds.split_name
                )));
            }
        }
        let words = datasets
            .iter()
            .flat_map(|ds| ds.examples.iter())
            .flat_map(|ex| ex.context());
        Self::tiny(
            Arc::clone(&first.vocabulary),
            words,
            backbone_config,
            config,
            seed,
        )
    }
}

impl<B: Backbone + Clone> Clone for CoPredictionModel<B> {
    fn clone(&self) -> Self {
        Self {
            backbone: self.backbone.clone(),
            store: self.store.clone(),
            vocabulary: Arc::clone(&self.vocabulary),
            markers: self.markers.clone(),
            special: self.special,
            verbalizer: self.verbalizer,
            config: self.config.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelSet;

    fn vocab() -> Arc<TypeVocabulary> {
        Arc::new(TypeVocabulary::from_paths(["/person", "/organization/company/news", "/location"]).unwrap())
    }

    fn model(config: ModelConfig) -> CoPredictionModel {
        CoPredictionModel::tiny(
            vocab(),
            "wilson was appointed minister".split(' '),
            TinyBackboneConfig::default(),
            config,
            3,
        )
        .unwrap()
    }

    fn wilson() -> MentionExample {
        MentionExample::from_text("w", "", "Wilson", "was appointed minister", LabelSet::from([0]))
    }

    #[test]
    fn verbalizer_is_mean_of_type_word_embeddings() {
        let m = model(ModelConfig::default());
        let store = m.params();
        let tok = m.backbone().tokenizer();
        let emb = store.get(m.verbalizer().embeddings);
        let person = m.backbone().token_embedding(store, tok.lookup("person").unwrap());
        assert_eq!(emb.row(0), person.as_slice());
        let words = ["organization", "company", "news"];
        let rows: Vec<Vec<f64>> = words
            .iter()
            .map(|w| m.backbone().token_embedding(store, tok.lookup(w).unwrap()))
            .collect();
        for (c, ((a, b), d)) in rows[0].iter().zip(&rows[1]).zip(&rows[2]).enumerate() {
            let mean = (a + b + d) / 3.0;
            assert!((emb.get(1, c) - mean).abs() < 1e-15);
        }
        assert!(store.get(m.verbalizer().bias).data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn identical_type_words_give_identical_embeddings() {
        let vocab = Arc::new(TypeVocabulary::from_paths(["/a/b", "/b/a", "/a_b"]).unwrap());
        let m = CoPredictionModel::tiny(
            vocab,
            std::iter::empty(),
            TinyBackboneConfig::default(),
            ModelConfig::default(),
            0,
        )
        .unwrap();
        let emb = m.params().get(m.verbalizer().embeddings);
        assert_eq!(emb.row(0), emb.row(2));
        for c in 0..emb.cols() {
            assert!((emb.get(0, c) - emb.get(1, c)).abs() < 1e-15);
        }
    }

    #[test]
    fn untokenizable_type_is_an_error() {
        let vocab = TypeVocabulary::from_paths(["/person", "/zzz"]).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tok = WordTokenizer::build(["person"]);
        let bb = TinyBackbone::new(TinyBackboneConfig::default(), tok, &mut store, &mut rng).unwrap();
        match init_verbalizer(&vocab, &bb, &mut store) {
            Err(Error::EmptyTypeTokenization(t)) => assert_eq!(t, "/zzz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn masks_start_as_mask_embedding() {
        let m = model(ModelConfig::default());
        let store = m.params();
        let mask = m.backbone().mask_embedding(store);
        let sp = m.special_tokens();
        assert_eq!(store.get(sp.pmask).row(0), mask.as_slice());
        assert_eq!(store.get(sp.nmask).row(0), mask.as_slice());
        assert_eq!(store.get(sp.soft.unwrap()).rows(), 2);
    }

    #[test]
    fn zero_soft_tokens() {
        let m = model(ModelConfig {
            n_soft: 0,
            ..Default::default()
        });
        assert!(m.special_tokens().soft.is_none());
        let enc = m.encode(&wilson()).unwrap();
        // [CLS] + 4 context + mention + belongs to + PMASK + rather than + NMASK + [SEP]
        assert_eq!(enc.len(), 13);
        assert_eq!(enc.nmask(), Some(enc.pmask() + 3));
    }

    #[test]
    fn zero_hidden_and_bias_gives_half() {
        let m = model(ModelConfig::default());
        let mut m = m;
        let v = m.verbalizer();
        m.params_mut().get_mut(v.embeddings).data_mut().fill(0.0);
        let s = m.score(&wilson()).unwrap();
        assert!(s.p_pos.iter().chain(&s.p_neg).all(|&p| p == 0.5));
    }

    #[test]
    fn scores_are_in_unit_interval_and_deterministic() {
        let m = model(ModelConfig::default());
        let a = m.score(&wilson()).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.p_pos.iter().chain(&a.p_neg).all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(m.score(&wilson()).unwrap(), a);
    }

    #[test]
    fn standard_prompt_reports_complement() {
        let m = model(ModelConfig {
            n_soft: 2,
            style: PromptStyle::Standard,
        });
        let s = m.score(&wilson()).unwrap();
        for (p, n) in s.p_pos.iter().zip(&s.p_neg) {
            assert!((p + n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_keeps_mention_and_nearest_context() {
        let left: Vec<String> = (0..30).map(|i| format!("l{i}")).collect();
        let right: Vec<String> = (0..10).map(|i| format!("r{i}")).collect();
        let ex = MentionExample {
            id: "x".into(),
            left,
            mention: vec!["M".into()],
            right,
            labels: LabelSet::new(),
        };
        let fitted = fit_to_length(&ex, 2, PromptStyle::CoPrediction, 30).unwrap();
        // fixed = 2 + 2 + 2 + 6 = 12, budget 18
        assert_eq!(fitted.left.len() + fitted.right.len(), 18);
        assert_eq!(fitted.left.len(), 9);
        assert_eq!(fitted.left.last().unwrap(), "l29");
        assert_eq!(fitted.right.len(), 9);
        assert_eq!(fitted.right[0], "r0");

        let long = MentionExample {
            mention: vec!["M".into(); 12],
            ..ex.clone()
        };
        assert!(matches!(
            fit_to_length(&long, 2, PromptStyle::CoPrediction, 30),
            Err(Error::MentionTooLong { .. })
        ));
        let w = wilson();
        let short = fit_to_length(&w, 2, PromptStyle::CoPrediction, 64).unwrap();
        assert!(matches!(short, Cow::Borrowed(_)));
    }

    #[test]
    fn long_context_is_scored_after_truncation() {
        let m = model(ModelConfig::default());
        let words: Vec<String> = (0..200).map(|_| "was".to_string()).collect();
        let ex = MentionExample {
            id: "x".into(),
            left: words.clone(),
            mention: vec!["Wilson".into()],
            right: words,
            labels: LabelSet::new(),
        };
        let enc = m.encode(&ex).unwrap();
        assert_eq!(enc.len(), 64);
        assert!(m.score(&ex).is_ok());
    }
}
