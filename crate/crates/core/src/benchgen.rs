// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic paired yes/no benchmarks.
//!
//! The "image" is a bag of discrete object tokens. Every prompt is
//!
//! ```text
//! [system preamble] [image objects ...] [user marker] [query kind] [subject]
//! ```
//!
//! The subject comes last, so the answer is read off the position holding
//! the queried object or category.
//!
//! Two task families share this template:
//!
//! - **Fine**: "is object X in the image?" The no-prompt asks about an absent
//!   object from the same category as a present one (adversarial), or about
//!   any absent object (random).
//! - **Coarse**: "is category C the majority?" Answerable from category
//!   counts alone.
//!
//! Paired datasets hold minimal pairs differing only in the subject slot.
//! Training sets are unpaired with a configurable yes fraction.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{Answer, DecoderConfig};
use crate::error::{Error, Result};
use crate::modality::{Modality, ModalityLayout};

/// Tokens of the text span: user marker, query kind, subject.
pub const TEXT_LEN: usize = 3;
/// Image tokens per prompt unless configured otherwise.
pub const DEFAULT_IMAGE_LEN: usize = 5;
/// Training-set yes fraction used for bias induction.
pub const DEFAULT_BIASED_YES_FRACTION: f64 = 0.8;

/// Token-id layout of the synthetic vocabulary.
///
/// Ids are assigned in this order: system preamble (id 0 is BOS), yes, no,
/// present-query, majority-query, user marker, one token per category,
/// then `objects_per_category` object tokens per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSchema {
    pub categories: usize,
    pub objects_per_category: usize,
    pub system_len: usize,
}

impl Default for VocabSchema {
    fn default() -> Self {
        Self {
            categories: 6,
            objects_per_category: 6,
            system_len: 4,
        }
    }
}

impl VocabSchema {
    pub fn validate(&self) -> Result<()> {
        if self.system_len == 0 {
            return Err(Error::Schema("system preamble needs at least one token".into()));
        }
        if self.categories < 2 {
            return Err(Error::Schema("need at least two categories".into()));
        }
        if self.objects_per_category < 2 {
            return Err(Error::Schema("need at least two objects per category".into()));
        }
        Ok(())
    }

    pub fn system_tokens(&self) -> Vec<u32> {
        (0..self.system_len as u32).collect()
    }

    pub fn yes_token(&self) -> u32 {
        self.system_len as u32
    }

    pub fn no_token(&self) -> u32 {
        self.system_len as u32 + 1
    }

    pub fn present_query_token(&self) -> u32 {
        self.system_len as u32 + 2
    }

    pub fn majority_query_token(&self) -> u32 {
        self.system_len as u32 + 3
    }

    pub fn user_marker_token(&self) -> u32 {
        self.system_len as u32 + 4
    }

    fn category_base(&self) -> u32 {
        self.system_len as u32 + 5
    }

    fn object_base(&self) -> u32 {
        self.category_base() + self.categories as u32
    }

    pub fn category_token(&self, category: usize) -> u32 {
        self.category_base() + category as u32
    }

    pub fn object_count(&self) -> usize {
        self.categories * self.objects_per_category
    }

    /// Token of object `index` in `0..object_count()`.
    pub fn object_token(&self, index: usize) -> u32 {
        self.object_base() + index as u32
    }

    pub fn vocab_size(&self) -> usize {
        self.object_base() as usize + self.object_count()
    }

    pub fn is_object(&self, token: u32) -> bool {
        (self.object_base()..self.vocab_size() as u32).contains(&token)
    }

    /// Category of an object token.
    pub fn category_of(&self, token: u32) -> Option<usize> {
        self.is_object(token)
            .then(|| (token - self.object_base()) as usize / self.objects_per_category)
    }

    /// Category index encoded by a category token.
    pub fn category_of_category_token(&self, token: u32) -> Option<usize> {
        let base = self.category_base();
        (base..base + self.categories as u32)
            .contains(&token)
            .then(|| (token - base) as usize)
    }

    /// Decoder config whose vocabulary and answer tokens match this schema.
    pub fn decoder_config(
        &self,
        layer_count: usize,
        head_count: usize,
        model_dim: usize,
        feedforward_dim: usize,
        max_seq_len: usize,
    ) -> DecoderConfig {
        DecoderConfig {
            layer_count,
            head_count,
            model_dim,
            feedforward_dim,
            vocab_size: self.vocab_size(),
            max_seq_len,
            yes_token_id: self.yes_token(),
            no_token_id: self.no_token(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Fine,
    Coarse,
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskFamily::Fine => "fine",
            TaskFamily::Coarse => "coarse",
        })
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(TaskFamily::Fine),
            "coarse" => Ok(TaskFamily::Coarse),
            other => Err(Error::Format(format!("unknown task family `{other}`"))),
        }
    }
}

/// How fine-task no-prompts pick their absent object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distractor {
    /// Absent object sharing a category with a present one.
    #[default]
    Adversarial,
    /// Any absent object.
    Random,
}

/// One labelled prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub id: usize,
    pub pair_id: Option<usize>,
    pub family: TaskFamily,
    pub label: Answer,
    pub tokens: Vec<u32>,
    pub layout: ModalityLayout,
}

impl Prompt {
    pub fn image_tokens(&self) -> &[u32] {
        &self.tokens[self.layout.span(Modality::Image)]
    }

    pub fn text_tokens(&self) -> &[u32] {
        &self.tokens[self.layout.span(Modality::Text)]
    }
}

/// A minimal yes/no pair borrowed from a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct PromptPair<'a> {
    pub pair_id: usize,
    pub family: TaskFamily,
    pub yes: &'a Prompt,
    pub no: &'a Prompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Paired,
    Training,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Paired => "paired",
            DatasetKind::Training => "training",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub schema: VocabSchema,
    pub seed: u64,
    /// Configured yes fraction: exactly 0.5 for paired sets.
    pub yes_fraction: f64,
    pub prompts: Vec<Prompt>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn empirical_yes_fraction(&self) -> f64 {
        let yes = self.prompts.iter().filter(|p| p.label.is_yes()).count();
        yes as f64 / self.prompts.len().max(1) as f64
    }

    /// Groups prompts into minimal pairs, ordered by pair id.
    pub fn pairs(&self) -> Result<Vec<PromptPair<'_>>> {
        let mut groups: BTreeMap<usize, Vec<&Prompt>> = BTreeMap::new();
        for p in &self.prompts {
            let id = p
                .pair_id
                .ok_or_else(|| Error::Pairing(format!("prompt {} has no pair id", p.id)))?;
            groups.entry(id).or_default().push(p);
        }
        groups
            .into_iter()
            .map(|(pair_id, members)| match members.as_slice() {
                [a, b] if a.label != b.label => {
                    let (yes, no) = if a.label.is_yes() { (*a, *b) } else { (*b, *a) };
                    Ok(PromptPair {
                        pair_id,
                        family: yes.family,
                        yes,
                        no,
                    })
                }
                _ => Err(Error::Pairing(format!(
                    "pair {pair_id} needs exactly one yes and one no prompt"
                ))),
            })
            .collect()
    }
}

/// Recomputes a prompt's ground truth from its raw tokens.
///
/// Independent of the generators: it only scans the image span for the
/// queried object, or counts categories for majority queries.
pub fn check_label(schema: &VocabSchema, prompt: &Prompt) -> Result<Answer> {
    let text = prompt.text_tokens();
    let [marker, kind, subject] = text else {
        return Err(Error::Format(format!("prompt {} text span is not 3 tokens", prompt.id)));
    };
    if *marker != schema.user_marker_token() {
        return Err(Error::Format(format!("prompt {} lacks the user marker", prompt.id)));
    }
    let image = prompt.image_tokens();
    if *kind == schema.present_query_token() {
        Ok(Answer::from_bool(image.iter().any(|t| t == subject)))
    } else if *kind == schema.majority_query_token() {
        let category = schema
            .category_of_category_token(*subject)
            .ok_or_else(|| Error::Format(format!("prompt {} subject is not a category", prompt.id)))?;
        let mut count = 0;
        for &t in image {
            if schema.category_of(t) == Some(category) {
                count += 1;
            }
        }
        Ok(Answer::from_bool(2 * count > image.len()))
    } else {
        Err(Error::Format(format!("prompt {} has an unknown query token", prompt.id)))
    }
}

struct Generator<'a> {
    schema: &'a VocabSchema,
    image_len: usize,
    distractor: Distractor,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn layout(&self) -> ModalityLayout {
        ModalityLayout::new(self.schema.system_len, self.image_len, TEXT_LEN).expect("non-empty spans")
    }

    fn prompt(&self, id: usize, pair_id: Option<usize>, family: TaskFamily, label: Answer, image: &[u32], query: u32, subject: u32) -> Prompt {
        let mut tokens = self.schema.system_tokens();
        tokens.extend_from_slice(image);
        tokens.extend([self.schema.user_marker_token(), query, subject]);
        Prompt {
            id,
            pair_id,
            family,
            label,
            tokens,
            layout: self.layout(),
        }
    }

    /// Image bag of distinct objects plus a present and an absent subject.
    fn fine_scene(&mut self) -> (Vec<u32>, u32, u32) {
        let schema = self.schema;
        let mut objects: Vec<usize> = (0..schema.object_count()).collect();
        let (bag, _) = objects.partial_shuffle(&mut self.rng, self.image_len);
        let bag: Vec<usize> = bag.to_vec();
        let present = *bag.choose(&mut self.rng).expect("image_len >= 2");
        let mut absent_pool: Vec<usize> = match self.distractor {
            Distractor::Adversarial => {
                let mut categories: Vec<usize> = bag.iter().map(|&o| o / schema.objects_per_category).collect();
                categories.sort_unstable();
                categories.dedup();
                categories
                    .iter()
                    .flat_map(|&c| c * schema.objects_per_category..(c + 1) * schema.objects_per_category)
                    .filter(|o| !bag.contains(o))
                    .collect()
            }
            Distractor::Random => (0..schema.object_count()).filter(|o| !bag.contains(o)).collect(),
        };
        if absent_pool.is_empty() {
            // Every present category is fully in the bag.
            absent_pool = (0..schema.object_count()).filter(|o| !bag.contains(o)).collect();
        }
        let absent = *absent_pool.choose(&mut self.rng).expect("image_len < object_count");
        let image = bag.iter().map(|&o| schema.object_token(o)).collect();
        (image, schema.object_token(present), schema.object_token(absent))
    }

    /// Image bag with a strict-majority category, plus that category and a
    /// minority or absent one.
    fn coarse_scene(&mut self) -> (Vec<u32>, u32, u32) {
        let schema = self.schema;
        let n = self.image_len;
        let majority = self.rng.gen_range(0..schema.categories);
        let count = self.rng.gen_range((n + 1) / 2..=n);
        let mut image = Vec::with_capacity(n);
        for i in 0..n {
            let category = if i < count {
                majority
            } else {
                let c = self.rng.gen_range(0..schema.categories - 1);
                if c >= majority {
                    c + 1
                } else {
                    c
                }
            };
            let object = category * schema.objects_per_category + self.rng.gen_range(0..schema.objects_per_category);
            image.push(schema.object_token(object));
        }
        image.shuffle(&mut self.rng);
        let other = {
            let c = self.rng.gen_range(0..schema.categories - 1);
            if c >= majority {
                c + 1
            } else {
                c
            }
        };
        (image, schema.category_token(majority), schema.category_token(other))
    }

    fn scene(&mut self, family: TaskFamily) -> (Vec<u32>, u32, u32, u32) {
        match family {
            TaskFamily::Fine => {
                let (img, yes, no) = self.fine_scene();
                (img, self.schema.present_query_token(), yes, no)
            }
            TaskFamily::Coarse => {
                let (img, yes, no) = self.coarse_scene();
                (img, self.schema.majority_query_token(), yes, no)
            }
        }
    }
}

fn check_family(schema: &VocabSchema, family: TaskFamily, image_len: usize) -> Result<()> {
    schema.validate()?;
    match family {
        TaskFamily::Fine => {
            if image_len < 2 {
                return Err(Error::Schema(format!("fine task needs image_len >= 2, got {image_len}")));
            }
            if image_len >= schema.object_count() {
                return Err(Error::Schema(format!(
                    "{} objects cannot fill an image of {image_len} with distractors left over",
                    schema.object_count()
                )));
            }
        }
        TaskFamily::Coarse => {
            if image_len % 2 == 0 {
                return Err(Error::Schema(format!("coarse task needs odd image_len, got {image_len}")));
            }
        }
    }
    Ok(())
}

fn paired(schema: &VocabSchema, family: TaskFamily, pair_count: usize, image_len: usize, distractor: Distractor, seed: u64) -> Result<Dataset> {
    check_family(schema, family, image_len)?;
    let mut gen = Generator {
        schema,
        image_len,
        distractor,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut prompts = Vec::with_capacity(2 * pair_count);
    for pair in 0..pair_count {
        let (image, query, yes_subject, no_subject) = gen.scene(family);
        prompts.push(gen.prompt(2 * pair, Some(pair), family, Answer::Yes, &image, query, yes_subject));
        prompts.push(gen.prompt(2 * pair + 1, Some(pair), family, Answer::No, &image, query, no_subject));
    }
    Ok(Dataset {
        kind: DatasetKind::Paired,
        schema: *schema,
        seed,
        yes_fraction: 0.5,
        prompts,
    })
}

/// Paired object-presence task with adversarial distractors.
pub fn generate_fine_task(schema: &VocabSchema, pair_count: usize, image_len: usize, seed: u64) -> Result<Dataset> {
    paired(schema, TaskFamily::Fine, pair_count, image_len, Distractor::Adversarial, seed)
}

/// Paired object-presence task with a chosen distractor policy.
pub fn generate_fine_task_with(schema: &VocabSchema, pair_count: usize, image_len: usize, distractor: Distractor, seed: u64) -> Result<Dataset> {
    paired(schema, TaskFamily::Fine, pair_count, image_len, distractor, seed)
}

/// Paired majority-category task.
pub fn generate_coarse_task(schema: &VocabSchema, pair_count: usize, image_len: usize, seed: u64) -> Result<Dataset> {
    paired(schema, TaskFamily::Coarse, pair_count, image_len, Distractor::default(), seed)
}

/// Options for [`generate_training_set`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSetSpec {
    pub size: usize,
    pub yes_fraction: f64,
    /// Fraction of fine-task prompts; the rest are coarse.
    pub task_mix: f64,
    pub image_len: usize,
    pub distractor: Distractor,
}

impl Default for TrainingSetSpec {
    fn default() -> Self {
        Self {
            size: 12_000,
            yes_fraction: DEFAULT_BIASED_YES_FRACTION,
            task_mix: 1.0,
            image_len: DEFAULT_IMAGE_LEN,
            distractor: Distractor::Adversarial,
        }
    }
}

/// Unpaired labelled prompts with exactly `round(size * yes_fraction)` yes
/// labels and `round(size * task_mix)` fine-task prompts, in shuffled order.
pub fn generate_training_set(schema: &VocabSchema, spec: &TrainingSetSpec, seed: u64) -> Result<Dataset> {
    if !(spec.yes_fraction > 0.0 && spec.yes_fraction < 1.0) {
        return Err(Error::Config(format!("yes_fraction {} outside (0, 1)", spec.yes_fraction)));
    }
    if !(0.0..=1.0).contains(&spec.task_mix) {
        return Err(Error::Config(format!("task_mix {} outside [0, 1]", spec.task_mix)));
    }
    if spec.size < 10 {
        return Err(Error::Config(format!("training set size {} below 10", spec.size)));
    }
    let fine_count = (spec.size as f64 * spec.task_mix).round() as usize;
    if fine_count > 0 {
        check_family(schema, TaskFamily::Fine, spec.image_len)?;
    }
    if fine_count < spec.size {
        check_family(schema, TaskFamily::Coarse, spec.image_len)?;
    }

    let mut gen = Generator {
        schema,
        image_len: spec.image_len,
        distractor: spec.distractor,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let yes_count = (spec.size as f64 * spec.yes_fraction).round() as usize;
    let mut labels: Vec<bool> = (0..spec.size).map(|i| i < yes_count).collect();
    let mut families: Vec<TaskFamily> = (0..spec.size)
        .map(|i| if i < fine_count { TaskFamily::Fine } else { TaskFamily::Coarse })
        .collect();
    labels.shuffle(&mut gen.rng);
    families.shuffle(&mut gen.rng);

    let prompts = labels
        .iter()
        .zip(&families)
        .enumerate()
        .map(|(id, (&yes, &family))| {
            let (image, query, yes_subject, no_subject) = gen.scene(family);
            let subject = if yes { yes_subject } else { no_subject };
            gen.prompt(id, None, family, Answer::from_bool(yes), &image, query, subject)
        })
        .collect();
    Ok(Dataset {
        kind: DatasetKind::Training,
        schema: *schema,
        seed,
        yes_fraction: spec.yes_fraction,
        prompts,
    })
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

const FILE_HEADER: &str = "# modality-lab dataset v1";

/// Renders the line-based dataset format:
///
/// ```text
/// # modality-lab dataset v1
/// @dataset kind=<paired|training> seed=<u64> yes_fraction=<f64>
/// @schema categories=<n> objects_per_category=<n> system_len=<n>
/// <prompt_id>\t<pair_id|->\t<fine|coarse>\t<yes|no>\t<sys>,<img>,<txt>\t<token ids, space separated>
/// ```
pub fn encode_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    let s = &dataset.schema;
    writeln!(out, "{FILE_HEADER}").unwrap();
    writeln!(
        out,
        "@dataset kind={} seed={} yes_fraction={}",
        dataset.kind, dataset.seed, dataset.yes_fraction
    )
    .unwrap();
    writeln!(
        out,
        "@schema categories={} objects_per_category={} system_len={}",
        s.categories, s.objects_per_category, s.system_len
    )
    .unwrap();
    for p in &dataset.prompts {
        let pair = p.pair_id.map_or_else(|| "-".to_string(), |id| id.to_string());
        let [sl, il, tl] = p.layout.lens();
        let tokens: Vec<String> = p.tokens.iter().map(ToString::to_string).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{},{},{}\t{}",
            p.id,
            pair,
            p.family,
            p.label,
            sl,
            il,
            tl,
            tokens.join(" ")
        )
        .unwrap();
    }
    out
}

fn key_values<'a>(line: &'a str, tag: &str) -> Result<BTreeMap<&'a str, &'a str>> {
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| Error::Format(format!("expected `{tag}` line, got `{line}`")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed field `{kv}`")))
        })
        .collect()
}

fn field<T: FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Format(format!("missing field `{key}`")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad value for `{key}`")))
}

fn parse_num<T: FromStr>(s: &str, what: &str, line_no: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {line_no}: bad {what} `{s}`")))
}

pub fn decode_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    if lines.next() != Some(FILE_HEADER) {
        return Err(Error::Format("missing dataset header".into()));
    }
    let meta = key_values(lines.next().unwrap_or_default(), "@dataset")?;
    let kind = match meta.get("kind").copied() {
        Some("paired") => DatasetKind::Paired,
        Some("training") => DatasetKind::Training,
        other => return Err(Error::Format(format!("bad dataset kind {other:?}"))),
    };
    let schema_kv = key_values(lines.next().unwrap_or_default(), "@schema")?;
    let schema = VocabSchema {
        categories: field(&schema_kv, "categories")?,
        objects_per_category: field(&schema_kv, "objects_per_category")?,
        system_len: field(&schema_kv, "system_len")?,
    };
    schema.validate()?;

    let mut prompts = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 4;
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, pair, family, label, spans, tokens] = cols.as_slice() else {
            return Err(Error::Format(format!("line {line_no}: expected 6 tab-separated fields")));
        };
        let lens: Vec<usize> = spans
            .split(',')
            .map(|s| parse_num(s, "span length", line_no))
            .collect::<Result<_>>()?;
        let [sl, il, tl] = lens.as_slice() else {
            return Err(Error::Format(format!("line {line_no}: expected 3 span lengths")));
        };
        let layout = ModalityLayout::new(*sl, *il, *tl)
            .map_err(|e| Error::Format(format!("line {line_no}: {e}")))?;
        let tokens: Vec<u32> = tokens
            .split(' ')
            .map(|t| parse_num(t, "token", line_no))
            .collect::<Result<_>>()?;
        if tokens.len() != layout.prompt_len() {
            return Err(Error::Format(format!("line {line_no}: token count does not match spans")));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= schema.vocab_size()) {
            return Err(Error::Format(format!("line {line_no}: token {bad} outside vocabulary")));
        }
        prompts.push(Prompt {
            id: parse_num(id, "prompt id", line_no)?,
            pair_id: match *pair {
                "-" => None,
                p => Some(parse_num(p, "pair id", line_no)?),
            },
            family: family.parse()?,
            label: label.parse()?,
            tokens,
            layout,
        });
    }
    Ok(Dataset {
        kind,
        schema,
        seed: field(&meta, "seed")?,
        yes_fraction: field(&meta, "yes_fraction")?,
        prompts,
    })
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dataset(dataset)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&text)
}
