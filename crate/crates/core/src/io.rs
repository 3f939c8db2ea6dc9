//! On-disk formats: tensors, weight bundles, vocabularies, phrase lists,
//! homophone lexicons, corpus manifests, graph dumps, and the run
//! configuration.
//!
//! Every loader validates before returning and reports malformations
//! with the offending byte offset or line number. Every save/load pair
//! is a bit-exact round trip.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::HomophoneLexicon;
use crate::error::{Error, Result};
use crate::graph::BiasGraph;
use crate::tensor::{BundleMeta, Mat, WeightBundle};
use crate::TokenId;

const TENSOR_MAGIC: &[u8; 5] = b"CTXT1";
const DTYPE_F64: u8 = 0x01;

/// Raw tensor: dims plus row-major little-endian f64 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn from_mat(m: &Mat) -> TensorData {
        TensorData {
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn to_mat(&self) -> Result<Mat> {
        match self.dims.as_slice() {
            [rows, cols] => Mat::from_vec(*rows, *cols, self.data.clone()),
            [len] => Mat::from_vec(1, *len, self.data.clone()),
            other => Err(Error::Contract(format!(
                "tensor of rank {} cannot become a matrix",
                other.len()
            ))),
        }
    }
}

fn fmt_err(format: &'static str, path: &Path, at: impl ToString, detail: impl ToString) -> Error {
    Error::Format {
        format,
        path: path.display().to_string(),
        at: at.to_string(),
        detail: detail.to_string(),
    }
}

pub fn save_tensor(path: &Path, tensor: &TensorData) -> Result<()> {
    let expected: usize = tensor.dims.iter().product();
    if expected != tensor.data.len() {
        return Err(Error::Contract(format!(
            "tensor payload {} does not match dims {:?}",
            tensor.data.len(),
            tensor.dims
        )));
    }
    let mut bytes = Vec::with_capacity(7 + 4 * tensor.dims.len() + 8 * tensor.data.len());
    bytes.extend_from_slice(TENSOR_MAGIC);
    bytes.push(DTYPE_F64);
    bytes.push(tensor.dims.len() as u8);
    for &d in &tensor.dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &tensor.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_tensor(path: &Path) -> Result<TensorData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let need = |at: usize, n: usize| -> Result<()> {
        if bytes.len() < at + n {
            Err(fmt_err(
                "tensor",
                path,
                format!("byte {at}"),
                format!("truncated: need {n} more bytes"),
            ))
        } else {
            Ok(())
        }
    };
    need(0, 7)?;
    if &bytes[0..5] != TENSOR_MAGIC {
        return Err(fmt_err("tensor", path, "byte 0", "bad magic, want CTXT1"));
    }
    if bytes[5] != DTYPE_F64 {
        return Err(fmt_err(
            "tensor",
            path,
            "byte 5",
            format!("unsupported dtype 0x{:02x}", bytes[5]),
        ));
    }
    let rank = bytes[6] as usize;
    need(7, 4 * rank)?;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 7 + 4 * i;
        dims.push(u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize);
    }
    let count: usize = dims.iter().product();
    let payload_at = 7 + 4 * rank;
    if bytes.len() != payload_at + 8 * count {
        return Err(fmt_err(
            "tensor",
            path,
            format!("byte {payload_at}"),
            format!(
                "payload is {} bytes, dims {:?} require {}",
                bytes.len() - payload_at,
                dims,
                8 * count
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let at = payload_at + 8 * i;
        data.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
    }
    Ok(TensorData { dims, data })
}

/// Writes a bundle as a directory: `meta.tsv`, `index.tsv`, and one
/// tensor file per parameter.
pub fn save_bundle(dir: &Path, bundle: &WeightBundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let meta = &bundle.meta;
    let meta_text = format!(
        "d_model\t{}\nattn_dim\t{}\nheads\t{}\nvocab\t{}\nconv_kernel\t{}\n",
        meta.d_model, meta.attn_dim, meta.heads, meta.vocab, meta.conv_kernel
    );
    fs::write(dir.join("meta.tsv"), meta_text)
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut index = String::new();
    for (name, mat) in bundle.iter() {
        let file = format!("{name}.ctxt");
        index.push_str(&format!("{name}\t{file}\t{}\t{}\n", mat.rows(), mat.cols()));
        save_tensor(&dir.join(&file), &TensorData::from_mat(mat))?;
    }
    fs::write(dir.join("index.tsv"), index).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn load_bundle(dir: &Path) -> Result<WeightBundle> {
    let meta_path = dir.join("meta.tsv");
    let mut fields: BTreeMap<String, usize> = BTreeMap::new();
    for (ln, line) in read_lines(&meta_path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('\t').ok_or_else(|| {
            fmt_err("bundle meta", &meta_path, format!("line {}", ln + 1), "want key<TAB>value")
        })?;
        let parsed: usize = value.parse().map_err(|_| {
            fmt_err(
                "bundle meta",
                &meta_path,
                format!("line {}", ln + 1),
                format!("bad integer `{value}`"),
            )
        })?;
        fields.insert(key.to_string(), parsed);
    }
    let want = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| fmt_err("bundle meta", &meta_path, "end", format!("missing key `{key}`")))
    };
    let meta = BundleMeta {
        d_model: want("d_model")?,
        attn_dim: want("attn_dim")?,
        heads: want("heads")?,
        vocab: want("vocab")?,
        conv_kernel: want("conv_kernel")?,
    };
    meta.validate()?;
    let mut bundle = WeightBundle::new(meta);
    let index_path = dir.join("index.tsv");
    for (ln, line) in read_lines(&index_path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(fmt_err(
                "bundle index",
                &index_path,
                format!("line {}", ln + 1),
                "want name<TAB>file<TAB>rows<TAB>cols",
            ));
        }
        let rows: usize = parts[2].parse().map_err(|_| {
            fmt_err("bundle index", &index_path, format!("line {}", ln + 1), "bad rows")
        })?;
        let cols: usize = parts[3].parse().map_err(|_| {
            fmt_err("bundle index", &index_path, format!("line {}", ln + 1), "bad cols")
        })?;
        let tensor = load_tensor(&dir.join(parts[1]))?;
        let mat = tensor.to_mat()?;
        if mat.shape() != (rows, cols) {
            return Err(fmt_err(
                "bundle index",
                &index_path,
                format!("line {}", ln + 1),
                format!(
                    "{} declared {rows}x{cols} but file holds {}x{}",
                    parts[0],
                    mat.rows(),
                    mat.cols()
                ),
            ));
        }
        bundle.insert(parts[0], mat);
    }
    Ok(bundle)
}

/// Token inventory; line number = token id, line 0 is the blank.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
    max_token_chars: usize,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Vocab> {
        let mut index = BTreeMap::new();
        let mut max_token_chars = 0;
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Contract(format!("vocab token {i} is empty")));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Contract(format!("duplicate vocab token `{tok}`")));
            }
            if i > 0 {
                max_token_chars = max_token_chars.max(tok.chars().count());
            }
        }
        if tokens.is_empty() {
            return Err(Error::Contract("vocab has no blank line 0".into()));
        }
        Ok(Vocab {
            tokens,
            index,
            max_token_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank(&self) -> TokenId {
        0
    }

    pub fn token_text(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Contract(format!("token id {id} outside vocab")))
    }

    pub fn id_of(&self, text: &str) -> Option<TokenId> {
        self.index.get(text).copied()
    }

    /// Greedy longest-match tokenization over non-blank tokens.
    /// Returns the ids, or the char offset of the first unmatchable text.
    pub fn tokenize_greedy(&self, line: &str) -> std::result::Result<Vec<TokenId>, usize> {
        let chars: Vec<char> = line.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let mut matched = None;
            let top = self.max_token_chars.min(chars.len() - pos);
            for len in (1..=top).rev() {
                let candidate: String = chars[pos..pos + len].iter().collect();
                if let Some(id) = self.id_of(&candidate) {
                    if id != 0 {
                        matched = Some((id, len));
                        break;
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => return Err(pos),
            }
        }
        Ok(out)
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &t in tokens {
            out.push_str(self.token_text(t)?);
        }
        Ok(out)
    }
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut text = String::new();
    for i in 0..vocab.len() {
        text.push_str(vocab.token_text(i as TokenId)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let lines = read_lines(path)?;
    Vocab::new(lines).map_err(|e| fmt_err("vocab", path, "-", e))
}

/// One phrase per line, tokenized greedily against the vocab.
pub fn load_phrases(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<TokenId>>> {
    let mut phrases = Vec::new();
    for (ln, line) in read_lines(path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        match vocab.tokenize_greedy(line) {
            Ok(tokens) => phrases.push(tokens),
            Err(offset) => {
                let tail: String = line.chars().skip(offset).take(8).collect();
                return Err(fmt_err(
                    "phrase list",
                    path,
                    format!("line {}", ln + 1),
                    format!("no vocab token matches `{tail}` (char {offset})"),
                ));
            }
        }
    }
    Ok(phrases)
}

pub fn save_phrases(path: &Path, phrases: &[Vec<TokenId>], vocab: &Vocab) -> Result<()> {
    let mut text = String::new();
    for p in phrases {
        text.push_str(&vocab.detokenize(p)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// `token<TAB>homophone[,homophone...]`, all token texts from the vocab.
pub fn load_lexicon(path: &Path, vocab: &Vocab) -> Result<HomophoneLexicon> {
    let mut map: BTreeMap<TokenId, Vec<TokenId>> = BTreeMap::new();
    for (ln, line) in read_lines(path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let at = || format!("line {}", ln + 1);
        let (tok_text, alts_text) = line
            .split_once('\t')
            .ok_or_else(|| fmt_err("lexicon", path, at(), "want token<TAB>homophones"))?;
        let tok = vocab
            .id_of(tok_text)
            .ok_or_else(|| fmt_err("lexicon", path, at(), format!("unknown token `{tok_text}`")))?;
        let mut alts = Vec::new();
        for alt in alts_text.split(',') {
            let id = vocab
                .id_of(alt)
                .ok_or_else(|| fmt_err("lexicon", path, at(), format!("unknown token `{alt}`")))?;
            alts.push(id);
        }
        map.insert(tok, alts);
    }
    HomophoneLexicon::new(map)
}

pub fn save_lexicon(path: &Path, lexicon: &HomophoneLexicon, vocab: &Vocab) -> Result<()> {
    let mut text = String::new();
    for (tok, alts) in lexicon.iter() {
        let alt_text: Vec<&str> = alts
            .iter()
            .map(|&a| vocab.token_text(a))
            .collect::<Result<_>>()?;
        text.push_str(&format!(
            "{}\t{}\n",
            vocab.token_text(tok)?,
            alt_text.join(",")
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Corpus manifest: shared artifacts plus one entry per utterance.
/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub vocab: String,
    pub weights: String,
    pub list: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<String>,
    pub utterances: Vec<ManifestUtterance>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestUtterance {
    pub id: String,
    /// Reference transcript as vocab text.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<String>,
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Contract(format!("manifest serialization: {e}")))?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(json.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| {
        fmt_err(
            "manifest",
            path,
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

/// Reference/hypothesis transcript file: `id<TAB>text` per line.
pub fn load_transcripts(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, line) in read_lines(path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| {
            fmt_err(
                "transcripts",
                path,
                format!("line {}", ln + 1),
                "want id<TAB>text",
            )
        })?;
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

pub fn save_transcripts(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (id, line) in entries {
        text.push_str(&format!("{id}\t{line}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the deterministic graph listing.
pub fn save_graph_dump(path: &Path, graph: &BiasGraph) -> Result<()> {
    fs::write(path, graph.dump_text()).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reconstructs a graph from its listing by rebuilding from the phrase
/// section and verifying the rest of the dump matches line for line.
pub fn load_graph_dump(path: &Path) -> Result<BiasGraph> {
    let lines = read_lines(path)?;
    let header = lines
        .first()
        .ok_or_else(|| fmt_err("graph dump", path, "line 1", "empty file"))?;
    let mut score = None;
    let mut blank = None;
    for field in header.split_whitespace().skip(1) {
        if let Some(v) = field.strip_prefix("score=") {
            score = v.parse::<f64>().ok();
        }
        if let Some(v) = field.strip_prefix("blank=") {
            blank = v.parse::<TokenId>().ok();
        }
    }
    let (score, blank) = match (score, blank) {
        (Some(s), Some(b)) => (s, b),
        _ => return Err(fmt_err("graph dump", path, "line 1", "bad header")),
    };
    let mut phrases = Vec::new();
    for (ln, line) in lines.iter().enumerate() {
        if let Some(rest) = line.strip_prefix("phrase ") {
            let mut parts = rest.splitn(2, ' ');
            let _id = parts.next();
            let tokens_text = parts.next().ok_or_else(|| {
                fmt_err("graph dump", path, format!("line {}", ln + 1), "bad phrase line")
            })?;
            let tokens: std::result::Result<Vec<TokenId>, _> =
                tokens_text.split(',').map(str::parse).collect();
            phrases.push(tokens.map_err(|_| {
                fmt_err("graph dump", path, format!("line {}", ln + 1), "bad token id")
            })?);
        }
    }
    let graph = BiasGraph::build(&phrases, score, blank)?;
    let rebuilt = graph.dump_text();
    let original = lines.join("\n") + "\n";
    if rebuilt != original {
        return Err(fmt_err(
            "graph dump",
            path,
            "-",
            "listing does not match the automaton its phrases build",
        ));
    }
    Ok(graph)
}

fn default_mode() -> String {
    "baseline".to_string()
}

/// Every tunable of a run with its documented default. Unknown keys are
/// rejected, so an accepted config fully determines a run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Corpus manifest path (the usual entry point).
    pub manifest: Option<PathBuf>,
    /// Single-utterance tensor inputs, as an alternative to a manifest.
    pub posterior: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub list: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Decode mode: `baseline`, or `+`-joined methods out of
    /// `implicit`, `explicit`, `sf` (e.g. `implicit+sf`).
    pub mode: String,
    pub beam: usize,
    pub ctx_beam: usize,
    pub bias_score: f64,
    pub graph_score: f64,
    pub q: f64,
    pub p: f64,
    pub window_factor: f64,
    pub stage2: bool,
    /// Per-method weights; unset means the cascade-size default
    /// (1.0 alone, 0.75 for two methods, 0.5 for three).
    pub implicit_weight: Option<f64>,
    pub explicit_weight: Option<f64>,
    pub sf_weight: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub smoothing_eps: f64,
    pub sample_prob: f64,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            posterior: None,
            embeddings: None,
            weights: None,
            vocab: None,
            list: None,
            lexicon: None,
            mode: default_mode(),
            beam: 10,
            ctx_beam: 8,
            bias_score: 3.0,
            graph_score: 1.0,
            q: -6.0,
            p: -12.0,
            window_factor: 1.5,
            stage2: true,
            implicit_weight: None,
            explicit_weight: None,
            sf_weight: None,
            lambda1: 0.3,
            lambda2: 0.2,
            smoothing_eps: 0.1,
            sample_prob: 0.1,
            seed: 0,
            jobs: 1,
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| {
        let at = e
            .span()
            .map(|s| format!("byte {}", s.start))
            .unwrap_or_else(|| "-".to_string());
        fmt_err("config", path, at, e.message())
    })
}

pub fn save_config(path: &Path, config: &RunConfig) -> Result<()> {
    let text = toml::to_string_pretty(config)
        .map_err(|e| Error::Contract(format!("config serialization: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
