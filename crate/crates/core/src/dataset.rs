//! Offline reward datasets: contexts, their sequences, and k-dimensional
//! reward vectors, plus the CSV schema used to store them.
//!
//! The CSV layout is `context_id,sequence,<objective_1>,...,<objective_k>`
//! with a header row. Sequences are space-free strings over a declared
//! alphabet. Rows are grouped by `context_id` in order of first appearance;
//! file order is preserved within a group.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

/// The 20 canonical amino-acid letters.
pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";

/// Ordered token alphabet. Letters occupy ids `0..n`; EOS is `n` and BOS is `n + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    alphabet: Vec<char>,
}

impl Vocabulary {
    pub fn new<I: IntoIterator<Item = char>>(letters: I) -> Result<Self> {
        let alphabet: Vec<char> = letters.into_iter().collect();
        for (i, c) in alphabet.iter().enumerate() {
            if c.is_whitespace() || *c == ',' || *c == '"' {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary letter {c:?} is not allowed"
                )));
            }
            if alphabet[..i].contains(c) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary letter {c:?}"
                )));
            }
        }
        Ok(Self { alphabet })
    }

    pub fn amino_acids() -> Self {
        Self {
            alphabet: AMINO_ACIDS.chars().collect(),
        }
    }

    /// Number of sequence letters (excludes the reserved EOS/BOS ids).
    pub fn n_letters(&self) -> usize {
        self.alphabet.len()
    }

    /// Letters plus the reserved EOS and BOS tokens.
    pub fn size(&self) -> usize {
        self.alphabet.len() + 2
    }

    pub fn eos(&self) -> Token {
        self.alphabet.len() as Token
    }

    pub fn bos(&self) -> Token {
        self.alphabet.len() as Token + 1
    }

    pub fn letters(&self) -> &[char] {
        &self.alphabet
    }

    pub fn encode(&self, s: &str) -> Result<Vec<Token>> {
        s.chars()
            .map(|c| {
                self.alphabet
                    .iter()
                    .position(|&a| a == c)
                    .map(|p| p as Token)
                    .ok_or_else(|| Error::InvalidArgument(format!("letter {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|&t| self.alphabet.get(t as usize).copied().unwrap_or('?'))
            .collect()
    }

    pub fn alphabet_string(&self) -> String {
        self.alphabet.iter().collect()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::amino_acids()
    }
}

/// One sequence and its raw reward vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub sequence: Vec<Token>,
    pub rewards: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextGroup {
    pub context_id: String,
    pub prompt: Vec<Token>,
    pub items: Vec<Item>,
}

impl ContextGroup {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Values of objective `i` across the items of this group.
    pub fn objective(&self, i: usize) -> Vec<f64> {
        self.items.iter().map(|it| it.rewards[i]).collect()
    }
}

/// Validated offline corpus of contexts with k-dimensional rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardDataset {
    objectives: Vec<String>,
    vocab: Vocabulary,
    groups: Vec<ContextGroup>,
}

impl RewardDataset {
    pub fn new(objectives: Vec<String>, vocab: Vocabulary, groups: Vec<ContextGroup>) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::Dataset("at least one objective is required".into()));
        }
        if groups.is_empty() {
            return Err(Error::Dataset("dataset has no contexts".into()));
        }
        let k = objectives.len();
        let letters = vocab.n_letters();
        let mut seen = HashMap::new();
        for (g, group) in groups.iter().enumerate() {
            if seen.insert(group.context_id.as_str(), g).is_some() {
                return Err(Error::Dataset(format!(
                    "duplicate context id `{}`",
                    group.context_id
                )));
            }
            if group.items.is_empty() {
                return Err(Error::Dataset(format!(
                    "context `{}` has no items",
                    group.context_id
                )));
            }
            check_tokens(&group.prompt, letters)?;
            for item in &group.items {
                if item.sequence.is_empty() {
                    return Err(Error::Dataset(format!(
                        "empty sequence in context `{}`",
                        group.context_id
                    )));
                }
                check_tokens(&item.sequence, letters)?;
                if item.rewards.len() != k {
                    return Err(Error::Dataset(format!(
                        "reward vector of length {} in context `{}`, expected {k}",
                        item.rewards.len(),
                        group.context_id
                    )));
                }
                if item.rewards.iter().any(|r| !r.is_finite()) {
                    return Err(Error::Dataset(format!(
                        "non-finite reward in context `{}`",
                        group.context_id
                    )));
                }
            }
        }
        Ok(Self {
            objectives,
            vocab,
            groups,
        })
    }

    pub fn objectives(&self) -> &[String] {
        &self.objectives
    }

    /// Number of objectives.
    pub fn k(&self) -> usize {
        self.objectives.len()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn groups(&self) -> &[ContextGroup] {
        &self.groups
    }

    pub fn group(&self, index: usize) -> Option<&ContextGroup> {
        self.groups.get(index)
    }

    pub fn group_index(&self, context_id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.context_id == context_id)
    }

    pub fn n_items(&self) -> usize {
        self.groups.iter().map(|g| g.items.len()).sum()
    }

    pub fn max_sequence_len(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| g.items.iter().map(|it| it.sequence.len()))
            .max()
            .unwrap_or(0)
    }

    /// Iterator over `(group index, item index, item)`.
    pub fn items(&self) -> impl Iterator<Item = (usize, usize, &Item)> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, grp)| grp.items.iter().enumerate().map(move |(n, it)| (g, n, it)))
    }

    /// Writes the dataset in the CSV schema (prompt column only if any prompt is non-empty).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let with_prompt = self.groups.iter().any(|g| !g.prompt.is_empty());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["context_id".to_string(), "sequence".to_string()];
        if with_prompt {
            header.push("prompt".to_string());
        }
        header.extend(self.objectives.iter().cloned());
        w.write_record(&header)?;
        for group in &self.groups {
            let prompt = self.vocab.decode(&group.prompt);
            for item in &group.items {
                let mut rec = vec![group.context_id.clone(), self.vocab.decode(&item.sequence)];
                if with_prompt {
                    rec.push(prompt.clone());
                }
                rec.extend(item.rewards.iter().map(|r| r.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_tokens(tokens: &[Token], letters: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= letters) {
        Some(&token) => Err(Error::InvalidToken { token, letters }),
        None => Ok(()),
    }
}

/// Column mapping for [`load_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub context_column: String,
    pub sequence_column: String,
    /// Optional column holding the context prompt as a letter string.
    pub prompt_column: Option<String>,
    /// Objective columns; `None` takes every remaining column in file order.
    pub objectives: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            context_column: "context_id".into(),
            sequence_column: "sequence".into(),
            prompt_column: None,
            objectives: None,
        }
    }
}

/// Loads and validates a CSV reward dataset. Row numbers in errors count
/// data rows from 1 (the header is row 0).
pub fn load_dataset(path: impl AsRef<Path>, schema: &CsvSchema, vocab: &Vocabulary) -> Result<RewardDataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema, vocab)
}

pub fn read_dataset<R: Read>(reader: R, schema: &CsvSchema, vocab: &Vocabulary) -> Result<RewardDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Dataset("empty file".into()));
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Dataset(format!("missing column `{name}`")))
    };
    let ctx_col = find(&schema.context_column)?;
    let seq_col = find(&schema.sequence_column)?;
    let prompt_col = match &schema.prompt_column {
        Some(p) => Some(find(p)?),
        None => headers.iter().position(|h| h.trim() == "prompt"),
    };
    let (objectives, obj_cols): (Vec<String>, Vec<usize>) = match &schema.objectives {
        Some(names) => {
            let cols = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
            (names.clone(), cols)
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ctx_col && *i != seq_col && Some(*i) != prompt_col)
            .map(|(i, h)| (h.trim().to_string(), i))
            .unzip(),
    };
    if objectives.is_empty() {
        return Err(Error::Dataset("no objective columns".into()));
    }

    let mut groups: Vec<ContextGroup> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let field = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let context_id = field(ctx_col).to_string();
        if context_id.is_empty() {
            return Err(Error::Row {
                row,
                message: "empty context_id".into(),
            });
        }
        let seq_str = field(seq_col);
        if seq_str.is_empty() {
            return Err(Error::Row {
                row,
                message: "empty sequence".into(),
            });
        }
        let sequence = vocab.encode(seq_str).map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let prompt = match prompt_col {
            Some(c) => vocab.encode(field(c)).map_err(|e| Error::Row {
                row,
                message: format!("prompt: {e}"),
            })?,
            None => Vec::new(),
        };
        let mut rewards = Vec::with_capacity(obj_cols.len());
        for (name, &c) in objectives.iter().zip(&obj_cols) {
            let raw = field(c);
            let value: f64 = raw.parse().map_err(|_| Error::Row {
                row,
                message: format!("objective `{name}`: cannot parse {raw:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Row {
                    row,
                    message: format!("objective `{name}` is not finite ({raw})"),
                });
            }
            rewards.push(value);
        }
        let g = match index.get(&context_id) {
            Some(&g) => {
                if groups[g].prompt != prompt {
                    return Err(Error::Row {
                        row,
                        message: format!("prompt differs within context `{context_id}`"),
                    });
                }
                g
            }
            None => {
                index.insert(context_id.clone(), groups.len());
                groups.push(ContextGroup {
                    context_id,
                    prompt,
                    items: Vec::new(),
                });
                groups.len() - 1
            }
        };
        groups[g].items.push(Item { sequence, rewards });
    }
    if groups.is_empty() {
        return Err(Error::Dataset("empty file: no data rows".into()));
    }
    RewardDataset::new(objectives, vocab.clone(), groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RewardDataset> {
        read_dataset(text.as_bytes(), &CsvSchema::default(), &Vocabulary::amino_acids())
    }

    #[test]
    fn three_rows_one_context() {
        let ds = parse("context_id,sequence,act,sel\nwt,ACD,1.0,2.0\nwt,ACE,0.5,-1\nwt,GCD,3,0\n").unwrap();
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.groups().len(), 1);
        assert_eq!(ds.groups()[0].items.len(), 3);
        assert_eq!(ds.objectives(), ["act", "sel"]);
        assert_eq!(ds.groups()[0].items[1].rewards, vec![0.5, -1.0]);
    }

    #[test]
    fn groups_keep_first_appearance_and_file_order() {
        let ds = parse("context_id,sequence,r\nb,AA,1\na,CC,2\nb,DD,3\n").unwrap();
        let ids: Vec<_> = ds.groups().iter().map(|g| g.context_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        let b = &ds.groups()[0];
        assert_eq!(ds.vocab().decode(&b.items[1].sequence), "DD");
    }

    #[test]
    fn nan_reward_names_the_row() {
        let err = parse("context_id,sequence,r\nx,AC,1\nx,AD,NaN\n").unwrap_err();
        match err {
            Error::Row { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("not finite"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_empty_file() {
        let err = parse("context_id,r\nx,1\n").unwrap_err();
        assert!(err.to_string().contains("missing column `sequence`"));
        assert!(parse("").is_err());
        assert!(parse("context_id,sequence,r\n").unwrap_err().to_string().contains("empty"));
    }

    #[test]
    fn out_of_vocabulary_letter_is_a_row_error() {
        let err = parse("context_id,sequence,r\nx,AC,1\nx,AZ,1\n").unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn explicit_objective_subset() {
        let schema = CsvSchema {
            objectives: Some(vec!["b".into()]),
            ..CsvSchema::default()
        };
        let ds = read_dataset(
            "context_id,sequence,a,b\nx,AC,1,5\n".as_bytes(),
            &schema,
            &Vocabulary::amino_acids(),
        )
        .unwrap();
        assert_eq!(ds.k(), 1);
        assert_eq!(ds.groups()[0].items[0].rewards, vec![5.0]);
    }

    #[test]
    fn large_single_context_file() {
        let mut text = String::from("context_id,sequence,pb,zn\n");
        for i in 0..1155 {
            text.push_str(&format!("wt,ACDEF,{},{}\n", i as f64 * 0.01, -(i as f64) * 0.02));
        }
        let ds = parse(&text).unwrap();
        assert_eq!(ds.groups().len(), 1);
        assert_eq!(ds.groups()[0].len(), 1155);
    }

    #[test]
    fn csv_round_trip_preserves_dataset() {
        let ds = parse("context_id,sequence,prompt,r1,r2\nx,AC,MK,0.1,2\nx,CA,MK,-3.25,1e-3\ny,W,,7,8\n").unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn rejects_duplicate_letters() {
        assert!(Vocabulary::new("ABA".chars()).is_err());
        let v = Vocabulary::new("AB".chars()).unwrap();
        assert_eq!(v.eos(), 2);
        assert_eq!(v.bos(), 3);
        assert_eq!(v.size(), 4);
    }
}
