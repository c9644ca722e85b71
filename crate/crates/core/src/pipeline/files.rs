//! Stage artifact formats.
//!
//! `retrieval.tsv`: one line per query, `query<TAB>neighbor...`.
//!
//! `pairs.bin`, little-endian:
//!
//! ```text
//! b"SRP1"
//! u32 n_refs, then per ref: u16 len + image id bytes, u16 len + proposal id bytes
//! u32 n_pairs, then per pair: u32 first ref, u32 second ref, i8 label, u8 provenance
//! ```
//!
//! `rank.tsv`: a header, then one row per proposal of every ranked image.
//! Images without proposals get a single row with `-` in the proposal columns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::BBox;
use crate::pairgen::{Label, PairRef, ProposalKey, Provenance};

pub const PAIRS_MAGIC: &[u8; 4] = b"SRP1";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a stage input, reporting which stage should have produced it.
pub fn read_stage_input(path: &Path, stage: &'static str) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingStageInput {
            path: path.to_path_buf(),
            stage,
        }),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn utf8(path: &Path, bytes: Vec<u8>) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalTable {
    pub rows: Vec<(String, Vec<String>)>,
}

impl RetrievalTable {
    pub fn neighbors(&self, id: &str) -> Option<&[String]> {
        self.rows.iter().find(|r| r.0 == id).map(|r| r.1.as_slice())
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        for (q, ns) in &self.rows {
            out.push_str(q);
            for n in ns {
                out.push('\t');
                out.push_str(n);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.encode().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = utf8(path, read_stage_input(path, "retrieve")?)?;
        let rows = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                let mut f = l.split('\t').map(str::to_string);
                let q = f.next().unwrap_or_default();
                (q, f.collect())
            })
            .collect();
        Ok(RetrievalTable { rows })
    }
}

/// Pairs by index into a table of proposal keys.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairFile {
    pub refs: Vec<ProposalKey>,
    pub pairs: Vec<(u32, u32, Label, Provenance)>,
}

impl PairFile {
    /// Keys are numbered in order of first appearance.
    pub fn from_pairs(pairs: &[PairRef]) -> Self {
        let mut index = std::collections::HashMap::new();
        let mut file = PairFile::default();
        let mut id = |k: &ProposalKey, refs: &mut Vec<ProposalKey>| -> u32 {
            *index.entry(k.clone()).or_insert_with(|| {
                refs.push(k.clone());
                (refs.len() - 1) as u32
            })
        };
        for p in pairs {
            let a = id(&p.first, &mut file.refs);
            let b = id(&p.second, &mut file.refs);
            file.pairs.push((a, b, p.pgt, p.provenance));
        }
        file
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(PAIRS_MAGIC);
        out.extend_from_slice(&(self.refs.len() as u32).to_le_bytes());
        for k in &self.refs {
            for s in [&k.image, &k.proposal] {
                let len = u16::try_from(s.len()).map_err(|_| Error::Invalid(format!("id too long: {s}")))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        out.extend_from_slice(&(self.pairs.len() as u32).to_le_bytes());
        for &(a, b, pgt, prov) in &self.pairs {
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&b.to_le_bytes());
            out.push(pgt.value() as u8);
            out.push(prov.code());
        }
        Ok(out)
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::format(
                    path,
                    format!("truncated payload at byte {pos}: need {n} more, found {}", bytes.len() - pos),
                ));
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4)? != PAIRS_MAGIC {
            return Err(Error::format(path, "bad magic, expected SRP1"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let n_refs = u32_at(take(4)?) as usize;
        let mut refs = Vec::with_capacity(n_refs.min(1 << 20));
        for _ in 0..n_refs {
            let mut s = [String::new(), String::new()];
            for part in s.iter_mut() {
                let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
                *part = String::from_utf8(take(len)?.to_vec()).map_err(|_| Error::format(path, "id is not UTF-8"))?;
            }
            let [image, proposal] = s;
            refs.push(ProposalKey { image, proposal });
        }
        let n_pairs = u32_at(take(4)?) as usize;
        let mut pairs = Vec::with_capacity(n_pairs.min(1 << 24));
        for i in 0..n_pairs {
            let rec = take(10)?;
            let a = u32_at(&rec[0..4]);
            let b = u32_at(&rec[4..8]);
            let pgt = Label::from_value(rec[8] as i8)
                .ok_or_else(|| Error::format(path, format!("pair {i}: label {} not in {{-1, +1}}", rec[8] as i8)))?;
            let prov = Provenance::from_code(rec[9])
                .ok_or_else(|| Error::format(path, format!("pair {i}: provenance code {}", rec[9])))?;
            if a as usize >= n_refs || b as usize >= n_refs {
                return Err(Error::format(path, format!("pair {i}: ref out of range")));
            }
            pairs.push((a, b, pgt, prov));
        }
        if pos != bytes.len() {
            return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(PairFile { refs, pairs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(path, &read_stage_input(path, "pairs")?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub proposal: String,
    pub score: u32,
    pub branch: f32,
    pub selected: bool,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedImage {
    pub id: String,
    pub q: usize,
    /// Ordered by score descending, ties by proposal id.
    pub rows: Vec<RankRow>,
}

impl RankedImage {
    pub fn selected_boxes(&self) -> Vec<BBox> {
        self.rows.iter().filter(|r| r.selected).map(|r| r.bbox).collect()
    }
}

const RANK_HEADER: &str = "image\tq\tproposal\tscore\tbranch\tselected\tx\ty\tw\th";

pub fn encode_rank(images: &[RankedImage]) -> String {
    let mut out = String::from(RANK_HEADER);
    out.push('\n');
    for img in images {
        if img.rows.is_empty() {
            let _ = writeln!(out, "{}\t0\t-\t-\t-\t-\t-\t-\t-\t-", img.id);
        }
        for r in &img.rows {
            let b = r.bbox;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:?}\t{}\t{}\t{}\t{}\t{}",
                img.id, img.q, r.proposal, r.score, r.branch, r.selected as u8, b.x, b.y, b.w, b.h
            );
        }
    }
    out
}

pub fn write_rank(images: &[RankedImage], path: &Path) -> Result<()> {
    write_file(path, encode_rank(images).as_bytes())
}

pub fn read_rank(path: &Path) -> Result<Vec<RankedImage>> {
    let text = utf8(path, read_stage_input(path, "rank")?)?;
    let mut lines = text.lines();
    if lines.next() != Some(RANK_HEADER) {
        return Err(Error::format(path, "missing rank table header"));
    }
    let mut out: Vec<RankedImage> = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", n + 2));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(bad("expected 10 columns"));
        }
        let q: usize = f[1].parse().map_err(|_| bad("q"))?;
        if out.last().map(|i| i.id != f[0]).unwrap_or(true) {
            out.push(RankedImage {
                id: f[0].to_string(),
                q,
                rows: Vec::new(),
            });
        }
        if f[2] == "-" {
            continue;
        }
        let num = |s: &str, what: &str| s.parse::<u32>().map_err(|_| bad(what));
        let bbox = BBox::try_new(num(f[6], "x")?, num(f[7], "y")?, num(f[8], "w")?, num(f[9], "h")?)
            .ok_or_else(|| bad("empty box"))?;
        out.last_mut().unwrap().rows.push(RankRow {
            proposal: f[2].to_string(),
            score: num(f[3], "score")?,
            branch: f[4].parse().map_err(|_| bad("branch"))?,
            selected: match f[5] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("selected")),
            },
            bbox,
        });
    }
    Ok(out)
}
