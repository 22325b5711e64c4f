//! Text assembler and disassembler for the DIMC instructions.
//!
//! One instruction per line: a mnemonic followed by `name=value` fields in
//! any order, e.g. `dl.m vs1=4 nvec=2 sec=0 mask=0b0011 m_row=7`. Values may
//! be decimal, `0x` hex or `0b` binary. `#` starts a comment.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{CustomInstruction, DecodeError, EncodedWord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("line {line}: field {field} = {value} out of range 0..={max}")]
    Range { line: usize, field: &'static str, value: u32, max: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("word {index} ({word}): {source}")]
pub struct DisasmError {
    pub index: usize,
    pub word: EncodedWord,
    pub source: DecodeError,
}

const DL_FIELDS: &[&str] = &["vs1", "nvec", "sec", "mask"];
const DLM_FIELDS: &[&str] = &["vs1", "nvec", "sec", "mask", "m_row"];
const DCP_FIELDS: &[&str] = &["vs1", "vd", "sh", "dh", "m_row"];
const DCF_FIELDS: &[&str] = &["vs1", "vd", "sh", "dh", "m_row", "bidx"];

fn parse_number(text: &str) -> Option<u32> {
    let t = text.replace('_', "");
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u32::from_str_radix(hex, 16).ok()
    } else if let Some(bin) = t.strip_prefix("0b").or_else(|| t.strip_prefix("0B")) {
        u32::from_str_radix(bin, 2).ok()
    } else {
        t.parse().ok()
    }
}

/// Parse a single line. Returns `Ok(None)` for blank or comment-only lines.
pub fn parse_line(text: &str, line: usize) -> Result<Option<CustomInstruction>, AsmError> {
    let code = text.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    let mut col = 0;
    for tok in code.split_whitespace() {
        let start = code[col..].find(tok).map(|i| i + col).unwrap_or(col);
        col = start + tok.len();
        tokens.push((start + 1, tok));
    }
    let Some(&(mcol, mnemonic)) = tokens.first() else {
        return Ok(None);
    };
    let perr = |column: usize, message: String| AsmError::Parse { line, column, message };
    let kind = mnemonic.to_ascii_lowercase();
    let expected = match kind.as_str() {
        "dl.i" => DL_FIELDS,
        "dl.m" => DLM_FIELDS,
        "dc.p" => DCP_FIELDS,
        "dc.f" => DCF_FIELDS,
        other => return Err(perr(mcol, format!("unknown mnemonic `{other}`"))),
    };

    let mut fields: HashMap<&str, u32> = HashMap::new();
    for &(column, tok) in &tokens[1..] {
        let (name, value) =
            tok.split_once('=').ok_or_else(|| perr(column, format!("expected name=value, found `{tok}`")))?;
        let Some(&key) = expected.iter().find(|f| **f == name) else {
            return Err(perr(column, format!("unknown field `{name}` for {mnemonic}")));
        };
        let v = parse_number(value).ok_or_else(|| perr(column + name.len() + 1, format!("bad number `{value}`")))?;
        if fields.insert(key, v).is_some() {
            return Err(perr(column, format!("duplicate field `{name}`")));
        }
    }
    if let Some(missing) = expected.iter().find(|f| !fields.contains_key(**f)) {
        return Err(perr(col + 1, format!("missing field `{missing}`")));
    }

    let range = |field: &'static str, max: u32| -> Result<u8, AsmError> {
        let value = fields[field];
        if value <= max {
            Ok(value as u8)
        } else {
            Err(AsmError::Range { line, field, value, max })
        }
    };
    let instr = match kind.as_str() {
        "dl.i" => CustomInstruction::DlI {
            vs1: range("vs1", 31)?,
            nvec: range("nvec", 4)?,
            sec: range("sec", 3)?,
            mask: range("mask", 15)?,
        },
        "dl.m" => CustomInstruction::DlM {
            vs1: range("vs1", 31)?,
            nvec: range("nvec", 4)?,
            sec: range("sec", 3)?,
            mask: range("mask", 15)?,
            m_row: range("m_row", 31)?,
        },
        "dc.p" => CustomInstruction::DcP {
            vs1: range("vs1", 31)?,
            vd: range("vd", 31)?,
            sh: range("sh", 1)?,
            dh: range("dh", 1)?,
            m_row: range("m_row", 31)?,
        },
        _ => CustomInstruction::DcF {
            vs1: range("vs1", 31)?,
            vd: range("vd", 31)?,
            sh: range("sh", 1)?,
            dh: range("dh", 1)?,
            m_row: range("m_row", 31)?,
            bidx: range("bidx", 3)?,
        },
    };
    // Cross-field rules (nvec >= 1, mask within nvec).
    instr.validate().map_err(|e| AsmError::Range { line, field: e.field, value: e.value, max: e.max })?;
    Ok(Some(instr))
}

pub fn parse_program(text: &str) -> Result<Vec<CustomInstruction>, AsmError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(instr) = parse_line(line, i + 1)? {
            out.push(instr);
        }
    }
    Ok(out)
}

pub fn assemble(text: &str) -> Result<Vec<EncodedWord>, AsmError> {
    Ok(parse_program(text)?.iter().map(|i| i.encode().expect("parser validated fields")).collect())
}

pub fn format_instruction(instr: &CustomInstruction) -> String {
    match *instr {
        CustomInstruction::DlI { vs1, nvec, sec, mask } => {
            format!("dl.i vs1={vs1} nvec={nvec} sec={sec} mask=0b{mask:04b}")
        }
        CustomInstruction::DlM { vs1, nvec, sec, mask, m_row } => {
            format!("dl.m vs1={vs1} nvec={nvec} sec={sec} mask=0b{mask:04b} m_row={m_row}")
        }
        CustomInstruction::DcP { vs1, vd, sh, dh, m_row } => {
            format!("dc.p vs1={vs1} vd={vd} sh={sh} dh={dh} m_row={m_row}")
        }
        CustomInstruction::DcF { vs1, vd, sh, dh, m_row, bidx } => {
            format!("dc.f vs1={vs1} vd={vd} sh={sh} dh={dh} m_row={m_row} bidx={bidx}")
        }
    }
}

pub fn disassemble(words: &[EncodedWord]) -> Result<String, DisasmError> {
    let mut out = String::new();
    for (index, &word) in words.iter().enumerate() {
        let instr = CustomInstruction::decode(word).map_err(|source| DisasmError { index, word, source })?;
        writeln!(out, "{}", format_instruction(&instr)).unwrap();
    }
    Ok(out)
}
