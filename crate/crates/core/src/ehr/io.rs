//! Line-delimited dataset interchange format.
//!
//! One patient per line after the header:
//! `patient_id<TAB>age<TAB>gender<TAB>type:id,type:id,...`
//! with `type` in `{D, P, C}` and the list chronological. The header is
//! `#meexam-v1 seed=<n>`. Writing then reading a dataset is the identity.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset, EntityCategory, EntityId, EntityVocab, Gender, PatientRecord};

pub fn save_dataset_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(&format!("#meexam-v1 seed={}\n", dataset.metadata.seed));
    for p in &dataset.patients {
        let tokens: Vec<String> = p
            .sequence
            .iter()
            .map(|&e| {
                let (tag, idx) = dataset
                    .vocab
                    .sequence_token(e)
                    .expect("sequence entity has a tag");
                format!("{tag}:{idx}")
            })
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.patient_id,
            p.age,
            p.gender.as_str(),
            tokens.join(",")
        ));
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, save_dataset_string(dataset))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    load_dataset_str(&text)
}

struct RawRecord {
    patient_id: usize,
    age: u32,
    gender: Gender,
    tokens: Vec<(EntityCategory, usize)>,
}

pub fn load_dataset_str(text: &str) -> Result<Dataset, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        msg: "empty file: missing header".into(),
    })?;
    let seed = parse_header(header)?;

    let mut raws = Vec::new();
    let mut max_d = 0usize;
    let mut max_p = 0usize;
    let mut max_c = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let raw = parse_record(line, line_no)?;
        for (cat, k) in &raw.tokens {
            match cat {
                EntityCategory::Disease => max_d = max_d.max(k + 1),
                EntityCategory::Symptom => max_p = max_p.max(k + 1),
                EntityCategory::Examination => max_c = max_c.max(k + 1),
                _ => unreachable!("only sequence categories are parsed"),
            }
        }
        raws.push(raw);
    }

    let vocab = EntityVocab::new(max_d.max(1), max_p.max(1), max_c.max(2))?;
    let patients: Vec<PatientRecord> = raws
        .into_iter()
        .map(|r| PatientRecord {
            patient_id: r.patient_id,
            age: r.age,
            gender: r.gender,
            sequence: r
                .tokens
                .iter()
                .map(|&(cat, k)| match cat {
                    EntityCategory::Disease => vocab.disease(k),
                    EntityCategory::Symptom => vocab.symptom(k),
                    EntityCategory::Examination => vocab.exam(k),
                    _ => unreachable!(),
                })
                .collect::<Vec<EntityId>>(),
        })
        .collect();

    let ds = Dataset::new(vocab, patients, seed);
    ds.validate()?;
    Ok(ds)
}

fn parse_header(header: &str) -> Result<u64, DataError> {
    let rest = header.strip_prefix("#meexam-v1 seed=").ok_or_else(|| DataError::Parse {
        line: 1,
        msg: format!("bad header {header:?}, expected `#meexam-v1 seed=<n>`"),
    })?;
    rest.parse().map_err(|_| DataError::Parse {
        line: 1,
        msg: format!("bad seed {rest:?}"),
    })
}

fn parse_record(line: &str, line_no: usize) -> Result<RawRecord, DataError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(DataError::Parse {
            line: line_no,
            msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
        });
    }
    let patient_id = fields[0].parse().map_err(|_| DataError::Parse {
        line: line_no,
        msg: format!("bad patient id {:?}", fields[0]),
    })?;
    let age = fields[1].parse().map_err(|_| DataError::Parse {
        line: line_no,
        msg: format!("bad age {:?}", fields[1]),
    })?;
    let gender = Gender::parse(fields[2]).ok_or_else(|| DataError::Schema {
        line: line_no,
        msg: format!("unknown gender token {:?}", fields[2]),
    })?;
    let mut tokens = Vec::new();
    for tok in fields[3].split(',') {
        let (tag, idx) = tok.split_once(':').ok_or_else(|| DataError::Parse {
            line: line_no,
            msg: format!("bad entity token {tok:?}"),
        })?;
        let cat = match tag {
            "D" => EntityCategory::Disease,
            "P" => EntityCategory::Symptom,
            "C" => EntityCategory::Examination,
            _ => {
                return Err(DataError::Schema {
                    line: line_no,
                    msg: format!("unknown entity category {tag:?}"),
                })
            }
        };
        let k: usize = idx.parse().map_err(|_| DataError::Parse {
            line: line_no,
            msg: format!("bad entity index {idx:?}"),
        })?;
        tokens.push((cat, k));
    }
    Ok(RawRecord {
        patient_id,
        age,
        gender,
        tokens,
    })
}
