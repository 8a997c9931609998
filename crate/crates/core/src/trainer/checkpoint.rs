//! Single-file checkpoint archive: an index of named parameter blocks plus
//! the run config, the denoised subgraph, and the validation metric record.
//! Values are raw little-endian f64 bits, so a reload reproduces forward
//! outputs bit-compatibly on the same platform.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::diffusion::DenoisedSubgraph;
use crate::evaluation::MetricRecord;

use super::TrainError;

const MAGIC: &[u8; 8] = b"EXRCKPT1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub config_hash: u64,
    pub round: usize,
    pub epoch: usize,
    pub metrics: MetricRecord,
    pub subgraph: DenoisedSubgraph,
    pub schedule_hash: u64,
    pub patient_ids: Vec<usize>,
    /// Named parameter blocks in store order.
    pub params: Vec<(String, Array2<f64>)>,
}

fn w_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_bytes<W: Write>(w: &mut W, b: &[u8]) -> io::Result<()> {
    w_u64(w, b.len() as u64)?;
    w.write_all(b)
}

fn r_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn r_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn r_bytes<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let n = r_u64(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w_bytes(&mut w, self.config_text.as_bytes())?;
        w_u64(&mut w, self.config_hash)?;
        w_u64(&mut w, self.round as u64)?;
        w_u64(&mut w, self.epoch as u64)?;

        w_f64(&mut w, self.metrics.hr5)?;
        w_f64(&mut w, self.metrics.hr10)?;
        w_f64(&mut w, self.metrics.ndcg5)?;
        w_f64(&mut w, self.metrics.ndcg10)?;
        w_u64(&mut w, self.metrics.shortage_count as u64)?;
        w_u64(&mut w, self.metrics.ranks.len() as u64)?;
        for (pid, rank) in &self.metrics.ranks {
            w_u64(&mut w, *pid as u64)?;
            w_u64(&mut w, *rank as u64)?;
        }

        w_u64(&mut w, self.schedule_hash)?;
        w_u64(&mut w, self.subgraph.k as u64)?;
        let (rows, cols) = self.subgraph.edges.dim();
        w_u64(&mut w, rows as u64)?;
        w_u64(&mut w, cols as u64)?;
        let edges: Vec<(u64, u64)> = (0..rows)
            .flat_map(|r| {
                let e = &self.subgraph.edges;
                (0..cols)
                    .filter(move |c| e[[r, *c]] != 0.0)
                    .map(move |c| (r as u64, c as u64))
            })
            .collect();
        w_u64(&mut w, edges.len() as u64)?;
        for (r, c) in edges {
            w_u64(&mut w, r)?;
            w_u64(&mut w, c)?;
        }

        w_u64(&mut w, self.patient_ids.len() as u64)?;
        for pid in &self.patient_ids {
            w_u64(&mut w, *pid as u64)?;
        }

        w_u64(&mut w, self.params.len() as u64)?;
        for (name, value) in &self.params {
            w_bytes(&mut w, name.as_bytes())?;
            let (r, c) = value.dim();
            w_u64(&mut w, r as u64)?;
            w_u64(&mut w, c as u64)?;
            for v in value.iter() {
                w_f64(&mut w, *v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TrainError::Checkpoint(format!(
                "{}: not a checkpoint file",
                path.display()
            )));
        }
        let config_text = String::from_utf8(r_bytes(&mut r)?)
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let config_hash = r_u64(&mut r)?;
        let round = r_u64(&mut r)? as usize;
        let epoch = r_u64(&mut r)? as usize;

        let hr5 = r_f64(&mut r)?;
        let hr10 = r_f64(&mut r)?;
        let ndcg5 = r_f64(&mut r)?;
        let ndcg10 = r_f64(&mut r)?;
        let shortage_count = r_u64(&mut r)? as usize;
        let n_ranks = r_u64(&mut r)? as usize;
        let mut ranks = Vec::with_capacity(n_ranks);
        for _ in 0..n_ranks {
            let pid = r_u64(&mut r)? as usize;
            let rank = r_u64(&mut r)? as usize;
            ranks.push((pid, rank));
        }
        let metrics = MetricRecord {
            hr5,
            hr10,
            ndcg5,
            ndcg10,
            ranks,
            shortage_count,
        };

        let schedule_hash = r_u64(&mut r)?;
        let k = r_u64(&mut r)? as usize;
        let rows = r_u64(&mut r)? as usize;
        let cols = r_u64(&mut r)? as usize;
        let n_edges = r_u64(&mut r)? as usize;
        let mut edges = Array2::zeros((rows, cols));
        for _ in 0..n_edges {
            let er = r_u64(&mut r)? as usize;
            let ec = r_u64(&mut r)? as usize;
            edges[[er, ec]] = 1.0;
        }
        // reconstruction scores are not archived; reuse the edge mask
        let subgraph = DenoisedSubgraph {
            scores: edges.clone(),
            edges,
            k,
        };

        let n_pids = r_u64(&mut r)? as usize;
        let mut patient_ids = Vec::with_capacity(n_pids);
        for _ in 0..n_pids {
            patient_ids.push(r_u64(&mut r)? as usize);
        }

        let n_params = r_u64(&mut r)? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = String::from_utf8(r_bytes(&mut r)?)
                .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
            let pr = r_u64(&mut r)? as usize;
            let pc = r_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(pr * pc);
            for _ in 0..pr * pc {
                data.push(r_f64(&mut r)?);
            }
            let value = Array2::from_shape_vec((pr, pc), data)
                .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
            params.push((name, value));
        }

        Ok(Self {
            config_text,
            config_hash,
            round,
            epoch,
            metrics,
            subgraph,
            schedule_hash,
            patient_ids,
            params,
        })
    }
}
