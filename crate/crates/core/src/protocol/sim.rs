use rayon::prelude::*;
use std::path::Path;

use super::model::RoundModel;
use super::params::{ProtocolParams, Representation};
use super::records::{RecordHeader, RecordWriter, RoundRecord};
use crate::error::Result;
use crate::rng::{stream, Domain};

/// Rounds drawn from each RNG stream. Fixed so output does not depend on the
/// thread count.
pub const ROUNDS_PER_STREAM: u64 = 4096;
const STREAMS_PER_CHUNK: u64 = 64;

fn fill_block(model: &RoundModel, seed: u64, block: u64, out: &mut [RoundRecord]) {
    let mut rng = stream(seed, Domain::Protocol, block);
    for r in out {
        *r = model.sample(&mut rng);
    }
}

fn fill(model: &RoundModel, seed: u64, first_block: u64, out: &mut [RoundRecord]) {
    out.par_chunks_mut(ROUNDS_PER_STREAM as usize)
        .enumerate()
        .for_each(|(i, chunk)| fill_block(model, seed, first_block + i as u64, chunk));
}

/// Simulate `params.rounds` rounds in the chosen representation.
pub fn simulate(params: &ProtocolParams, rep: Representation) -> Result<Vec<RoundRecord>> {
    let model = RoundModel::new(params, rep)?;
    let mut out = vec![RoundRecord::default(); params.rounds as usize];
    fill(&model, params.seed, 0, &mut out);
    Ok(out)
}

pub fn simulate_eb(params: &ProtocolParams) -> Result<Vec<RoundRecord>> {
    simulate(params, Representation::Eb)
}

pub fn simulate_pm(params: &ProtocolParams) -> Result<Vec<RoundRecord>> {
    simulate(params, Representation::Pm)
}

/// Header describing a run, with the gains actually used.
pub fn header_for(params: &ProtocolParams, model: &RoundModel) -> RecordHeader {
    let (a, b) = model.gains();
    RecordHeader::new(
        params.rounds,
        [params.n_a, params.n_b, params.loss_a_db, params.loss_b_db, params.xi_a, params.xi_b, a, b],
        params.seed,
    )
}

/// Stream a run to disk without holding it in memory. Produces the same records
/// as [`simulate`].
pub fn simulate_to_file(params: &ProtocolParams, rep: Representation, path: impl AsRef<Path>) -> Result<RecordHeader> {
    let model = RoundModel::new(params, rep)?;
    let header = header_for(params, &model);
    let mut w = RecordWriter::create(path, header)?;
    let chunk = ROUNDS_PER_STREAM * STREAMS_PER_CHUNK;
    let mut buf = vec![RoundRecord::default(); chunk.min(params.rounds) as usize];
    let mut done = 0u64;
    while done < params.rounds {
        let len = chunk.min(params.rounds - done) as usize;
        fill(&model, params.seed, done / ROUNDS_PER_STREAM, &mut buf[..len]);
        for r in &buf[..len] {
            w.write(r)?;
        }
        done += len as u64;
    }
    w.finish()?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::read_records;

    #[test]
    fn deterministic_and_file_matches_memory() {
        let p = ProtocolParams::symmetric(10.0, 1.0, 0.01, 2 * ROUNDS_PER_STREAM + 10, 5);
        let a = simulate_pm(&p).unwrap();
        let b = simulate_pm(&p).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.bin");
        let h = simulate_to_file(&p, Representation::Pm, &path).unwrap();
        let (h2, c) = read_records(&path).unwrap();
        assert_eq!(h, h2);
        assert_eq!(a, c);
        assert!(a.iter().all(|r| r.alice0.is_some()));
        assert!(simulate_eb(&p).unwrap().iter().all(|r| r.alice0.is_none()));
    }

    #[test]
    fn different_seeds_differ() {
        let p = ProtocolParams::symmetric(10.0, 1.0, 0.01, 100, 1);
        assert_ne!(simulate_eb(&p).unwrap(), simulate_eb(&p.clone().with_seed(2)).unwrap());
    }

    #[test]
    fn odd_round_count_rejected() {
        let p = ProtocolParams::symmetric(10.0, 1.0, 0.01, 101, 1);
        assert!(simulate_eb(&p).is_err());
    }
}
