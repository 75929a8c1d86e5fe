//! Ground-truth flow map samples for supervised training and evaluation.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integrate, FlowQuery, IntegratorSpec};
use crate::error::{Error, Result};
use crate::field::{Domain, VectorField};
use crate::fsutil::{atomic_write, read_f32_payload, read_header_line, write_f32s};

pub const SAMPLES_MAGIC: &str = "nifm-fms";
pub const SAMPLES_VERSION: u32 = 1;

/// Records generated per RNG stream.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMapSample {
    pub query: FlowQuery,
    pub end: Vec<f64>,
    /// Field velocity at `(end, t + tau)`.
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMapSampleSet {
    pub n: usize,
    pub records: Vec<FlowMapSample>,
}

impl FlowMapSampleSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Draws one query: position uniform over the domain, span uniform over
/// `[tau_lo, tau_hi]`, start time uniform over the times from which the span
/// stays inside the temporal domain.
pub fn sample_query<R: Rng>(rng: &mut R, domain: &Domain, tau_lo: f64, tau_hi: f64) -> FlowQuery {
    let x: Vec<f64> = (0..domain.n)
        .map(|a| domain.lo[a] + rng.random::<f64>() * domain.extent(a))
        .collect();
    let tau = tau_lo + rng.random::<f64>() * (tau_hi - tau_lo);
    let t_top = (domain.t_hi - tau.max(0.0)).max(domain.t_lo);
    let t_bot = (domain.t_lo - tau.min(0.0)).min(t_top);
    let t = t_bot + rng.random::<f64>() * (t_top - t_bot);
    FlowQuery { x, t, tau }
}

/// Integrates `count` random queries with physical spans in `tau_range`.
/// Deterministic under `seed` regardless of thread count: each block of
/// records draws from its own ChaCha stream.
pub fn sample_flow_map_dataset<F: VectorField + ?Sized>(
    field: &F,
    count: usize,
    tau_range: (f64, f64),
    spec: &IntegratorSpec,
    seed: u64,
) -> Result<FlowMapSampleSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let (lo, hi) = tau_range;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("bad span range [{lo}, {hi}]")));
    }
    let domain = *field.domain();
    let chunks = count.div_ceil(CHUNK);
    let blocks: Vec<Vec<FlowMapSample>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len)
                .map(|_| {
                    let query = sample_query(&mut rng, &domain, lo, hi);
                    let end = integrate(field, &query, spec)?;
                    let velocity = field.sample(&end, query.t + query.tau)?;
                    Ok(FlowMapSample {
                        query,
                        end,
                        velocity,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(FlowMapSampleSet {
        n: domain.n,
        records: blocks.into_iter().flatten().collect(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplesHeader {
    magic: String,
    version: u32,
    n: usize,
    count: usize,
}

/// Records are packed as `[x(n), t, tau, end(n), vel(n)]` little-endian f32.
pub fn write_samples(set: &FlowMapSampleSet, w: &mut dyn Write) -> Result<()> {
    let header = SamplesHeader {
        magic: SAMPLES_MAGIC.into(),
        version: SAMPLES_VERSION,
        n: set.n,
        count: set.len(),
    };
    let io = |e| Error::io("<sample stream>", e);
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for r in &set.records {
        let q = &r.query;
        let values = q
            .x
            .iter()
            .chain([&q.t, &q.tau])
            .chain(&r.end)
            .chain(&r.velocity)
            .map(|&v| v as f32);
        write_f32s(w, values).map_err(io)?;
    }
    Ok(())
}

pub fn read_samples(r: &mut dyn BufRead) -> Result<FlowMapSampleSet> {
    let line = read_header_line(r)?;
    let h: SamplesHeader =
        serde_json::from_str(&line).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if h.magic != SAMPLES_MAGIC {
        return Err(Error::BadMagic {
            expected: SAMPLES_MAGIC,
            found: h.magic,
        });
    }
    if h.version != SAMPLES_VERSION {
        return Err(Error::VersionMismatch {
            expected: SAMPLES_VERSION,
            found: h.version,
        });
    }
    if !(2..=3).contains(&h.n) {
        return Err(Error::UnsupportedDimension(h.n));
    }
    let n = h.n;
    let stride = 3 * n + 2;
    let data = read_f32_payload(r, stride * h.count)?;
    let records = data
        .chunks_exact(stride)
        .map(|rec| {
            let f = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
            FlowMapSample {
                query: FlowQuery {
                    x: f(&rec[..n]),
                    t: rec[n] as f64,
                    tau: rec[n + 1] as f64,
                },
                end: f(&rec[n + 2..2 * n + 2]),
                velocity: f(&rec[2 * n + 2..]),
            }
        })
        .collect();
    Ok(FlowMapSampleSet { n, records })
}

pub fn save_samples(set: &FlowMapSampleSet, path: &Path) -> Result<()> {
    atomic_write(path, |w| write_samples(set, w))
}

pub fn load_samples(path: &Path) -> Result<FlowMapSampleSet> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AnalyticField, AnalyticKind};
    use crate::oracle::Scheme;

    fn constant() -> AnalyticField {
        let d = Domain::new(&[0.0, 0.0], &[2.0, 1.0], 0.0, 10.0).unwrap();
        AnalyticField::new(AnalyticKind::Constant { c: vec![0.1, -0.05] }, d, 11).unwrap()
    }

    fn spec() -> IntegratorSpec {
        IntegratorSpec::new(Scheme::Rk4, 0.05).unwrap()
    }

    #[test]
    fn single_constant_record() {
        let set = sample_flow_map_dataset(&constant(), 1, (0.5, 2.0), &spec(), 3).unwrap();
        let r = &set.records[0];
        assert!((r.end[0] - (r.query.x[0] + 0.1 * r.query.tau)).abs() < 1e-12);
        assert!((r.end[1] - (r.query.x[1] - 0.05 * r.query.tau)).abs() < 1e-12);
        assert_eq!(r.velocity, vec![0.1, -0.05]);
        assert!(r.query.t + r.query.tau <= 10.0 + 1e-12);
    }

    #[test]
    fn deterministic_under_seed() {
        let f = AnalyticField::double_gyre(11);
        let a = sample_flow_map_dataset(&f, 2500, (0.5, 2.0), &spec(), 9).unwrap();
        let b = sample_flow_map_dataset(&f, 2500, (0.5, 2.0), &spec(), 9).unwrap();
        assert_eq!(a, b);
        let c = sample_flow_map_dataset(&f, 2500, (0.5, 2.0), &spec(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn start_positions_are_centred() {
        // uniform on [0,2]x[0,1]: per-axis sd of the mean is extent/sqrt(12 N)
        let count = 100_000;
        let zero = IntegratorSpec::new(Scheme::Euler, 1.0).unwrap();
        let set = sample_flow_map_dataset(&constant(), count, (0.0, 0.0), &zero, 1).unwrap();
        for (axis, extent) in [(0, 2.0), (1, 1.0)] {
            let mean = set.records.iter().map(|r| r.query.x[axis]).sum::<f64>() / count as f64;
            let sd = extent / (12.0 * count as f64).sqrt();
            assert!((mean - 0.5 * extent).abs() < 3.0 * sd, "axis {axis}: {mean}");
        }
    }

    #[test]
    fn file_round_trip_is_f32_exact() {
        let f = AnalyticField::double_gyre(11);
        let set = sample_flow_map_dataset(&f, 17, (0.5, 2.0), &spec(), 4).unwrap();
        let mut buf = Vec::new();
        write_samples(&set, &mut buf).unwrap();
        let back = read_samples(&mut &buf[..]).unwrap();
        assert_eq!(back.len(), 17);
        for (a, b) in set.records.iter().zip(&back.records) {
            assert_eq!(b.query.tau, a.query.tau as f32 as f64);
            assert_eq!(b.end[1], a.end[1] as f32 as f64);
            assert_eq!(b.velocity[0], a.velocity[0] as f32 as f64);
        }
        let cut = &buf[..buf.len() - 1];
        assert!(matches!(read_samples(&mut &cut[..]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn rejects_empty_request() {
        assert!(sample_flow_map_dataset(&constant(), 0, (0.5, 2.0), &spec(), 0).is_err());
    }
}
