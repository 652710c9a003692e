//! Delimited-text persistence of sampled trajectories and velocities.
//!
//! A file starts with `#`-prefixed header lines followed by a CSV table:
//!
//! ```text
//! # pvrecon-trajectory 1
//! # quantity position
//! # grid t0=0 h=0.01 nt=3
//! # provenance raw
//! # seeds noise=2 tracers=1
//! # circulations 1 2
//! time,kind,id,x,y
//! 0,vortex,0,1,0
//! ```
//!
//! Rows are ordered by time, then kind (vortices first), then id. Values are
//! written with the shortest representation that reads back bit-identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dynamics::{SimulationRecord, TimeGrid};
use crate::error::{Error, Result};
use crate::geometry::PlanePoint;
use crate::signal::{Provenance, TrajectoryEnsemble, VelocityEnsemble};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "pvrecon-trajectory";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Position,
    Velocity,
}

impl Quantity {
    fn name(self) -> &'static str {
        match self {
            Quantity::Position => "position",
            Quantity::Velocity => "velocity",
        }
    }

    fn columns(self) -> [&'static str; 5] {
        match self {
            Quantity::Position => ["time", "kind", "id", "x", "y"],
            Quantity::Velocity => ["time", "kind", "id", "vx", "vy"],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFile {
    pub quantity: Quantity,
    pub grid: TimeGrid,
    pub provenance: Provenance,
    /// Seeds of the stochastic stages that produced the data.
    pub seeds: BTreeMap<String, u64>,
    pub circulations: Option<Vec<f64>>,
    /// `nt` rows of vortex values; rows are empty when the file has none.
    pub vortices: Vec<Vec<PlanePoint>>,
    pub tracers: Vec<Vec<PlanePoint>>,
}

impl TrajectoryFile {
    fn empty(quantity: Quantity, grid: TimeGrid, provenance: Provenance) -> Self {
        Self {
            quantity,
            grid,
            provenance,
            seeds: BTreeMap::new(),
            circulations: None,
            vortices: vec![Vec::new(); grid.nt],
            tracers: vec![Vec::new(); grid.nt],
        }
    }

    /// Vortex ground truth of a simulation.
    pub fn vortices_of(record: &SimulationRecord) -> Self {
        let mut f = Self::empty(Quantity::Position, record.grid, Provenance::Raw);
        f.circulations = Some(record.circulations.clone());
        f.vortices = record.vortex_history.clone();
        f
    }

    /// Vortex trajectories with known circulations, e.g. a reconstruction.
    pub fn vortex_track(grid: TimeGrid, circulations: &[f64], history: Vec<Vec<PlanePoint>>) -> Result<Self> {
        if history.len() != grid.nt || history.iter().any(|r| r.len() != circulations.len()) {
            return Err(Error::ShapeMismatch("vortex track does not match grid and circulations".into()));
        }
        let mut f = Self::empty(Quantity::Position, grid, Provenance::Raw);
        f.circulations = Some(circulations.to_vec());
        f.vortices = history;
        Ok(f)
    }

    pub fn tracers_of(ens: &TrajectoryEnsemble) -> Self {
        let mut f = Self::empty(Quantity::Position, *ens.grid(), ens.provenance());
        f.tracers = ens.history().to_vec();
        f
    }

    pub fn velocities_of(vel: &VelocityEnsemble, provenance: Provenance) -> Self {
        let mut f = Self::empty(Quantity::Velocity, *vel.grid(), provenance);
        f.tracers = vel.velocities().to_vec();
        f
    }

    pub fn with_seed(mut self, stage: &str, seed: u64) -> Self {
        self.seeds.insert(stage.to_string(), seed);
        self
    }

    pub fn n_vortices(&self) -> usize {
        self.vortices.first().map_or(0, Vec::len)
    }

    pub fn n_tracers(&self) -> usize {
        self.tracers.first().map_or(0, Vec::len)
    }

    pub fn tracer_ensemble(&self) -> Result<TrajectoryEnsemble> {
        self.expect(Quantity::Position, self.n_tracers() > 0, "tracer positions")?;
        TrajectoryEnsemble::new(self.grid, self.tracers.clone(), self.provenance)
    }

    pub fn velocity_ensemble(&self) -> Result<VelocityEnsemble> {
        self.expect(Quantity::Velocity, self.n_tracers() > 0, "tracer velocities")?;
        VelocityEnsemble::new(self.grid, self.tracers.clone())
    }

    /// Vortex positions and circulations.
    pub fn vortex_history(&self) -> Result<(&[f64], &[Vec<PlanePoint>])> {
        self.expect(Quantity::Position, self.n_vortices() > 0, "vortex positions")?;
        let circ = self
            .circulations
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("vortex file has no circulations header".into()))?;
        Ok((circ, &self.vortices))
    }

    fn expect(&self, quantity: Quantity, present: bool, what: &str) -> Result<()> {
        if self.quantity != quantity || !present {
            return Err(Error::InvalidInput(format!("file does not contain {what}")));
        }
        Ok(())
    }

    fn check_shape(&self) -> Result<()> {
        let (nv, np) = (self.n_vortices(), self.n_tracers());
        if self.vortices.len() != self.grid.nt || self.tracers.len() != self.grid.nt {
            return Err(Error::ShapeMismatch("row count differs from grid".into()));
        }
        if self.vortices.iter().any(|r| r.len() != nv) || self.tracers.iter().any(|r| r.len() != np) {
            return Err(Error::ShapeMismatch("entity count varies between samples".into()));
        }
        if let Some(c) = &self.circulations {
            if c.len() != nv {
                return Err(Error::ShapeMismatch("circulation count differs from vortex count".into()));
            }
        }
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, out: W) -> Result<()> {
        self.check_shape()?;
        let mut out = BufWriter::new(out);
        writeln!(out, "# {MAGIC} {FORMAT_VERSION}")?;
        writeln!(out, "# quantity {}", self.quantity.name())?;
        writeln!(out, "# grid t0={} h={} nt={}", self.grid.t0, self.grid.h, self.grid.nt)?;
        writeln!(out, "# provenance {}", self.provenance)?;
        let seeds: Vec<String> = self.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "# seeds {}", seeds.join(" "))?;
        if let Some(c) = &self.circulations {
            let c: Vec<String> = c.iter().map(f64::to_string).collect();
            writeln!(out, "# circulations {}", c.join(" "))?;
        }
        writeln!(out, "{}", self.quantity.columns().join(","))?;
        let mut line = String::new();
        for k in 0..self.grid.nt {
            let t = self.grid.time(k);
            for (kind, row) in [("vortex", &self.vortices[k]), ("tracer", &self.tracers[k])] {
                for (id, z) in row.iter().enumerate() {
                    line.clear();
                    let _ = writeln!(line, "{t},{kind},{id},{},{}", z.x, z.y);
                    out.write_all(line.as_bytes())?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        Ok(String::from_utf8(buf).expect("writer emits utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_writer(fs::File::create(path)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Schema { row, detail, .. } => Error::Schema { path: path.display().to_string(), row, detail },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let schema = |row: usize, detail: String| Error::Schema { path: "<input>".into(), row, detail };
        let mut header = Header::default();
        let mut body_start = 0;
        let mut header_lines = 0;
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else { break };
            header_lines += 1;
            body_start += line.len() + 1;
            header.absorb(rest.trim()).map_err(|d| schema(header_lines, d))?;
        }
        let body = text.get(body_start..).unwrap_or("");
        let (quantity, grid, provenance) = header.finish().map_err(|d| schema(header_lines, d))?;

        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let columns = reader.headers().map_err(|e| schema(header_lines + 1, e.to_string()))?;
        if columns.iter().ne(quantity.columns()) {
            return Err(schema(header_lines + 1, format!("expected columns {}", quantity.columns().join(","))));
        }

        let mut file = Self::empty(quantity, grid, provenance);
        file.seeds = header.seeds;
        file.circulations = header.circulations;
        // Sort key of the previous row: (sample, kind, id).
        let mut last: Option<(usize, u8, usize)> = None;
        for (i, rec) in reader.records().enumerate() {
            let line = header_lines + 2 + i;
            let rec = rec.map_err(|e| schema(line, e.to_string()))?;
            if rec.len() != 5 {
                return Err(schema(line, format!("expected 5 fields, found {}", rec.len())));
            }
            let t: f64 = parse_field(&rec[0], "time").map_err(|d| schema(line, d))?;
            let kind: u8 = match &rec[1] {
                "vortex" => 0,
                "tracer" => 1,
                other => return Err(schema(line, format!("unknown kind {other:?}"))),
            };
            let id: usize = parse_field(&rec[2], "id").map_err(|d| schema(line, d))?;
            let x: f64 = parse_field(&rec[3], "x").map_err(|d| schema(line, d))?;
            let y: f64 = parse_field(&rec[4], "y").map_err(|d| schema(line, d))?;

            let k = match last {
                Some((k, _, _)) if t == grid.time(k) => k,
                Some((k, _, _)) => k + 1,
                None => 0,
            };
            if k >= grid.nt || t != grid.time(k) {
                return Err(schema(line, format!("time {t} is not the next grid sample")));
            }
            let expected_id = match last {
                Some((lk, lkind, lid)) if lk == k && lkind == kind => lid + 1,
                Some((lk, lkind, _)) if lk == k && lkind > kind => {
                    return Err(schema(line, "rows not sorted by kind".into()))
                }
                _ => 0,
            };
            if id != expected_id {
                return Err(schema(line, format!("expected id {expected_id}, found {id}")));
            }
            let target = if kind == 0 { &mut file.vortices[k] } else { &mut file.tracers[k] };
            target.push(PlanePoint::new(x, y));
            last = Some((k, kind, id));
        }
        let rows = header_lines + 1 + last.map_or(0, |_| 1);
        file.check_shape().map_err(|e| schema(rows, e.to_string()))?;
        Ok(file)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
    s.trim().parse().map_err(|_| format!("cannot parse {name} from {s:?}"))
}

#[derive(Default)]
struct Header {
    version: Option<u32>,
    quantity: Option<Quantity>,
    grid: Option<TimeGrid>,
    provenance: Option<Provenance>,
    seeds: BTreeMap<String, u64>,
    circulations: Option<Vec<f64>>,
}

impl Header {
    fn absorb(&mut self, line: &str) -> std::result::Result<(), String> {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            MAGIC => {
                let v: u32 = parse_field(rest, "format version")?;
                if v != FORMAT_VERSION {
                    return Err(format!("unsupported format version {v}"));
                }
                self.version = Some(v);
            }
            "quantity" => {
                self.quantity = Some(match rest.trim() {
                    "position" => Quantity::Position,
                    "velocity" => Quantity::Velocity,
                    other => return Err(format!("unknown quantity {other:?}")),
                })
            }
            "grid" => {
                let kv = key_values(rest)?;
                let get = |k: &str| kv.get(k).ok_or_else(|| format!("grid header lacks {k}"));
                let grid = TimeGrid::new(
                    parse_field(get("t0")?, "t0")?,
                    parse_field(get("h")?, "h")?,
                    parse_field(get("nt")?, "nt")?,
                )
                .map_err(|e| e.to_string())?;
                self.grid = Some(grid);
            }
            "provenance" => self.provenance = Some(rest.trim().parse().map_err(|e: Error| e.to_string())?),
            "seeds" => {
                for (k, v) in key_values(rest)? {
                    self.seeds.insert(k.to_string(), parse_field(v, "seed")?);
                }
            }
            "circulations" => {
                let c = rest.split_whitespace().map(|s| parse_field(s, "circulation")).collect::<std::result::Result<_, _>>()?;
                self.circulations = Some(c);
            }
            _ => {}
        }
        Ok(())
    }

    fn finish(&self) -> std::result::Result<(Quantity, TimeGrid, Provenance), String> {
        self.version.ok_or("missing format line")?;
        Ok((
            self.quantity.ok_or("missing quantity header")?,
            self.grid.ok_or("missing grid header")?,
            self.provenance.ok_or("missing provenance header")?,
        ))
    }
}

fn key_values(s: &str) -> std::result::Result<BTreeMap<&str, &str>, String> {
    s.split_whitespace()
        .map(|kv| kv.split_once('=').ok_or_else(|| format!("expected key=value, found {kv:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TrajectoryFile {
        let grid = TimeGrid::new(0.0, 0.1, 3).unwrap();
        let mut f = TrajectoryFile::empty(Quantity::Position, grid, Provenance::Noisy).with_seed("noise", 7);
        f.circulations = Some(vec![1.0, -0.5]);
        f.vortices = (0..3).map(|k| vec![PlanePoint::new(k as f64, 0.1), PlanePoint::new(-1.0, 1.0 / 3.0)]).collect();
        f.tracers = (0..3).map(|k| vec![PlanePoint::new(0.5, k as f64 * 1e-300)]).collect();
        f
    }

    #[test]
    fn round_trip_is_exact() {
        let f = sample();
        let text = f.to_string().unwrap();
        assert_eq!(TrajectoryFile::parse(&text).unwrap(), f);
        assert!(text.contains("\n0.1,vortex,1,-1,0.3333333333333333\n"));
    }

    #[test]
    fn velocity_files_use_their_own_columns() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let vel = VelocityEnsemble::new(grid, vec![vec![PlanePoint::new(1.0, 2.0)]; 2]).unwrap();
        let f = TrajectoryFile::velocities_of(&vel, Provenance::Smoothed);
        let text = f.to_string().unwrap();
        assert!(text.contains("time,kind,id,vx,vy"));
        let back = TrajectoryFile::parse(&text).unwrap();
        assert_eq!(back.velocity_ensemble().unwrap(), vel);
        assert!(back.tracer_ensemble().is_err());
    }

    fn schema_row(text: &str) -> usize {
        match TrajectoryFile::parse(text) {
            Err(Error::Schema { row, .. }) => row,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let text = sample().to_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let header = lines.iter().position(|l| l.starts_with("time")).unwrap();

        let mut bad = lines.clone();
        bad[header + 3] = "0,vortex,1,abc,0";
        assert_eq!(schema_row(&bad.join("\n")), header + 4);

        let mut swapped = lines.clone();
        swapped.swap(header + 1, header + 2);
        assert_eq!(schema_row(&swapped.join("\n")), header + 2);

        let mut off_grid = lines.clone();
        off_grid[header + 4] = "0.15,vortex,0,1,0.1";
        assert_eq!(schema_row(&off_grid.join("\n")), header + 5);

        let truncated = lines[..lines.len() - 1].join("\n");
        assert!(matches!(TrajectoryFile::parse(&truncated), Err(Error::Schema { .. })));
        assert!(matches!(TrajectoryFile::parse("time,kind,id,x,y\n"), Err(Error::Schema { row: 0, .. })));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = sample().to_string().unwrap().replacen("trajectory 1", "trajectory 9", 1);
        assert!(TrajectoryFile::parse(&text).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(
            nt in 1usize..5,
            h in 1e-3f64..10.0,
            t0 in -1e3f64..1e3,
            vals in proptest::collection::vec((any::<f64>(), any::<f64>()), 12),
        ) {
            let vals: Vec<PlanePoint> = vals.into_iter()
                .map(|(x, y)| PlanePoint::new(if x.is_finite() { x } else { 0.0 }, if y.is_finite() { y } else { -0.0 }))
                .collect();
            let grid = TimeGrid::new(t0, h, nt).unwrap();
            let mut f = TrajectoryFile::empty(Quantity::Position, grid, Provenance::Raw).with_seed("tracers", 3);
            f.tracers = (0..nt).map(|k| vec![vals[k], vals[k + 6]]).collect();
            f.vortices = (0..nt).map(|k| vec![vals[k + 1]]).collect();
            f.circulations = Some(vec![vals[11].x + 1.0]);
            let back = TrajectoryFile::parse(&f.to_string().unwrap()).unwrap();
            prop_assert_eq!(back.tracers.len(), f.tracers.len());
            for (a, b) in back.tracers.iter().flatten().chain(back.vortices.iter().flatten())
                .zip(f.tracers.iter().flatten().chain(f.vortices.iter().flatten())) {
                prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
                prop_assert_eq!(a.y.to_bits(), b.y.to_bits());
            }
            prop_assert_eq!(back, f);
        }
    }
}
