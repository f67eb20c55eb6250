//! Process state, event records and the piecewise-linear trajectory they describe.

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::Polytope;
use crate::error::{Error, Result};

/// Instantaneous configuration of the process: time, position and velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl State {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Self {
        assert_eq!(x.len(), v.len(), "position and velocity dimensions differ");
        State { t: 0.0, x, v }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Moves along the current velocity for `dt` time units.
    pub fn advance(&self, dt: f64) -> State {
        let mut next = self.clone();
        next.advance_in_place(dt);
        next
    }

    pub fn advance_in_place(&mut self, dt: f64) {
        debug_assert!(dt >= 0.0, "negative time step {dt}");
        if dt == 0.0 {
            return;
        }
        self.t += dt;
        for (xi, vi) in self.x.iter_mut().zip(&self.v) {
            *xi += dt * vi;
        }
    }
}

/// Free-function form of [`State::advance`].
pub fn advance(state: &State, dt: f64) -> State {
    state.advance(dt)
}

/// What happened at a recorded event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum EventKind {
    /// Accepted switch of the given clock.
    Switch(usize),
    /// Boundary reflection against the given face.
    Reflect(usize),
    Refresh,
    /// End of a fixed-horizon run.
    Horizon,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Switch(i) => write!(f, "switch:{i}"),
            EventKind::Reflect(m) => write!(f, "reflect:{m}"),
            EventKind::Refresh => f.write_str("refresh"),
            EventKind::Horizon => f.write_str("horizon"),
        }
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown event kind {s:?}"));
        match s {
            "refresh" => Ok(EventKind::Refresh),
            "horizon" => Ok(EventKind::Horizon),
            _ => {
                let (head, idx) = s.split_once(':').ok_or_else(bad)?;
                let idx: usize = idx.parse().map_err(|_| bad())?;
                match head {
                    "switch" => Ok(EventKind::Switch(idx)),
                    "reflect" => Ok(EventKind::Reflect(idx)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

/// A velocity change (or the final horizon marker). `v` is the velocity
/// immediately after the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub kind: EventKind,
}

/// Output of a simulation: the initial state followed by every recorded event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: State,
    pub events: Vec<EventRecord>,
    /// Per-datum gradient evaluations spent producing this trajectory.
    pub grad_evals: u64,
}

/// One linear piece of a trajectory: `x(t) = x0 + (t - t0) v` for `t` in `[t0, t1]`.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub t0: f64,
    pub t1: f64,
    pub x0: &'a [f64],
    pub v: &'a [f64],
}

impl Segment<'_> {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let s = t - self.t0;
        self.x0.iter().zip(self.v).map(|(x, v)| x + s * v).collect()
    }
}

impl Trajectory {
    pub fn new(initial: State) -> Self {
        Trajectory {
            initial,
            events: Vec::new(),
            grad_evals: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn start_time(&self) -> f64 {
        self.initial.t
    }

    pub fn end_time(&self) -> f64 {
        self.events.last().map_or(self.initial.t, |e| e.t)
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Number of recorded velocity changes, excluding the horizon marker.
    pub fn event_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind != EventKind::Horizon)
            .count()
    }

    /// Linear pieces between consecutive records; zero-length pieces are skipped.
    pub fn segments(&self) -> impl Iterator<Item = Segment<'_>> + '_ {
        let mut prev_t = self.initial.t;
        let mut prev_x: &[f64] = &self.initial.x;
        let mut prev_v: &[f64] = &self.initial.v;
        self.events.iter().filter_map(move |e| {
            let seg = Segment {
                t0: prev_t,
                t1: e.t,
                x0: prev_x,
                v: prev_v,
            };
            prev_t = e.t;
            prev_x = &e.x;
            prev_v = &e.v;
            (seg.t1 > seg.t0).then_some(seg)
        })
    }

    /// Position at time `t` by linear interpolation between records.
    pub fn position_at(&self, t: f64) -> Option<Vec<f64>> {
        if t < self.start_time() || t > self.end_time() {
            return None;
        }
        let idx = self.events.partition_point(|e| e.t < t);
        let (t0, x0, v) = if idx == 0 {
            (self.initial.t, &self.initial.x, &self.initial.v)
        } else {
            let e = &self.events[idx - 1];
            (e.t, &e.x, &e.v)
        };
        let s = t - t0;
        Some(x0.iter().zip(v).map(|(x, v)| x + s * v).collect())
    }

    /// Positions at `t_start + k * dt`, `k = 0, 1, ..` while inside the trajectory.
    pub fn sample_evenly(&self, dt: f64) -> Result<Vec<Vec<f64>>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("sampling interval {dt}")));
        }
        let count = (self.duration() / dt).floor() as usize;
        let mut out = Vec::with_capacity(count);
        let mut segs = self.segments().peekable();
        for k in 0..count {
            let t = self.start_time() + k as f64 * dt;
            while let Some(seg) = segs.peek() {
                if seg.t1 <= t {
                    segs.next();
                } else {
                    break;
                }
            }
            match segs.peek() {
                Some(seg) => out.push(seg.position_at(t)),
                None => break,
            }
        }
        Ok(out)
    }

    /// Maximum relative deviation of the recorded positions from `x_{k+1} = x_k + dt v_k`.
    pub fn max_path_residual(&self) -> f64 {
        let mut prev_t = self.initial.t;
        let mut prev_x = &self.initial.x;
        let mut prev_v = &self.initial.v;
        let mut worst = 0.0_f64;
        for e in &self.events {
            let dt = e.t - prev_t;
            for ((x1, x0), v) in e.x.iter().zip(prev_x).zip(prev_v) {
                let predicted = x0 + dt * v;
                let scale = 1.0 + predicted.abs();
                worst = worst.max((x1 - predicted).abs() / scale);
            }
            prev_t = e.t;
            prev_x = &e.x;
            prev_v = &e.v;
        }
        worst
    }

    /// Applies `x -> A x` (and `v -> A v`) to every record; used to map a
    /// trajectory simulated in whitened coordinates back to the original space.
    pub fn map_linear(&self, matrix: &nalgebra::DMatrix<f64>) -> Trajectory {
        let apply = |z: &[f64]| -> Vec<f64> {
            (matrix * nalgebra::DVector::from_column_slice(z))
                .iter()
                .copied()
                .collect()
        };
        Trajectory {
            initial: State {
                t: self.initial.t,
                x: apply(&self.initial.x),
                v: apply(&self.initial.v),
            },
            events: self
                .events
                .iter()
                .map(|e| EventRecord {
                    t: e.t,
                    x: apply(&e.x),
                    v: apply(&e.v),
                    kind: e.kind,
                })
                .collect(),
            grad_evals: self.grad_evals,
        }
    }

    /// Writes `t, kind, x_1..x_d, v_1..v_d`, one row for the initial state
    /// (kind `initial`) and one per event.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let d = self.dim();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "kind".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("v_{i}")));
        w.write_record(&header)?;
        let mut row = |t: f64, kind: String, x: &[f64], v: &[f64]| {
            let mut rec = Vec::with_capacity(2 + 2 * d);
            rec.push(t.to_string());
            rec.push(kind);
            rec.extend(x.iter().map(f64::to_string));
            rec.extend(v.iter().map(f64::to_string));
            w.write_record(&rec)
        };
        row(
            self.initial.t,
            "initial".into(),
            &self.initial.x,
            &self.initial.v,
        )?;
        for e in &self.events {
            row(e.t, e.kind.to_string(), &e.x, &e.v)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the format produced by [`Trajectory::write_csv`]. `grad_evals` is not
    /// part of the CSV and comes back as zero.
    pub fn read_csv<R: io::Read>(reader: R) -> Result<Trajectory> {
        let mut r = csv::Reader::from_reader(reader);
        let width = r
            .headers()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .len();
        if width < 4 || width % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "trajectory csv has {width} columns"
            )));
        }
        let d = (width - 2) / 2;
        let mut initial = None;
        let mut events = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number {:?}", &rec[i])))
            };
            let t = num(0)?;
            let x = (0..d).map(|i| num(2 + i)).collect::<Result<Vec<_>>>()?;
            let v = (0..d).map(|i| num(2 + d + i)).collect::<Result<Vec<_>>>()?;
            if &rec[1] == "initial" {
                initial = Some(State { t, x, v });
            } else {
                events.push(EventRecord {
                    t,
                    x,
                    v,
                    kind: rec[1].parse()?,
                });
            }
        }
        let initial =
            initial.ok_or_else(|| Error::InvalidArgument("missing initial row".into()))?;
        Ok(Trajectory {
            initial,
            events,
            grad_evals: 0,
        })
    }
}

/// JSON form of a trajectory together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDocument {
    pub seed: u64,
    pub sampler: String,
    pub domain: Polytope,
    pub grad_evals: u64,
    pub trajectory: Trajectory,
}
