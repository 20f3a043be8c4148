use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Extent, Point};
use crate::routing::TravelModel;
use crate::sim::{synthesize_deadline, OrderRequest, World, WorldConfig};

/// A Gaussian blob of trip endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub x: f64,
    pub y: f64,
    pub sigma_km: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TripSource {
    /// Poisson arrivals per step; endpoints uniform over the extent, or
    /// drawn from the hotspots when any are given.
    Synthetic {
        rate: f64,
        #[serde(default)]
        hotspots: Vec<Hotspot>,
    },
    /// A trip CSV; relative paths resolve against the scenario file.
    Csv { path: PathBuf },
}

/// Everything needed to build an episode: world parameters, where trips
/// come from, and the evaluation seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub world: WorldConfig,
    pub source: TripSource,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

/// The pinned desk-scale scenario.
pub const DESK_SCENARIO: &str = include_str!("../../scenarios/desk.toml");

impl ScenarioSpec {
    pub fn desk() -> Self {
        Self::from_toml(DESK_SCENARIO).expect("bundled scenario parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_toml(&text)?;
        if let TripSource::Csv { path: csv } = &mut spec.source {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if let TripSource::Synthetic { rate, hotspots } = &self.source {
            if !(rate.is_finite() && *rate >= 0.0) {
                return Err(Error::Config(format!("arrival rate must be finite and non-negative, got {rate}")));
            }
            if hotspots.iter().any(|h| !(h.sigma_km > 0.0 && h.weight > 0.0)) {
                return Err(Error::Config("hotspots need positive sigma and weight".into()));
            }
        }
        Ok(())
    }

    /// Trip requests for one episode.
    pub fn requests(&self, seed: u64) -> Result<Vec<OrderRequest>> {
        match &self.source {
            TripSource::Synthetic { .. } => Ok(synth_scenario(self, seed)),
            TripSource::Csv { path } => load_trip_csv(path, &self.world),
        }
    }

    /// A fresh world for `seed`: worker placement and (synthetic) trips both
    /// derive from it.
    pub fn build_world(&self, seed: u64) -> Result<World> {
        let config = WorldConfig { seed, ..self.world.clone() };
        World::new(config, self.requests(seed)?)
    }
}

/// Seed of training episode `episode` in run `run`; disjoint in practice
/// from the small evaluation seeds.
pub fn episode_seed(run: u64, episode: usize) -> u64 {
    let mut z = run.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= (episode as u64).wrapping_add(1).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z | (1 << 40)
}

fn sample_point(rng: &mut ChaCha8Rng, extent: Extent, hotspots: &[Hotspot]) -> Point {
    if hotspots.is_empty() {
        return Point::new(rng.random_range(0.0..=extent.width_km), rng.random_range(0.0..=extent.height_km));
    }
    let total: f64 = hotspots.iter().map(|h| h.weight).sum();
    let mut pick = rng.random_range(0.0..total);
    let h = hotspots
        .iter()
        .find(|h| {
            pick -= h.weight;
            pick < 0.0
        })
        .unwrap_or(&hotspots[hotspots.len() - 1]);
    let normal = Normal::new(0.0, h.sigma_km).expect("validated sigma");
    Point::new(
        (h.x + normal.sample(rng)).clamp(0.0, extent.width_km),
        (h.y + normal.sample(rng)).clamp(0.0, extent.height_km),
    )
}

/// Poisson arrivals for every step of the horizon.
pub fn synth_scenario(spec: &ScenarioSpec, seed: u64) -> Vec<OrderRequest> {
    let TripSource::Synthetic { rate, hotspots } = &spec.source else {
        return Vec::new();
    };
    // Separate stream from worker placement, which uses `seed` directly.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out = Vec::new();
    if *rate <= 0.0 {
        return out;
    }
    let poisson = Poisson::new(*rate).expect("validated rate");
    for step in 0..spec.world.horizon {
        let count = poisson.sample(&mut rng) as usize;
        for _ in 0..count {
            let origin = sample_point(&mut rng, spec.world.extent, hotspots);
            let destination = sample_point(&mut rng, spec.world.extent, hotspots);
            out.push(OrderRequest { request_time: step, origin, destination, deadline: None });
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct TripRow {
    request_step: u32,
    pickup_x_km: f64,
    pickup_y_km: f64,
    drop_x_km: f64,
    drop_y_km: f64,
    #[serde(default)]
    deadline_step: Option<u32>,
}

const TRIP_HEADER: [&str; 5] = ["request_step", "pickup_x_km", "pickup_y_km", "drop_x_km", "drop_y_km"];

/// Reads a trip CSV, validates every row against `world`, fills missing
/// deadlines and returns the requests sorted by request step.
pub fn load_trip_csv(path: impl AsRef<Path>, world: &WorldConfig) -> Result<Vec<OrderRequest>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_trip_csv(file, world).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_trip_csv<R: std::io::Read>(input: R, world: &WorldConfig) -> Result<Vec<OrderRequest>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| Error::Data(format!("line 1: {e}")))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let optional_ok = names.len() == 5 || (names.len() == 6 && names[5] == "deadline_step");
    if names.len() < 5 || names[..5] != TRIP_HEADER || !optional_ok {
        return Err(Error::Data(format!(
            "line 1: header must be {}[,deadline_step], got {}",
            TRIP_HEADER.join(","),
            names.join(",")
        )));
    }
    let travel = world.travel();
    let mut out = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = record.as_ref().ok().and_then(|r| r.position()).map_or(k as u64 + 2, |p| p.line());
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let row: TripRow = record.deserialize(Some(&header)).map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let origin = Point::new(row.pickup_x_km, row.pickup_y_km);
        let destination = Point::new(row.drop_x_km, row.drop_y_km);
        for (what, p) in [("pickup", origin), ("dropoff", destination)] {
            if !(p.x.is_finite() && p.y.is_finite()) || !world.extent.contains(p) {
                return Err(Error::Data(format!("line {line}: {what} ({}, {}) outside the city extent", p.x, p.y)));
            }
        }
        if row.request_step >= world.horizon {
            return Err(Error::Data(format!(
                "line {line}: request step {} beyond horizon {}",
                row.request_step, world.horizon
            )));
        }
        let direct = travel.travel_time(origin, destination);
        let deadline = row.deadline_step.unwrap_or_else(|| synthesize_deadline(row.request_step, direct, world.patience));
        out.push(OrderRequest { request_time: row.request_step, origin, destination, deadline: Some(deadline) });
    }
    out.sort_by_key(|r| r.request_time);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<OrderRequest>> {
        parse_trip_csv(text.as_bytes(), &WorldConfig::default())
    }

    #[test]
    fn csv_ingestion() {
        assert!(parse("request_step,pickup_x_km,pickup_y_km,drop_x_km,drop_y_km\n").unwrap().is_empty());
        let rows = parse("request_step,pickup_x_km,pickup_y_km,drop_x_km,drop_y_km\n5,0,0,3,4\n2,1,1,1,1\n").unwrap();
        assert_eq!(rows.iter().map(|r| r.request_time).collect::<Vec<_>>(), vec![2, 5]);
        // 5 km at 60 km/h: ceil(1.5 * 5) + 5 = 13 after the request.
        assert_eq!(rows[1].deadline, Some(5 + 8 + 5));
        let with = parse("request_step,pickup_x_km,pickup_y_km,drop_x_km,drop_y_km,deadline_step\n1,0,0,1,1,9\n1,0,0,1,1,\n")
            .unwrap();
        assert_eq!(with[0].deadline, Some(9));
        assert_eq!(with[1].deadline, Some(1 + 3 + 5));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse("request_step,pickup_x_km,pickup_y_km,drop_x_km,drop_y_km\n1,0,0,1,1\n2,x,0,1,1\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse("request_step,pickup_x_km,pickup_y_km,drop_x_km,drop_y_km\n1,0,0,11,1\n").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("outside"), "{err}");
        assert!(matches!(parse("a,b\n1,2\n"), Err(Error::Data(_))));
    }

    #[test]
    fn synthetic_streams() {
        let mut spec = ScenarioSpec::desk();
        assert_eq!(synth_scenario(&spec, 7), synth_scenario(&spec, 7));
        assert_ne!(synth_scenario(&spec, 7), synth_scenario(&spec, 8));
        spec.source = TripSource::Synthetic { rate: 0.0, hotspots: vec![] };
        assert!(synth_scenario(&spec, 7).is_empty());
    }

    #[test]
    fn desk_scenario_is_pinned() {
        let spec = ScenarioSpec::desk();
        assert_eq!(spec.world.workers, 20);
        assert_eq!(spec.world.capacity, 3);
        assert_eq!(spec.world.horizon, 30);
        assert_eq!(spec.world.patience, 5);
        assert_eq!(spec.world.extent, Extent { width_km: 10.0, height_km: 10.0 });
        assert_eq!(spec.source, TripSource::Synthetic { rate: 4.0, hotspots: vec![] });
        assert_eq!(spec.seeds, vec![1, 2, 3]);
    }
}
