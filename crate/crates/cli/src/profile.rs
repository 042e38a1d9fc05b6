//! Dataset profiles and layered configuration.
//!
//! Settings resolve in three layers, later ones winning: the built-in
//! profile, then the config file, then command-line flags. The config file
//! is flat TOML whose keys are the long flag names (`voxel-size = 0.1`).

use std::path::Path;

use anyhow::{bail, Context};
use clap::Args;
use multiscan::accumulate::AccumMode;
use multiscan::downsample::{DownsampleParams, PreprocessConfig};
use multiscan::evaluate::EvalConfig;
use multiscan::window::WindowParams;
use serde::Deserialize;

const SEMANTICKITTI_NAMES: [&str; 20] = [
    "unlabeled",
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];

const NUSCENES_NAMES: [&str; 17] = [
    "ignore",
    "barrier",
    "bicycle",
    "bus",
    "car",
    "construction",
    "motorcycle",
    "pedestrian",
    "traffic-cone",
    "trailer",
    "truck",
    "driveable",
    "other-flat",
    "sidewalk",
    "terrain",
    "manmade",
    "vegetation",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: String,
    pub voxel_size: f64,
    pub accumulate_length: usize,
    pub min_dist: f64,
    pub max_voxel: usize,
    pub ref_dist: f64,
    pub lower_range: f64,
    pub upper_range: f64,
    /// Evaluated classes are `1..=class_count`; id 0 is unlabeled.
    pub class_count: u16,
    /// Label ids whose points count as moving when masks are derived from labels.
    pub moving_classes: Vec<u16>,
    pub ignore: u16,
    pub window_growth: f64,
    /// Display names indexed by class id, when known.
    pub class_names: Option<Vec<String>>,
}

fn names(list: &[&str]) -> Option<Vec<String>> {
    Some(list.iter().map(|s| s.to_string()).collect())
}

impl Profile {
    pub fn semantickitti() -> Self {
        Profile {
            name: "semantickitti".into(),
            voxel_size: 0.05,
            accumulate_length: 20,
            min_dist: 2.0,
            max_voxel: 180_000,
            ref_dist: 5.0,
            lower_range: 20.0,
            upper_range: 51.2,
            class_count: 19,
            // Raw moving-object ids (moving car, person, truck, ...).
            moving_classes: vec![252, 253, 254, 255, 256, 257, 258, 259],
            ignore: 0,
            window_growth: 2.0,
            class_names: names(&SEMANTICKITTI_NAMES),
        }
    }

    pub fn nuscenes() -> Self {
        Profile {
            name: "nuscenes".into(),
            voxel_size: 0.1,
            accumulate_length: 40,
            min_dist: 2.0,
            max_voxel: 120_000,
            ref_dist: 5.0,
            lower_range: 20.0,
            upper_range: 120.0,
            class_count: 16,
            moving_classes: vec![],
            ignore: 0,
            window_growth: 2.0,
            class_names: names(&NUSCENES_NAMES),
        }
    }

    pub fn builtin(name: &str) -> anyhow::Result<Self> {
        match name {
            "semantickitti" => Ok(Self::semantickitti()),
            "nuscenes" => Ok(Self::nuscenes()),
            _ => bail!("unknown profile `{name}` (expected semantickitti or nuscenes)"),
        }
    }

    fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = &o.$f { self.$f = v.clone(); } )* };
        }
        take!(voxel_size, accumulate_length, min_dist, max_voxel, ref_dist, lower_range, upper_range, moving_classes, ignore, window_growth);
        if let Some(c) = o.class_count {
            if c != self.class_count {
                self.class_names = None;
            }
            self.class_count = c;
        }
    }

    pub fn window(&self) -> WindowParams {
        WindowParams {
            accumulate_length: self.accumulate_length,
            min_dist: self.min_dist,
        }
    }

    pub fn downsample(&self, seed: u64) -> DownsampleParams {
        DownsampleParams {
            voxel_size: self.voxel_size,
            lower_range: self.lower_range,
            upper_range: self.upper_range,
            max_voxel: self.max_voxel,
            ref_dist: self.ref_dist,
            rng_seed: seed,
            window_growth: self.window_growth,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            num_ids: self.class_count as usize + 1,
            ignore: Some(self.ignore),
        }
    }

    /// Classes a prediction may take.
    pub fn classes(&self) -> Vec<u16> {
        (0..=self.class_count).filter(|&c| c != self.ignore).collect()
    }

    pub fn name_refs(&self) -> Option<Vec<&str>> {
        self.class_names.as_ref().map(|v| v.iter().map(String::as_str).collect())
    }
}

/// Profile overrides, shared by the command line and the config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Overrides {
    /// Built-in profile: semantickitti or nuscenes.
    #[arg(long)]
    pub profile: Option<String>,
    /// Flat TOML file with any of these settings, keyed by flag name.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    #[arg(long)]
    pub accumulate_length: Option<usize>,
    #[arg(long)]
    pub min_dist: Option<f64>,
    #[arg(long)]
    pub max_voxel: Option<usize>,
    #[arg(long)]
    pub ref_dist: Option<f64>,
    #[arg(long)]
    pub lower_range: Option<f64>,
    #[arg(long)]
    pub upper_range: Option<f64>,
    #[arg(long)]
    pub class_count: Option<u16>,
    /// Comma-separated label ids treated as moving.
    #[arg(long, value_delimiter = ',')]
    pub moving_classes: Option<Vec<u16>>,
    #[arg(long)]
    pub ignore: Option<u16>,
    #[arg(long)]
    pub window_growth: Option<f64>,
    /// Accumulation mode: smearing or non-smearing.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub profile: Profile,
    pub mode: AccumMode,
    pub seed: u64,
}

pub const DEFAULT_PROFILE: &str = "semantickitti";

impl Settings {
    /// `fallback_profile` (e.g. named by a sequence manifest) is used when
    /// neither the flags nor the config file pick a profile.
    pub fn resolve(cli: &Overrides, fallback_profile: Option<&str>) -> anyhow::Result<Self> {
        let file = match &cli.config {
            Some(p) => Overrides::from_file(p)?,
            None => Overrides::default(),
        };
        let name = cli
            .profile
            .as_deref()
            .or(file.profile.as_deref())
            .or(fallback_profile)
            .unwrap_or(DEFAULT_PROFILE);
        let mut profile = Profile::builtin(name)?;
        profile.apply(&file);
        profile.apply(cli);
        let mode = cli
            .mode
            .as_deref()
            .or(file.mode.as_deref())
            .unwrap_or("non-smearing")
            .parse::<AccumMode>()
            .map_err(anyhow::Error::msg)?;
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        Ok(Settings { profile, mode, seed })
    }

    pub fn preprocess_config(&self, carry_labels: bool) -> PreprocessConfig {
        PreprocessConfig {
            window: self.profile.window(),
            mode: self.mode,
            downsample: self.profile.downsample(self.seed),
            carry_labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_values() {
        let k = Profile::semantickitti();
        assert_eq!(
            (k.voxel_size, k.accumulate_length, k.min_dist, k.max_voxel, k.ref_dist, k.lower_range, k.upper_range, k.class_count),
            (0.05, 20, 2.0, 180_000, 5.0, 20.0, 51.2, 19)
        );
        let n = Profile::nuscenes();
        assert_eq!(
            (n.voxel_size, n.accumulate_length, n.min_dist, n.max_voxel, n.ref_dist, n.lower_range, n.upper_range, n.class_count),
            (0.1, 40, 2.0, 120_000, 5.0, 20.0, 120.0, 16)
        );
        assert_eq!(k.class_names.unwrap().len(), 20);
        assert_eq!(n.class_names.unwrap().len(), 17);
        assert!(Profile::builtin("waymo").is_err());
    }

    #[test]
    fn layers_override_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "profile = \"nuscenes\"\nmax-voxel = 1000\nmin-dist = 3.0\nmode = \"smearing\"\nseed = 5\n").unwrap();
        let cli = Overrides {
            config: Some(cfg.clone()),
            min_dist: Some(4.0),
            ..Default::default()
        };
        let s = Settings::resolve(&cli, Some("semantickitti")).unwrap();
        assert_eq!(s.profile.name, "nuscenes");
        assert_eq!(s.profile.voxel_size, 0.1);
        assert_eq!(s.profile.max_voxel, 1000);
        assert_eq!(s.profile.min_dist, 4.0);
        assert_eq!(s.mode, AccumMode::Smearing);
        assert_eq!(s.seed, 5);

        std::fs::write(&cfg, "voxel_size = 0.2\n").unwrap();
        assert!(Settings::resolve(&cli, None).is_err());
    }

    #[test]
    fn class_count_override_drops_names() {
        let cli = Overrides {
            class_count: Some(5),
            ..Default::default()
        };
        let s = Settings::resolve(&cli, None).unwrap();
        assert!(s.profile.class_names.is_none());
        assert_eq!(s.profile.classes(), vec![1, 2, 3, 4, 5]);
        assert_eq!(s.profile.eval_config().num_ids, 6);
    }
}
