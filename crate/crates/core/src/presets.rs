//! Named architectures and sensitivity settings for the public and
//! reference data sets.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub hidden: &'static [usize],
    pub dropout: f64,
    pub learning_rate: f64,
    pub look_back: usize,
    /// Dense output width, which is also the look-ahead.
    pub look_ahead: usize,
    pub q: f64,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "vehicular-travel-time",
        hidden: &[20],
        dropout: 0.2,
        learning_rate: 0.01,
        look_back: 1,
        look_ahead: 1,
        q: 1e-4,
    },
    Preset {
        name: "vehicular-speed",
        hidden: &[60],
        dropout: 0.19,
        learning_rate: 1e-4,
        look_back: 1,
        look_ahead: 1,
        q: 1e-3,
    },
    Preset {
        name: "vehicle-occupancy",
        hidden: &[50],
        dropout: 0.23,
        learning_rate: 1e-4,
        look_back: 1,
        look_ahead: 1,
        q: 1e-5,
    },
    Preset {
        name: "nyc-taxi",
        hidden: &[50, 20],
        dropout: 0.4,
        learning_rate: 1e-4,
        look_back: 48,
        look_ahead: 24,
        q: 1e-5,
    },
    Preset {
        name: "bengaluru-taxi",
        hidden: &[20, 10],
        dropout: 0.25,
        learning_rate: 1e-4,
        look_back: 48,
        look_ahead: 24,
        q: 1e-5,
    },
    Preset {
        name: "ecg",
        hidden: &[60, 30],
        dropout: 0.1,
        learning_rate: 0.05,
        look_back: 20,
        look_ahead: 5,
        q: 1e-4,
    },
    Preset {
        name: "bitcoin",
        hidden: &[10],
        dropout: 0.1,
        learning_rate: 1e-4,
        look_back: 1,
        look_ahead: 1,
        q: 1e-3,
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        let p = preset("nyc-taxi").unwrap();
        assert_eq!(p.hidden, [50, 20]);
        assert_eq!((p.dropout, p.look_ahead, p.learning_rate), (0.4, 24, 1e-4));
        assert!(preset("nope").is_none());
        assert_eq!(preset_names().len(), 7);
    }
}
