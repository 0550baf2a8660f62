use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regex::Regex;

use crate::error::{Error, Result};

/// A PSG file and its hypnogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NightFiles {
    pub subject: String,
    pub night: u32,
    pub psg: PathBuf,
    pub hypnogram: PathBuf,
}

impl NightFiles {
    pub fn stem(&self) -> String {
        night_stem(&self.subject, self.night)
    }

    pub fn hypnogram_is_csv(&self) -> bool {
        self.hypnogram.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    }
}

pub fn night_stem(subject: &str, night: u32) -> String {
    format!("{subject}_n{night}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Psg,
    Hypnogram,
}

/// Classify a file name as `(subject, night, role)`. Understands Sleep-EDF
/// names (`SC4ssN?-PSG.edf`, `SC4ssN??-Hypnogram.edf`, subject `SC4ss`) and
/// the generic `<subject>_n<night>-PSG.edf` / `-Hypnogram.{edf,csv}`.
fn classify(name: &str) -> Option<(String, u32, Role)> {
    let sleep_edf = Regex::new(r"^(SC4\d\d)(\d)[A-Z0-9]{1,2}-(PSG|Hypnogram)\.edf$").unwrap();
    let generic = Regex::new(r"^(.+)_n(\d+)-(PSG\.edf|Hypnogram\.(?:edf|csv))$").unwrap();
    let role = |s: &str| if s.starts_with("PSG") { Role::Psg } else { Role::Hypnogram };
    if let Some(c) = sleep_edf.captures(name) {
        return Some((c[1].to_string(), c[2].parse().ok()?, role(&c[3])));
    }
    let c = generic.captures(name)?;
    Some((c[1].to_string(), c[2].parse().ok()?, role(&c[3])))
}

/// Pair every PSG in `dir` with its hypnogram, sorted by subject then night.
/// PSG files without a hypnogram are skipped with a warning.
pub fn find_nights(dir: &Path) -> Result<Vec<NightFiles>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut psg: BTreeMap<(String, u32), PathBuf> = BTreeMap::new();
    let mut hyp: BTreeMap<(String, u32), PathBuf> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        let Some((subject, night, role)) = classify(&name) else {
            continue;
        };
        let slot = match role {
            Role::Psg => &mut psg,
            Role::Hypnogram => &mut hyp,
        };
        if let Some(prev) = slot.insert((subject.clone(), night), entry.path()) {
            return Err(Error::Config(format!(
                "two {role:?} files for {subject} night {night}: {} and {}",
                prev.display(),
                entry.path().display()
            )));
        }
    }
    let mut out = Vec::new();
    for ((subject, night), p) in psg {
        match hyp.remove(&(subject.clone(), night)) {
            Some(h) => out.push(NightFiles {
                subject,
                night,
                psg: p,
                hypnogram: h,
            }),
            None => log::warn!("{} has no hypnogram; skipped", p.display()),
        }
    }
    for (subject, night) in hyp.keys() {
        log::warn!("hypnogram for {subject} night {night} has no PSG; skipped");
    }
    Ok(out)
}
