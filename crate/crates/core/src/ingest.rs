//! Price panel and sector map loading.
//!
//! Price files are CSV with a `date` column followed by one column per
//! asset. Sector maps are two-column CSV files `asset_id,sector`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correlation::PricePanel;
use crate::error::{Error, Result};

/// Industry sectors in sorting order; unmapped assets fall into `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sector {
    CD,
    CS,
    HC,
    EG,
    FN,
    ID,
    IT,
    MT,
    TC,
    UT,
    Other,
}

impl Sector {
    pub const ALL: [Sector; 11] = [
        Sector::CD,
        Sector::CS,
        Sector::HC,
        Sector::EG,
        Sector::FN,
        Sector::ID,
        Sector::IT,
        Sector::MT,
        Sector::TC,
        Sector::UT,
        Sector::Other,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Sector::CD => "CD",
            Sector::CS => "CS",
            Sector::HC => "HC",
            Sector::EG => "EG",
            Sector::FN => "FN",
            Sector::ID => "ID",
            Sector::IT => "IT",
            Sector::MT => "MT",
            Sector::TC => "TC",
            Sector::UT => "UT",
            Sector::Other => "other",
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Sector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        Sector::ALL
            .into_iter()
            .find(|sec| sec.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown sector `{s}`"))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SectorMap {
    map: BTreeMap<String, Sector>,
}

impl SectorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, asset: impl Into<String>, sector: Sector) {
        self.map.insert(asset.into(), sector);
    }

    pub fn get(&self, asset: &str) -> Sector {
        self.map.get(asset).copied().unwrap_or(Sector::Other)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn format_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub fn load_sectors(path: &Path) -> Result<SectorMap> {
    let mut rdr = reader(path)?;
    let mut map = SectorMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(format_err(
                path,
                line,
                format!("expected 2 fields, found {}", rec.len()),
            ));
        }
        let sector = rec[1]
            .parse::<Sector>()
            .map_err(|m| format_err(path, line, m))?;
        map.insert(&rec[0], sector);
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedAsset {
    pub asset: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: PricePanel,
    pub dropped: Vec<DroppedAsset>,
}

/// Reads a price CSV and drops assets with missing or non-positive values.
pub fn load_prices(path: &Path) -> Result<LoadedPanel> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || !headers[0].eq_ignore_ascii_case("date") {
        return Err(format_err(path, 1, "first column must be `date`"));
    }
    let ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if ids.is_empty() {
        return Err(format_err(path, 1, "no asset columns"));
    }
    if let Some(id) = ids.iter().find(|id| id.is_empty()) {
        return Err(format_err(path, 1, format!("empty asset id `{id}`")));
    }
    let mut dates = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    let mut reasons: Vec<Option<String>> = vec![None; ids.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(format_err(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let date = rec[0].to_string();
        if date.is_empty() {
            return Err(format_err(path, line, "empty date"));
        }
        if let Some(prev) = dates.last() {
            if &date <= prev {
                return Err(format_err(
                    path,
                    line,
                    format!("date `{date}` does not follow `{prev}`"),
                ));
            }
        }
        for (a, cell) in rec.iter().skip(1).enumerate() {
            let value = if cell.is_empty()
                || cell.eq_ignore_ascii_case("nan")
                || cell.eq_ignore_ascii_case("na")
            {
                if reasons[a].is_none() {
                    reasons[a] = Some(format!("missing value on {date}"));
                }
                f64::NAN
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    format_err(
                        path,
                        line,
                        format!("unparsable number `{cell}` for `{}`", ids[a]),
                    )
                })?;
                if !(v > 0.0 && v.is_finite()) && reasons[a].is_none() {
                    reasons[a] = Some("non-positive price".to_string());
                }
                v
            };
            columns[a].push(value);
        }
        dates.push(date);
    }
    let mut kept_ids = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (a, id) in ids.into_iter().enumerate() {
        match reasons[a].take() {
            Some(reason) => dropped.push(DroppedAsset { asset: id, reason }),
            None => {
                kept_ids.push(id);
                kept.push(a);
            }
        }
    }
    if kept.is_empty() || dates.is_empty() {
        return Err(Error::data(format!(
            "{}: no complete asset series ({} dropped, {} dates)",
            path.display(),
            dropped.len(),
            dates.len()
        )));
    }
    let prices = DMatrix::from_fn(kept.len(), dates.len(), |i, t| columns[kept[i]][t]);
    let panel = PricePanel::new(prices, kept_ids, dates)?;
    Ok(LoadedPanel { panel, dropped })
}

/// Writes a panel in the layout read by [`load_prices`].
pub fn write_prices(path: &Path, panel: &PricePanel) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let e = |err| Error::io(path, err);
    write!(w, "date").map_err(e)?;
    for id in &panel.asset_ids {
        write!(w, ",{id}").map_err(e)?;
    }
    writeln!(w).map_err(e)?;
    for (t, date) in panel.dates.iter().enumerate() {
        write!(w, "{date}").map_err(e)?;
        for i in 0..panel.n_assets() {
            write!(w, ",{}", panel.prices[(i, t)]).map_err(e)?;
        }
        writeln!(w).map_err(e)?;
    }
    w.flush().map_err(e)
}

/// Reorders assets by sector, then asset id, and records each asset's sector.
pub fn sector_sort(panel: &PricePanel, sectors: &SectorMap) -> PricePanel {
    let labels: Vec<Sector> = panel.asset_ids.iter().map(|id| sectors.get(id)).collect();
    let mut order: Vec<usize> = (0..panel.n_assets()).collect();
    order.sort_by(|&a, &b| {
        labels[a]
            .cmp(&labels[b])
            .then_with(|| panel.asset_ids[a].cmp(&panel.asset_ids[b]))
    });
    PricePanel {
        prices: panel.prices.select_rows(order.iter()),
        asset_ids: order.iter().map(|&i| panel.asset_ids[i].clone()).collect(),
        sectors: order.iter().map(|&i| labels[i]).collect(),
        dates: panel.dates.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const CLEAN: &str = "date,A,B,C\n\
        2020-01-01,1,2,3\n2020-01-02,1.1,2.1,3.1\n2020-01-03,1.2,2.2,3.2\n\
        2020-01-06,1.3,2.3,3.3\n2020-01-07,1.4,2.4,3.4\n";

    #[test]
    fn clean_panel() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = load_prices(&write(&dir, "p.csv", CLEAN)).unwrap();
        assert_eq!(loaded.panel.prices.shape(), (3, 5));
        assert!(loaded.dropped.is_empty());
        assert_eq!(loaded.panel.prices[(1, 2)], 2.2);
    }

    #[test]
    fn missing_value_drops_asset() {
        let dir = tempfile::tempdir().unwrap();
        let body = CLEAN.replace("2020-01-03,1.2,2.2,3.2", "2020-01-03,1.2,,3.2");
        let loaded = load_prices(&write(&dir, "p.csv", &body)).unwrap();
        assert_eq!(loaded.panel.asset_ids, vec!["A", "C"]);
        assert_eq!(loaded.dropped[0].asset, "B");
        assert!(loaded.dropped[0].reason.contains("missing"));
    }

    #[test]
    fn negative_price_drops_asset() {
        let dir = tempfile::tempdir().unwrap();
        let body = CLEAN.replace("3.3", "-3.3");
        let loaded = load_prices(&write(&dir, "p.csv", &body)).unwrap();
        assert_eq!(loaded.dropped.len(), 1);
        assert_eq!(loaded.dropped[0].reason, "non-positive price");
    }

    #[test]
    fn format_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = CLEAN.replace("2.1", "abc");
        match load_prices(&write(&dir, "p.csv", &body)) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let body = CLEAN.replace("2020-01-06,1.3,2.3,3.3", "2020-01-06,1.3,2.3");
        assert!(matches!(
            load_prices(&write(&dir, "q.csv", &body)),
            Err(Error::Format { line: 5, .. })
        ));
    }

    #[test]
    fn all_dropped_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "date,A\n2020-01-01,0\n2020-01-02,1\n");
        assert!(matches!(load_prices(&p), Err(Error::Data(_))));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = load_prices(&write(&dir, "p.csv", CLEAN)).unwrap();
        let out = dir.path().join("out.csv");
        write_prices(&out, &loaded.panel).unwrap();
        let again = load_prices(&out).unwrap();
        assert_eq!(again.panel, loaded.panel);
    }

    #[test]
    fn sectors_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "asset_id,sector\nA,IT\nB,fn\n");
        let map = load_sectors(&p).unwrap();
        assert_eq!(map.get("A"), Sector::IT);
        assert_eq!(map.get("B"), Sector::FN);
        assert_eq!(map.get("Z"), Sector::Other);
        let bad = write(&dir, "b.csv", "asset_id,sector\nA,XX\n");
        assert!(matches!(
            load_sectors(&bad),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn sorting() {
        let dir = tempfile::tempdir().unwrap();
        let panel = load_prices(&write(&dir, "p.csv", CLEAN)).unwrap().panel;
        let mut map = SectorMap::new();
        map.insert("A", Sector::UT);
        map.insert("B", Sector::CD);
        let sorted = sector_sort(&panel, &map);
        assert_eq!(sorted.asset_ids, vec!["B", "A", "C"]);
        assert_eq!(sorted.sectors, vec![Sector::CD, Sector::UT, Sector::Other]);
        assert_eq!(sorted.prices.row(0), panel.prices.row(1));
        assert_eq!(sector_sort(&sorted, &map), sorted);
    }
}
