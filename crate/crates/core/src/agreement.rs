//! Accuracy and agreement statistics.
//!
//! Error metrics (RMSE, MAE, ME, R^2 and the %-normalised variants) and
//! Willmott's refined index `d_r` compare predictions `yhat` against
//! reference values `y`. The Ji-Gallo agreement coefficient and its
//! systematic/unsystematic split compare two maps symmetrically through the
//! geometric mean functional relationship (GMFR).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexscale::{self, BBox};
use crate::par;

/// Scaling constant of Willmott's `d_r`.
pub const WILLMOTT_C: f64 = 2.0;

/// Reference and predicted values for the same units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    ids: Vec<String>,
    y: Vec<f64>,
    yhat: Vec<f64>,
}

impl PairedSample {
    pub fn new(ids: Vec<String>, y: Vec<f64>, yhat: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidInput("paired sample is empty".into()));
        }
        if ids.len() != y.len() || y.len() != yhat.len() {
            return Err(Error::InvalidInput(format!(
                "length mismatch: {} ids, {} y, {} yhat",
                ids.len(),
                y.len(),
                yhat.len()
            )));
        }
        if y.iter().chain(&yhat).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("paired sample has non-finite values".into()));
        }
        Ok(PairedSample { ids, y, yhat })
    }

    /// Pairs with ids `0..n`.
    pub fn from_values(y: Vec<f64>, yhat: Vec<f64>) -> Result<Self> {
        let ids = (0..y.len()).map(|i| i.to_string()).collect();
        PairedSample::new(ids, y, yhat)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn yhat(&self) -> &[f64] {
        &self.yhat
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// The same pairs with the roles of `y` and `yhat` exchanged.
    pub fn swapped(&self) -> PairedSample {
        PairedSample {
            ids: self.ids.clone(),
            y: self.yhat.clone(),
            yhat: self.y.clone(),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One row of an accuracy table. Metric fields are `None` when they are
/// undefined for the sample (e.g. R^2 with constant `y`) or when the scale
/// produced fewer than two comparison units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Hexagon centroid spacing in km; `None` for the plot-to-pixel row.
    pub scale_km: Option<f64>,
    pub n: usize,
    /// Mean plots per hexagon; `None` for the plot-to-pixel row.
    pub pph: Option<f64>,
    pub mae: Option<f64>,
    pub pct_mae: Option<f64>,
    pub rmse: Option<f64>,
    pub pct_rmse: Option<f64>,
    pub me: Option<f64>,
    pub r2: Option<f64>,
    pub dr: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 10] = [
        "scale", "n", "pph", "mae", "pct_mae", "rmse", "pct_rmse", "me", "r2", "dr",
    ];

    pub fn scale_label(&self) -> String {
        match self.scale_km {
            None => "plot:pixel".to_string(),
            Some(s) => format!("{s} km"),
        }
    }

    fn empty(scale_km: Option<f64>, n: usize, pph: Option<f64>) -> Self {
        MetricsReport {
            scale_km,
            n,
            pph,
            mae: None,
            pct_mae: None,
            rmse: None,
            pct_rmse: None,
            me: None,
            r2: None,
            dr: None,
        }
    }
}

/// RMSE, MAE, ME, R^2, `d_r` and the normalised RMSE/MAE (percent of
/// `ybar_train`, omitted when `ybar_train` is not positive).
pub fn basic_metrics(pairs: &PairedSample, ybar_train: Option<f64>) -> MetricsReport {
    let n = pairs.len() as f64;
    let ybar = mean(&pairs.y);
    let mut sse = 0.0;
    let mut sae = 0.0;
    let mut se = 0.0;
    let mut sst = 0.0;
    for (y, yh) in pairs.y.iter().zip(&pairs.yhat) {
        let e = y - yh;
        sse += e * e;
        sae += e.abs();
        se += e;
        sst += (y - ybar) * (y - ybar);
    }
    let rmse = (sse / n).sqrt();
    let mae = sae / n;
    let pct = |m: f64| ybar_train.filter(|v| *v > 0.0).map(|yb| 100.0 * m / yb);
    MetricsReport {
        scale_km: None,
        n: pairs.len(),
        pph: None,
        mae: Some(mae),
        pct_mae: pct(mae),
        rmse: Some(rmse),
        pct_rmse: pct(rmse),
        me: Some(se / n),
        r2: if sst > 0.0 && pairs.len() >= 2 {
            Some(1.0 - sse / sst)
        } else {
            None
        },
        dr: willmott_dr(pairs, WILLMOTT_C),
    }
}

/// Willmott's refined index of agreement. `None` when every `y` is equal.
pub fn willmott_dr(pairs: &PairedSample, c: f64) -> Option<f64> {
    let ybar = mean(&pairs.y);
    let err: f64 = pairs
        .y
        .iter()
        .zip(&pairs.yhat)
        .map(|(y, yh)| (yh - y).abs())
        .sum();
    let dev: f64 = pairs.y.iter().map(|y| (y - ybar).abs()).sum();
    let scaled = c * dev;
    if scaled <= 0.0 {
        return None;
    }
    if err <= scaled {
        Some(1.0 - err / scaled)
    } else {
        Some(scaled / err - 1.0)
    }
}

/// GMFR line `y' = a + b*yhat` and its inverse `yhat' = -a/b + y/b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmfrFit {
    pub a: f64,
    pub b: f64,
    pub y_fitted: Vec<f64>,
    pub yhat_fitted: Vec<f64>,
}

/// Fits the GMFR predicting `y` from `yhat`:
/// `|b| = sqrt(sum (y - ybar)^2 / sum (yhat - yhatbar)^2)`, sign of the
/// correlation (positive when the correlation is exactly zero),
/// `a = ybar - b * yhatbar`.
pub fn gmfr_fit(pairs: &PairedSample) -> Result<GmfrFit> {
    let ybar = mean(&pairs.y);
    let hbar = mean(&pairs.yhat);
    let mut syy = 0.0;
    let mut shh = 0.0;
    let mut syh = 0.0;
    for (y, h) in pairs.y.iter().zip(&pairs.yhat) {
        let dy = y - ybar;
        let dh = h - hbar;
        syy += dy * dy;
        shh += dh * dh;
        syh += dy * dh;
    }
    if !(syy > 0.0 && shh > 0.0) {
        return Err(Error::Degenerate(
            "GMFR needs non-zero variance in both variables".into(),
        ));
    }
    let sign = if syh < 0.0 { -1.0 } else { 1.0 };
    let b = sign * (syy / shh).sqrt();
    let a = ybar - b * hbar;
    let y_fitted = pairs.yhat.iter().map(|h| a + b * h).collect();
    let yhat_fitted = pairs.y.iter().map(|y| -a / b + y / b).collect();
    Ok(GmfrFit {
        a,
        b,
        y_fitted,
        yhat_fitted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcDecomposition {
    pub ac: f64,
    pub ac_s: f64,
    pub ac_u: f64,
    /// Sum of squared differences.
    pub ssd: f64,
    /// Unsystematic sum of products `sum |yhat - yhat'| * |y - y'|`.
    pub spd_u: f64,
    /// Potential sum of products (the shared denominator).
    pub psd: f64,
}

fn ac_terms(pairs: &PairedSample) -> (f64, f64) {
    let ybar = mean(&pairs.y);
    let hbar = mean(&pairs.yhat);
    let offset = (hbar - ybar).abs();
    let mut ssd = 0.0;
    let mut psd = 0.0;
    for (y, h) in pairs.y.iter().zip(&pairs.yhat) {
        ssd += (h - y) * (h - y);
        psd += (offset + (h - hbar).abs()) * (offset + (y - ybar).abs());
    }
    (ssd, psd)
}

/// Agreement coefficient alone; defined whenever the denominator is
/// positive, even if one map is constant.
pub fn agreement_coefficient(pairs: &PairedSample) -> Result<f64> {
    let (ssd, psd) = ac_terms(pairs);
    if !(psd > 0.0) {
        return Err(Error::Degenerate("agreement coefficient denominator is zero".into()));
    }
    Ok(1.0 - ssd / psd)
}

/// AC with its systematic and unsystematic components. The components are
/// built so that `ac_s + ac_u - 1 == ac`.
pub fn ac_decompose(pairs: &PairedSample) -> Result<AcDecomposition> {
    let (ssd, psd) = ac_terms(pairs);
    if !(psd > 0.0) {
        return Err(Error::Degenerate("agreement coefficient denominator is zero".into()));
    }
    let fit = gmfr_fit(pairs)?;
    let spd_u: f64 = pairs
        .yhat
        .iter()
        .zip(&fit.yhat_fitted)
        .zip(pairs.y.iter().zip(&fit.y_fitted))
        .map(|((h, hf), (y, yf))| (h - hf).abs() * (y - yf).abs())
        .sum();
    Ok(AcDecomposition {
        ac: 1.0 - ssd / psd,
        ac_s: 1.0 - (ssd - spd_u) / psd,
        ac_u: 1.0 - spd_u / psd,
        ssd,
        spd_u,
        psd,
    })
}

/// Right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `F(x)`: fraction of the sample `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Step table: each distinct sample value with `F` at that value.
    pub fn table(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, v) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == *v => last.1 = f,
                _ => out.push((*v, f)),
            }
        }
        out
    }
}

pub fn ecdf(values: &[f64]) -> Result<Ecdf> {
    if values.is_empty() {
        return Err(Error::InvalidInput("ECDF of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("ECDF sample contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(Ecdf { sorted })
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`, evaluated
/// exactly at every pooled sample point.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let ea = ecdf(a)?;
    let eb = ecdf(b)?;
    let (xs, ys) = (&ea.sorted, &eb.sorted);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() || j < ys.len() {
        let v = match (xs.get(i), ys.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Reference/prediction pairs with map coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedPairs {
    pub pairs: PairedSample,
    pub locations: Vec<(f64, f64)>,
}

impl LocatedPairs {
    pub fn new(pairs: PairedSample, locations: Vec<(f64, f64)>) -> Result<Self> {
        if locations.len() != pairs.len() {
            return Err(Error::InvalidInput(
                "one location is needed per pair".into(),
            ));
        }
        Ok(LocatedPairs { pairs, locations })
    }
}

/// Default hexagon spacings in km; 1 km is the plot-to-pixel passthrough.
pub const DEFAULT_SCALES_KM: [f64; 12] = [
    1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0,
];

/// Per-scale hexagon means ready for metric evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAggregate {
    pub scale_km: f64,
    pub aggregates: Vec<hexscale::HexAggregate>,
}

/// Accuracy metrics at each hexagon spacing (km). The 1 km scale reports
/// plot-to-pixel metrics on the raw pairs (`scale_km = None`). Coordinates
/// are in metres. Scales with fewer than two occupied hexagons get a row
/// with metrics absent.
pub fn multiscale_assessment(
    data: &LocatedPairs,
    region: BBox,
    spacings_km: &[f64],
    ybar_train: Option<f64>,
) -> Result<(Vec<MetricsReport>, Vec<ScaleAggregate>)> {
    if spacings_km.is_empty() {
        return Err(Error::InvalidInput("no assessment scales given".into()));
    }
    let rows = par::map_slice(spacings_km, |&km| -> Result<(MetricsReport, Option<ScaleAggregate>)> {
        if km <= 1.0 {
            return Ok((basic_metrics(&data.pairs, ybar_train), None));
        }
        let hexgrid = hexscale::make_hexgrid(region, km * 1000.0)?;
        let aggs = hexscale::aggregate_pairs(&data.locations, data.pairs.y(), data.pairs.yhat(), &hexgrid)?;
        let n = aggs.len();
        let pph = data.pairs.len() as f64 / n as f64;
        let report = if n < 2 {
            MetricsReport::empty(Some(km), n, Some(pph))
        } else {
            let hex_pairs = PairedSample::new(
                aggs.iter().map(|a| a.hex_id.to_string()).collect(),
                aggs.iter().map(|a| a.y_mean).collect(),
                aggs.iter().map(|a| a.yhat_mean).collect(),
            )?;
            MetricsReport {
                scale_km: Some(km),
                pph: Some(pph),
                ..basic_metrics(&hex_pairs, ybar_train)
            }
        };
        Ok((
            report,
            Some(ScaleAggregate {
                scale_km: km,
                aggregates: aggs,
            }),
        ))
    });
    let mut reports = Vec::with_capacity(rows.len());
    let mut aggregates = Vec::new();
    for row in rows {
        let (r, a) = row?;
        reports.push(r);
        aggregates.extend(a);
    }
    Ok((reports, aggregates))
}
