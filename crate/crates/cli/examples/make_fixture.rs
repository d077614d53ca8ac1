//! Regenerates the bundled fixture dataset under `fixtures/raw`.
//!
//! The data are synthetic but shaped like the real inputs: weekly prices and
//! caps for a rotating top-100 universe (253 distinct non-stablecoin assets
//! over the sample), stablecoins, late listings, mid-week delistings, sparse
//! hack events and daily index series. Asset returns are shifted each week so
//! the value-weighted market excess return equals the R_C descriptive fixture.
//!
//! cargo run -p riskprem-cli --example make_fixture -- [out_dir]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const RC_FIXTURE: &str = include_str!("../../core/tests/fixtures/rc_descriptive.csv");

const N_WEEKS: usize = 111;
const SAMPLE_FROM: usize = 6;
const N_CORE: usize = 60;
const N_SLOTS: usize = 37;
const N_ROTATORS: usize = 193;
const N_TAIL: usize = 40;
const STABLES: [(&str, f64); 3] = [("USDT", 9.0e10), ("USDC", 4.0e10), ("DAI", 5.0e9)];

const EQUITY: [(&str, f64, f64); 6] = [
    ("R_S", 0.36, 1.91),
    ("SMB_S", -0.13, 1.72),
    ("HML_S", -0.18, 1.45),
    ("RMW_S", 0.05, 1.08),
    ("CMA_S", -0.23, 0.94),
    ("Mom_S", 0.05, 1.81),
];
// name, beta on R_S, idiosyncratic sd
const INDUSTRIES: [(&str, f64, f64); 8] = [
    ("Softw", 1.3, 1.8),
    ("Chips", 1.6, 2.6),
    ("Banks", 1.1, 2.2),
    ("Insur", 0.7, 1.5),
    ("Fin", 1.0, 1.4),
    ("Util", 0.4, 1.9),
    ("RlEst", 0.9, 2.1),
    ("Gold", 0.1, 2.0),
];

fn week(w: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 11, 20).unwrap() + Days::new(7 * w as u64)
}

/// Rounds to the precision written to disk so the generator and the
/// pipeline see identical numbers.
fn q(x: f64) -> f64 {
    fmt_num(x).parse().unwrap()
}

fn fmt_num(x: f64) -> String {
    format!("{}", format!("{x:.11e}").parse::<f64>().unwrap())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Normal draws rescaled so `idx` has exactly the given mean and sd.
fn standardized(rng: &mut ChaCha8Rng, n: usize, idx: std::ops::Range<usize>, mean: f64, sd: f64) -> Vec<f64> {
    let z: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let s = &z[idx];
    let m = s.iter().sum::<f64>() / s.len() as f64;
    let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64;
    z.iter().map(|x| mean + sd * (x - m) / v.sqrt()).collect()
}

struct Asset {
    id: String,
    in_universe: bool,
    /// First and last week with a full-week price.
    listed: usize,
    last: usize,
    /// Delisted on the Wednesday after `last`.
    delist_midweek: bool,
    gaps: Vec<usize>,
    caps: Vec<f64>,
    loadings: [f64; 4],
    idio_sd: f64,
}

impl Asset {
    fn priced(&self, w: usize) -> bool {
        w >= self.listed && w <= self.last && !self.gaps.contains(&w)
    }
}

#[derive(Default)]
struct Csv(String);

impl Csv {
    fn new() -> Self {
        Csv("date,entity,value,unit\n".into())
    }

    fn row(&mut self, date: NaiveDate, entity: &str, value: f64, unit: &str) {
        writeln!(self.0, "{date},{entity},{},{unit}", fmt_num(value)).unwrap();
    }
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures/raw"));
    std::fs::create_dir_all(&out).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20250101);
    let sample = SAMPLE_FROM..N_WEEKS;

    let rc_target: Vec<f64> = RC_FIXTURE
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rc_target.len(), N_WEEKS - SAMPLE_FROM);

    // equity side
    let rf: Vec<f64> = (0..N_WEEKS)
        .map(|w| q(0.085 + 0.01 * (w as f64 / N_WEEKS as f64) + 0.002 * normal(&mut rng)))
        .collect();
    let equity: Vec<Vec<f64>> = EQUITY
        .iter()
        .map(|(_, m, s)| standardized(&mut rng, N_WEEKS, sample.clone(), *m, *s))
        .collect();
    let industries: Vec<Vec<f64>> = INDUSTRIES
        .iter()
        .map(|(_, beta, sd)| {
            (0..N_WEEKS)
                .map(|w| rf[w] + 0.05 + beta * equity[0][w] + sd * normal(&mut rng))
                .collect()
        })
        .collect();

    // latent crypto factors: market-like, alt rotation, and a slow one
    let latent: Vec<[f64; 3]> = (0..N_WEEKS)
        .map(|_| [5.0 * normal(&mut rng), 3.0 * normal(&mut rng), 2.0 * normal(&mut rng)])
        .collect();

    let mut assets: Vec<Asset> = Vec::new();
    let new_asset =
        |rng: &mut ChaCha8Rng, id: String, in_universe: bool, caps: Vec<f64>, listed: usize, last: usize| {
            let gaps = (listed + 2..last.saturating_sub(1))
                .filter(|_| rng.random::<f64>() < 0.004)
                .collect();
            Asset {
                id,
                in_universe,
                listed,
                last,
                delist_midweek: false,
                gaps,
                caps,
                loadings: [
                    0.7 + 0.6 * rng.random::<f64>(),
                    normal(rng),
                    normal(rng),
                    0.8 * normal(rng),
                ],
                idio_sd: 4.0 + 8.0 * rng.random::<f64>(),
            }
        };

    let smooth_cap = |rng: &mut ChaCha8Rng, base: f64, wobble: f64| -> Vec<f64> {
        let phase = rng.random::<f64>() * 6.3;
        let trend = 0.4 * (rng.random::<f64>() - 0.5);
        (0..N_WEEKS)
            .map(|w| {
                let x = w as f64 / N_WEEKS as f64;
                q(base * (wobble * (6.3 * x * 1.7 + phase).sin() + trend * x).exp())
            })
            .collect()
    };

    for k in 0..N_CORE {
        let base = 3.0e11 * ((k + 1) as f64).powf(-1.2);
        let caps = smooth_cap(&mut rng, base, 0.25);
        let listed = if k < 50 { 0 } else { (k - 50) / 2 };
        let a = new_asset(&mut rng, format!("C{:02}", k + 1), true, caps, listed, N_WEEKS - 1);
        assets.push(a);
    }

    // rotators share 37 top-100 slots; occupant q of a slot holds the q-th
    // block of sample weeks
    for r in 0..N_ROTATORS {
        let slot = r % N_SLOTS;
        let order = r / N_SLOTS;
        let occupants = N_ROTATORS / N_SLOTS + usize::from(slot < N_ROTATORS % N_SLOTS);
        let len = sample.len() / occupants;
        let from = SAMPLE_FROM + order * len;
        let to = if order + 1 == occupants {
            N_WEEKS - 1
        } else {
            from + len - 1
        };
        let occupy_from = if order == 0 { 0 } else { from };
        let listed = if order == 0 || rng.random::<f64>() < 0.4 {
            0
        } else {
            from.saturating_sub(rng.random_range(1..20))
        };
        let delists = order + 1 < occupants && rng.random::<f64>() < 0.3;
        let last = if delists {
            (to + rng.random_range(2..15)).min(N_WEEKS - 2)
        } else {
            N_WEEKS - 1
        };
        let high = 1.5e8 + 4.5e8 * rng.random::<f64>();
        let low = 5.0e6 + 7.0e7 * rng.random::<f64>();
        let caps = (0..N_WEEKS)
            .map(|w| {
                let level = if (occupy_from..=to).contains(&w) { high } else { low };
                q(level * (1.0 + 0.05 * (w as f64 * 0.3 + r as f64).sin()))
            })
            .collect();
        let mut a = new_asset(&mut rng, format!("R{:03}", r + 1), true, caps, listed, last);
        a.delist_midweek = delists;
        assets.push(a);
    }

    for k in 0..N_TAIL {
        let base = 1.0e6 + 4.0e7 * rng.random::<f64>();
        let caps = smooth_cap(&mut rng, base, 0.2);
        let listed = if k % 4 == 0 { rng.random_range(5..60) } else { 0 };
        let a = new_asset(&mut rng, format!("T{:02}", k + 1), false, caps, listed, N_WEEKS - 1);
        assets.push(a);
    }
    let n = assets.len();

    // prices: factor returns, then a common weekly shift that pins the
    // value-weighted universe return
    let mut prices = vec![vec![f64::NAN; N_WEEKS]; n];
    let mut returns = vec![vec![f64::NAN; N_WEEKS]; n];
    let mut last_price = vec![f64::NAN; n];
    for (i, a) in assets.iter().enumerate() {
        if a.priced(0) {
            prices[i][0] = q(1.0 + 200.0 * rng.random::<f64>());
            last_price[i] = prices[i][0];
        }
    }
    for w in 1..N_WEEKS {
        let mut raw = vec![f64::NAN; n];
        for (i, a) in assets.iter().enumerate() {
            if !a.priced(w) {
                continue;
            }
            let f = latent[w];
            let l = a.loadings;
            let r = 0.1
                + l[0] * f[0]
                + l[1] * f[1]
                + l[2] * f[2]
                + l[3] * (industries[0][w] - rf[w])
                + a.idio_sd * normal(&mut rng);
            raw[i] = r.max(-60.0);
        }
        let eligible: Vec<usize> = (0..n)
            .filter(|&i| {
                assets[i].in_universe
                    && raw[i].is_finite()
                    && prices[i][w - 1].is_finite()
                    && returns[i][w - 1].is_finite()
            })
            .collect();
        let shift = if w >= SAMPLE_FROM {
            let total: f64 = eligible.iter().map(|&i| assets[i].caps[w - 1]).sum();
            let vw: f64 = eligible.iter().map(|&i| assets[i].caps[w - 1] * raw[i]).sum::<f64>() / total;
            rc_target[w - SAMPLE_FROM] + rf[w] - vw
        } else {
            0.0
        };
        for (i, a) in assets.iter().enumerate() {
            if !raw[i].is_finite() {
                continue;
            }
            let r = if a.in_universe { raw[i] + shift } else { raw[i] };
            assert!(r > -95.0, "return {r} for {} in week {w}", a.id);
            if prices[i][w - 1].is_finite() {
                returns[i][w] = r;
            }
            prices[i][w] = if last_price[i].is_finite() {
                q(last_price[i] * (1.0 + r / 100.0))
            } else {
                q(1.0 + 200.0 * rng.random::<f64>())
            };
            last_price[i] = prices[i][w];
        }
    }

    let mut price_csv = Csv::new();
    let mut cap_csv = Csv::new();
    for (name, cap) in STABLES {
        for w in 0..N_WEEKS {
            price_csv.row(week(w), name, q(1.0 + 0.0005 * normal(&mut rng)), "usd");
            cap_csv.row(week(w), name, q(cap * (1.0 + 0.002 * w as f64)), "usd");
        }
    }
    for (i, a) in assets.iter().enumerate() {
        for w in 0..N_WEEKS {
            if a.priced(w) {
                price_csv.row(week(w), &a.id, prices[i][w], "usd");
                cap_csv.row(week(w), &a.id, a.caps[w], "usd");
            }
        }
        if a.delist_midweek {
            let wed = week(a.last) + Days::new(3);
            let p = prices[i][a.last] * 0.6;
            price_csv.row(wed, &a.id, q(p), "usd");
            cap_csv.row(wed, &a.id, q(a.caps[a.last] * 0.6), "usd");
        }
    }

    // TVL for protocol tokens: a slowly drifting multiple of market cap
    let mut tvl_csv = Csv::new();
    let tvl_ids: Vec<usize> = (0..30).chain(N_CORE..N_CORE + 25).collect();
    for i in tvl_ids {
        let a = &assets[i];
        let ratio = 0.05 + 1.5 * rng.random::<f64>();
        let mut drift = 0.0;
        for w in 0..N_WEEKS {
            drift += 0.05 * normal(&mut rng);
            if a.priced(w) {
                tvl_csv.row(week(w), &a.id, q(a.caps[w] * ratio * f64::exp(drift)), "usd");
            }
        }
    }

    // hacks: sparse daily incidents by protocol
    let mut hack_csv = Csv::new();
    let first_day = week(0) - Days::new(6);
    for d in 0..(N_WEEKS * 7) {
        if rng.random::<f64>() < 0.08 {
            let size = if rng.random::<f64>() < 0.03 { 1.5e8 } else { 4.0e6 };
            let value = size * f64::exp(1.2 * normal(&mut rng));
            let protocol = format!("protocol_{:03}", rng.random_range(1..200));
            hack_csv.row(first_day + Days::new(d as u64), &protocol, q(value), "usd");
        }
    }

    // daily index series whose Sunday readings follow the target weekly path
    let daily_index = |rng: &mut ChaCha8Rng, entity: &str, sundays: &[f64]| -> Csv {
        let mut csv = Csv::new();
        for (w, level) in sundays.iter().enumerate() {
            for back in (0..7).rev() {
                let day = week(w) - Days::new(back);
                let value = if back == 0 {
                    *level
                } else {
                    level * (1.0 + 0.01 * normal(rng))
                };
                csv.row(day, entity, q(value), "index_level");
            }
        }
        csv
    };
    let from_changes = |start: f64, changes: &[f64]| -> Vec<f64> {
        let mut level = start;
        let mut out = vec![start];
        for c in &changes[1..] {
            level *= 1.0 + c / 100.0;
            out.push(level);
        }
        out
    };
    let alt_changes = standardized(&mut rng, N_WEEKS, sample.clone(), 2.99, 23.45);
    let fg_changes = standardized(&mut rng, N_WEEKS, sample.clone(), 0.18, 1.85);
    let alt = daily_index(&mut rng, "altseason", &from_changes(35.0, &alt_changes));
    let fg = daily_index(&mut rng, "fear_greed", &from_changes(50.0, &fg_changes));
    let mut cvx_ar = vec![0.0; N_WEEKS];
    for w in 1..N_WEEKS {
        cvx_ar[w] = 0.4 * cvx_ar[w - 1] + normal(&mut rng);
    }
    let (m, s) = {
        let x = &cvx_ar[sample.clone()];
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        (m, v.sqrt())
    };
    let cvx_levels: Vec<f64> = cvx_ar.iter().map(|x| 0.01 + 0.14 * (x - m) / s).collect();
    let mut cvx = Csv::new();
    for (w, level) in cvx_levels.iter().enumerate() {
        for back in (0..7).rev() {
            let value = if back == 0 {
                *level
            } else {
                level + 0.01 * normal(&mut rng)
            };
            cvx.row(week(w) - Days::new(back), "cvx", q(value), "index_level");
        }
    }

    // equity series are stamped on Fridays
    let mut eq_csv = Csv::new();
    let mut ind_csv = Csv::new();
    for w in 0..N_WEEKS {
        let friday = week(w) - Days::new(2);
        eq_csv.row(friday, "RF", rf[w], "percent");
        for ((name, ..), series) in EQUITY.iter().zip(&equity) {
            eq_csv.row(friday, name, q(series[w]), "percent");
        }
        for ((name, ..), series) in INDUSTRIES.iter().zip(&industries) {
            ind_csv.row(friday, name, q(series[w]), "percent");
        }
    }

    let files: BTreeMap<&str, String> = [
        ("prices.csv", price_csv.0),
        ("market_caps.csv", cap_csv.0),
        ("tvl.csv", tvl_csv.0),
        ("hacks.csv", hack_csv.0),
        ("altseason.csv", alt.0),
        ("fear_greed.csv", fg.0),
        ("cvx.csv", cvx.0),
        ("equity_factors.csv", eq_csv.0),
        ("equity_industries.csv", ind_csv.0),
    ]
    .into_iter()
    .collect();
    for (name, body) in files {
        std::fs::write(out.join(name), body).unwrap();
    }
    println!("wrote fixture to {}", out.display());
}
