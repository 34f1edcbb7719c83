//! Corpus files and the synthetic geotagged-tweet generator.
//!
//! Corpora are JSON lines with fields `text`, `lat`, `lon`. The generator
//! draws each tweet's location from the distributions of the place words
//! it mentions, so the true conditional density of every generated tweet is
//! known exactly.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::mixture::{sample_one, Gmm2D};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {source}")]
    Range {
        line: usize,
        source: crate::geo::GeoError,
    },
    #[error("invalid generator spec: {0}")]
    Spec(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub text: String,
    pub lat: f64,
    pub lon: f64,
}

impl CorpusRecord {
    pub fn point(&self) -> Result<GeoPoint, crate::geo::GeoError> {
        GeoPoint::new(self.lat, self.lon)
    }
}

/// Parses JSON lines; blank lines are skipped, line numbers start at 1.
pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        record.point().map_err(|source| CorpusError::Range {
            line: line_no,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_corpus(BufReader::new(file))
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}

/// A word tied to a location distribution. When `context` is non-empty it
/// holds one disambiguating word per mixture component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceWord {
    pub word: String,
    pub gmm: Gmm2D,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    /// Filler words per tweet, drawn uniformly from this inclusive range.
    pub min_fillers: usize,
    pub max_fillers: usize,
    /// Probability of mentioning 0, 1 or 2 place words.
    pub mention_probs: [f64; 3],
    /// Chance that a tweet naming a word with context words also carries
    /// the one for the component its location came from.
    pub disambiguation_prob: f64,
    /// Location distribution of tweets without place words.
    pub prior: Gmm2D,
    pub fillers: Vec<String>,
    pub places: Vec<PlaceWord>,
}

/// How much a tweet's words reveal about its location.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TweetClass {
    /// No place word: only the broad prior applies.
    NoPlace,
    /// One single-component place word.
    Informative,
    /// One multi-component word and no context word.
    Ambiguous,
    /// One multi-component word plus the context word naming its component.
    Disambiguated,
    /// Two place words.
    Multiple,
}

fn revalidate(gmm: &Gmm2D) -> Result<Gmm2D, String> {
    Gmm2D::new(
        gmm.weights().to_vec(),
        gmm.means().to_vec(),
        gmm.deviations().to_vec(),
        gmm.correlations().to_vec(),
    )
    .map_err(|e| e.to_string())
}

const KM_PER_DEGREE_LAT: f64 = 111.2;

fn km_to_deg(km: f64, lat: f64) -> [f64; 2] {
    [
        km / KM_PER_DEGREE_LAT,
        km / (KM_PER_DEGREE_LAT * lat.to_radians().cos()),
    ]
}

impl GeneratorSpec {
    /// Desk-scale default: a Japan-sized region with 40 single-site place
    /// words, 8 two-site words whose sites lie 250-500 km apart, and 200
    /// filler words.
    pub fn desk_default() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6765_6f74);
        let (lat_lo, lat_hi, lon_lo, lon_hi) = (31.0, 43.0, 129.0, 146.0);
        let site = |rng: &mut ChaCha8Rng| {
            [
                rng.random_range(lat_lo + 0.5..lat_hi - 0.5),
                rng.random_range(lon_lo + 0.5..lon_hi - 0.5),
            ]
        };
        let mut places = Vec::new();
        for i in 0..40 {
            let mu = site(&mut rng);
            let km = (rng.random_range(2f64.ln()..30f64.ln())).exp();
            let rho = rng.random_range(-0.3..0.3);
            places.push(PlaceWord {
                word: format!("town{i:02}"),
                gmm: Gmm2D::single(mu, km_to_deg(km, mu[0]), rho).expect("valid"),
                context: Vec::new(),
            });
        }
        for i in 0..8 {
            let (a, b) = loop {
                let a = site(&mut rng);
                let km = rng.random_range(250.0..500.0);
                let bearing: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let d = km_to_deg(km, a[0]);
                let b = [a[0] + d[0] * bearing.cos(), a[1] + d[1] * bearing.sin()];
                if (lat_lo..lat_hi).contains(&b[0]) && (lon_lo..lon_hi).contains(&b[1]) {
                    break (a, b);
                }
            };
            let km = rng.random_range(5.0..15.0);
            let sigma = km_to_deg(km, (a[0] + b[0]) / 2.0);
            places.push(PlaceWord {
                word: format!("twin{i}"),
                gmm: Gmm2D::new(
                    vec![0.65, 0.35],
                    vec![a, b],
                    vec![sigma, sigma],
                    vec![0.0, 0.0],
                )
                .expect("valid"),
                context: vec![format!("twin{i}a"), format!("twin{i}b")],
            });
        }
        let mut prior_means = Vec::new();
        let mut prior_sigma = Vec::new();
        for _ in 0..3 {
            prior_means.push(site(&mut rng));
            prior_sigma.push([rng.random_range(1.5..3.0), rng.random_range(1.5..3.0)]);
        }
        let prior = Gmm2D::new(
            vec![0.5, 0.3, 0.2],
            prior_means,
            prior_sigma,
            vec![0.0, 0.1, -0.1],
        )
        .expect("valid");
        Self {
            seed: 20_160_101,
            min_fillers: 4,
            max_fillers: 12,
            mention_probs: [0.3, 0.55, 0.15],
            disambiguation_prob: 0.5,
            prior,
            fillers: (0..200).map(|i| format!("w{i:03}")).collect(),
            places,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Spec(m));
        let total: f64 = self.mention_probs.iter().sum();
        if self.mention_probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "mention probabilities {:?} must sum to 1",
                self.mention_probs
            ));
        }
        if !(0.0..=1.0).contains(&self.disambiguation_prob) {
            return bad("disambiguation_prob must lie in [0, 1]".into());
        }
        if self.min_fillers > self.max_fillers {
            return bad("min_fillers exceeds max_fillers".into());
        }
        if self.fillers.is_empty() && self.max_fillers > 0 {
            return bad("filler vocabulary is empty".into());
        }
        if self.places.len() < 2 && self.mention_probs[2] > 0.0 {
            return bad("two-word mentions need at least two place words".into());
        }
        if self.places.is_empty() && self.mention_probs[1] > 0.0 {
            return bad("place vocabulary is empty".into());
        }
        revalidate(&self.prior).map_err(|e| CorpusError::Spec(format!("prior: {e}")))?;
        let mut seen = HashMap::new();
        let mut claim = |w: &str, role: &str| -> Result<(), CorpusError> {
            if tokenize(w) != [w.to_string()] {
                return Err(CorpusError::Spec(format!(
                    "word {w:?} must be a single lowercase token"
                )));
            }
            if let Some(prev) = seen.insert(w.to_string(), role.to_string()) {
                return Err(CorpusError::Spec(format!(
                    "word {w:?} used as {prev} and {role}"
                )));
            }
            Ok(())
        };
        for f in &self.fillers {
            claim(f, "filler")?;
        }
        for p in &self.places {
            claim(&p.word, "place word")?;
            revalidate(&p.gmm).map_err(|e| CorpusError::Spec(format!("{}: {e}", p.word)))?;
            if !p.context.is_empty() && p.context.len() != p.gmm.k() {
                return Err(CorpusError::Spec(format!(
                    "{}: {} context words for {} components",
                    p.word,
                    p.context.len(),
                    p.gmm.k()
                )));
            }
            for c in &p.context {
                claim(c, "context word")?;
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        let spec: Self = toml::from_str(text).map_err(|e| CorpusError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    fn lookup(&self) -> (HashMap<&str, usize>, HashMap<&str, (usize, usize)>) {
        let mut places = HashMap::new();
        let mut contexts = HashMap::new();
        for (i, p) in self.places.iter().enumerate() {
            places.insert(p.word.as_str(), i);
            for (k, c) in p.context.iter().enumerate() {
                contexts.insert(c.as_str(), (i, k));
            }
        }
        (places, contexts)
    }

    fn mentions(&self, tokens: &[String]) -> (Vec<usize>, Option<(usize, usize)>) {
        let (places, contexts) = self.lookup();
        let mut words = Vec::new();
        let mut context = None;
        for t in tokens {
            if let Some(&i) = places.get(t.as_str()) {
                if !words.contains(&i) {
                    words.push(i);
                }
            } else if let Some(&c) = contexts.get(t.as_str()) {
                context = Some(c);
            }
        }
        (words, context)
    }

    pub fn classify(&self, text: &str) -> TweetClass {
        let (words, context) = self.mentions(&tokenize(text));
        match words.as_slice() {
            [] => TweetClass::NoPlace,
            [w] if self.places[*w].gmm.k() == 1 => TweetClass::Informative,
            [_] if context.is_some() => TweetClass::Disambiguated,
            [_] => TweetClass::Ambiguous,
            _ => TweetClass::Multiple,
        }
    }

    /// Exact density of the location given the tweet's words under this
    /// generator. Filler words carry no information.
    pub fn conditional(&self, text: &str) -> Gmm2D {
        let (words, context) = self.mentions(&tokenize(text));
        if let Some((w, k)) = context {
            let g = &self.places[w].gmm;
            return Gmm2D::single(g.means()[k], g.deviations()[k], g.correlations()[k])
                .expect("spec components are valid");
        }
        if words.is_empty() {
            return self.prior.clone();
        }
        let mut pi = Vec::new();
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        let mut rho = Vec::new();
        for &w in &words {
            let p = &self.places[w];
            let silent = if p.context.is_empty() {
                1.0
            } else {
                1.0 - self.disambiguation_prob
            };
            for k in 0..p.gmm.k() {
                pi.push(p.gmm.weights()[k] * silent);
                mu.push(p.gmm.means()[k]);
                sigma.push(p.gmm.deviations()[k]);
                rho.push(p.gmm.correlations()[k]);
            }
        }
        let mut total: f64 = pi.iter().sum();
        if total == 0.0 {
            // only reachable for text the generator cannot emit
            pi.iter_mut().for_each(|p| *p = 1.0);
            total = pi.len() as f64;
        }
        let pi = pi.into_iter().map(|p| p / total).collect();
        Gmm2D::new(pi, mu, sigma, rho).expect("positive weights")
    }

    /// `count` tweets from one stream seeded with `seed`.
    pub fn generate(&self, count: usize, seed: u64) -> Vec<CorpusRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.generate_one(&mut rng)).collect()
    }

    fn generate_one(&self, rng: &mut ChaCha8Rng) -> CorpusRecord {
        let u: f64 = rng.random();
        let mentions = if u < self.mention_probs[0] {
            0
        } else if u < self.mention_probs[0] + self.mention_probs[1] {
            1
        } else {
            2
        };
        let n_fill = rng.random_range(self.min_fillers..=self.max_fillers);
        let mut words: Vec<&str> = (0..n_fill)
            .map(|_| self.fillers.choose(rng).expect("validated").as_str())
            .collect();
        let location = if mentions == 0 {
            sample_one(&self.prior, rng)
        } else {
            let picked: Vec<&PlaceWord> = self.places.choose_multiple(rng, mentions).collect();
            words.extend(picked.iter().map(|p| p.word.as_str()));
            let source = picked.choose(rng).expect("non-empty");
            let k = pick_component(source.gmm.weights(), rng);
            if !source.context.is_empty() && rng.random::<f64>() < self.disambiguation_prob {
                words.push(&source.context[k]);
            }
            let g = &source.gmm;
            let component = Gmm2D::single(g.means()[k], g.deviations()[k], g.correlations()[k])
                .expect("spec components are valid");
            sample_one(&component, rng)
        };
        words.shuffle(rng);
        let point = GeoPoint::normalized(location[0], location[1]).expect("finite sample");
        CorpusRecord {
            text: words.join(" "),
            lat: point.lat(),
            lon: point.lon(),
        }
    }
}

fn pick_component(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}
