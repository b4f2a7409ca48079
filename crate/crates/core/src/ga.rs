//! Genetic search over filter subsets, maximizing the AP of the union of the
//! selected filters' detections.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{BBox, PartBox};
use crate::error::{Error, Result};
use crate::eval::{average_precision, match_and_ap, EvalReport};
use crate::stimulus::{nms, Scored, StimulusDetection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossover {
    SinglePoint,
    TwoPoint,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_p: f64,
    /// Chance that a child is mutated at all; a mutated child flips each bit
    /// with probability `1 / N`.
    pub mutation_p: f64,
    /// Probability of each bit being set in the initial population.
    pub init_p: f64,
    pub elitism: usize,
    pub crossover: Crossover,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 200,
            generations: 100,
            crossover_p: 0.7,
            mutation_p: 0.3,
            init_p: 0.02,
            elitism: 1,
            crossover: Crossover::SinglePoint,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("crossover_p", self.crossover_p),
            ("mutation_p", self.mutation_p),
            ("init_p", self.init_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.population < 2 || !self.population.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "population must be even and at least 2, got {}",
                self.population
            )));
        }
        if self.elitism > self.population {
            return Err(Error::Config("elitism exceeds population".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub bits: Vec<bool>,
    pub fitness: Option<f64>,
}

impl Chromosome {
    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut bits = vec![false; n];
        for &i in indices {
            bits[i] = true;
        }
        Chromosome { bits, fitness: None }
    }

    pub fn selected(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub trait Fitness: Sync {
    fn fitness(&self, bits: &[bool]) -> f64;
}

impl<F> Fitness for F
where
    F: Fn(&[bool]) -> f64 + Sync,
{
    fn fitness(&self, bits: &[bool]) -> f64 {
        self(bits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub bits_set_of_best: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaResult {
    pub best: Chromosome,
    /// Entry `g` describes population `g`; entry 0 is the initial population.
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

pub fn initial_population<R: Rng>(n_bits: usize, cfg: &GaConfig, rng: &mut R) -> Vec<Vec<bool>> {
    (0..cfg.population)
        .map(|_| (0..n_bits).map(|_| rng.random_bool(cfg.init_p)).collect())
        .collect()
}

/// Stochastic universal sampling: `count` equally spaced pointers with one
/// random offset over the cumulative fitness. All-zero fitness selects
/// uniformly.
pub fn sus_select<R: Rng>(fitness: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = fitness.iter().map(|f| f.max(0.0)).sum();
    let weight = |i: usize| if total > 0.0 { fitness[i].max(0.0) } else { 1.0 };
    let total = if total > 0.0 { total } else { fitness.len() as f64 };
    let step = total / count as f64;
    let start = rng.random_range(0.0..step);
    let mut out = Vec::with_capacity(count);
    let mut idx = 0;
    let mut cumulative = weight(0);
    for k in 0..count {
        let pointer = start + k as f64 * step;
        while cumulative <= pointer && idx + 1 < fitness.len() {
            idx += 1;
            cumulative += weight(idx);
        }
        out.push(idx);
    }
    out
}

fn crossover<R: Rng>(kind: Crossover, a: &mut [bool], b: &mut [bool], rng: &mut R) {
    let n = a.len();
    if n < 2 {
        return;
    }
    match kind {
        Crossover::SinglePoint => {
            let cut = rng.random_range(1..n);
            a[cut..].swap_with_slice(&mut b[cut..]);
        }
        Crossover::TwoPoint => {
            let mut i = rng.random_range(1..n);
            let mut j = rng.random_range(1..n);
            if i > j {
                std::mem::swap(&mut i, &mut j);
            }
            a[i..j].swap_with_slice(&mut b[i..j]);
        }
        Crossover::Uniform => {
            for k in 0..n {
                if rng.random_bool(0.5) {
                    std::mem::swap(&mut a[k], &mut b[k]);
                }
            }
        }
    }
}

struct Evaluator<'a, F> {
    fitness: &'a F,
    cache: HashMap<Vec<bool>, f64>,
}

impl<F: Fitness> Evaluator<'_, F> {
    fn evaluate(&mut self, pop: &[Vec<bool>]) -> Vec<f64> {
        let mut pending: Vec<&Vec<bool>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for c in pop {
            if !self.cache.contains_key(c) && seen.insert(c) {
                pending.push(c);
            }
        }
        let f = self.fitness;
        let scores: Vec<f64> = pending.par_iter().map(|c| f.fitness(c)).collect();
        for (c, s) in pending.into_iter().zip(scores) {
            self.cache.insert(c.clone(), s);
        }
        pop.iter().map(|c| self.cache[c]).collect()
    }
}

/// Runs the search. All randomness comes from `cfg.seed` and is consumed
/// sequentially, so the result does not depend on the thread count.
pub fn run_ga<F: Fitness>(cfg: &GaConfig, n_bits: usize, fitness: &F) -> Result<GaResult> {
    cfg.validate()?;
    if n_bits == 0 {
        return Err(Error::Config("cannot search over zero filters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eval = Evaluator {
        fitness,
        cache: HashMap::new(),
    };
    let mut pop = initial_population(n_bits, cfg, &mut rng);
    let mut history = Vec::with_capacity(cfg.generations + 1);
    let flip_p = 1.0 / n_bits as f64;
    let mut generation = 0;
    loop {
        let scores = eval.evaluate(&pop);
        let mut ranked: Vec<usize> = (0..pop.len()).collect();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let best = ranked[0];
        history.push(GenerationStats {
            generation,
            best_fitness: scores[best],
            mean_fitness: scores.iter().sum::<f64>() / scores.len() as f64,
            bits_set_of_best: pop[best].iter().filter(|b| **b).count(),
        });
        if generation == cfg.generations {
            return Ok(GaResult {
                best: Chromosome {
                    bits: pop[best].clone(),
                    fitness: Some(scores[best]),
                },
                history,
                evaluations: eval.cache.len(),
            });
        }

        let mut parents = sus_select(&scores, cfg.population, &mut rng);
        parents.shuffle(&mut rng);
        let mut children: Vec<Vec<bool>> = Vec::with_capacity(cfg.population);
        for pair in parents.chunks(2) {
            let mut a = pop[pair[0]].clone();
            let mut b = pop[pair[1]].clone();
            if rng.random_bool(cfg.crossover_p) {
                crossover(cfg.crossover, &mut a, &mut b, &mut rng);
            }
            children.push(a);
            children.push(b);
        }
        for child in &mut children {
            if rng.random_bool(cfg.mutation_p) {
                for bit in child.iter_mut() {
                    if rng.random_bool(flip_p) {
                        *bit = !*bit;
                    }
                }
            }
        }
        for (slot, &elite) in ranked.iter().take(cfg.elitism).enumerate() {
            children[slot] = pop[elite].clone();
        }
        pop = children;
        generation += 1;
    }
}

/// The `n` filters with the highest individual AP, ties by index.
pub fn top_filters(per_filter_ap: &[f64], n: usize) -> Chromosome {
    let mut order: Vec<usize> = (0..per_filter_ap.len()).collect();
    order.sort_by(|&a, &b| per_filter_ap[b].total_cmp(&per_filter_ap[a]));
    order.truncate(n);
    Chromosome::from_indices(per_filter_ap.len(), &order)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub image_id: usize,
    pub bbox: BBox,
    pub score: f64,
}

impl Scored for ScoredBox {
    fn image_id(&self) -> usize {
        self.image_id
    }
    fn bbox(&self) -> &BBox {
        &self.bbox
    }
    fn score(&self) -> f64 {
        self.score
    }
}

/// Collective AP of filter combinations: the union of the selected filters'
/// detections, de-duplicated by NMS across filters, scored against `gts`.
///
/// All detections are ranked once up front (score, then image, filter and
/// position in the filter's list), which is the order the reference
/// union -> NMS -> match path visits them in. Evaluating a chromosome is then
/// a single filtered pass over that ranking.
pub struct CombinationFitness {
    /// `[filter][image slot]`, each list as given for that filter.
    per_filter: Vec<Vec<Vec<ScoredBox>>>,
    gts: Vec<PartBox>,
    nms_iou: f64,
    match_iou: f64,
    ranked: Vec<Ranked>,
    /// Matchable ground truths of each ranked detection, best IoU first.
    candidates: Vec<u32>,
    n_slots: usize,
}

struct Ranked {
    filter: u32,
    slot: u32,
    bbox: BBox,
    cand_start: u32,
    cand_len: u32,
}

impl CombinationFitness {
    pub fn new(
        per_filter: &[Vec<StimulusDetection>],
        gts: Vec<PartBox>,
        nms_iou: f64,
        match_iou: f64,
    ) -> Result<Self> {
        if gts.is_empty() {
            return Err(Error::UndefinedAp);
        }
        let mut images: Vec<usize> = per_filter
            .iter()
            .flatten()
            .map(|d| d.image_id)
            .collect();
        images.sort_unstable();
        images.dedup();
        let slot: HashMap<usize, usize> = images.iter().enumerate().map(|(s, &i)| (i, s)).collect();
        let grouped: Vec<Vec<Vec<ScoredBox>>> = per_filter
            .iter()
            .map(|dets| {
                let mut by_slot = vec![Vec::new(); images.len()];
                for d in dets {
                    by_slot[slot[&d.image_id]].push(ScoredBox {
                        image_id: d.image_id,
                        bbox: d.bbox,
                        score: d.score as f64,
                    });
                }
                by_slot
            })
            .collect();

        let mut gts_by_image: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, g) in gts.iter().enumerate() {
            gts_by_image.entry(g.image_id).or_default().push(i);
        }
        let mut order: Vec<(f64, usize, usize, usize)> = Vec::new();
        for (f, slots) in grouped.iter().enumerate() {
            for (s, dets) in slots.iter().enumerate() {
                for (i, d) in dets.iter().enumerate() {
                    order.push((d.score, s, f, i));
                }
            }
        }
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
        let mut ranked = Vec::with_capacity(order.len());
        let mut candidates = Vec::new();
        for &(_, s, f, i) in &order {
            let d = &grouped[f][s][i];
            let mut cands: Vec<(usize, f64)> = gts_by_image
                .get(&d.image_id)
                .into_iter()
                .flatten()
                .map(|&g| (g, gts[g].bbox.iou_unchecked(&d.bbox)))
                .filter(|&(_, iou)| iou >= match_iou)
                .collect();
            cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.push(Ranked {
                filter: f as u32,
                slot: s as u32,
                bbox: d.bbox,
                cand_start: candidates.len() as u32,
                cand_len: cands.len() as u32,
            });
            candidates.extend(cands.iter().map(|&(g, _)| g as u32));
        }
        Ok(CombinationFitness {
            per_filter: grouped,
            gts,
            nms_iou,
            match_iou,
            ranked,
            candidates,
            n_slots: images.len(),
        })
    }

    pub fn n_filters(&self) -> usize {
        self.per_filter.len()
    }

    /// The de-duplicated union for `bits`, built the straightforward way.
    pub fn detections(&self, bits: &[bool]) -> Vec<ScoredBox> {
        let selected: Vec<usize> = (0..self.per_filter.len()).filter(|&i| bits[i]).collect();
        let mut out = Vec::new();
        let mut scratch = Vec::new();
        for s in 0..self.n_slots {
            scratch.clear();
            for &f in &selected {
                scratch.extend_from_slice(&self.per_filter[f][s]);
            }
            if selected.len() > 1 {
                out.extend(nms(&scratch, self.nms_iou));
            } else {
                out.extend_from_slice(&scratch);
            }
        }
        out
    }

    pub fn report(&self, bits: &[bool]) -> Result<EvalReport> {
        match_and_ap(&self.detections(bits), &self.gts, self.match_iou)
    }
}

impl Fitness for CombinationFitness {
    fn fitness(&self, bits: &[bool]) -> f64 {
        let n_selected = bits.iter().filter(|b| **b).count();
        if n_selected == 0 {
            return 0.0;
        }
        let suppress = n_selected > 1;
        let mut kept: Vec<Vec<u32>> = vec![Vec::new(); if suppress { self.n_slots } else { 0 }];
        let mut covered = vec![false; self.gts.len()];
        let mut flags = Vec::new();
        for (k, r) in self.ranked.iter().enumerate() {
            if !bits[r.filter as usize] {
                continue;
            }
            if suppress {
                let same = &mut kept[r.slot as usize];
                if same
                    .iter()
                    .any(|&j| self.ranked[j as usize].bbox.iou_unchecked(&r.bbox) > self.nms_iou)
                {
                    continue;
                }
                same.push(k as u32);
            }
            let cands = &self.candidates[r.cand_start as usize..(r.cand_start + r.cand_len) as usize];
            let hit = cands.iter().find(|&&g| !covered[g as usize]);
            if let Some(&g) = hit {
                covered[g as usize] = true;
            }
            flags.push(hit.is_some());
        }
        average_precision(&flags, self.gts.len()).unwrap_or(0.0)
    }
}
