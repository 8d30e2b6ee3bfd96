//! Constrained NSGA-II over fixed-length discrete genomes.
//!
//! All objectives are minimized. Feasibility is carried as a non-negative
//! violation magnitude and handled by constrained dominance: any feasible
//! individual beats any infeasible one, and among infeasible individuals the
//! smaller violation wins.

use alloc::boxed::Box;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Fixed-length sequence of allele indices (action indices for SGRL).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genome(pub Vec<usize>);

impl Genome {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What a problem reports for one genome.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objectives: Vec<f64>,
    /// Zero when feasible, otherwise strictly positive.
    pub violation: f64,
}

impl Evaluation {
    pub fn feasible(objectives: Vec<f64>) -> Self {
        Evaluation { objectives, violation: 0.0 }
    }

    pub fn infeasible(violation: f64, num_objectives: usize) -> Self {
        Evaluation { objectives: vec![f64::INFINITY; num_objectives], violation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub objectives: Vec<f64>,
    pub violation: f64,
    /// Index of the nondominated front the individual was last sorted into.
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn new(genome: Genome, eval: Evaluation) -> Self {
        Individual { genome, objectives: eval.objectives, violation: eval.violation, rank: 0, crowding: 0.0 }
    }

    pub fn feasible(&self) -> bool {
        self.violation <= 0.0
    }
}

/// Minimization Pareto dominance on raw objective vectors.
pub fn dominates_objectives(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Constrained dominance.
pub fn dominates(a: &Individual, b: &Individual) -> bool {
    match (a.feasible(), b.feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation < b.violation,
        (true, true) => dominates_objectives(&a.objectives, &b.objectives),
    }
}

/// Fast nondominated sort; returns fronts as index lists, best first.
pub fn nondominated_sort(pop: &[Individual]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&pop[i], &pop[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(&pop[j], &pop[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front`, in the same order.
///
/// Boundary members of every objective get `f64::INFINITY`; fronts of at
/// most two members are all boundary. Infeasible fronts get zero.
pub fn crowding_distance(pop: &[Individual], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    if front.iter().any(|&i| !pop[i].feasible()) {
        return vec![0.0; m];
    }
    let mut dist = vec![0.0; m];
    let num_obj = pop[front[0]].objectives.len();
    let mut order: Vec<usize> = (0..m).collect();
    for k in 0..num_obj {
        let value = |pos: usize| pop[front[pos]].objectives[k];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
        let lo = value(order[0]);
        let hi = value(order[m - 1]);
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..m - 1 {
            dist[order[w]] += (value(order[w + 1]) - value(order[w - 1])) / span;
        }
    }
    dist
}

/// Indices of the nondominated points (minimization). Duplicated points are
/// all kept.
pub fn pareto_front<T: AsRef<[f64]>>(points: &[T]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|p| dominates_objectives(p.as_ref(), points[i].as_ref())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MooConfig {
    pub generations: usize,
    pub population: usize,
    /// Per-gene resampling probability; `None` means `1 / genome_len`.
    pub mutation_rate: Option<f64>,
    pub crossover_rate: f64,
    pub tournament_size: usize,
    pub seed: u64,
}

impl Default for MooConfig {
    fn default() -> Self {
        MooConfig {
            generations: 25,
            population: 24,
            mutation_rate: None,
            crossover_rate: 0.9,
            tournament_size: 2,
            seed: 0,
        }
    }
}

impl MooConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.population < 2 || !self.population.is_multiple_of(2) {
            return bad("population must be even and at least 2");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("crossover_rate must lie in [0, 1]");
        }
        if let Some(r) = self.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return bad("mutation_rate must lie in [0, 1]");
            }
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be at least 1");
        }
        Ok(())
    }
}

/// One-point crossover. Genomes shorter than two genes are copied.
pub fn crossover<R: Rng + ?Sized>(a: &Genome, b: &Genome, rng: &mut R) -> (Genome, Genome) {
    let len = a.len().min(b.len());
    if len < 2 {
        return (a.clone(), b.clone());
    }
    let cut = rng.gen_range(1..len);
    let mut c1 = a.0[..cut].to_vec();
    c1.extend_from_slice(&b.0[cut..]);
    let mut c2 = b.0[..cut].to_vec();
    c2.extend_from_slice(&a.0[cut..]);
    (Genome(c1), Genome(c2))
}

/// Resamples each gene uniformly from `0..num_alleles` with probability `rate`.
pub fn mutate<R: Rng + ?Sized>(g: &Genome, rate: f64, num_alleles: usize, rng: &mut R) -> Genome {
    Genome(
        g.0.iter()
            .map(|&gene| if rng.gen::<f64>() < rate { rng.gen_range(0..num_alleles) } else { gene })
            .collect(),
    )
}

pub trait Problem {
    fn genome_len(&self) -> usize;

    fn num_alleles(&self) -> usize;

    fn num_objectives(&self) -> usize;

    /// Genomes placed in the initial population before random fill.
    fn seed_genomes(&mut self) -> Result<Vec<Genome>> {
        Ok(Vec::new())
    }

    fn evaluate(&mut self, genome: &Genome) -> Result<Evaluation>;
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub population: Vec<Individual>,
    /// Every feasible individual ever evaluated, in evaluation order.
    pub archive: Vec<Individual>,
    pub evaluations: usize,
}

impl EvolveOutcome {
    /// Nondominated members of the archive.
    pub fn archive_front(&self) -> Vec<&Individual> {
        let objs: Vec<&[f64]> = self.archive.iter().map(|i| i.objectives.as_slice()).collect();
        pareto_front(&objs).into_iter().map(|i| &self.archive[i]).collect()
    }
}

struct Evaluator<'p, P: ?Sized> {
    problem: &'p mut P,
    archive: Vec<Individual>,
    evaluations: usize,
}

impl<P: Problem + ?Sized> Evaluator<'_, P> {
    fn run(&mut self, genomes: Vec<Genome>) -> Result<Vec<Individual>> {
        let mut out = Vec::with_capacity(genomes.len());
        for genome in genomes {
            let eval = self
                .problem
                .evaluate(&genome)
                .map_err(|e| Error::Evaluation { genome: genome.0.clone(), source: Box::new(e) })?;
            self.evaluations += 1;
            let ind = Individual::new(genome, eval);
            if ind.feasible() {
                self.archive.push(ind.clone());
            }
            out.push(ind);
        }
        Ok(out)
    }
}

fn better(a: &Individual, b: &Individual) -> bool {
    match a.rank.cmp(&b.rank) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.crowding > b.crowding,
    }
}

fn tournament<'a, R: Rng + ?Sized>(pop: &'a [Individual], size: usize, rng: &mut R) -> &'a Individual {
    let mut best = &pop[rng.gen_range(0..pop.len())];
    for _ in 1..size {
        let cand = &pop[rng.gen_range(0..pop.len())];
        if better(cand, best) {
            best = cand;
        }
    }
    best
}

/// Sorts `pool` into fronts and keeps the best `n`, filling whole fronts
/// first and truncating the last one by descending crowding distance.
fn survive(pool: Vec<Individual>, n: usize) -> Vec<Individual> {
    let fronts = nondominated_sort(&pool);
    let mut chosen: Vec<(usize, usize, f64)> = Vec::with_capacity(n);
    for (rank, front) in fronts.iter().enumerate() {
        if chosen.len() >= n {
            break;
        }
        let crowd = crowding_distance(&pool, front);
        let mut members: Vec<(usize, f64)> = front.iter().copied().zip(crowd).collect();
        if chosen.len() + members.len() > n {
            members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            members.truncate(n - chosen.len());
        }
        chosen.extend(members.into_iter().map(|(i, c)| (i, rank, c)));
    }
    let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
    chosen
        .into_iter()
        .map(|(i, rank, crowding)| {
            let mut ind = slots[i].take().expect("each index chosen once");
            ind.rank = rank;
            ind.crowding = crowding;
            ind
        })
        .collect()
}

/// Runs the elitist generational loop for `config.generations` generations.
pub fn evolve<P: Problem + ?Sized>(problem: &mut P, config: &MooConfig) -> Result<EvolveOutcome> {
    config.validate()?;
    let n = config.population;
    let len = problem.genome_len();
    let alleles = problem.num_alleles();
    if alleles == 0 {
        return Err(Error::InvalidConfig("problem has no alleles".to_string()));
    }
    let mutation_rate = config.mutation_rate.unwrap_or(if len == 0 { 0.0 } else { 1.0 / len as f64 });
    let mut rng = seeding::rng(config.seed);

    let mut initial = problem.seed_genomes()?;
    initial.truncate(n);
    while initial.len() < n {
        initial.push(Genome((0..len).map(|_| rng.gen_range(0..alleles)).collect()));
    }

    let mut eval = Evaluator { problem, archive: Vec::new(), evaluations: 0 };
    let evaluated = eval.run(initial)?;
    let mut population = survive(evaluated, n);

    for _ in 0..config.generations {
        let mut children = Vec::with_capacity(n);
        while children.len() < n {
            let p1 = tournament(&population, config.tournament_size, &mut rng);
            let p2 = tournament(&population, config.tournament_size, &mut rng);
            let (c1, c2) = if rng.gen::<f64>() < config.crossover_rate {
                crossover(&p1.genome, &p2.genome, &mut rng)
            } else {
                (p1.genome.clone(), p2.genome.clone())
            };
            children.push(mutate(&c1, mutation_rate, alleles, &mut rng));
            children.push(mutate(&c2, mutation_rate, alleles, &mut rng));
        }
        let offspring = eval.run(children)?;
        let mut merged = population;
        merged.extend(offspring);
        population = survive(merged, n);
    }

    Ok(EvolveOutcome { population, archive: eval.archive, evaluations: eval.evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ind(objs: &[f64]) -> Individual {
        Individual::new(Genome(vec![]), Evaluation::feasible(objs.to_vec()))
    }

    fn infeasible(v: f64) -> Individual {
        Individual::new(Genome(vec![]), Evaluation::infeasible(v, 4))
    }

    #[test]
    fn dominance_examples() {
        let a = ind(&[0.1; 4]);
        let b = ind(&[0.2; 4]);
        assert!(dominates(&a, &b));
        assert!(!dominates(&b, &a));
        assert!(!dominates(&a, &a.clone()));
        let bad = infeasible(1.0);
        assert!(!dominates(&bad, &b));
        assert!(dominates(&b, &bad));
        assert!(dominates(&infeasible(0.5), &bad));
        assert!(!dominates(&bad, &infeasible(1.0)));
    }

    #[test]
    fn sort_small_cases() {
        assert_eq!(nondominated_sort(&[ind(&[1.0, 1.0])]), vec![vec![0]]);
        assert_eq!(nondominated_sort(&[ind(&[2.0, 2.0]), ind(&[1.0, 1.0])]), vec![vec![1], vec![0]]);
        let pop = [ind(&[1.0, 3.0]), ind(&[3.0, 1.0]), ind(&[2.0, 2.0]), ind(&[3.0, 3.0]), infeasible(1.0)];
        assert_eq!(nondominated_sort(&pop), vec![vec![0, 1, 2], vec![3], vec![4]]);
    }

    #[test]
    fn crowding_examples() {
        let pop = [ind(&[0.0, 1.0]), ind(&[5.0, 1.0]), ind(&[10.0, 1.0])];
        assert_eq!(crowding_distance(&pop, &[0]), vec![f64::INFINITY]);
        assert_eq!(crowding_distance(&pop, &[0, 1]), vec![f64::INFINITY; 2]);
        let d = crowding_distance(&pop, &[0, 1, 2]);
        assert_eq!(d[0], f64::INFINITY);
        assert_eq!(d[2], f64::INFINITY);
        // the other objectives are equal and contribute nothing
        let pop4 = [ind(&[0.0, 1.0, 2.0, 3.0]), ind(&[5.0, 1.0, 2.0, 3.0]), ind(&[10.0, 1.0, 2.0, 3.0])];
        let d = crowding_distance(&pop4, &[0, 1, 2]);
        assert_eq!(d[1], 1.0);
    }

    #[test]
    fn crowding_middle_gets_normalized_gap() {
        // objective 1 spread (0, 5, 10); objective 2 ordered the same way so
        // the middle point is interior in both.
        let pop = [ind(&[0.0, 0.0]), ind(&[5.0, 1.0]), ind(&[10.0, 2.0])];
        let d = crowding_distance(&pop, &[0, 1, 2]);
        assert_eq!(d[1], 1.0 + 1.0);
    }

    #[test]
    fn operators() {
        let mut rng = seeding::rng(1);
        let g = Genome(vec![1, 2, 3]);
        assert_eq!(mutate(&g, 0.0, 6, &mut rng), g);
        let (c1, c2) = crossover(&g, &g, &mut rng);
        assert_eq!((c1, c2), (g.clone(), g.clone()));
        let m1 = mutate(&g, 1.0, 6, &mut seeding::rng(9));
        let m2 = mutate(&g, 1.0, 6, &mut seeding::rng(9));
        assert_eq!(m1, m2);
        assert!(m1.0.iter().all(|&x| x < 6));
        let (a, b) = crossover(&Genome(vec![0, 0, 0]), &Genome(vec![1, 1, 1]), &mut rng);
        assert_eq!(a.0.iter().sum::<usize>() + b.0.iter().sum::<usize>(), 3);
        assert_eq!(a.0[0], 0);
        assert_eq!(b.0[0], 1);
    }

    /// Minimize (g, 1 - g) over the normalized gene sum g.
    struct SumProblem {
        k: usize,
        alleles: usize,
    }

    impl Problem for SumProblem {
        fn genome_len(&self) -> usize {
            self.k
        }
        fn num_alleles(&self) -> usize {
            self.alleles
        }
        fn num_objectives(&self) -> usize {
            2
        }
        fn evaluate(&mut self, g: &Genome) -> Result<Evaluation> {
            let max = (self.k * (self.alleles - 1)) as f64;
            let s = g.0.iter().sum::<usize>() as f64 / max;
            Ok(Evaluation::feasible(vec![s, 1.0 - s]))
        }
    }

    #[test]
    fn evolve_keeps_population_size_and_is_deterministic() {
        let cfg = MooConfig { seed: 3, ..Default::default() };
        let a = evolve(&mut SumProblem { k: 3, alleles: 6 }, &cfg).unwrap();
        assert_eq!(a.population.len(), 24);
        assert_eq!(a.evaluations, 24 * 26);
        let b = evolve(&mut SumProblem { k: 3, alleles: 6 }, &cfg).unwrap();
        assert_eq!(a.population, b.population);
        assert_eq!(a.archive, b.archive);
    }

    #[test]
    fn zero_generations_returns_initial_population() {
        struct Seeded(SumProblem);
        impl Problem for Seeded {
            fn genome_len(&self) -> usize {
                3
            }
            fn num_alleles(&self) -> usize {
                6
            }
            fn num_objectives(&self) -> usize {
                2
            }
            fn seed_genomes(&mut self) -> Result<Vec<Genome>> {
                Ok(vec![Genome(vec![5, 5, 5])])
            }
            fn evaluate(&mut self, g: &Genome) -> Result<Evaluation> {
                self.0.evaluate(g)
            }
        }
        let cfg = MooConfig { generations: 0, population: 4, seed: 1, ..Default::default() };
        let out = evolve(&mut Seeded(SumProblem { k: 3, alleles: 6 }), &cfg).unwrap();
        assert_eq!(out.evaluations, 4);
        assert_eq!(out.population.len(), 4);
        let mut initial: Vec<Genome> = out.archive.iter().map(|i| i.genome.clone()).collect();
        let mut kept: Vec<Genome> = out.population.iter().map(|i| i.genome.clone()).collect();
        initial.sort();
        kept.sort();
        assert_eq!(initial, kept);
        assert!(kept.contains(&Genome(vec![5, 5, 5])));
    }

    #[test]
    fn toy_front_matches_enumeration() {
        // every genome is Pareto-optimal on (g, 1-g); the distinct objective
        // vectors are the 16 achievable sums 0..=15.
        let out = evolve(&mut SumProblem { k: 3, alleles: 6 }, &MooConfig { seed: 11, ..Default::default() }).unwrap();
        let mut sums: Vec<usize> = out.archive_front().iter().map(|i| i.genome.0.iter().sum()).collect();
        sums.sort_unstable();
        sums.dedup();
        let mut expected = Vec::new();
        for a in 0..6 {
            for b in 0..6 {
                for c in 0..6 {
                    expected.push(a + b + c);
                }
            }
        }
        expected.sort_unstable();
        expected.dedup();
        assert_eq!(sums, expected);
    }

    #[test]
    fn failing_evaluation_reports_genome() {
        struct Failing;
        impl Problem for Failing {
            fn genome_len(&self) -> usize {
                2
            }
            fn num_alleles(&self) -> usize {
                3
            }
            fn num_objectives(&self) -> usize {
                1
            }
            fn evaluate(&mut self, g: &Genome) -> Result<Evaluation> {
                if g.0[0] == 2 { Err(Error::EmptyRollout) } else { Ok(Evaluation::feasible(vec![0.0])) }
            }
        }
        let err = evolve(&mut Failing, &MooConfig::default()).unwrap_err();
        match err {
            Error::Evaluation { genome, source } => {
                assert_eq!(genome[0], 2);
                assert_eq!(*source, Error::EmptyRollout);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(MooConfig { population: 3, ..Default::default() }.validate().is_err());
        assert!(MooConfig { crossover_rate: 1.2, ..Default::default() }.validate().is_err());
        assert!(MooConfig { mutation_rate: Some(-0.1), ..Default::default() }.validate().is_err());
        assert!(MooConfig::default().validate().is_ok());
    }

    fn arb_individual() -> impl Strategy<Value = Individual> {
        (proptest::collection::vec(0u8..4, 4), prop::bool::weighted(0.8), 1u8..3).prop_map(|(o, feas, v)| {
            let objs: Vec<f64> = o.into_iter().map(f64::from).collect();
            if feas {
                ind(&objs)
            } else {
                infeasible(v as f64)
            }
        })
    }

    proptest! {
        #[test]
        fn dominance_is_a_strict_partial_order(a in arb_individual(), b in arb_individual(), c in arb_individual()) {
            prop_assert!(!dominates(&a, &a));
            prop_assert!(!(dominates(&a, &b) && dominates(&b, &a)));
            if dominates(&a, &b) && dominates(&b, &c) {
                prop_assert!(dominates(&a, &c));
            }
        }

        #[test]
        fn fronts_partition_population(pop in proptest::collection::vec(arb_individual(), 1..40)) {
            let fronts = nondominated_sort(&pop);
            let mut seen: Vec<usize> = fronts.iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..pop.len()).collect::<Vec<_>>());
            for &i in &fronts[0] {
                prop_assert!(!pop.iter().any(|p| dominates(p, &pop[i])));
            }
            for w in fronts.windows(2) {
                for &j in &w[1] {
                    prop_assert!(w[0].iter().any(|&i| dominates(&pop[i], &pop[j])));
                }
            }
        }
    }
}
