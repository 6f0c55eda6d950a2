//! Genotypes from a latent threshold model with haplotype blocks.
//!
//! Within a block every haplotype carries a shared normal factor `W` and
//! markers see `Z_j = √ρ W + √(1 − ρ) ε_j`; the allele is present when
//! `Z_j > Φ⁻¹(1 − maf_j)`. A genotype is the sum of two haplotypes, so
//! markers in a block are positively correlated and blocks are independent.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Dataset, Family, GenotypeCoding, GenotypeMatrix, MarkerPosition};
use crate::mvn::phi_inv_upper;

/// Attempts at redrawing a marker that came out monomorphic.
const REDRAW_ATTEMPTS: usize = 100;
/// Base-pair spacing of generated markers.
const BP_SPACING: u64 = 1000;

const LAYOUT_STREAM: u64 = 0;
const PHENOTYPE_STREAM: u64 = 1;
const FIRST_BLOCK_STREAM: u64 = 2;

/// Settings of a synthetic association data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGwas {
    pub n: usize,
    pub m: usize,
    /// Minor-allele frequencies are uniform on this range.
    pub maf_range: (f64, f64),
    /// Block lengths are uniform on this inclusive range.
    pub block_length: (usize, usize),
    /// Latent correlation `ρ` within a block, in `[0, 1)`.
    pub within_block_rho: f64,
    pub family: Family,
    /// `(marker, effect)` pairs on the linear predictor; empty under the null.
    pub effects: Vec<(usize, f64)>,
    /// Effects of extra standard-normal covariates, one per covariate.
    pub covariate_effects: Vec<f64>,
    /// Markers are split evenly across this many chromosomes.
    pub chromosomes: usize,
    pub seed: u64,
}

impl SyntheticGwas {
    /// Intercept-only logistic null with blocks of 1 to 10 markers.
    pub fn null(n: usize, m: usize, seed: u64) -> Self {
        SyntheticGwas {
            n,
            m,
            maf_range: (0.1, 0.5),
            block_length: (1, 10),
            within_block_rho: 0.8,
            family: Family::BernoulliLogit,
            effects: Vec::new(),
            covariate_effects: Vec::new(),
            chromosomes: 1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n < 2 || self.m == 0 {
            return bad(format!(
                "need n >= 2 and m >= 1, got n = {}, m = {}",
                self.n, self.m
            ));
        }
        let (lo, hi) = self.maf_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return bad(format!(
                "minor-allele frequency range ({lo}, {hi}) must lie in (0, 0.5]"
            ));
        }
        let (bl, bh) = self.block_length;
        if bl == 0 || bl > bh {
            return bad(format!("block length range ({bl}, {bh}) is empty"));
        }
        if !(0.0..1.0).contains(&self.within_block_rho) {
            return bad(format!(
                "within-block correlation {} is infeasible for a threshold model; use [0, 1)",
                self.within_block_rho
            ));
        }
        if self.chromosomes == 0 || self.chromosomes > self.m {
            return bad(format!(
                "{} chromosomes for {} markers",
                self.chromosomes, self.m
            ));
        }
        if let Some((j, b)) = self
            .effects
            .iter()
            .find(|(j, b)| *j >= self.m || !b.is_finite())
        {
            return bad(format!("effect {b} on marker {j} is invalid"));
        }
        if self.covariate_effects.iter().any(|b| !b.is_finite()) {
            return bad("covariate effects must be finite".into());
        }
        Ok(())
    }

    fn chromosome_of(&self, j: usize) -> usize {
        j * self.chromosomes / self.m
    }
}

/// First marker of every haplotype block. Blocks never span chromosomes.
pub fn block_layout(spec: &SyntheticGwas) -> Result<Vec<usize>> {
    spec.validate()?;
    let mut rng = stream(spec.seed, LAYOUT_STREAM);
    let mut starts = Vec::new();
    let mut j = 0;
    while j < spec.m {
        starts.push(j);
        let len = rng.random_range(spec.block_length.0..=spec.block_length.1);
        let chrom = spec.chromosome_of(j);
        let mut end = (j + len).min(spec.m);
        if let Some(cut) = (j + 1..end).find(|&t| spec.chromosome_of(t) != chrom) {
            end = cut;
        }
        j = end;
    }
    Ok(starts)
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw a data set. Under the null the phenotype depends on the covariates only.
pub fn generate_gwas(spec: &SyntheticGwas) -> Result<Dataset> {
    let starts = block_layout(spec)?;
    let (n, m) = (spec.n, spec.m);
    let mut ends = starts[1..].to_vec();
    ends.push(m);
    let blocks = starts
        .par_iter()
        .zip(&ends)
        .enumerate()
        .map(|(b, (&s, &e))| block_genotypes(spec, s, e, FIRST_BLOCK_STREAM + b as u64))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = blocks.into_iter().flatten().collect();

    let mut rng = stream(spec.seed, PHENOTYPE_STREAM);
    let q = spec.covariate_effects.len();
    let extra = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut eta: Vec<f64> = (0..n)
        .map(|i| {
            (0..q)
                .map(|c| spec.covariate_effects[c] * extra[(i, c)])
                .sum()
        })
        .collect();
    for &(j, beta) in &spec.effects {
        for (e, x) in eta.iter_mut().zip(&values[j * n..(j + 1) * n]) {
            *e += beta * x;
        }
    }
    let phenotype: Vec<f64> = eta
        .iter()
        .map(|&e| match spec.family {
            Family::NormalIdentity => e + rng.sample::<f64, _>(StandardNormal),
            Family::BernoulliLogit => {
                let mu = spec.family.mean(e);
                f64::from(u8::from(rng.random::<f64>() < mu))
            }
        })
        .collect();

    let genotypes = GenotypeMatrix::from_dense(n, m, values, GenotypeCoding::Additive)?;
    let ids = (1..=m).map(|j| format!("snp{j}")).collect();
    let mut positions = Vec::with_capacity(m);
    let mut first = 0;
    for j in 0..m {
        if j > 0 && spec.chromosome_of(j) != spec.chromosome_of(j - 1) {
            first = j;
        }
        positions.push(MarkerPosition {
            chrom: (spec.chromosome_of(j) + 1).to_string(),
            bp: (j - first + 1) as u64 * BP_SPACING,
        });
    }
    let extra = (q > 0).then_some(&extra);
    Dataset::with_covariates(phenotype, extra, genotypes)?.with_markers(ids, positions)
}

/// Column-major genotypes of markers `start..end`.
fn block_genotypes(
    spec: &SyntheticGwas,
    start: usize,
    end: usize,
    stream_id: u64,
) -> Result<Vec<f64>> {
    let n = spec.n;
    let mut rng = stream(spec.seed, stream_id);
    let shared: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
    let (a, b) = (
        spec.within_block_rho.sqrt(),
        (1.0 - spec.within_block_rho).sqrt(),
    );
    let mut out = Vec::with_capacity(n * (end - start));
    for j in start..end {
        let maf = rng.random_range(spec.maf_range.0..=spec.maf_range.1);
        let threshold = phi_inv_upper(maf)?;
        let mut column = vec![0.0; n];
        let mut attempt = 0;
        loop {
            for (i, g) in column.iter_mut().enumerate() {
                let h1 = a * shared[2 * i] + b * rng.sample::<f64, _>(StandardNormal) > threshold;
                let h2 =
                    a * shared[2 * i + 1] + b * rng.sample::<f64, _>(StandardNormal) > threshold;
                *g = f64::from(u8::from(h1) + u8::from(h2));
            }
            if column.iter().any(|&g| g != column[0]) {
                break;
            }
            attempt += 1;
            if attempt == REDRAW_ATTEMPTS {
                return Err(Error::InvalidArgument(format!(
                    "marker {j} stays monomorphic with n = {n} and minor-allele frequency {maf:.3e}; \
                     increase n or the frequency range"
                )));
            }
        }
        out.extend_from_slice(&column);
    }
    Ok(out)
}
