use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAX_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme", deny_unknown_fields)]
pub enum PartitionScheme {
    Iid,
    Pathological { classes_per_client: usize },
    Dirichlet { beta: f64 },
    FeatureShift { domains: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub client_count: usize,
    pub seed: u64,
}

/// Client shards and their weights `p_i = |D_i| / Σ_j |D_j|`.
#[derive(Debug, Clone)]
pub struct Partition {
    pub clients: Vec<LabeledDataset>,
    pub weights: Vec<f64>,
}

/// Splits `sources` across clients.
///
/// Label-skew and iid schemes take a single source dataset. `FeatureShift`
/// takes one dataset per domain; client `i` draws from domain `i mod D`, and
/// each domain is dealt round-robin among its clients.
pub fn partition(sources: &[LabeledDataset], spec: &PartitionSpec) -> Result<Partition> {
    let n = spec.client_count;
    if n == 0 {
        return Err(Error::Partition("client_count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let assignment: Vec<Vec<(usize, usize)>> = match &spec.scheme {
        PartitionScheme::FeatureShift { domains } => {
            if sources.len() != *domains {
                return Err(Error::Partition(format!(
                    "feature shift expects {domains} domain datasets, got {}",
                    sources.len()
                )));
            }
            if n < *domains {
                return Err(Error::Partition(format!(
                    "{n} clients cannot cover {domains} domains"
                )));
            }
            let mut out = vec![Vec::new(); n];
            for (d, source) in sources.iter().enumerate() {
                let members: Vec<usize> = (d..n).step_by(*domains).collect();
                let mut idx: Vec<usize> = (0..source.len()).collect();
                idx.shuffle(&mut rng);
                for (k, i) in idx.into_iter().enumerate() {
                    out[members[k % members.len()]].push((d, i));
                }
            }
            out
        }
        scheme => {
            let [source] = sources else {
                return Err(Error::Partition(format!(
                    "{scheme:?} expects one source dataset, got {}",
                    sources.len()
                )));
            };
            let per_client = match scheme {
                PartitionScheme::Iid => iid(source.len(), n, &mut rng),
                PartitionScheme::Pathological { classes_per_client } => {
                    pathological(source, n, *classes_per_client, &mut rng)?
                }
                PartitionScheme::Dirichlet { beta } => dirichlet(source, n, *beta, &mut rng)?,
                PartitionScheme::FeatureShift { .. } => unreachable!(),
            };
            per_client
                .into_iter()
                .map(|v| v.into_iter().map(|i| (0, i)).collect())
                .collect()
        }
    };

    if let Some(empty) = assignment.iter().position(Vec::is_empty) {
        return Err(Error::Partition(format!("client {empty} received no samples")));
    }
    let clients: Vec<LabeledDataset> = assignment
        .iter()
        .map(|picks| {
            let dim = sources[picks[0].0].dim();
            let mut data = Vec::with_capacity(picks.len() * dim);
            let mut labels = Vec::with_capacity(picks.len());
            for &(d, i) in picks {
                data.extend_from_slice(sources[d].samples.features.row(i));
                labels.push(sources[d].labels()[i]);
            }
            LabeledDataset::new(
                Matrix::new(labels.len(), dim, data)?,
                labels,
                sources[0].class_count,
            )
        })
        .collect::<Result<_>>()?;
    let weights = size_weights(&clients);
    Ok(Partition { clients, weights })
}

pub(crate) fn size_weights(clients: &[LabeledDataset]) -> Vec<f64> {
    let total: usize = clients.iter().map(LabeledDataset::len).sum();
    clients
        .iter()
        .map(|c| c.len() as f64 / total as f64)
        .collect()
}

fn iid(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let mut out = vec![Vec::new(); n];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % n].push(i);
    }
    out
}

fn shuffled_class_indices(data: &LabeledDataset, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); data.class_count];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    for c in &mut by_class {
        c.shuffle(rng);
    }
    by_class
}

fn pathological(
    data: &LabeledDataset,
    n: usize,
    per_client: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let classes = data.class_count;
    if per_client == 0 || per_client > classes {
        return Err(Error::Partition(format!(
            "classes_per_client must be in 1..={classes}, got {per_client}"
        )));
    }
    if n * per_client < classes {
        return Err(Error::Partition(format!(
            "{n} clients x {per_client} classes cannot cover {classes} classes"
        )));
    }
    for _ in 0..MAX_DRAWS {
        let mut order: Vec<usize> = (0..classes).collect();
        order.shuffle(rng);
        // client i claims consecutive classes of the shuffled ring
        let claims: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..per_client)
                    .map(|k| order[(i * per_client + k) % classes])
                    .collect()
            })
            .collect();
        let by_class = shuffled_class_indices(data, rng);
        let mut out = vec![Vec::new(); n];
        for (c, samples) in by_class.iter().enumerate() {
            let owners: Vec<usize> = (0..n).filter(|&i| claims[i].contains(&c)).collect();
            for (k, chunk) in even_chunks(samples, owners.len()).into_iter().enumerate() {
                out[owners[k]].extend_from_slice(chunk);
            }
        }
        if out.iter().all(|v| !v.is_empty()) {
            return Ok(out);
        }
    }
    Err(Error::Partition(format!(
        "no non-empty pathological split after {MAX_DRAWS} draws"
    )))
}

/// Splits into `parts` contiguous chunks whose sizes differ by at most one.
fn even_chunks(items: &[usize], parts: usize) -> Vec<&[usize]> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let len = base + usize::from(k < extra);
        out.push(&items[start..start + len]);
        start += len;
    }
    out
}

/// Integer counts summing to `total`, proportional to `weights`, with leftover
/// units going to the largest fractional remainders (ties to lower index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet_draw(n: usize, beta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta > 0");
    loop {
        let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return g.into_iter().map(|x| x / s).collect();
        }
    }
}

fn dirichlet(
    data: &LabeledDataset,
    n: usize,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Partition(format!("beta must be > 0, got {beta}")));
    }
    for _ in 0..MAX_DRAWS {
        let by_class = shuffled_class_indices(data, rng);
        let mut out = vec![Vec::new(); n];
        for samples in &by_class {
            let props = dirichlet_draw(n, beta, rng);
            let counts = largest_remainder(&props, samples.len());
            let mut start = 0;
            for (client, &c) in counts.iter().enumerate() {
                out[client].extend_from_slice(&samples[start..start + c]);
                start += c;
            }
        }
        if out.iter().all(|v| !v.is_empty()) {
            for v in &mut out {
                v.sort_unstable();
            }
            return Ok(out);
        }
    }
    Err(Error::Partition(format!(
        "no non-empty dirichlet split after {MAX_DRAWS} draws"
    )))
}

/// Shannon entropy (nats) of a client's label distribution.
pub fn label_entropy(data: &LabeledDataset) -> f64 {
    let n = data.len() as f64;
    data.class_histogram()
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticParams};

    fn data() -> LabeledDataset {
        gen_synthetic(&SyntheticParams {
            class_count: 5,
            dim: 3,
            samples_per_class: 40,
            cluster_spread: 0.5,
            seed: 1,
        })
    }

    fn spec(scheme: PartitionScheme, n: usize, seed: u64) -> PartitionSpec {
        PartitionSpec {
            scheme,
            client_count: n,
            seed,
        }
    }

    #[test]
    fn iid_even_weights() {
        let p = partition(&[data()], &spec(PartitionScheme::Iid, 4, 0)).unwrap();
        assert!(p.weights.iter().all(|&w| w == 0.25));
    }

    #[test]
    fn pathological_full_classes_covers_everything() {
        let p = partition(
            &[data()],
            &spec(PartitionScheme::Pathological { classes_per_client: 5 }, 4, 2),
        )
        .unwrap();
        for c in &p.clients {
            assert!(c.class_histogram().iter().all(|&h| h > 0));
        }
    }

    #[test]
    fn pathological_clients_hold_exactly_n_classes() {
        let p = partition(
            &[data()],
            &spec(PartitionScheme::Pathological { classes_per_client: 2 }, 6, 3),
        )
        .unwrap();
        for c in &p.clients {
            assert_eq!(c.class_histogram().iter().filter(|&&h| h > 0).count(), 2);
        }
        assert!(partition(
            &[data()],
            &spec(PartitionScheme::Pathological { classes_per_client: 1 }, 2, 3),
        )
        .is_err());
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 10), vec![5, 3, 2]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 1.0], 7), vec![0, 7]);
    }

    #[test]
    fn impossible_split_errors() {
        let tiny = data().subset(&[0, 1]);
        let err = partition(&[tiny], &spec(PartitionScheme::Dirichlet { beta: 0.1 }, 5, 0));
        assert!(matches!(err, Err(Error::Partition(_))));
    }

    #[test]
    fn feature_shift_assigns_domains_round_robin() {
        let doms = vec![data(), data(), data()];
        let p = partition(&doms, &spec(PartitionScheme::FeatureShift { domains: 3 }, 6, 1)).unwrap();
        let total: usize = p.clients.iter().map(LabeledDataset::len).sum();
        assert_eq!(total, 600);
        assert!(partition(&doms[..2], &spec(PartitionScheme::FeatureShift { domains: 3 }, 6, 1))
            .is_err());
    }

    #[test]
    fn entropy_of_single_class_is_zero() {
        let d = data().subset(&[0, 1, 2]);
        assert_eq!(label_entropy(&d), 0.0);
    }
}
