use criterion::{criterion_group, criterion_main, Criterion};

use sizeshape::mcmc::run_chain;
use sizeshape::model::build_bases;
use sizeshape::simulate::{generate_from_model, Generator, SimSpec};
use sizeshape::{ChainConfig, ModelConfig, PhasePrior};

fn short_chain(c: &mut Criterion) {
    let mut group = c.benchmark_group("chain_500_iterations");
    group.sample_size(10);
    for (name, prior, generator) in [
        ("pm1", PhasePrior::Parametric, Generator::ModelParametric),
        ("pm2", PhasePrior::Dirichlet, Generator::ModelDirichlet),
    ] {
        let config = ModelConfig {
            phase_prior: prior,
            ..ModelConfig::default()
        };
        let spec = SimSpec {
            n: 30,
            t: 50,
            generator,
            sigma2: 0.1,
            sigma_c2: 0.25,
            seed: 1,
        };
        let sim = generate_from_model(&spec, &config).unwrap();
        let bases = build_bases(&config, &sim.grid).unwrap();
        let chain = ChainConfig::new(500, 250, 1, 1);
        group.bench_function(name, |b| {
            b.iter(|| run_chain(&sim.data, &bases, &config, None, &chain).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, short_chain);
criterion_main!(benches);
