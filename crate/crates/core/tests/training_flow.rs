use mcdl_core::fixtures::random_instance;
use mcdl_core::network::Architecture;
use mcdl_core::optim::{minimize_model, OptimizerConfig};
use mcdl_core::rng;
use mcdl_core::solvers::Hyperparameters;
use mcdl_core::stationarity::{construct_decoder_stationary_point, consistent_set};
use mcdl_core::fixtures::uniform_matrix;
use mcdl_core::model::ForwardOperator;
use mcdl_core::training::{LossKind, Model, Objective, Problem};

#[test]
fn every_loss_trains_downhill_with_tanh_networks() {
    let inst = random_instance(5, 4, 3, 12, true);
    let arch = Architecture::parse("6:tanh,linear").unwrap();
    let hyper = Hyperparameters { alpha1: 0.01, alpha2: 0.01, alpha: 1.0, beta: 1.0 };
    let cfg = OptimizerConfig { max_iters: 400, log_every: 1, ..Default::default() };
    for kind in LossKind::ALL {
        let mut problem = Problem::new(&inst.ts, &inst.fwd, hyper);
        if kind == LossKind::Mcdnn {
            problem = problem.weighted(&inst.prior, &inst.noise);
        }
        let objective = Objective::new(kind, problem).unwrap();
        let model = Model::init(kind, &arch, 4, 3, &mut rng::stream(1, 0)).unwrap();
        let start = objective.loss(&model).unwrap();
        let (trained, run) = minimize_model(objective, &model, &cfg).unwrap();
        assert!(run.loss < 0.5 * start, "{kind}: {start} -> {}", run.loss);
        assert!(run.trace.windows(2).all(|w| w[1].loss <= w[0].loss), "{kind}");
        assert_eq!(trained.num_params(), model.num_params());
    }
}

#[test]
fn training_from_a_certified_point_stops_immediately() {
    let mut r = rng::stream(8, 0);
    let fwd = ForwardOperator::linear(uniform_matrix(5, 3, &mut r)).unwrap();
    let ts = consistent_set(&fwd, uniform_matrix(3, 9, &mut r)).unwrap();
    let cand = construct_decoder_stationary_point(&fwd).unwrap();
    let objective = Objective::new(LossKind::McDecoder, Problem::new(&ts, &fwd, Hyperparameters::default())).unwrap();
    let model = Model::Autoencoder(cand.params);
    let (_, run) = minimize_model(objective, &model, &OptimizerConfig::default()).unwrap();
    assert!(run.converged);
    assert_eq!(run.iterations, 0);
}

#[test]
fn training_is_deterministic() {
    let inst = random_instance(6, 3, 2, 7, true);
    let arch = Architecture::parse("3:softplus,linear").unwrap();
    let cfg = OptimizerConfig { max_iters: 50, ..Default::default() };
    let run = || {
        let objective = Objective::new(LossKind::McEncoder, Problem::new(&inst.ts, &inst.fwd, Hyperparameters::default())).unwrap();
        let model = Model::init(LossKind::McEncoder, &arch, 3, 2, &mut rng::stream(4, 0)).unwrap();
        minimize_model(objective, &model, &cfg).unwrap().1
    };
    let (a, b) = (run(), run());
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.trace, b.trace);
}
