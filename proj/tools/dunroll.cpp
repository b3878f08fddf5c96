#include <dunroll/cli.hpp>

#include <CLI11.hpp>

#include <iostream>

using namespace dunroll;

namespace {

struct InstanceFlags {
  int nodes = 5;
  int edges = 6;
  int d = 100;
  int m = 300;
  double snr = 50.0;
  std::optional<double> p_s;

  void attach(CLI::App* app) {
    app->add_option("--nodes", nodes, "number of agents N");
    app->add_option("--edges", edges, "number of graph edges");
    app->add_option("--d", d, "signal dimension");
    app->add_option("--m", m, "total measurements (split evenly over agents)");
    app->add_option("--snr", snr, "signal-to-noise ratio in dB");
    app->add_option("--ps", p_s, "expected nonzeros in x* (default m/(2N))");
  }

  InstanceConfig config(std::uint64_t seed) const {
    InstanceConfig c;
    c.n_nodes = nodes;
    c.n_edges = edges;
    c.d = d;
    c.m_total = m;
    c.snr_db = snr;
    c.p_s = p_s;
    c.seed = seed;
    return c;
  }
};

Algorithm algorithm_option(const std::string& s) {
  try {
    return parse_algorithm(s);
  } catch (const ParameterError& e) {
    throw CLI::ValidationError("--alg", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized LASSO solvers, unrolled training and diagnostics"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string out, dataset, alg = "pg-extra";
  app.add_option("--seed", seed, "master seed")->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write train/val/test dataset files");
  InstanceFlags gen_inst;
  gen_inst.attach(gen);
  cli::GenDataOptions gen_opt;
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--train", gen_opt.n_train, "training samples")->capture_default_str();
  gen->add_option("--val", gen_opt.n_val, "validation samples")->capture_default_str();
  gen->add_option("--test", gen_opt.n_test, "test samples")->capture_default_str();

  // solve
  auto* solve = app.add_subcommand("solve", "run a fixed-parameter solver over a dataset split");
  cli::SolveOptions solve_opt;
  solve->add_option("--dataset", dataset, "dataset file")->required();
  solve->add_option("--alg", alg, "prox-dgd or pg-extra")->capture_default_str();
  solve->add_option("--alpha", solve_opt.alpha, "step size")->capture_default_str();
  solve->add_option("--lambda", solve_opt.lambda, "l1 weight")->capture_default_str();
  solve->add_option("--k", solve_opt.k_steps, "iterations")->capture_default_str();
  solve->add_option("--out", out, "output directory")->required();

  // tune-grid
  auto* tune = app.add_subcommand("tune-grid", "sweep (alpha, lambda) on a validation split");
  cli::TuneGridOptions tune_opt;
  tune->add_option("--dataset", dataset, "dataset file")->required();
  tune->add_option("--alg", alg, "prox-dgd or pg-extra")->capture_default_str();
  tune->add_option("--alpha", tune_opt.alphas, "step sizes")->delimiter(',');
  tune->add_option("--lambda", tune_opt.lambdas, "l1 weights")->delimiter(',');
  tune->add_option("--k", tune_opt.k_steps, "iterations")->capture_default_str();
  tune->add_option("--out", out, "output directory")->required();

  // train
  auto* trn = app.add_subcommand("train", "learn per-iteration step sizes and thresholds");
  cli::TrainOptions train_opt;
  trn->add_option("--dataset", dataset, "training dataset file")->required();
  trn->add_option("--val", train_opt.val_dataset, "validation dataset file");
  trn->add_option("--alg", alg, "prox-dgd or pg-extra")->capture_default_str();
  trn->add_option("--k", train_opt.config.k_steps, "unrolled layers")->capture_default_str();
  trn->add_option("--gamma", train_opt.config.gamma, "loss discount")->capture_default_str();
  trn->add_option("--epochs", train_opt.config.epochs, "epochs")->capture_default_str();
  trn->add_option("--batch", train_opt.config.batch_size, "batch size")->capture_default_str();
  trn->add_option("--lr", train_opt.config.adam.lr, "Adam learning rate")->capture_default_str();
  trn->add_option("--alpha", train_opt.config.init_alpha, "initial step size");
  trn->add_option("--lambda", train_opt.config.init_lambda, "initial l1 weight")->capture_default_str();
  trn->add_option("--seed", seed, "master seed");
  trn->add_option("--out", out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a parameter file on a dataset split");
  cli::EvalOptions eval_opt;
  ev->add_option("--dataset", dataset, "dataset file")->required();
  ev->add_option("--theta", eval_opt.theta, "parameter file")->required();
  ev->add_option("--k", eval_opt.expect_k, "expected number of layers");
  ev->add_option("--out", out, "output directory")->required();

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "descent certificate and recovery bound on one instance");
  InstanceFlags diag_inst;
  diag_inst.d = 30;
  diag_inst.m = 50;
  diag_inst.attach(diag);
  cli::DiagnoseOptions diag_opt;
  diag->add_option("--lambda", diag_opt.lambda, "l1 weight")->capture_default_str();
  diag->add_option("--alpha", diag_opt.alpha, "absolute step size");
  diag->add_option("--alpha-scale", diag_opt.alpha_scale, "step size as a multiple of alpha_max")
      ->capture_default_str();
  diag->add_option("--k", diag_opt.k_steps, "iterations")->capture_default_str();
  diag->add_option("--seed", seed, "instance seed");
  diag->add_option("--out", out, "output directory")->required();

  // scaling
  auto* scal = app.add_subcommand("scaling", "recovery error versus number of measurements");
  cli::ScalingOptions scal_opt;
  InstanceFlags scal_inst;
  scal_inst.d = scal_opt.config.base.d;
  scal_inst.snr = scal_opt.config.base.snr_db;
  scal_inst.p_s = scal_opt.config.base.p_s;
  scal_inst.attach(scal);
  scal->add_option("--m-list", scal_opt.config.m_list, "values of m")->delimiter(',');
  scal->add_option("--trials", scal_opt.config.trials, "trials per m")->capture_default_str();
  scal->add_option("--lambda-factor", scal_opt.config.lambda_factor, "multiplier on the universal rule")
      ->capture_default_str();
  scal->add_option("--seed", seed, "master seed");
  scal->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      gen_opt.instance = gen_inst.config(seed);
      gen_opt.seed = seed;
      gen_opt.out = out;
      const auto r = cli::cmd_gen_data(gen_opt);
      std::cout << "wrote " << r.train.string() << ", " << r.val.string() << ", " << r.test.string() << '\n';
    } else if (*solve) {
      solve_opt.dataset = dataset;
      solve_opt.algorithm = algorithm_option(alg);
      solve_opt.out = out;
      const auto r = cli::cmd_solve(solve_opt);
      std::cout << "final NAMSE " << format_real(r.final_db) << " dB (" << r.evaluated << " evaluated, "
                << r.diverged << " diverged)\n";
    } else if (*tune) {
      tune_opt.dataset = dataset;
      tune_opt.algorithm = algorithm_option(alg);
      tune_opt.out = out;
      const auto g = cli::cmd_tune_grid(tune_opt);
      std::cout << "argmin alpha=" << format_real(g.best().alpha) << " lambda=" << format_real(g.best().lambda)
                << " NAMSE " << format_real(g.best().final_db) << " dB\n";
    } else if (*trn) {
      train_opt.dataset = dataset;
      train_opt.config.algorithm = algorithm_option(alg);
      train_opt.config.seed = seed;
      train_opt.out = out;
      const auto r = cli::cmd_train(train_opt);
      std::cout << "best epoch " << r.result.best_epoch << ", validation NAMSE "
                << format_real(r.result.best_val_namse_db) << " dB\n";
    } else if (*ev) {
      eval_opt.dataset = dataset;
      eval_opt.out = out;
      const auto r = cli::cmd_eval(eval_opt);
      std::cout << "final NAMSE " << format_real(r.final_db) << " dB\n";
    } else if (*diag) {
      diag_opt.instance = diag_inst.config(seed);
      diag_opt.out = out;
      const auto r = cli::cmd_diagnose(diag_opt);
      std::cout << "descent " << (r.lyapunov.pass ? "PASS" : "FAIL") << ", recovery bound "
                << (r.assembly.pass ? "PASS" : "FAIL") << '\n';
    } else if (*scal) {
      scal_opt.config.base = scal_inst.config(seed);
      scal_opt.config.seed = seed;
      scal_opt.out = out;
      const auto r = cli::cmd_scaling(scal_opt);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << "slope " << format_real(r.slope) << '\n';
    }
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
