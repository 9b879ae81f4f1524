// avb: simulate datasets, train, evaluate and run property checks.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
// failure (including failed verify checks), 3 file system errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "avb/errors.hpp"
#include "avb/io.hpp"
#include "avb/logreg.hpp"
#include "avb/lvm.hpp"
#include "avb/metrics.hpp"
#include "avb/sim.hpp"
#include "avb/verify.hpp"

namespace fs = std::filesystem;
using avb::ordered_json;

namespace {

enum Exit { kOk = 0, kInvalid = 1, kNumerical = 2, kIo = 3 };

std::string fmt(double v) { return avb::detail::format_double(v); }

void write_text(const fs::path& path, const std::string& text) {
  auto out = avb::detail::open_out(path);
  out << text;
  avb::detail::finish(out, path);
}

// ------------------------------------------------------------------ simulate

struct SimulateArgs {
  std::string kind;
  fs::path out;
  std::uint64_t seed = 0;
  std::size_t n = 900, d = 50, n_test = 0;
  std::size_t u = 200, u_test = 0, p = 1000, k_true = 4;
  double mean_length = 9.0;
};

int run_simulate(const SimulateArgs& a) {
  ordered_json manifest;
  manifest["kind"] = a.kind;
  manifest["seed"] = a.seed;
  if (a.kind == "logreg") {
    // Train and test records come from one stream so they share the true β.
    const auto sim = avb::sim_logreg({a.n + a.n_test, a.d, a.seed, std::nullopt});
    avb::LogRegDataset train, test;
    train.X = avb::Matrix(a.n, a.d);
    test.X = avb::Matrix(a.n_test, a.d);
    for (std::size_t r = 0; r < a.n + a.n_test; ++r) {
      auto& target = r < a.n ? train : test;
      const std::size_t row = r < a.n ? r : r - a.n;
      std::copy(sim.data.X.row(r).begin(), sim.data.X.row(r).end(), target.X.row(row).begin());
      target.y.push_back(sim.data.y[r]);
    }
    avb::write_logreg_csv(a.out / "data.csv", train);
    if (a.n_test > 0) avb::write_logreg_csv(a.out / "test.csv", test);
    manifest["N"] = a.n;
    manifest["N_test"] = a.n_test;
    manifest["D"] = a.d;
    manifest["beta"] = sim.beta;
  } else {
    avb::SimSessionSpec spec;
    spec.U_train = a.u;
    spec.U_test = a.u_test;
    spec.P = a.p;
    spec.K_true = a.k_true;
    spec.mean_length = a.mean_length;
    spec.seed = a.seed;
    const auto sim = avb::sim_sessions(spec);
    ordered_json extra;
    extra["kind"] = "sessions";
    extra["seed"] = a.seed;
    avb::write_sessions(a.out / "train.jsonl", sim.train, extra);
    if (a.u_test > 0) avb::write_sessions(a.out / "test.jsonl", sim.test, extra);
    manifest["U"] = a.u;
    manifest["U_test"] = a.u_test;
    manifest["P"] = a.p;
    manifest["K_true"] = a.k_true;
    manifest["mean_length"] = a.mean_length;
  }
  avb::write_json_file(a.out / "manifest.json", manifest);
  std::cout << "wrote " << a.kind << " data to " << a.out.string() << "\n";
  return kOk;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  std::string model;
  fs::path data, config, checkpoint_out, trace_out;
  bool timing = false;
  double prior_variance = 1.0;
  // Flag overrides; applied after the config file.
  std::optional<double> lr, momentum, beta2, decay, tol;
  std::optional<std::size_t> epochs, batch_size, mc_samples, max_iters, k, negatives,
      batch_sessions;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> optimizer;
};

template <typename T, typename V>
void override_with(const std::optional<V>& flag, T& field) {
  if (flag) field = *flag;
}

std::string logreg_trace_csv(const avb::LogRegFit& fit, bool timing) {
  std::ostringstream os;
  os << "epoch,bound,kl_term,lik_term,wall_ms\n";
  for (const auto& r : fit.trace)
    os << r.epoch << ',' << fmt(r.bound.value) << ',' << fmt(r.bound.kl_term) << ','
       << fmt(r.bound.lik_term) << ',' << fmt(timing ? r.wall_ms : 0.0) << "\n";
  return os.str();
}

std::string lvm_trace_csv(const avb::LvmFit& fit, bool timing) {
  std::ostringstream os;
  os << "epoch,full_bound,noisy_bound_mean,wall_ms\n";
  for (const auto& r : fit.trace)
    os << r.epoch << ',' << fmt(r.full.value) << ',' << fmt(r.noisy_bound_mean) << ','
       << fmt(timing ? r.wall_ms : 0.0) << "\n";
  return os.str();
}

int run_train(const TrainArgs& a) {
  const avb::KeyValues kv = a.config.empty() ? avb::KeyValues{} : avb::read_key_values(a.config);
  std::string trace;
  avb::Checkpoint ckpt;
  double final_bound = 0.0;

  if (a.model == "lvm") {
    avb::LvmConfig c;
    avb::apply_config(kv, c);
    override_with(a.lr, c.learning_rate);
    override_with(a.momentum, c.momentum);
    override_with(a.beta2, c.beta2);
    override_with(a.decay, c.decay);
    override_with(a.epochs, c.epochs);
    override_with(a.k, c.K);
    override_with(a.negatives, c.negatives);
    override_with(a.batch_sessions, c.batch_sessions);
    override_with(a.seed, c.seed);
    if (a.optimizer) c.optimizer = avb::parse_optimizer_kind(*a.optimizer);
    const avb::SessionDataset data = avb::read_sessions(a.data);
    const avb::LvmFit fit = avb::fit_lvm(data, c);
    trace = lvm_trace_csv(fit, a.timing);
    ckpt = avb::make_checkpoint(fit.params, c);
    final_bound = fit.trace.back().full.value;
    if (a.timing) std::cout << "mean step ms: " << fmt(fit.mean_step_ms) << "\n";
  } else {
    if (a.model != "jj" && a.model != "vbem" && a.model != "lrt")
      throw avb::validation_error("unknown model '" + a.model + "' (jj|vbem|lrt|lvm)");
    if (!(a.prior_variance > 0.0)) throw avb::validation_error("prior variance must be > 0");
    avb::OptimConfig c;
    avb::apply_config(kv, c);
    override_with(a.lr, c.learning_rate);
    override_with(a.momentum, c.momentum);
    override_with(a.beta2, c.beta2);
    override_with(a.decay, c.decay);
    override_with(a.tol, c.tol);
    override_with(a.epochs, c.epochs);
    override_with(a.batch_size, c.batch_size);
    override_with(a.mc_samples, c.mc_samples);
    override_with(a.max_iters, c.max_iters);
    override_with(a.seed, c.seed);
    if (a.optimizer) c.optimizer = avb::parse_optimizer_kind(*a.optimizer);
    avb::LogRegDataset data = avb::read_logreg_csv(a.data);
    if (data.size() == 0) throw avb::validation_error("'" + a.data.string() + "' has no records");
    c.batch_size = std::min(c.batch_size, data.size());
    const avb::LogRegPrior prior(avb::Vector(data.dim(), 0.0),
                                 avb::CovFactor::diagonal(avb::Vector(data.dim(), a.prior_variance)));
    const avb::LogRegFit fit = a.model == "jj"     ? avb::fit_sgd_jj(data, prior, c)
                               : a.model == "vbem" ? avb::fit_vbem(data, prior, c)
                                                   : avb::fit_lrt(data, prior, c);
    trace = logreg_trace_csv(fit, a.timing);
    ckpt = avb::make_checkpoint(fit.q, a.model, c);
    ckpt.config["prior_variance"] = a.prior_variance;
    // The reparameterization trace is a noisy estimate; report the JJ bound.
    final_bound = a.model == "lrt" ? avb::elbo_jj(data, prior, fit.q).value
                                   : fit.trace.back().bound.value;
  }

  if (!a.trace_out.empty()) write_text(a.trace_out, trace);
  if (!a.checkpoint_out.empty()) avb::save_checkpoint(a.checkpoint_out, ckpt);
  std::cout << "final bound: " << fmt(final_bound) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
  fs::path checkpoint, test_data, train_data, out;
  std::string baseline;
  std::size_t k = 5;
};

int run_eval(const EvalArgs& a) {
  ordered_json report;
  const bool sessions = a.test_data.extension() == ".jsonl";
  if (!a.baseline.empty() || sessions) {
    const avb::SessionDataset test = avb::read_sessions(a.test_data);
    avb::MetricsReport m;
    if (!a.baseline.empty()) {
      if (a.train_data.empty()) throw avb::validation_error("--baseline needs --train-data");
      const avb::SessionDataset train = avb::read_sessions(a.train_data);
      if (train.catalog_size != test.catalog_size)
        throw avb::validation_error("train and test catalog sizes differ");
      if (a.baseline == "pop") {
        const avb::PopBaseline pop(train);
        m = avb::evaluate(pop.scorer(), test, a.k);
      } else if (a.baseline == "itemknn") {
        const avb::ItemKnnBaseline knn(train);
        m = avb::evaluate(knn.scorer(), test, a.k);
      } else {
        throw avb::validation_error("unknown baseline '" + a.baseline + "' (pop|itemknn)");
      }
    } else {
      if (a.checkpoint.empty()) throw avb::validation_error("eval needs --checkpoint or --baseline");
      const avb::LvmParams params = avb::lvm_params(avb::load_checkpoint(a.checkpoint));
      if (params.P != test.catalog_size)
        throw avb::validation_error("checkpoint catalog size " + std::to_string(params.P) +
                                    " != test catalog size " + std::to_string(test.catalog_size));
      m = avb::evaluate(avb::lvm_scorer(params), test, a.k);
    }
    const std::string k = std::to_string(a.k);
    report["recall_at_" + k] = m.recall;
    report["tdcg_at_" + k] = m.tdcg;
    report["events"] = m.events;
    report["skipped"] = m.skipped;
  } else {
    if (a.checkpoint.empty()) throw avb::validation_error("eval needs --checkpoint");
    const avb::GaussianVariational q = avb::logreg_posterior(avb::load_checkpoint(a.checkpoint));
    const avb::LogRegDataset test = avb::read_logreg_csv(a.test_data);
    if (test.size() > 0 && test.dim() != q.dim())
      throw avb::validation_error("checkpoint has D = " + std::to_string(q.dim()) +
                                  " but test data has D = " + std::to_string(test.dim()));
    double correct = 0.0, log_loss = 0.0;
    for (std::size_t n = 0; n < test.size(); ++n) {
      const double p = avb::predict_proba(q, test.X.row(n));
      correct += ((p >= 0.5) == (test.y[n] == 1)) ? 1.0 : 0.0;
      log_loss -= std::log(test.y[n] == 1 ? p : 1.0 - p);
    }
    const double n = std::max<double>(1.0, static_cast<double>(test.size()));
    report["accuracy"] = correct / n;
    report["log_loss"] = log_loss / n;
    report["records"] = test.size();
  }
  const std::string text = report.dump(2) + "\n";
  if (!a.out.empty()) write_text(a.out, text);
  std::cout << text;
  return kOk;
}

// -------------------------------------------------------------------- verify

int run_verify(const std::string& suite, const fs::path& out) {
  const auto checks = avb::run_suite(suite);
  ordered_json report;
  report["suite"] = suite;
  bool ok = true;
  report["checks"] = ordered_json::array();
  for (const auto& c : checks) {
    ok = ok && c.passed;
    report["checks"].push_back(avb::to_json(c));
  }
  report["passed"] = ok;
  const std::string text = report.dump(2) + "\n";
  if (!out.empty()) write_text(out, text);
  std::cout << text;
  if (!ok) {
    for (const auto& c : checks)
      if (!c.passed) std::cerr << "FAILED " << c.name << " (worst " << fmt(c.worst) << ")\n";
    return kNumerical;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Analytic variational Bayes for logistic regression and session models"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Write a seeded synthetic dataset");
  simulate->add_option("--kind", sim.kind, "logreg or sessions")
      ->required()
      ->check(CLI::IsMember({"logreg", "sessions"}));
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Random seed");
  simulate->add_option("--n", sim.n, "logreg: training records")->check(CLI::PositiveNumber);
  simulate->add_option("--n-test", sim.n_test, "logreg: extra held-out records");
  simulate->add_option("--d", sim.d, "logreg: features")->check(CLI::PositiveNumber);
  simulate->add_option("--u", sim.u, "sessions: training sessions")->check(CLI::PositiveNumber);
  simulate->add_option("--u-test", sim.u_test, "sessions: test sessions");
  simulate->add_option("--p", sim.p, "sessions: catalog size")->check(CLI::PositiveNumber);
  simulate->add_option("--k-true", sim.k_true, "sessions: latent dimension")->check(CLI::PositiveNumber);
  simulate->add_option("--mean-length", sim.mean_length, "sessions: mean extra session length");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Fit a model and write a checkpoint and trace");
  train->add_option("--model", tr.model, "jj, vbem, lrt or lvm")
      ->required()
      ->check(CLI::IsMember({"jj", "vbem", "lrt", "lvm"}));
  train->add_option("--data", tr.data, "Training data (CSV for logistic models, JSONL for lvm)")
      ->required();
  train->add_option("--config", tr.config, "key = value config file; flags take precedence");
  train->add_option("--checkpoint-out", tr.checkpoint_out);
  train->add_option("--trace-out", tr.trace_out);
  train->add_flag("--timing", tr.timing, "Record wall-clock times in the trace");
  train->add_option("--prior-variance", tr.prior_variance, "Isotropic prior variance");
  train->add_option("--lr,--learning-rate", tr.lr);
  train->add_option("--epochs", tr.epochs);
  train->add_option("--batch-size", tr.batch_size);
  train->add_option("--optimizer", tr.optimizer, "sgd, momentum or adam");
  train->add_option("--momentum", tr.momentum);
  train->add_option("--beta2", tr.beta2);
  train->add_option("--decay", tr.decay);
  train->add_option("--seed", tr.seed);
  train->add_option("--mc-samples", tr.mc_samples);
  train->add_option("--max-iters", tr.max_iters);
  train->add_option("--tol", tr.tol);
  train->add_option("--k", tr.k, "lvm: latent dimension");
  train->add_option("--negatives", tr.negatives, "lvm: negative samples, 0 for the full partition");
  train->add_option("--batch-sessions", tr.batch_sessions);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint or baseline on test data");
  eval->add_option("--checkpoint", ev.checkpoint);
  eval->add_option("--test-data", ev.test_data)->required();
  eval->add_option("--train-data", ev.train_data, "Training sessions for --baseline");
  eval->add_option("--baseline", ev.baseline, "pop or itemknn");
  eval->add_option("--k", ev.k)->check(CLI::PositiveNumber);
  eval->add_option("--out", ev.out, "Also write the metrics JSON here");

  std::string suite = "all";
  fs::path verify_out;
  auto* verify = app.add_subcommand("verify", "Run the property check suites");
  verify->add_option("--suite", suite)->check(
      CLI::IsMember({"bounds", "gradients", "unbiasedness", "all"}));
  verify->add_option("--out", verify_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*train) return run_train(tr);
    if (*eval) return run_eval(ev);
    if (*verify) return run_verify(suite, verify_out);
  } catch (const avb::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const avb::numerical_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const avb::decomposition_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}
