// condsgd: experiment runner and verification suite for conditioned SGD.
//
//   condsgd run <config>
//   condsgd verify --dim D --traj R --steps K --seed S
//   condsgd ingest-adult <csv> [--out STEM]
//
// Exit codes: 0 success, 1 invalid input, 2 a verification criterion failed.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "condsgd/experiment.hpp"
#include "condsgd/problems.hpp"
#include "condsgd/verification.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitCriterionFailed = 2;

int cmd_run(const std::string& config_path) {
  const condsgd::ExperimentConfig cfg = condsgd::parse_config(config_path);
  const condsgd::RunReport rep = condsgd::run_experiment(cfg);
  condsgd::write_report(cfg.output, rep);
  for (const auto& m : rep.methods) {
    std::cout << condsgd::to_string(m.method);
    if (!m.curve.empty()) {
      std::cout << "  final k=" << m.curve.back().k << "  mean loss " << std::setprecision(10)
                << m.curve.back().mean_loss << " +- " << m.curve.back().std_loss;
    }
    std::cout << "  (" << m.failures.size() << " diverged, " << std::setprecision(3)
              << m.wall_seconds << " s)\n";
  }
  std::cout << "wrote " << cfg.output << "/report.json\n";
  return kExitOk;
}

int cmd_verify(const condsgd::VerifyOptions& opts, const std::string& out) {
  const condsgd::VerificationReport rep = condsgd::run_verification_suite(opts);
  for (const auto& c : rep.criteria) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  value=" << c.value
              << "  threshold=" << c.threshold << "  " << c.detail << '\n';
  }
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw condsgd::io_error("cannot write " + out);
    os << rep.summary.dump(2) << '\n';
  } else {
    std::cout << rep.summary.dump(2) << '\n';
  }
  return rep.all_passed() ? kExitOk : kExitCriterionFailed;
}

int cmd_ingest(const std::string& csv, const std::string& out) {
  const condsgd::Dataset data = condsgd::load_adult_income(csv);
  std::cout << "n = " << data.n() << ", d = " << data.d() << '\n';
  if (!out.empty()) {
    condsgd::write_dataset(out, data);
    std::cout << "wrote " << out << ".features.txt and " << out << ".labels.txt\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditioned SGD with averaged Hessian estimates"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "Experiment config (INI)")->required();

  condsgd::VerifyOptions vopts;
  std::string verify_out;
  auto* verify = app.add_subcommand("verify", "Check asymptotic theory on a quadratic problem");
  verify->add_option("--dim", vopts.dim, "Problem dimension")->capture_default_str();
  verify->add_option("--traj", vopts.trajectories, "Trajectories per ensemble")->capture_default_str();
  verify->add_option("--steps", vopts.steps, "Iterations per trajectory")->capture_default_str();
  verify->add_option("--seed", vopts.seed, "Master seed")->capture_default_str();
  verify->add_option("--threads", vopts.threads, "Worker threads (0 = all cores)");
  verify->add_flag("--zero-noise", vopts.zero_noise, "Use Gamma = 0 (contraction check)");
  verify->add_option("--out", verify_out, "Write the JSON summary here instead of stdout");

  std::string csv_path;
  std::string ingest_out;
  auto* ingest = app.add_subcommand("ingest-adult", "Load and encode the Adult Income CSV");
  ingest->add_option("csv", csv_path, "Adult Income CSV")->required();
  ingest->add_option("--out", ingest_out, "Cache stem for <stem>.features.txt / .labels.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*run) return cmd_run(config_path);
    if (*verify) return cmd_verify(vopts, verify_out);
    if (*ingest) return cmd_ingest(csv_path, ingest_out);
  } catch (const condsgd::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}
