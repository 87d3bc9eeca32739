// Command-line front end: train / unlearn / retrain / verify / sweep / report.

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pev/pev.hpp"

namespace {

int env_jobs() {
  if (const char* env = std::getenv("PEV_JOBS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated unlearning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir;
  int target = 0;
  int jobs = 0;
  bool uniform = false;

  app.add_option("-c,--config", config_path, "Config file (key=value lines)");
  app.add_option("--set", overrides, "Override a config key (key=value)");
  app.add_option("--run", run_dir, "Run directory of a previous train");
  app.add_option("--target", target, "Client id to remove / verify");
  app.add_option("--jobs", jobs, "Worker threads (default: PEV_JOBS or 1)");

  auto* train = app.add_subcommand("train", "Federated training with checkpoints");
  auto* unlearn = app.add_subcommand("unlearn", "Remove a client from a trained run");
  unlearn->add_flag("--baseline", uniform, "Use the uniform-noise baseline");
  auto* retrain = app.add_subcommand("retrain", "Retrain from scratch without a client");
  auto* verify = app.add_subcommand("verify", "Check a fingerprint against the unlearned model");
  verify->add_flag("--baseline", uniform, "Verify the uniform-baseline model");
  auto* sweep = app.add_subcommand("sweep", "Accuracy-drop sweep over noise levels");
  auto* report = app.add_subcommand("report", "Aggregate artifacts of a run directory");
  for (auto* sub : {train, unlearn, retrain, verify, sweep, report}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pev::cli::kExitUsage;
  }

  pev::cli::Command cmd;
  if (train->parsed()) cmd.kind = pev::cli::Command::Kind::train;
  if (unlearn->parsed()) cmd.kind = pev::cli::Command::Kind::unlearn;
  if (retrain->parsed()) cmd.kind = pev::cli::Command::Kind::retrain;
  if (verify->parsed()) cmd.kind = pev::cli::Command::Kind::verify;
  if (sweep->parsed()) cmd.kind = pev::cli::Command::Kind::sweep;
  if (report->parsed()) cmd.kind = pev::cli::Command::Kind::report;
  if (!config_path.empty()) cmd.config_path = config_path;
  cmd.overrides = overrides;
  if (!run_dir.empty()) cmd.run_dir = run_dir;
  cmd.target = target;
  cmd.jobs = jobs > 0 ? jobs : env_jobs();
  cmd.uniform_baseline = uniform;
  return pev::cli::dispatch(cmd);
}
