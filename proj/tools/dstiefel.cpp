// dstiefel: run, validate and summarize decentralized Stiefel minimax experiments.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dstiefel/errors.hpp"
#include "dstiefel/experiment.hpp"

namespace {

dstiefel::json load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  dstiefel::json config = dstiefel::load_config_file(path);
  for (const auto& o : overrides) dstiefel::apply_override(config, o);
  return config;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, const std::vector<std::string>& overrides) {
  dstiefel::json config;
  try {
    config = load_with_overrides(config_path, overrides);
  } catch (const dstiefel::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  const auto outcome = dstiefel::run_experiment(config, out_dir);
  for (const auto& m : outcome.messages) std::cerr << m << "\n";
  if (outcome.exit_code != 2) {
    for (const auto& t : outcome.traces) std::cout << t.string() << "\n";
  }
  return outcome.exit_code;
}

int cmd_validate(const std::string& config_path, const std::vector<std::string>& overrides) {
  dstiefel::json config;
  try {
    config = load_with_overrides(config_path, overrides);
  } catch (const dstiefel::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  const auto issues = dstiefel::validate_config(config);
  bool errors = false;
  for (const auto& issue : issues) {
    std::cout << dstiefel::to_string(issue) << "\n";
    errors = errors || issue.severity == dstiefel::Issue::Severity::kError;
  }
  if (issues.empty()) std::cout << "ok\n";
  return errors ? 2 : 0;
}

int cmd_summarize(const std::vector<std::string>& traces, bool as_json) {
  std::vector<std::filesystem::path> paths(traces.begin(), traces.end());
  const auto summaries = dstiefel::summarize(paths);
  if (as_json) {
    std::cout << dstiefel::render_summary_json(summaries).dump(2) << "\n";
  } else {
    std::cout << dstiefel::render_summary_text(summaries);
  }
  for (const auto& s : summaries) {
    if (!s.error) return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized Riemannian gradient descent ascent on the Stiefel manifold"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dstiefel::kCodeVersion));

  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::vector<std::string> traces;
  bool as_json = false;

  auto* run = app.add_subcommand("run", "Run every sweep point of a config and write trace files");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out-dir", out_dir, "Output directory (overrides output.dir)");
  run->add_option("--override", overrides, "Dotted-path override, key=value (repeatable)");

  auto* validate = app.add_subcommand("validate", "Check a config and report theory-side warnings");
  validate->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  validate->add_option("--override", overrides, "Dotted-path override, key=value (repeatable)");

  auto* summarize = app.add_subcommand("summarize", "Summarize trace files");
  summarize->add_option("traces", traces, "Trace files")->required();
  summarize->add_flag("--json", as_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, overrides);
    if (*validate) return cmd_validate(config_path, overrides);
    return cmd_summarize(traces, as_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
