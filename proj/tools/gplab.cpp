// gplab: run experiments from JSON configs and aggregate their outputs.

#include <CLI11.hpp>

#include <iostream>

#include "gplab/harness.hpp"

namespace {

int do_run(const std::string& config, const std::optional<gplab::fs::path>& out) {
  gplab::ExperimentConfig c;
  try {
    c = gplab::load_config(config);
  } catch (const gplab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return gplab::kExitConfig;
  }
  try {
    const gplab::RunOutcome r = gplab::run_experiment(c, gplab::output_root(out));
    std::cout << r.dir.string() << ": " << r.stop << " (exit " << r.exit_code << ")\n";
    return r.exit_code;
  } catch (const gplab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return gplab::kExitConfig;
  } catch (const gplab::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return gplab::kExitIo;
  }
}

int do_report(const std::vector<std::string>& dirs, const std::optional<gplab::fs::path>& out) {
  std::vector<gplab::fs::path> paths(dirs.begin(), dirs.end());
  const gplab::Summary s = gplab::summarize(paths);
  std::cout << gplab::summary_table(s);
  if (s.rows.empty()) {
    std::cerr << "no readable run directories\n";
    return gplab::kExitIo;
  }
  try {
    const gplab::fs::path root = gplab::output_root(out);
    gplab::fs::create_directories(root);
    gplab::write_atomic(root / "summary.csv", gplab::summary_csv(s));
    gplab::write_atomic(root / "plot.csv", gplab::plot_csv(s));
    std::cout << "wrote " << (root / "summary.csv").string() << " and " << (root / "plot.csv").string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return gplab::kExitIo;
  }
  return gplab::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gross-Pitaevskii hierarchy and NLS experiment runner"};
  app.require_subcommand(1);
  unsigned threads = 1;
  std::string out_flag;
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out_flag, "output root (overrides " + std::string(gplab::kOutRootEnv) + ")");

  std::string config;
  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("config", config, "experiment config (JSON)")->required();
  run->fallthrough();

  std::vector<std::string> dirs;
  auto* report = app.add_subcommand("report", "summarize run directories");
  report->add_option("dirs", dirs, "run directories")->required();
  report->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return gplab::kExitUsage;
  }

  gplab::set_threads(threads);
  std::optional<gplab::fs::path> out;
  if (!out_flag.empty()) out = out_flag;
  try {
    if (*run) return do_run(config, out);
    return do_report(dirs, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return gplab::kExitIo;
  }
}
