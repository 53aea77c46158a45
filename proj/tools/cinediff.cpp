#include "cinediff/harness.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>

using namespace cinediff;

namespace {

struct Common
{
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool reference_mode = false;
};

using Stage = std::function<void(ExperimentConfig const &, RunOptions const &)>;

json error_json(std::string const &command, std::string const &kind, std::string const &message)
{
  return {{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}};
}

int run_stage(std::string const &name, Common const &c, Stage const &stage)
{
  try {
    auto cfg = load_config(c.config);
    if (c.seed) { cfg.master_seed = *c.seed; }
    RunOptions o;
    o.out = c.out.empty() ? fs::path(cfg.output_dir) : fs::path(c.out);
    o.reference_mode = c.reference_mode;
    fs::create_directories(o.out);
    stage(cfg, o);
    std::cout << json{{"status", "ok"},
                      {"command", name},
                      {"out", o.out.string()},
                      {"manifest", RunLayout{o.out}.manifest().string()}}
                   .dump()
              << "\n";
    return 0;
  } catch (Error const &e) {
    std::cout << error_json(name, e.kind(), e.what()).dump() << "\n";
  } catch (fs::filesystem_error const &e) {
    std::cout << error_json(name, "io", e.what()).dump() << "\n";
  } catch (std::exception const &e) {
    std::cout << error_json(name, "internal", e.what()).dump() << "\n";
  }
  return 1;
}

} // namespace

int main(int argc, char **argv)
{
  configure_allocator();
  CLI::App app{"Two-stage dynamic MRI reconstruction with paired diffusion sampling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CINEDIFF_VERSION);

  std::vector<std::pair<std::string, Stage>> const stages{
    {"gen-data", stage_gen_data},
    {"train-baseline", stage_train_baseline},
    {"train-diffusion", stage_train_diffusion},
    {"reconstruct", stage_reconstruct},
    {"evaluate", stage_evaluate},
    {"report", stage_report},
    {"run", [](ExperimentConfig const &c, RunOptions const &o) { run_pipeline(c, o); }},
  };
  std::map<std::string, std::string> const help{
    {"gen-data", "Simulate phantoms, noisy references, masks and k-space for every split"},
    {"train-baseline", "Train the recurrent baseline reconstructor"},
    {"train-diffusion", "Train the conditional spatiotemporal denoiser"},
    {"reconstruct", "Reconstruct the test split with every method"},
    {"evaluate", "Compute metric tables and significance tests"},
    {"report", "Write montages, x-t profiles and difference maps"},
    {"run", "Run every stage in order"},
  };

  Common common;
  std::uint64_t seed = 0;
  std::vector<std::pair<CLI::App *, Stage const *>> subs;
  for (auto const &[name, stage] : stages) {
    auto *sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", common.config, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "Run directory (defaults to the configuration's output_dir)");
    sub->add_option("--seed", seed, "Override master_seed");
    sub->add_flag("--reference-mode", common.reference_mode, "Deterministic single-threaded execution");
    subs.push_back({sub, &stage});
  }

  try {
    app.parse(argc, argv);
  } catch (CLI::CallForHelp const &e) {
    return app.exit(e);
  } catch (CLI::CallForAllHelp const &e) {
    return app.exit(e);
  } catch (CLI::CallForVersion const &e) {
    return app.exit(e);
  } catch (CLI::ParseError const &e) {
    std::cout << error_json("", "usage", e.what()).dump() << "\n";
    return 2;
  }

  for (auto const &[sub, stage] : subs) {
    if (!sub->parsed()) { continue; }
    if (sub->count("--seed") > 0) { common.seed = seed; }
    return run_stage(sub->get_name(), common, *stage);
  }
  return 2;
}
