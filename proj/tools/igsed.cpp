#include <iostream>

#include <CLI11.hpp>

#include "igsed/cli.hpp"

int main(int argc, char** argv) {
  using igsed::cli::Options;
  CLI::App app{"Integrated-gradients sound event detection experiments"};
  app.require_subcommand(1, 1);

  Options o;
  std::string config, head, method, out;
  std::uint64_t seed = 0;
  int steps = 0, tau = 0;

  struct Flags {
    bool config, seed, head, method, steps, tau, out;
  };
  const std::map<std::string, std::pair<std::string, Flags>> commands{
      {"synth", {"generate the dataset and freeze the run config", {true, true, false, false, false, false, true}}},
      {"train", {"train one head", {true, true, true, false, false, false, true}}},
      {"attribute", {"dump attribution maps for val and test", {true, true, false, true, true, false, true}}},
      {"sweep", {"threshold sweep and validation tau selection", {true, true, false, false, false, false, true}}},
      {"evaluate", {"detection and classification reports on test", {true, true, false, false, false, true, true}}},
      {"report", {"print report tables", {true, true, false, false, false, true, true}}},
  };
  for (const auto& [name, spec] : commands) {
    auto* sub = app.add_subcommand(name, spec.first);
    const auto& f = spec.second;
    if (f.config) sub->add_option("--config", config, "INI config file");
    if (f.seed) sub->add_option("--seed", seed, "global seed");
    if (f.head) sub->add_option("--head", head, "clip, fw-ws or fw-ss");
    if (f.method) sub->add_option("--method", method, "ig, random or energy");
    if (f.steps) sub->add_option("--steps", steps, "IG steps (overrides the config)");
    if (f.tau) sub->add_option("--tau", tau, "fixed percentile threshold 1..99");
    if (f.out) sub->add_option("--out", out, "run directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : igsed::cli::kUsage;
  }

  auto* sub = app.get_subcommands().front();
  auto given = [&](const char* flag) { return sub->get_option_no_throw(flag) && sub->count(flag) > 0; };
  if (given("--config")) o.config = config;
  if (given("--seed")) o.seed = seed;
  if (given("--head")) o.head = head;
  if (given("--method")) o.method = method;
  if (given("--steps")) o.steps = steps;
  if (given("--tau")) o.tau = tau;
  if (given("--out")) o.out = out;
  return igsed::cli::dispatch(sub->get_name(), o, std::cout, std::cerr);
}
