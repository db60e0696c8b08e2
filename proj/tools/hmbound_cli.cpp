/*
 * Copyright 2026 The hmbound Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// hmbound: staged history matching of an ice-sheet toy model driven by a
// reduced boundary-condition model.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "hmbound/error.hpp"
#include "hmbound/pipeline.hpp"

namespace {

// Exit code per error kind; anything unlisted exits with 1.
int exit_code(const std::string& kind) {
  static const std::map<std::string, int> codes = {
      {"io", 2},          {"config", 3},        {"data", 4},          {"shape", 4},
      {"consistency", 4}, {"index", 4},         {"bounds", 4},        {"ensemble_size", 4},
      {"factorization", 5}, {"fit", 5},         {"rank", 5},          {"model_assumption", 5},
      {"empty_nroy", 6},  {"precondition", 7},  {"constraint", 8},
  };
  const auto it = codes.find(kind);
  return it == codes.end() ? 1 : it->second;
}

void emit_error(const std::string& kind, const std::string& message, const std::string& command) {
  nlohmann::json j = {{"error", kind}, {"message", message}, {"command", command}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary-condition model fitting and history matching"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  int wave = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "pipeline config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the config seed");
  };
  struct Cmd {
    const char* name;
    const char* help;
    bool needs_wave;
  };
  const Cmd cmds[] = {
      {"fit-temporal", "fit temporal basis vectors", false},
      {"fit-spatial", "fit spatial and expert vectors, set coefficient bounds", false},
      {"fit", "fit-temporal then fit-spatial", false},
      {"truth", "synthetic ground truth and observed outputs", false},
      {"prior-space", "sample the coefficient space consistent with the observations", false},
      {"design", "design for a wave", true},
      {"simulate", "run the toy model on a wave's design", true},
      {"wave", "emulate and history match one wave", true},
      {"report", "summary JSON/CSV and plots", false},
      {"run", "every stage for every configured wave", false},
  };
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (c.needs_wave) sub->add_option("--wave", wave, "wave index (1-based)")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    auto cfg = hmbound::pipeline::PipelineConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    hmbound::pipeline::Pipeline p(std::move(cfg), out_dir);
    if (command == "fit-temporal") {
      p.fit_temporal();
    } else if (command == "fit-spatial") {
      p.fit_spatial();
    } else if (command == "fit") {
      p.fit_temporal();
      p.fit_spatial();
    } else if (command == "truth") {
      p.make_truth();
    } else if (command == "prior-space") {
      p.prior_space();
    } else if (command == "design") {
      p.design(wave);
    } else if (command == "simulate") {
      p.simulate(wave);
    } else if (command == "wave") {
      std::cout << p.wave(wave).to_json() << "\n";
    } else if (command == "report") {
      std::cout << p.report() << "\n";
    } else if (command == "run") {
      std::cout << p.run_all() << "\n";
    }
  } catch (const hmbound::Error& e) {
    emit_error(e.kind(), e.what(), command);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    emit_error("internal", e.what(), command);
    return 1;
  }
  return 0;
}
