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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "hmbound/error.hpp"
#include "hmbound/io.hpp"
#include "hmbound/pipeline.hpp"

using namespace hmbound;
using namespace hmbound::pipeline;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json default_json() {
  return json::parse(io::read_text(fs::path(HMBOUND_SOURCE_DIR) / "configs" / "synthetic_default.json"));
}

// The default problem with smaller designs and Monte Carlo budgets.
json small_json() {
  json j = default_json();
  j["design"]["n_points"] = 40;
  j["monte_carlo_samples"] = 4000;
  j["prior_space"]["n_samples"] = 5000;
  j["prior_space"]["pool"] = 600;
  j["prior_space"]["burn_in"] = 200;
  j["prior_space"]["thin"] = 2;
  j["emulator"]["max_iter"] = 25;
  return j;
}

PipelineConfig parse(const json& j) { return PipelineConfig::parse(j.dump()); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hmbound_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = io::read_text(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("default config parses") {
  const auto c = parse(default_json());
  CHECK(c.sim.n_space() == 300);
  CHECK(c.sim.n_params() == 7);
  CHECK(c.outputs.size() == 8u);
  CHECK(c.waves.size() == 3u);
  CHECK(c.n_points == 150);
  CHECK(c.outputs[1].spec.ell == 35);
  CHECK(c.outputs[1].spec.bound() == doctest::Approx(8.75));
  CHECK(c.stage_seed("a") == c.stage_seed("a"));
  CHECK(c.stage_seed("a") != c.stage_seed("b"));
}

TEST_CASE("config errors") {
  SUBCASE("malformed bound names the output") {
    json j = default_json();
    j["outputs"][3]["bound"] = "3^";
    try {
      parse(j);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("vol14") != std::string::npos);
    }
  }
  SUBCASE("unknown wave") {
    json j = default_json();
    j["outputs"][0]["waves"] = json::array({1, 4});
    CHECK_THROWS_AS(parse(j), ConfigError);
  }
  SUBCASE("jth beyond the output count") {
    json j = default_json();
    j["waves"][1]["j"] = 7;
    CHECK_THROWS_AS(parse(j), ConfigError);
  }
  SUBCASE("wrong types and missing keys") {
    json j = default_json();
    j["design"]["n_points"] = "many";
    CHECK_THROWS_AS(parse(j), ConfigError);
    j = default_json();
    j.erase("seed");
    CHECK_THROWS_AS(parse(j), ConfigError);
    j = default_json();
    j["format"] = "other";
    CHECK_THROWS_AS(parse(j), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::parse("{not json"), ConfigError);
  }
  SUBCASE("file data needs observed outputs") {
    json j = default_json();
    j["data"] = {{"source", "files"}, {"ensemble_csv", "e.csv"}, {"observations_csv", "o.csv"}};
    CHECK_THROWS_AS(parse(j), ConfigError);
  }
  SUBCASE("missing files") {
    CHECK_THROWS_AS(PipelineConfig::load("/nonexistent/config.json"), IoError);
    json j = default_json();
    j["data"] = {{"source", "files"}, {"ensemble_csv", "/nonexistent/e.csv"}, {"observations_csv", "/nonexistent/o.csv"}};
    for (auto& o : j["outputs"]) o["obs"] = o["kind"] == "scalar" ? json(1.0) : json(std::vector<double>(35, 0.0));
    j["outputs"][0]["waves"] = json::array({1});
    j["outputs"] = json::array({j["outputs"][0]});
    j["waves"] = json::array({j["waves"][0]});
    Pipeline p(parse(j), scratch("missing"));
    try {
      p.fit_temporal();
      FAIL("expected an io error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("/nonexistent/") != std::string::npos);
    }
  }
}

TEST_CASE("weighted least-squares fit matches a dense oracle") {
  const fs::path out = scratch("lsq");
  Pipeline p(parse(small_json()), out);
  p.fit_temporal();
  p.fit_spatial();
  const auto& m = p.model();
  CHECK(m.n_coefficients() == 13);
  const ObservationSet& obs = p.fit_observations();
  const MatrixXd b = m.basis_matrix();
  const Index n = static_cast<Index>(obs.entries().size());
  MatrixXd a(n, b.cols());
  VectorXd y(n), w(n);
  for (Index i = 0; i < n; ++i) {
    const auto& e = obs.entries()[static_cast<std::size_t>(i)];
    const Index r = e.location * m.n_time() + e.time;
    a.row(i) = b.row(r);
    y[i] = e.value - m.mu().values()[r];
    w[i] = 1.0 / (e.error_sd * e.error_sd);
  }
  VectorXd c = (a.transpose() * w.asDiagonal() * a).inverse() * (a.transpose() * w.asDiagonal() * y);
  for (Index k = 0; k < c.size(); ++k) {
    c[k] = std::clamp(c[k], m.bounds()[static_cast<std::size_t>(k)].lo, m.bounds()[static_cast<std::size_t>(k)].hi);
  }
  CHECK((best_fit_coefficients(m, obs) - c).norm() <= 1e-8 * (1.0 + c.norm()));
  fs::remove_all(out);
}

TEST_CASE("batch simulation equals direct generation") {
  const fs::path out = scratch("affine");
  Pipeline p(parse(small_json()), out);
  p.fit_temporal();
  p.fit_spatial();
  p.make_truth();
  p.prior_space();
  p.design(1);
  const MatrixXd design = io::read_matrix_csv(out / "wave_1" / "design.csv").topRows(4);
  const auto& cfg = p.config();
  const auto in = p.generation_inputs();
  const auto r = simulate_design(cfg, p.model(), p.observations(), in, design);
  for (Index i = 0; i < design.rows(); ++i) {
    const VectorXd x = design.row(i).head(7).transpose();
    const VectorXd c = design.row(i).tail(13).transpose();
    const FieldVector t = bc::generate_boundary(p.model(), c, p.observations(), in);
    const MatrixXd h = synth::toy_simulate(cfg.sim, x, t);
    for (std::size_t k = 0; k < cfg.outputs.size(); ++k) {
      const VectorXd want = synth::output_values(cfg.sim, cfg.outputs[k].toy, h);
      CHECK((r.values[k].row(i).transpose() - want).norm() <= 1e-8 * (1.0 + want.norm()));
    }
  }
  MatrixXd bad = design;
  bad(0, 7) = p.model().bounds()[0].hi + 1.0;
  CHECK_THROWS_AS(simulate_design(cfg, p.model(), p.observations(), in, bad), BoundsError);
  CHECK_THROWS_AS(simulate_design(cfg, p.model(), p.observations(), in, design.leftCols(10)), ShapeError);
  fs::remove_all(out);
}

TEST_CASE("a wave with a never-binding output keeps everything") {
  json j = small_json();
  json vol = j["outputs"][0];
  vol["sigma_e"] = 1e12;
  vol["waves"] = json::array({1});
  j["outputs"] = json::array({vol});
  j["waves"] = json::array({j["waves"][0]});
  const fs::path out = scratch("always");
  Pipeline p(parse(j), out);
  p.fit_temporal();
  p.fit_spatial();
  p.make_truth();
  p.prior_space();
  p.design(1);
  p.simulate(1);
  const auto rep = p.wave(1);
  CHECK(rep.fraction == 1.0);
  CHECK(rep.specs.at(0).rule_out_rate == 0.0);
  fs::remove_all(out);
}

TEST_CASE("stages need their inputs") {
  const fs::path out = scratch("order");
  Pipeline p(parse(small_json()), out);
  CHECK_THROWS_AS(p.fit_spatial(), IoError);
  p.fit_temporal();
  p.fit_spatial();
  CHECK_THROWS_AS(p.prior_space(), PreconditionError);
  CHECK_THROWS_AS(p.design(4), ConfigError);
  fs::remove_all(out);
}

TEST_CASE("small end-to-end run is reproducible") {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  const std::string ra = Pipeline(parse(small_json()), a).run_all();
  const std::string rb = Pipeline(parse(small_json()), b).run_all();
  CHECK(ra == rb);
  const auto fa = snapshot(a), fb = snapshot(b);
  CHECK(fa.size() == fb.size());
  for (const auto& [name, text] : fa) {
    CAPTURE(name);
    REQUIRE(fb.count(name));
    CHECK(fb.at(name) == text);
  }
  const json rep = json::parse(ra);
  const auto fr = rep.at("nroy_fractions").get<std::vector<double>>();
  REQUIRE(fr.size() == 3u);
  for (std::size_t k = 1; k < fr.size(); ++k) CHECK(fr[k] <= fr[k - 1]);
  CHECK(fa.count("volume_fan.svg"));
  CHECK(fa.count("wave_3/report.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("svg chart") {
  Series s{"line", {0, 1, 2}, {1, 10, 100}};
  Band bd{{0, 1, 2}, {0.5, 5, 50}, {2, 20, 200}};
  const std::string svg = svg_chart("t", "x", "y", {bd}, {s}, true);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("<polygon") != std::string::npos);
  CHECK(svg == svg_chart("t", "x", "y", {bd}, {s}, true));
}
