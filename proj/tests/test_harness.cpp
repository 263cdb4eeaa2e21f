#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "phmix/error.hpp"
#include "phmix/harness.hpp"

using namespace phmix;
using namespace phmix::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "phmix_test_harness" / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void expect_invalid(const std::string& text) {
  try {
    parse_config(text);
    FAIL("accepted: " << text);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
  }
}

Cell cell(const std::string& method, int seed, Metrics m) {
  Cell c;
  c.experiment = "exp2";
  c.task = "block";
  c.method = method;
  c.condition = "0";
  c.seed = seed;
  c.metrics = std::move(m);
  return c;
}

}  // namespace

TEST_CASE("default configs validate and survive a text round trip") {
  for (const char* e : {"exp1", "exp2", "exp3", "certify"}) {
    const auto c = default_config(e);
    CHECK_NOTHROW(validate(c));
    CHECK(c.methods == known_methods(e));
    const auto back = parse_config(dump_config(c));
    CHECK(dump_config(back) == dump_config(c));
  }
  CHECK(default_config("exp1").seeds == 20);
  CHECK_THROWS_AS(default_config("exp9"), Error);
}

TEST_CASE("partial configs take the experiment defaults") {
  const auto c = parse_config(R"({"experiment":"exp1","seeds":3,"filter":{"particles":64}})");
  CHECK(c.seeds == 3);
  CHECK(c.filter.particles == 64);
  CHECK(c.filter.tau == default_config("exp1").filter.tau);
  CHECK(c.occlusion == default_config("exp1").occlusion);
}

TEST_CASE("config validation rejects bad input") {
  expect_invalid(R"({"experiment":"exp1","seeds":0})");
  expect_invalid(R"({"experiment":"exp1","occlusion":[0.5,1.0]})");
  expect_invalid(R"({"experiment":"exp1","occlusion":[-0.1]})");
  expect_invalid(R"({"experiment":"exp1","methods":[]})");
  expect_invalid(R"({"experiment":"exp1","methods":["smooth_latent"]})");
  expect_invalid(R"({"experiment":"exp3","tasks":["teapot"]})");
  expect_invalid(R"({"experiment":"exp1","schema_version":2})");
  expect_invalid(R"({"experiment":"exp1","particles":10})");
  expect_invalid(R"({"experiment":"exp1","filter":{"particle":10}})");
  expect_invalid(R"({"experiment":"exp1","seeds":"many"})");
  expect_invalid(R"({"seeds":3})");
  expect_invalid("not json");
}

TEST_CASE("ablations differ from the reference only in their mechanism field") {
  for (const char* e : {"exp1", "exp2", "exp3"}) {
    const auto cfg = default_config(e);
    const auto& methods = known_methods(e);
    const auto reference = effective_method_config(cfg, methods.front());
    CHECK(mechanism_field(e, methods.front()).empty());
    for (std::size_t i = 1; i < methods.size(); ++i) {
      const auto diff = config_diff(reference, effective_method_config(cfg, methods[i]));
      CAPTURE(methods[i]);
      REQUIRE(diff.size() == 1);
      CHECK(diff.front() == mechanism_field(e, methods[i]));
    }
  }
  const auto cfg = default_config("exp1");
  CHECK(defensive_config(cfg, "full_adaptive").policy == LambdaPolicy::kCertified);
  CHECK(defensive_config(cfg, "conservative").fixed_lambda == cfg.filter.lambda_conservative);
  CHECK(defensive_config(cfg, "lambda0").fixed_lambda == 0.0);
}

TEST_CASE("plot data is long format and round-trips") {
  CHECK(emit_plotdata({}) == "experiment,task,method,condition,seed,metric,value\n");
  CHECK(parse_plotdata(emit_plotdata({})).empty());

  std::vector<Cell> cells{cell("full", 1, {{"ari", 0.25}, {"changepoint_f1", 1.0 / 3.0}}),
                          cell("full", 0, {{"ari", 1e-300}, {"changepoint_f1", -0.0}})};
  const auto text = emit_plotdata(cells);
  const auto rows = parse_plotdata(text);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].seed == 0);  // sorted
  CHECK(rows == plot_rows(cells));

  cells.push_back(cell("odd, \"name\"", 2, {{"ari", std::numeric_limits<double>::quiet_NaN()}}));
  const auto back = parse_plotdata(emit_plotdata(cells));
  const auto expected = plot_rows(cells);
  REQUIRE(back.size() == expected.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].method == expected[i].method);
    CHECK(back[i].seed == expected[i].seed);
    if (std::isnan(expected[i].value)) {
      CHECK(std::isnan(back[i].value));
    } else {
      CHECK(back[i].value == expected[i].value);
    }
  }
  CHECK(emit_plotdata(cells).find(",ari,\n") != std::string::npos);  // NA is an empty field
}

TEST_CASE("summaries use every ok seed and count failures") {
  std::vector<Cell> cells{cell("full", 0, {{"ari", 1.0}}), cell("full", 1, {{"ari", 3.0}}),
                          cell("full", 2, {{"ari", 2.0}})};
  Cell bad = cell("full", 3, {});
  bad.status = "NO_CONVERGENCE";
  cells.push_back(bad);
  const auto s = summarize(cells);
  REQUIRE(s.size() == 1);
  CHECK(s[0].n == 3);
  CHECK(s[0].failed == 1);
  CHECK(s[0].mean == doctest::Approx(2.0));
  CHECK(s[0].median == doctest::Approx(2.0));
  CHECK(s[0].sem == doctest::Approx(1.0 / std::sqrt(3.0)));
}

TEST_CASE("parallel_for covers every index once and rethrows") {
  for (int workers : {1, 3, 16}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, workers, [&](int i) { hits[static_cast<std::size_t>(i)]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(10, 4, [](int i) {
                    if (i == 7) throw Error(ErrorCode::kIo, "boom");
                  }),
                  Error);
  CHECK(format_number(std::numeric_limits<double>::infinity()).empty());
  CHECK(format_number(0.1) == "0.1");
}

TEST_CASE("reruns are byte-identical regardless of worker count") {
  auto cfg = parse_config(R"({"experiment":"exp3","tasks":["puck","block"],"seeds":2})");
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  cfg.output_dir = a.string();
  const auto ra = run(cfg, {.workers = 1});
  cfg.output_dir = b.string();
  const auto rb = run(cfg, {.workers = 3});
  REQUIRE(ra.files == rb.files);
  for (const auto& f : ra.files) {
    if (f == "config.json") continue;  // echoes the differing output_dir
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const auto rows = parse_plotdata(slurp(a / "plotdata.csv"));
  CHECK(rows.size() == 2 * 4 * 2 * 8);
}

TEST_CASE("exp2 control methods hit their exact values") {
  auto cfg = parse_config(R"({"experiment":"exp2","seeds":2,"methods":["no_mode","proxy_oracle"],"steps":1500})");
  cfg.output_dir = scratch("exp2").string();
  const auto r = run(cfg);
  for (const auto& c : r.cells) {
    REQUIRE(c.ok());
    const double expected = c.method == "no_mode" ? 0.0 : 1.0;
    CHECK(c.metric("ari") == expected);
    CHECK(c.metric("changepoint_f1") == expected);
  }
  CHECK(fs::exists(fs::path(cfg.output_dir) / "exp2_cells.csv"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "traces" / "exp2_block_proxy_seed000_labels.csv"));
}

TEST_CASE("exp1 at zero occlusion gives finite NLL for every method") {
  auto cfg = parse_config(
      R"({"experiment":"exp1","seeds":1,"occlusion":[0.0],"steps":150,"filter":{"particles":64,"replicas":2}})");
  cfg.output_dir = scratch("exp1").string();
  const auto r = run(cfg);
  REQUIRE(r.cells.size() == 3);
  for (const auto& c : r.cells) {
    REQUIRE(c.ok());
    CHECK(std::isfinite(c.metric("nll")));
    CHECK(std::isfinite(c.metric("emp_relvar")));
  }
  const auto header = slurp(fs::path(cfg.output_dir) / "traces" / "exp1_contact_toy_lambda0_occ0_seed000_diagnostics.csv");
  CHECK(header.rfind("t,lambda,certified,ess_n,rel_wvar,zhat,log_zhat\n", 0) == 0);
}

TEST_CASE("failed cells are recorded, not dropped") {
  auto cfg = parse_config(R"({"experiment":"certify","tasks":["puck","linear_iso"],"steps":200,
                              "certify":{"rollouts":4}})");
  cfg.output_dir = scratch("certify").string();
  const auto r = run(cfg);
  REQUIRE(r.cells.size() == 2);
  CHECK(r.cells[0].task == "linear_iso");
  CHECK(r.cells[0].ok());
  CHECK(r.cells[1].status == "ASSUMPTION_UNMET");
  const auto text = slurp(fs::path(cfg.output_dir) / "certificate.csv");
  CHECK(text.find("puck,,,,,,\n") != std::string::npos);
  CHECK(slurp(fs::path(cfg.output_dir) / "status.csv").find("ASSUMPTION_UNMET") != std::string::npos);
}
