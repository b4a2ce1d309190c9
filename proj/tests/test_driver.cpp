#include <gtest/gtest.h>

#include <cfloat>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mlap/driver.hpp"

using namespace mlap;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("mlap_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

ExperimentConfig small_solve() {
    ExperimentConfig c;
    c.experiment = "solve";
    c.model.N = 2;
    c.model.p = 1.5;
    c.model.q = 1.2;
    c.model.s = 0.5;
    c.model.eps = 0.5;
    c.model.lambda = 2.0;
    c.resolution = 9;
    return c;
}

}  // namespace

TEST(Csv, RoundTripIsBitExact) {
    Table t{"mix", {"a", "b", "c"}, {}};
    t.add({0.1, 1.0 / 3.0, -0.0});
    t.add({5e-324, DBL_MAX, -1e-300});
    t.add({std::nan(""), std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
    t.add({std::nextafter(1.0, 2.0), 123456789.125, std::sqrt(2.0)});
    const Table back = parse_csv("mix", to_csv(t));
    EXPECT_TRUE(back == t);
    EXPECT_TRUE(std::signbit(back.rows[0][2]));
}

TEST(Csv, RejectsGarbage) {
    EXPECT_THROW(parse_csv("x", "a,b\n1,zz\n"), std::invalid_argument);
    EXPECT_THROW(parse_csv("x", "a,b\n1\n"), std::logic_error);
    EXPECT_THROW(parse_csv("x", ""), std::invalid_argument);
}

TEST(Report, EmptyReportExitsZero) {
    const auto d = scratch_dir("empty");
    ExperimentReport rep;
    rep.experiment = "thresholds";
    EXPECT_EQ(emit_outputs(rep, (d / "r").string()), 0);
    const auto j = nlohmann::json::parse(slurp(d / "r.json"));
    EXPECT_TRUE(j.at("verdicts").is_array());
    EXPECT_TRUE(j.at("verdicts").empty());
    EXPECT_EQ(j.at("exit_code"), 0);
}

TEST(Report, ExitCodes) {
    ExperimentReport rep;
    rep.verdict("a", "holds", true);
    EXPECT_EQ(rep.exit_code(), 0);
    rep.verdict("b", "undecided", Status::inconclusive);
    EXPECT_EQ(rep.exit_code(), 3);
    rep.verdict("c", "broken", false);
    EXPECT_EQ(rep.exit_code(), 2);

    ExperimentReport one;
    one.verdict("only", "broken", false);
    const auto d = scratch_dir("fail");
    EXPECT_EQ(emit_outputs(one, (d / "r").string()), 2);
}

TEST(Report, UnwritablePrefixExitsFour) {
    const auto d = scratch_dir("io");
    std::ofstream(d / "file") << "x";
    ExperimentReport rep;
    rep.tables.push_back({"t", {"a"}, {{1.0}}});
    EXPECT_EQ(emit_outputs(rep, (d / "file" / "sub" / "r").string()), 4);
}

TEST(Report, WritesOneCsvPerTable) {
    const auto d = scratch_dir("csv");
    ExperimentReport rep;
    rep.tables.push_back({"alpha", {"a", "b"}, {{1.0, 2.0}}});
    rep.tables.push_back({"beta", {"c"}, {{std::nan("")}}});
    EXPECT_EQ(emit_outputs(rep, (d / "r").string(), OutputFormat::csv), 0);
    EXPECT_FALSE(fs::exists(d / "r.json"));
    EXPECT_TRUE(parse_csv("alpha", slurp(d / "r_alpha.csv")) == rep.tables[0]);
    EXPECT_TRUE(parse_csv("beta", slurp(d / "r_beta.csv")) == rep.tables[1]);
    EXPECT_TRUE(to_json(rep)["tables"]["beta"]["rows"][0][0].is_null());
}

TEST(Hash, MatchesGitBlobIds) {
    EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = small_solve();
    c.lambdas = {1.0, 2.5};
    c.lambda_hi = 40.0;
    c.eps_list = {0.1, 0.01};
    c.bubble.alpha = 0.25;
    c.model.r = 3.0;
    c.geometry = Geometry::ball(2, 0.75, {0.1, -0.2, 0.0});
    const auto j = to_json(c);
    EXPECT_EQ(to_json(config_from_json(j)), j);
    EXPECT_EQ(to_json(config_from_json(nlohmann::json::parse(j.dump()))).dump(), j.dump());
}

TEST(Config, RejectsUnknownKeys) {
    EXPECT_THROW(config_from_json({{"experiment", "solve"}, {"lamda", 1.0}}), std::invalid_argument);
    EXPECT_THROW(config_from_json({{"geometry", {{"shape", "torus"}}}}), std::invalid_argument);
}

TEST(Config, ExperimentSpecificCompleteness) {
    ExperimentConfig c = small_solve();
    EXPECT_NO_THROW(c.validate());
    c.experiment = "branch";
    EXPECT_THROW(c.validate(), std::invalid_argument);  // no λ list
    c.lambdas = {2.0, 1.0};
    EXPECT_THROW(c.validate(), std::invalid_argument);  // not ascending
    c.lambdas = {1.0, 2.0};
    EXPECT_NO_THROW(c.validate());

    c.experiment = "nonexistence";
    EXPECT_THROW(c.validate(), std::invalid_argument);  // positive λ
    c.lambdas = {0.0, -0.5};
    EXPECT_NO_THROW(c.validate());

    c.experiment = "scaling";
    c.tau_step = 0.2;
    EXPECT_THROW(c.validate(), std::invalid_argument);

    c.experiment = "harnack";
    c.eps_list = {0.1, 0.5};
    EXPECT_THROW(c.validate(), std::invalid_argument);

    c.experiment = "two_solution";
    c.lambda_fraction = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);  // λ = 0 is refused
    c.experiment = "nope";
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, TwoSolutionRefusesZeroLambda) {
    ExperimentConfig c = small_solve();
    c.experiment = "two_solution";
    c.lambda_fraction = 0.0;
    EXPECT_THROW(run_experiment(c), std::invalid_argument);
}

TEST(Resample, IdentityAtOne) {
    const Grid g = make_grid(Geometry::box(2), 13);
    Field u(g.size());
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (auto& v : u) v = U(rng);
    const Field r = resample_scaled(g, u, 1.0);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(r[i], u[i]);
    EXPECT_THROW(resample_scaled(g, u, 0.9), std::invalid_argument);
}

// Catmull-Rom reproduces quadratics, so away from the walls the resampled
// product of quadratics is exact
TEST(Resample, ExactOnQuadraticsInTheInterior) {
    const Grid g = make_grid(Geometry::box(2), 21);
    auto f = [](double x, double y) { return (x * x - 0.3 * x + 1.0) * (2.0 - y * y); };
    Field u(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) u[i] = f(g.x[i][0], g.x[i][1]);
    const double tau = 1.07;
    const Field r = resample_scaled(g, u, tau);
    int checked = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = g.x[i][0], y = g.x[i][1];
        if (std::abs(x - 0.5) > 0.3 || std::abs(y - 0.5) > 0.3) continue;
        EXPECT_NEAR(r[i], f(0.5 + tau * (x - 0.5), 0.5 + tau * (y - 0.5)), 1e-12);
        ++checked;
    }
    EXPECT_GT(checked, 50);
}

TEST(Resample, ZeroOutsideTheScaledSupport) {
    const Grid g = make_grid(Geometry::box(2), 11);
    const Field u(g.size(), 1.0);
    const Field r = resample_scaled(g, u, 3.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (std::abs(g.x[i][0] - 0.5) > 0.5 / 3.0 + 1e-12) {
            EXPECT_EQ(r[i], 0.0);
        }
    }
}

TEST(Determinism, SameConfigSameJson) {
    const ExperimentConfig c = small_solve();
    const auto a = run_experiment(c), b = run_experiment(c);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    EXPECT_EQ(a.input_hash, git_blob_hash(a.config.dump()));
    EXPECT_EQ(a.exit_code(), 0);
}

TEST(Determinism, SeededStartsRepeat) {
    ExperimentConfig c = small_solve();
    c.experiment = "scaling";
    c.model.lambda = 0.0;
    c.init_count = 2;
    c.limit_resolution = 9;
    c.resolution = 33;
    const auto a = run_experiment(c);
    const auto b = run_experiment(c);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    c.seed = 2;
    const auto other = run_experiment(c);
    EXPECT_NE(to_json(other)["tables"].dump(), to_json(a)["tables"].dump());
}
