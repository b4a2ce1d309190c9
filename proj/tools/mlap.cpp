// Command-line front end: one subcommand per experiment, JSON config in,
// <out>.json and <out>_<table>.csv out.

#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mlap/driver.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::string format = "both";
    bool quiet = false;
};

int run(const std::string& experiment, const Options& o) {
    std::ifstream f(o.config);
    const auto j = nlohmann::json::parse(f);
    // the subcommand decides; a config written for another experiment is a mistake
    if (j.contains("experiment") && j.at("experiment") != experiment)
        throw std::invalid_argument("config is for '" + j.at("experiment").get<std::string>() + "', not '" + experiment + "'");
    mlap::ExperimentConfig cfg = mlap::config_from_json(j);
    cfg.experiment = experiment;
    if (o.out) cfg.out = *o.out;
    if (o.seed) cfg.seed = *o.seed;

    const auto rep = mlap::run_experiment(cfg);
    if (!o.quiet) {
        for (const auto& v : rep.verdicts)
            std::printf("%-13s %-30s %s\n", mlap::to_string(v.status), v.name.c_str(), v.detail.c_str());
    }
    const mlap::OutputFormat fmt = o.format == "csv" ? mlap::OutputFormat::csv
                                   : o.format == "json" ? mlap::OutputFormat::json
                                                        : mlap::OutputFormat::both;
    const int code = mlap::emit_outputs(rep, cfg.out, fmt);
    if (!o.quiet) std::printf("exit %d, wrote %s\n", code, cfg.out.c_str());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed local-nonlocal p-Laplacian experiments"};
    app.require_subcommand(1);

    // subcommand name -> experiment id
    const std::map<std::string, std::string> commands{
        {"thresholds", "thresholds"},     {"solve", "solve"},         {"branch", "branch"},
        {"two-solution", "two_solution"}, {"nonexistence", "nonexistence"}, {"scaling", "scaling"},
        {"beta-seq", "beta_seq"},         {"harnack", "harnack"},     {"bubbles", "energy_estimate"},
    };
    Options o;
    std::string chosen;
    for (const auto& [name, experiment] : commands) {
        auto* sub = app.add_subcommand(name, "run the " + experiment + " experiment");
        sub->add_option("--config", o.config, "JSON config")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output prefix (overrides the config)");
        sub->add_option("--seed", o.seed, "seed (overrides the config)");
        sub->add_option("--format", o.format, "csv, json or both")->check(CLI::IsMember({"csv", "json", "both"}));
        sub->add_flag("--quiet", o.quiet, "no verdict lines on stdout");
        sub->callback([&chosen, experiment = experiment] { chosen = experiment; });
    }
    CLI11_PARSE(app, argc, argv);

    try {
        return run(chosen, o);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "mlap: %s\n", e.what());
        return 1;
    }
}
