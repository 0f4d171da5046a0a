// Copyright 2026 The spinprep Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spinprep/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

auto cmd_run(const std::string &config_path, std::optional<std::uint64_t> seed,
             std::size_t threads, bool full, const std::string &out) -> int {
    auto config = spinprep::load_experiment_config(config_path);
    if (seed) {
        config.seeds = {*seed};
    }
    if (full) {
        spinprep::apply_full_scale(config);
    }
    spinprep::RunOptions options;
    options.threads = threads;
    if (!out.empty()) {
        options.output_dir = out;
    }
    const auto outcome = spinprep::run_experiment(config, options);
    for (const auto &path : outcome.files) {
        std::cout << "wrote " << path.string() << "\n";
    }
    if (!outcome.ok()) {
        for (const auto &failure : outcome.failures) {
            std::cerr << "numerical failure: " << failure << "\n";
        }
        return kExitNumerical;
    }
    return kExitOk;
}

auto cmd_verify(const std::string &results, std::optional<std::size_t> record,
                std::uint64_t seed) -> int {
    const auto outcome = spinprep::verify_results(results, record, seed);
    const auto &r = outcome.record;
    std::cout << "record task=" << r.task << " protocol=" << r.protocol
              << " seed=" << r.seed << "\n"
              << "stored f     = " << spinprep::format_double(r.fidelity) << "\n"
              << "recomputed f = "
              << spinprep::format_double(outcome.recomputed_fidelity) << "\n"
              << "config hash  " << (outcome.hash_matches ? "matches" : "DIFFERS")
              << "\n"
              << (outcome.matches ? "VERIFIED" : "MISMATCH") << "\n";
    return outcome.matches ? kExitOk : kExitFailure;
}

auto cmd_plotdata(const std::string &results, const std::string &kind_name,
                  const std::string &out) -> int {
    const auto kind = spinprep::experiment_kind_from_string(kind_name);
    if (!kind) {
        throw spinprep::ConfigError("--kind", "unknown kind '" + kind_name + "'");
    }
    const std::filesystem::path results_path(results);
    const auto file = spinprep::read_results_csv(results_path);
    spinprep::Json summary = spinprep::Json::object();
    const auto summary_path = results_path.parent_path() / "summary.json";
    if (std::ifstream in(summary_path); in) {
        in >> summary;
    }
    const std::filesystem::path dir =
        out.empty() ? results_path.parent_path() : std::filesystem::path(out);
    for (const auto &path : spinprep::emit_plot_data(file.records, *kind, summary, dir)) {
        std::cout << "wrote " << path.string() << "\n";
    }
    return kExitOk;
}

} // namespace

auto main(int argc, char **argv) -> int {
    CLI::App app{"spinprep: ground-state preparation by optimized local fields"};
    app.set_version_flag("--version", std::string(spinprep::kVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::string results_path;
    std::string out;
    std::string kind;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> record;
    std::size_t threads = 1;
    bool full = false;

    auto *run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config_path, "experiment JSON")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "replace the config's seed list by one seed");
    run->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    run->add_flag("--full", full, "scale presets up to ten-site chains");
    run->add_option("--out", out, "output directory (overrides $SPINPREP_OUTPUT_DIR)");

    auto *verify = app.add_subcommand("verify", "recompute one stored record");
    verify->add_option("results", results_path, "results.csv")->required()->check(CLI::ExistingFile);
    verify->add_option("--seed", seed, "draws the record to check");
    verify->add_option("--record", record, "row index instead of a random pick");

    auto *plot = app.add_subcommand("plotdata", "write per-figure tables");
    plot->add_option("results", results_path, "results.csv")->required()->check(CLI::ExistingFile);
    plot->add_option("--kind", kind, "experiment kind")->required();
    plot->add_option("--out", out, "directory for plot files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &err) {
        const int code = app.exit(err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) {
            return cmd_run(config_path, seed, threads, full, out);
        }
        if (*verify) {
            return cmd_verify(results_path, record, seed.value_or(0));
        }
        return cmd_plotdata(results_path, kind, out);
    } catch (const spinprep::ConfigError &err) {
        std::cerr << "config error: " << err.what() << "\n";
        return kExitConfig;
    } catch (const spinprep::NumericalError &err) {
        std::cerr << "numerical failure: " << err.what() << "\n";
        return kExitNumerical;
    } catch (const spinprep::ContractViolation &err) {
        std::cerr << "invalid input: " << err.what() << "\n";
        return kExitConfig;
    } catch (const std::exception &err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitFailure;
    }
}
