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
/**
 * @file
 * Config-driven experiment runner.
 *
 * An experiment is a JSON document naming a kind, a target/evolution model
 * pair, sweep grids, protocol settings and seeds. It is expanded into an
 * ordered list of independent run tasks, executed on a worker pool, and
 * written out as
 *
 *   results.csv   one row per task, '#'-prefixed metadata including the
 *                 normalized config, so `verify` can recompute any row;
 *   summary.json  records plus loss histories, stage fidelities and the
 *                 optimized schedules;
 *   plot_*.csv    per-figure tables (see emit_plot_data).
 *
 * The results table deliberately excludes wall-clock time so that reruns of
 * the same config produce byte-identical tables.
 */
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "control.hpp"
#include "dynamics.hpp"
#include "groundstate.hpp"
#include "hilbert.hpp"
#include "protocols.hpp"

namespace spinprep {

inline constexpr const char *kVersion = "0.1.0";
inline constexpr const char *kOutputDirEnv = "SPINPREP_OUTPUT_DIR";

using Json = nlohmann::json;

/// Invalid or unreadable experiment config. `key()` names the offending key.
class ConfigError : public std::runtime_error {
  public:
    ConfigError(const std::string &key, const std::string &message)
        : std::runtime_error(key.empty() ? message : key + ": " + message),
          key_(key) {}
    [[nodiscard]] auto key() const -> const std::string & { return key_; }

  private:
    std::string key_;
};

enum class ExperimentKind {
    FidelityVsK,
    FidelityVsT,
    FidelityVsN,
    ThreeModel,
    FieldLandscape,
    Trajectory,
    GateSweep,
    SingleRun,
};

inline auto to_string(ExperimentKind kind) -> std::string {
    switch (kind) {
    case ExperimentKind::FidelityVsK:
        return "fidelity_vs_K";
    case ExperimentKind::FidelityVsT:
        return "fidelity_vs_T";
    case ExperimentKind::FidelityVsN:
        return "fidelity_vs_N";
    case ExperimentKind::ThreeModel:
        return "three_model";
    case ExperimentKind::FieldLandscape:
        return "field_landscape";
    case ExperimentKind::Trajectory:
        return "trajectory";
    case ExperimentKind::GateSweep:
        return "gate_sweep";
    case ExperimentKind::SingleRun:
        return "single_run";
    }
    return "unknown";
}

inline auto experiment_kind_from_string(const std::string &name)
    -> std::optional<ExperimentKind> {
    for (auto kind :
         {ExperimentKind::FidelityVsK, ExperimentKind::FidelityVsT,
          ExperimentKind::FidelityVsN, ExperimentKind::ThreeModel,
          ExperimentKind::FieldLandscape, ExperimentKind::Trajectory,
          ExperimentKind::GateSweep, ExperimentKind::SingleRun}) {
        if (to_string(kind) == name) {
            return kind;
        }
    }
    return std::nullopt;
}

struct Grids {
    std::vector<std::size_t> K;
    std::vector<double> T;
    std::vector<int> N;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::SingleRun;
    ModelSpec target = ModelSpec::heisenberg(8);
    /// One spec for most kinds; one per compared model for three_model.
    std::vector<ModelSpec> evolution{ModelSpec::xy(8)};
    Grids grids;
    /// The seed field of each entry is ignored; seeds come from `seeds`.
    std::vector<ProtocolConfig> protocols;
    std::string output_dir = "results";
    std::vector<std::uint64_t> seeds{0};
    /// gate_sweep only: SWAP, SQRT_SWAP, CNOT.
    std::vector<std::string> gates;
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

/// Reads keys of one JSON object and rejects any it did not consume.
class StrictObject {
  public:
    StrictObject(const Json &node, std::string path)
        : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) {
            throw ConfigError(path_.empty() ? "<root>" : path_,
                              "expected an object");
        }
    }

    [[nodiscard]] auto has(const std::string &key) -> bool {
        seen_.insert(key);
        return node_.contains(key);
    }

    [[nodiscard]] auto at(const std::string &key) -> const Json & {
        seen_.insert(key);
        if (!node_.contains(key)) {
            throw ConfigError(join(key), "missing required key");
        }
        return node_.at(key);
    }

    template <class T> auto get(const std::string &key) -> T {
        const Json &value = at(key);
        try {
            return value.get<T>();
        } catch (const Json::exception &err) {
            throw ConfigError(join(key), std::string("wrong type: ") + err.what());
        }
    }

    template <class T> auto get_or(const std::string &key, T fallback) -> T {
        return has(key) ? get<T>(key) : fallback;
    }

    [[nodiscard]] auto join(const std::string &key) const -> std::string {
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (const auto &item : node_.items()) {
            if (seen_.count(item.key()) == 0) {
                throw ConfigError(join(item.key()), "unknown key");
            }
        }
    }

  private:
    const Json &node_;
    std::string path_;
    std::set<std::string> seen_;
};

inline auto parse_model_spec(const Json &node, const std::string &path)
    -> ModelSpec {
    StrictObject obj(node, path);
    ModelSpec spec;
    try {
        spec = ModelSpec::make(model_from_string(obj.get<std::string>("model")),
                               obj.get<int>("n_sites"));
    } catch (const ContractViolation &err) {
        throw ConfigError(obj.join("model"), err.what());
    }
    if (obj.has("couplings")) {
        const auto couplings = obj.get<std::vector<double>>("couplings");
        if (couplings.size() != 3) {
            throw ConfigError(obj.join("couplings"), "expected [Jx, Jy, Jz]");
        }
        std::copy(couplings.begin(), couplings.end(), spec.couplings.begin());
    }
    obj.finish();
    try {
        spec.validate();
    } catch (const ContractViolation &err) {
        throw ConfigError(path, err.what());
    }
    return spec;
}

inline auto parse_protocol(const Json &node, const std::string &path)
    -> ProtocolConfig {
    StrictObject obj(node, path);
    ProtocolConfig config;
    try {
        config.protocol = protocol_from_string(obj.get<std::string>("protocol"));
    } catch (const ContractViolation &err) {
        throw ConfigError(obj.join("protocol"), err.what());
    }
    config.total_time = obj.get_or<double>("total_time", config.total_time);
    config.n_slices = obj.get_or<std::size_t>("n_slices", config.n_slices);
    config.epochs = obj.get_or<int>("epochs", config.epochs);
    config.init_scale = obj.get_or<double>("init_scale", config.init_scale);
    if (obj.has("loss")) {
        try {
            config.loss = loss_kind_from_string(obj.get<std::string>("loss"));
        } catch (const ContractViolation &err) {
            throw ConfigError(obj.join("loss"), err.what());
        }
    }
    if (obj.has("init_mode")) {
        const auto mode = obj.get<std::string>("init_mode");
        if (mode == "random") {
            config.init_mode = InitMode::Random;
        } else if (mode == "sto") {
            config.init_mode = InitMode::Sto;
        } else {
            throw ConfigError(obj.join("init_mode"), "expected 'random' or 'sto'");
        }
    }
    config.phase_invariant_gate =
        obj.get_or<bool>("phase_invariant_gate", config.phase_invariant_gate);
    if (obj.has("adam")) {
        StrictObject adam(obj.at("adam"), obj.join("adam"));
        auto &hp = config.adam;
        hp.learning_rate = adam.get_or<double>("learning_rate", hp.learning_rate);
        hp.beta1 = adam.get_or<double>("beta1", hp.beta1);
        hp.beta2 = adam.get_or<double>("beta2", hp.beta2);
        hp.epsilon = adam.get_or<double>("epsilon", hp.epsilon);
        adam.finish();
        if (!(hp.learning_rate > 0.0) || !(hp.beta1 >= 0.0 && hp.beta1 < 1.0) ||
            !(hp.beta2 >= 0.0 && hp.beta2 < 1.0) || !(hp.epsilon > 0.0)) {
            throw ConfigError(obj.join("adam"), "hyperparameters out of range");
        }
    }
    obj.finish();
    if (!(config.total_time > 0.0)) {
        throw ConfigError(obj.join("total_time"), "must be positive");
    }
    if (config.n_slices < 1) {
        throw ConfigError(obj.join("n_slices"), "must be positive");
    }
    if (config.epochs < 0) {
        throw ConfigError(obj.join("epochs"), "must be non-negative");
    }
    if (!(config.init_scale >= 0.0)) {
        throw ConfigError(obj.join("init_scale"), "must be non-negative");
    }
    return config;
}

} // namespace detail

inline auto parse_experiment_config(const Json &root) -> ExperimentConfig {
    detail::StrictObject obj(root, "");
    ExperimentConfig config;

    const auto kind_name = obj.get<std::string>("kind");
    const auto kind = experiment_kind_from_string(kind_name);
    if (!kind) {
        throw ConfigError("kind", "unknown experiment kind '" + kind_name + "'");
    }
    config.kind = *kind;

    const Json &evolution = obj.at("evolution");
    config.evolution.clear();
    if (evolution.is_array()) {
        for (std::size_t i = 0; i < evolution.size(); ++i) {
            config.evolution.push_back(detail::parse_model_spec(
                evolution[i], "evolution[" + std::to_string(i) + "]"));
        }
    } else {
        config.evolution.push_back(detail::parse_model_spec(evolution, "evolution"));
    }
    if (config.evolution.empty()) {
        throw ConfigError("evolution", "needs at least one model");
    }

    if (obj.has("target")) {
        config.target = detail::parse_model_spec(obj.at("target"), "target");
    } else {
        config.target = ModelSpec::heisenberg(config.evolution.front().n_sites);
    }

    if (obj.has("grids")) {
        detail::StrictObject grids(obj.at("grids"), "grids");
        config.grids.K = grids.get_or<std::vector<std::size_t>>("K", {});
        config.grids.T = grids.get_or<std::vector<double>>("T", {});
        config.grids.N = grids.get_or<std::vector<int>>("N", {});
        grids.finish();
    }

    const Json &protocols = obj.at("protocols");
    if (!protocols.is_array() || protocols.empty()) {
        throw ConfigError("protocols", "expected a non-empty array");
    }
    for (std::size_t i = 0; i < protocols.size(); ++i) {
        config.protocols.push_back(detail::parse_protocol(
            protocols[i], "protocols[" + std::to_string(i) + "]"));
    }

    config.output_dir = obj.get_or<std::string>("output_dir", config.output_dir);
    config.seeds = obj.get_or<std::vector<std::uint64_t>>("seeds", config.seeds);
    if (config.seeds.empty()) {
        throw ConfigError("seeds", "needs at least one seed");
    }
    config.gates = obj.get_or<std::vector<std::string>>("gates", {});
    obj.finish();

    // Kind-specific requirements.
    const auto require_grid = [](bool ok, const std::string &key) {
        if (!ok) {
            throw ConfigError(key, "grid must be non-empty for this kind");
        }
    };
    switch (config.kind) {
    case ExperimentKind::FidelityVsK:
        require_grid(!config.grids.K.empty(), "grids.K");
        break;
    case ExperimentKind::FidelityVsT:
        require_grid(!config.grids.T.empty(), "grids.T");
        break;
    case ExperimentKind::FidelityVsN:
        require_grid(!config.grids.N.empty(), "grids.N");
        for (int n : config.grids.N) {
            if (n < 2 || n > kMaxSites) {
                throw ConfigError("grids.N", "entries must lie in [2, 14]");
            }
        }
        break;
    case ExperimentKind::GateSweep:
        require_grid(!config.grids.T.empty(), "grids.T");
        if (config.gates.empty()) {
            throw ConfigError("gates", "gate_sweep needs at least one gate");
        }
        for (const auto &gate : config.gates) {
            try {
                (void)named_gate(gate);
            } catch (const ContractViolation &err) {
                throw ConfigError("gates", err.what());
            }
        }
        if (config.evolution.front().n_sites != 2) {
            throw ConfigError("evolution.n_sites", "gate_sweep requires 2 sites");
        }
        break;
    case ExperimentKind::ThreeModel:
    case ExperimentKind::FieldLandscape:
    case ExperimentKind::Trajectory:
    case ExperimentKind::SingleRun:
        break;
    }
    if (config.kind != ExperimentKind::ThreeModel && config.evolution.size() != 1) {
        throw ConfigError("evolution", "only three_model accepts several models");
    }
    if (config.kind != ExperimentKind::GateSweep &&
        config.kind != ExperimentKind::FidelityVsN) {
        for (const auto &spec : config.evolution) {
            if (spec.n_sites != config.target.n_sites) {
                throw ConfigError("evolution.n_sites", "must match target.n_sites");
            }
        }
    }
    return config;
}

inline auto load_experiment_config(const std::filesystem::path &path)
    -> ExperimentConfig {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("", "cannot open config file " + path.string());
    }
    Json root;
    try {
        in >> root;
    } catch (const Json::parse_error &err) {
        throw ConfigError("", std::string("malformed JSON: ") + err.what());
    }
    return parse_experiment_config(root);
}

// ---------------------------------------------------------------------------
// Canonical serialization

inline auto to_json(const ModelSpec &spec) -> Json {
    return Json{{"model", to_string(spec.model)},
                {"n_sites", spec.n_sites},
                {"couplings", std::vector<double>(spec.couplings.begin(),
                                                  spec.couplings.end())}};
}

inline auto to_json(const ProtocolConfig &config) -> Json {
    return Json{
        {"protocol", to_string(config.protocol)},
        {"total_time", config.total_time},
        {"n_slices", config.n_slices},
        {"epochs", config.epochs},
        {"init_scale", config.init_scale},
        {"loss", to_string(config.loss)},
        {"init_mode", config.init_mode == InitMode::Sto ? "sto" : "random"},
        {"phase_invariant_gate", config.phase_invariant_gate},
        {"adam",
         {{"learning_rate", config.adam.learning_rate},
          {"beta1", config.adam.beta1},
          {"beta2", config.adam.beta2},
          {"epsilon", config.adam.epsilon}}}};
}

inline auto to_json(const ExperimentConfig &config) -> Json {
    Json evolution = Json::array();
    for (const auto &spec : config.evolution) {
        evolution.push_back(to_json(spec));
    }
    Json protocols = Json::array();
    for (const auto &protocol : config.protocols) {
        protocols.push_back(to_json(protocol));
    }
    Json grids = Json::object();
    grids["K"] = config.grids.K;
    grids["T"] = config.grids.T;
    grids["N"] = config.grids.N;
    return Json{{"kind", to_string(config.kind)},
                {"target", to_json(config.target)},
                {"evolution", evolution},
                {"grids", grids},
                {"protocols", protocols},
                {"output_dir", config.output_dir},
                {"seeds", config.seeds},
                {"gates", config.gates}};
}

inline auto hex64(std::uint64_t value) -> std::string {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << value;
    return out.str();
}

/// Fingerprint of the normalized config, independent of output location.
inline auto config_hash(const ExperimentConfig &config) -> std::string {
    Json canonical = to_json(config);
    canonical.erase("output_dir");
    return hex64(fnv1a64(canonical.dump()));
}

// ---------------------------------------------------------------------------
// Task expansion

/// One independent protocol (or gate-synthesis) run.
struct RunTask {
    std::size_t index = 0;
    ExperimentKind kind = ExperimentKind::SingleRun;
    ModelSpec target;
    ModelSpec evolution;
    ProtocolConfig protocol;
    std::string gate;

    [[nodiscard]] auto to_json() const -> Json {
        return Json{{"index", index},
                    {"kind", spinprep::to_string(kind)},
                    {"target", spinprep::to_json(target)},
                    {"evolution", spinprep::to_json(evolution)},
                    {"protocol", spinprep::to_json(protocol)},
                    {"seed", protocol.seed},
                    {"gate", gate}};
    }
    [[nodiscard]] auto hash() const -> std::string {
        return hex64(fnv1a64(to_json().dump()));
    }
};

/// Deterministic expansion: outer loop over the swept axis, then protocols,
/// then seeds.
inline auto expand_tasks(const ExperimentConfig &config) -> std::vector<RunTask> {
    std::vector<RunTask> tasks;
    const auto push = [&](const ModelSpec &target, const ModelSpec &evolution,
                          ProtocolConfig protocol, const std::string &gate) {
        for (auto seed : config.seeds) {
            protocol.seed = seed;
            tasks.push_back({tasks.size(), config.kind, target, evolution,
                             protocol, gate});
        }
    };
    const ModelSpec &evolution = config.evolution.front();
    switch (config.kind) {
    case ExperimentKind::FidelityVsK:
        for (auto k : config.grids.K) {
            for (auto protocol : config.protocols) {
                protocol.n_slices = k;
                push(config.target, evolution, protocol, "");
            }
        }
        break;
    case ExperimentKind::FidelityVsT:
        for (double t : config.grids.T) {
            for (auto protocol : config.protocols) {
                protocol.total_time = t;
                push(config.target, evolution, protocol, "");
            }
        }
        break;
    case ExperimentKind::FidelityVsN:
        for (int n : config.grids.N) {
            ModelSpec target = config.target;
            ModelSpec evo = evolution;
            target.n_sites = n;
            evo.n_sites = n;
            for (const auto &protocol : config.protocols) {
                push(target, evo, protocol, "");
            }
        }
        break;
    case ExperimentKind::ThreeModel:
        for (const auto &evo : config.evolution) {
            for (const auto &protocol : config.protocols) {
                push(config.target, evo, protocol, "");
            }
        }
        break;
    case ExperimentKind::GateSweep:
        for (const auto &gate : config.gates) {
            for (double t : config.grids.T) {
                for (auto protocol : config.protocols) {
                    protocol.total_time = t;
                    push(config.target, evolution, protocol, gate);
                }
            }
        }
        break;
    case ExperimentKind::FieldLandscape:
    case ExperimentKind::Trajectory:
    case ExperimentKind::SingleRun:
        for (const auto &protocol : config.protocols) {
            push(config.target, evolution, protocol, "");
        }
        break;
    }
    return tasks;
}

/// Runs one task single-threaded. Gate tasks use synthesize_gate; the
/// result's fidelity is then the gate fidelity and loss is F_G.
inline auto execute_task(const RunTask &task) -> RunResult {
    if (task.kind == ExperimentKind::GateSweep) {
        return synthesize_gate(task.protocol, task.evolution, named_gate(task.gate));
    }
    const CVector target = ground_state(task.target).state;
    return run_protocol(task.protocol, task.evolution, target,
                        all_up_state(task.evolution.n_sites));
}

// ---------------------------------------------------------------------------
// Records and files

struct ResultRecord {
    std::size_t task = 0;
    std::string kind;
    std::string target_model;
    std::string evolution_model;
    std::string gate;
    int n_sites = 0;
    std::size_t n_slices = 0;
    double total_time = 0.0;
    std::string protocol;
    std::string loss_kind;
    std::uint64_t seed = 0;
    double fidelity = 0.0;
    double loss = 0.0;
    double wall_seconds = 0.0;
    std::string config_hash;
};

inline auto make_record(const RunTask &task, const RunResult &result)
    -> ResultRecord {
    ResultRecord r;
    r.task = task.index;
    r.kind = to_string(task.kind);
    r.target_model =
        task.kind == ExperimentKind::GateSweep ? "gate" : to_string(task.target.model);
    r.evolution_model = to_string(task.evolution.model);
    r.gate = task.gate.empty() ? "-" : task.gate;
    r.n_sites = task.evolution.n_sites;
    r.n_slices = task.protocol.n_slices;
    r.total_time = task.protocol.total_time;
    r.protocol = to_string(task.protocol.protocol);
    r.loss_kind = task.kind == ExperimentKind::GateSweep
                      ? to_string(LossKind::GateFrobenius)
                      : to_string(task.protocol.loss);
    r.seed = task.protocol.seed;
    r.fidelity = result.fidelity;
    r.loss = result.loss;
    r.wall_seconds = result.wall_seconds;
    r.config_hash = task.hash();
    return r;
}

inline constexpr const char *kResultsHeader =
    "task,kind,target,evolution,gate,n_sites,n_slices,total_time,protocol,"
    "loss_kind,seed,fidelity,loss,config_hash";

inline auto format_double(double value) -> std::string {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%.17g", value);
    return buffer;
}

inline void write_results_csv(const std::filesystem::path &path,
                              const ExperimentConfig &config,
                              std::vector<ResultRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const auto &a, const auto &b) { return a.task < b.task; });
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "# spinprep results\n";
    out << "# version: " << kVersion << "\n";
    out << "# kind: " << to_string(config.kind) << "\n";
    out << "# config_hash: " << config_hash(config) << "\n";
    out << "# seeds:";
    for (auto seed : config.seeds) {
        out << ' ' << seed;
    }
    out << "\n";
    out << "# config: " << to_json(config).dump() << "\n";
    out << kResultsHeader << "\n";
    for (const auto &r : records) {
        out << r.task << ',' << r.kind << ',' << r.target_model << ','
            << r.evolution_model << ',' << r.gate << ',' << r.n_sites << ','
            << r.n_slices << ',' << format_double(r.total_time) << ','
            << r.protocol << ',' << r.loss_kind << ',' << r.seed << ','
            << format_double(r.fidelity) << ',' << format_double(r.loss) << ','
            << r.config_hash << "\n";
    }
}

struct ResultsFile {
    ExperimentConfig config;
    std::string config_hash;
    std::vector<ResultRecord> records;
};

inline auto read_results_csv(const std::filesystem::path &path) -> ResultsFile {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("", "cannot open results file " + path.string());
    }
    ResultsFile file;
    bool have_config = false;
    bool have_header = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        if (line.rfind("# config: ", 0) == 0) {
            try {
                file.config = parse_experiment_config(Json::parse(line.substr(10)));
            } catch (const Json::parse_error &err) {
                throw ConfigError("config", std::string("malformed embedded config: ") +
                                                err.what());
            }
            have_config = true;
            continue;
        }
        if (line.rfind("# config_hash: ", 0) == 0) {
            file.config_hash = line.substr(15);
            continue;
        }
        if (line[0] == '#') {
            continue;
        }
        if (!have_header) {
            if (line != kResultsHeader) {
                throw ConfigError("header", "unexpected results header");
            }
            have_header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() != 14) {
            throw ConfigError("row", "expected 14 columns, got " +
                                         std::to_string(cells.size()));
        }
        ResultRecord r;
        try {
            r.task = std::stoul(cells[0]);
            r.kind = cells[1];
            r.target_model = cells[2];
            r.evolution_model = cells[3];
            r.gate = cells[4];
            r.n_sites = std::stoi(cells[5]);
            r.n_slices = std::stoul(cells[6]);
            r.total_time = std::stod(cells[7]);
            r.protocol = cells[8];
            r.loss_kind = cells[9];
            r.seed = std::stoull(cells[10]);
            r.fidelity = std::stod(cells[11]);
            r.loss = std::stod(cells[12]);
            r.config_hash = cells[13];
        } catch (const std::logic_error &) {
            throw ConfigError("row", "unparsable record: " + line);
        }
        file.records.push_back(r);
    }
    if (!have_config) {
        throw ConfigError("config", "results file has no embedded config");
    }
    return file;
}

inline auto schedule_to_json(const ControlSchedule &schedule) -> Json {
    Json fields = Json::array();
    for (const auto &slice : schedule.fields) {
        Json rows = Json::array();
        for (Eigen::Index n = 0; n < slice.rows(); ++n) {
            rows.push_back({slice(n, 0), slice(n, 1), slice(n, 2)});
        }
        fields.push_back(rows);
    }
    return Json{{"total_time", schedule.total_time}, {"fields", fields}};
}

inline auto schedule_from_json(const Json &node) -> ControlSchedule {
    ControlSchedule schedule;
    schedule.total_time = node.at("total_time").get<double>();
    for (const auto &rows : node.at("fields")) {
        FieldSlice slice(static_cast<Eigen::Index>(rows.size()), 3);
        for (std::size_t n = 0; n < rows.size(); ++n) {
            for (int a = 0; a < 3; ++a) {
                slice(static_cast<Eigen::Index>(n), a) = rows[n][a].get<double>();
            }
        }
        schedule.fields.push_back(slice);
    }
    return schedule;
}

inline auto summary_json(const ExperimentConfig &config,
                         const std::vector<RunTask> &tasks,
                         const std::vector<std::optional<RunResult>> &results)
    -> Json {
    Json runs = Json::array();
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (!results[i]) {
            continue;
        }
        const auto &res = *results[i];
        Json stages = Json::array();
        for (const auto &s : res.stages) {
            stages.push_back({{"n_slices", s.n_slices},
                              {"fidelity", s.fidelity},
                              {"loss", s.loss},
                              {"epochs", s.epochs}});
        }
        const ResultRecord record = make_record(tasks[i], res);
        runs.push_back({{"task", tasks[i].to_json()},
                        {"config_hash", record.config_hash},
                        {"fidelity", res.fidelity},
                        {"loss", res.loss},
                        {"wall_seconds", res.wall_seconds},
                        {"history", res.history},
                        {"stages", stages},
                        {"schedule", schedule_to_json(res.schedule)}});
    }
    return Json{{"version", kVersion},
                {"config", to_json(config)},
                {"config_hash", config_hash(config)},
                {"runs", runs}};
}

// ---------------------------------------------------------------------------
// Plot data

namespace detail {

inline auto column_order(const std::vector<ResultRecord> &records,
                         const std::function<std::string(const ResultRecord &)> &key)
    -> std::vector<std::string> {
    std::vector<std::string> order;
    for (const auto &r : records) {
        const auto k = key(r);
        if (std::find(order.begin(), order.end(), k) == order.end()) {
            order.push_back(k);
        }
    }
    return order;
}

/// x value -> series -> best fidelity over seeds (or lowest loss for gates).
inline void write_best_of_table(
    const std::filesystem::path &path, const std::string &x_name,
    const std::vector<ResultRecord> &records,
    const std::function<double(const ResultRecord &)> &x_of,
    const std::function<std::string(const ResultRecord &)> &series_of,
    bool lower_is_better, const std::function<double(const ResultRecord &)> &value_of,
    const std::string &value_prefix, const std::vector<std::string> &footer) {
    std::map<double, std::map<std::string, double>> table;
    for (const auto &r : records) {
        auto &cell = table[x_of(r)];
        const auto series = series_of(r);
        const double v = value_of(r);
        auto it = cell.find(series);
        if (it == cell.end() ||
            (lower_is_better ? v < it->second : v > it->second)) {
            cell[series] = v;
        }
    }
    const auto series = column_order(records, series_of);
    std::ofstream out(path);
    out << "# columns: " << x_name;
    for (const auto &s : series) {
        out << ',' << value_prefix << s;
    }
    out << "\n" << x_name;
    for (const auto &s : series) {
        out << ',' << value_prefix << s;
    }
    out << "\n";
    for (const auto &[x, cells] : table) {
        out << format_double(x);
        for (const auto &s : series) {
            const auto it = cells.find(s);
            out << ',' << (it == cells.end() ? std::string("nan")
                                             : format_double(it->second));
        }
        out << "\n";
    }
    for (const auto &line : footer) {
        out << "# " << line << "\n";
    }
}

inline auto find_run(const Json &summary, std::size_t task) -> const Json * {
    for (const auto &run : summary.at("runs")) {
        if (run.at("task").at("index").get<std::size_t>() == task) {
            return &run;
        }
    }
    return nullptr;
}

/// Best (highest fidelity) record per series key.
inline auto best_per_series(const std::vector<ResultRecord> &records,
                            const std::function<std::string(const ResultRecord &)> &key)
    -> std::map<std::string, ResultRecord> {
    std::map<std::string, ResultRecord> best;
    for (const auto &r : records) {
        auto it = best.find(key(r));
        if (it == best.end() || r.fidelity > it->second.fidelity) {
            best[key(r)] = r;
        }
    }
    return best;
}

inline auto series_name(const ResultRecord &r) -> std::string {
    return r.protocol + "_" + r.loss_kind;
}

} // namespace detail

/**
 * Writes per-figure tables into `dir` and returns their paths. `summary`
 * (from summary.json) supplies histories and schedules for the kinds that
 * need them. Rows are ordered by the swept value; columns by first
 * appearance in the task order.
 */
inline auto emit_plot_data(const std::vector<ResultRecord> &records,
                           ExperimentKind kind, const Json &summary,
                           const std::filesystem::path &dir)
    -> std::vector<std::filesystem::path> {
    if (records.empty()) {
        throw std::invalid_argument("emit_plot_data: no records");
    }
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    const auto fidelity_of = [](const ResultRecord &r) { return r.fidelity; };

    switch (kind) {
    case ExperimentKind::FidelityVsK: {
        const auto path = dir / "plot_fidelity_vs_K.csv";
        detail::write_best_of_table(
            path, "K", records,
            [](const ResultRecord &r) { return static_cast<double>(r.n_slices); },
            [](const ResultRecord &r) {
                return detail::series_name(r) + "_T" + format_double(r.total_time);
            },
            false, fidelity_of, "f_", {});
        written.push_back(path);
        break;
    }
    case ExperimentKind::FidelityVsT: {
        const auto path = dir / "plot_fidelity_vs_T.csv";
        detail::write_best_of_table(
            path, "T", records, [](const ResultRecord &r) { return r.total_time; },
            detail::series_name, false, fidelity_of, "f_", {});
        written.push_back(path);
        break;
    }
    case ExperimentKind::FidelityVsN: {
        std::vector<std::string> footer;
        for (const auto &series : detail::column_order(records, detail::series_name)) {
            std::map<int, double> best;
            for (const auto &r : records) {
                if (detail::series_name(r) == series) {
                    best[r.n_sites] = std::max(best[r.n_sites], r.fidelity);
                }
            }
            std::vector<std::pair<double, double>> points;
            for (const auto &[n, f] : best) {
                points.emplace_back(n, f);
            }
            try {
                const auto fit = fit_exponential_scaling(points);
                for (const auto &[n, f] : fit.excluded) {
                    std::cerr << "warning: fit " << series << " excludes N=" << n
                              << " with f=" << f << "\n";
                }
                footer.push_back("fit f_" + series + ": f = 1 - mu*exp(nu*N), mu=" +
                                 format_double(fit.mu) + ", nu=" + format_double(fit.nu));
            } catch (const ContractViolation &err) {
                footer.push_back("fit f_" + series + ": unavailable (" + err.what() + ")");
            }
        }
        const auto path = dir / "plot_fidelity_vs_N.csv";
        detail::write_best_of_table(
            path, "N", records,
            [](const ResultRecord &r) { return static_cast<double>(r.n_sites); },
            detail::series_name, false, fidelity_of, "f_", footer);
        written.push_back(path);
        break;
    }
    case ExperimentKind::ThreeModel: {
        const auto best = detail::best_per_series(
            records, [](const ResultRecord &r) { return r.evolution_model; });
        std::vector<std::string> models;
        std::vector<std::vector<double>> histories;
        std::vector<std::string> losses;
        for (const auto &model : detail::column_order(
                 records, [](const ResultRecord &r) { return r.evolution_model; })) {
            const auto *run = detail::find_run(summary, best.at(model).task);
            if (run == nullptr) {
                continue;
            }
            models.push_back(model);
            losses.push_back(best.at(model).loss_kind);
            histories.push_back(run->at("history").get<std::vector<double>>());
        }
        const auto path = dir / "plot_three_model.csv";
        std::ofstream out(path);
        out << "# columns: epoch";
        std::ostringstream header;
        header << "epoch";
        for (const auto &m : models) {
            header << ",F_" << m << ",f_" << m;
        }
        out << header.str().substr(5) << "\n" << header.str() << "\n";
        std::size_t length = 0;
        for (const auto &h : histories) {
            length = std::max(length, h.size());
        }
        for (std::size_t e = 0; e < length; ++e) {
            out << e;
            for (std::size_t m = 0; m < histories.size(); ++m) {
                if (e < histories[m].size()) {
                    const double loss = histories[m][e];
                    const double f = losses[m] == "nlf" ? std::exp(-loss) : 1.0 - loss;
                    out << ',' << format_double(loss) << ',' << format_double(f);
                } else {
                    out << ",nan,nan";
                }
            }
            out << "\n";
        }
        written.push_back(path);
        break;
    }
    case ExperimentKind::FieldLandscape: {
        const auto best = detail::best_per_series(records, detail::series_name);
        for (const auto &[series, record] : best) {
            const auto *run = detail::find_run(summary, record.task);
            if (run == nullptr) {
                continue;
            }
            const auto schedule = schedule_from_json(run->at("schedule"));
            const char *axes[] = {"x", "y", "z"};
            for (int a = 0; a < 3; ++a) {
                const auto path =
                    dir / ("plot_landscape_" + series + "_" + axes[a] + ".csv");
                std::ofstream out(path);
                out << "# field h^" << axes[a]
                    << "[k][n]: rows k = 1..K (t = k*tau), columns n = 1..N\n";
                out << "k";
                for (int n = 1; n <= schedule.n_sites(); ++n) {
                    out << ",n" << n;
                }
                out << "\n";
                for (std::size_t k = 0; k < schedule.n_slices(); ++k) {
                    out << k + 1;
                    for (int n = 0; n < schedule.n_sites(); ++n) {
                        out << ',' << format_double(schedule.fields[k](n, a));
                    }
                    out << "\n";
                }
                written.push_back(path);
            }
        }
        break;
    }
    case ExperimentKind::Trajectory: {
        const auto best = detail::best_per_series(
            records, [](const ResultRecord &r) { return r.protocol; });
        std::vector<std::string> names;
        std::vector<Trajectory> trajectories;
        double tau = 0.0;
        for (const char *name : {"STO", "GTO", "FGTO"}) {
            const auto it = best.find(name);
            if (it == best.end()) {
                continue;
            }
            const auto *run = detail::find_run(summary, it->second.task);
            if (run == nullptr) {
                continue;
            }
            const auto task = run->at("task");
            const auto target_spec =
                detail::parse_model_spec(task.at("target"), "task.target");
            const auto evo_spec =
                detail::parse_model_spec(task.at("evolution"), "task.evolution");
            const auto schedule = schedule_from_json(run->at("schedule"));
            tau = schedule.tau();
            names.emplace_back(name);
            trajectories.push_back(fidelity_trajectory(
                schedule, evo_spec, all_up_state(evo_spec.n_sites),
                ground_state(target_spec).state));
        }
        const auto path = dir / "plot_trajectory.csv";
        std::ofstream out(path);
        std::ostringstream header;
        header << "t";
        for (const auto &n : names) {
            header << ",f_" << n;
        }
        out << "# columns: " << header.str() << "\n" << header.str() << "\n";
        const std::size_t length =
            trajectories.empty() ? 0 : trajectories.front().fidelities.size();
        for (std::size_t k = 0; k < length; ++k) {
            out << format_double(static_cast<double>(k) * tau);
            for (const auto &traj : trajectories) {
                out << ',' << format_double(traj.fidelities[k]);
            }
            out << "\n";
        }
        written.push_back(path);
        break;
    }
    case ExperimentKind::GateSweep: {
        const auto path = dir / "plot_gate_sweep.csv";
        double threshold = 10.0 * AdamHyperparameters{}.learning_rate;
        if (summary.contains("config")) {
            threshold = 10.0 * summary.at("config")
                                   .at("protocols")
                                   .at(0)
                                   .at("adam")
                                   .at("learning_rate")
                                   .get<double>();
        }
        std::vector<std::string> footer;
        for (const auto &gate : detail::column_order(
                 records, [](const ResultRecord &r) { return r.gate; })) {
            std::map<double, double> best;
            for (const auto &r : records) {
                if (r.gate != gate) {
                    continue;
                }
                auto it = best.find(r.total_time);
                if (it == best.end() || r.loss < it->second) {
                    best[r.total_time] = r.loss;
                }
            }
            std::vector<double> times;
            std::vector<double> losses;
            for (const auto &[t, loss] : best) {
                times.push_back(t);
                losses.push_back(loss);
            }
            const auto knee = locate_knee(losses, threshold);
            footer.push_back("knee " + gate + " (F_G <= " + format_double(threshold) +
                             "): t* = " +
                             (knee ? format_double(times[*knee]) : std::string("none")));
        }
        detail::write_best_of_table(
            path, "T", records, [](const ResultRecord &r) { return r.total_time; },
            [](const ResultRecord &r) { return r.gate; }, true,
            [](const ResultRecord &r) { return r.loss; }, "FG_", footer);
        written.push_back(path);
        break;
    }
    case ExperimentKind::SingleRun: {
        const auto path = dir / "plot_single_run.csv";
        std::ofstream out(path);
        out << "# columns: task,epoch,loss\ntask,epoch,loss\n";
        for (const auto &r : records) {
            const auto *run = detail::find_run(summary, r.task);
            if (run == nullptr) {
                continue;
            }
            const auto history = run->at("history").get<std::vector<double>>();
            for (std::size_t e = 0; e < history.size(); ++e) {
                out << r.task << ',' << e << ',' << format_double(history[e]) << "\n";
            }
        }
        written.push_back(path);
        break;
    }
    }
    return written;
}

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
    std::size_t threads = 1;
    /// Overrides config.output_dir when set.
    std::optional<std::filesystem::path> output_dir;
    bool quiet = false;
};

struct ExperimentOutcome {
    std::filesystem::path output_dir;
    std::vector<RunTask> tasks;
    std::vector<ResultRecord> records;
    std::vector<std::optional<RunResult>> results;
    std::vector<std::string> failures;
    std::vector<std::filesystem::path> files;

    [[nodiscard]] auto ok() const -> bool { return failures.empty(); }
};

/// Output directory precedence: explicit option, then $SPINPREP_OUTPUT_DIR,
/// then the config's output_dir.
inline auto resolve_output_dir(const ExperimentConfig &config,
                               const RunOptions &options) -> std::filesystem::path {
    if (options.output_dir) {
        return *options.output_dir;
    }
    if (const char *env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') {
        return env;
    }
    return config.output_dir;
}

/**
 * Executes every task of `config` on `options.threads` workers, then writes
 * results.csv, summary.json and plot data from the calling thread. A task
 * that fails numerically is reported in `failures`; the others are still
 * written.
 */
inline auto run_experiment(const ExperimentConfig &config,
                           const RunOptions &options = {}) -> ExperimentOutcome {
    ExperimentOutcome outcome;
    outcome.output_dir = resolve_output_dir(config, options);
    outcome.tasks = expand_tasks(config);
    outcome.results.resize(outcome.tasks.size());
    std::vector<std::string> errors(outcome.tasks.size());
    if (config.kind != ExperimentKind::GateSweep) {
        std::set<int> checked;
        for (const auto &task : outcome.tasks) {
            if (!checked.insert(task.target.n_sites).second) {
                continue;
            }
            try {
                (void)ground_state(task.target);
            } catch (const DegenerateGroundState &err) {
                throw ConfigError("target", "N=" + std::to_string(task.target.n_sites) +
                                                ": " + err.what());
            }
        }
    }

    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    const auto worker = [&] {
        for (std::size_t i = next++; i < outcome.tasks.size(); i = next++) {
            const auto &task = outcome.tasks[i];
            try {
                outcome.results[i] = execute_task(task);
            } catch (const NumericalError &err) {
                errors[i] = err.what();
            } catch (const std::exception &err) {
                errors[i] = err.what();
            }
            if (!options.quiet) {
                const std::lock_guard lock(log_mutex);
                std::cerr << "[" << i + 1 << "/" << outcome.tasks.size() << "] "
                          << to_string(task.protocol.protocol) << ' '
                          << to_string(task.evolution.model)
                          << " N=" << task.evolution.n_sites
                          << " K=" << task.protocol.n_slices
                          << " T=" << task.protocol.total_time
                          << (task.gate.empty() ? "" : " gate=" + task.gate)
                          << " seed=" << task.protocol.seed;
                if (outcome.results[i]) {
                    std::cerr << " f=" << outcome.results[i]->fidelity
                              << " F=" << outcome.results[i]->loss << " ("
                              << outcome.results[i]->wall_seconds << " s)\n";
                } else {
                    std::cerr << " FAILED: " << errors[i] << "\n";
                }
            }
        }
    };
    const std::size_t n_threads =
        std::max<std::size_t>(1, std::min(options.threads, outcome.tasks.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) {
            pool.emplace_back(worker);
        }
        for (auto &thread : pool) {
            thread.join();
        }
    }

    for (std::size_t i = 0; i < outcome.tasks.size(); ++i) {
        if (outcome.results[i]) {
            outcome.records.push_back(make_record(outcome.tasks[i], *outcome.results[i]));
        } else {
            outcome.failures.push_back("task " + std::to_string(i) + ": " + errors[i]);
        }
    }

    std::filesystem::create_directories(outcome.output_dir);
    const auto results_path = outcome.output_dir / "results.csv";
    write_results_csv(results_path, config, outcome.records);
    outcome.files.push_back(results_path);
    const Json summary = summary_json(config, outcome.tasks, outcome.results);
    const auto summary_path = outcome.output_dir / "summary.json";
    std::ofstream(summary_path) << summary.dump(1) << "\n";
    outcome.files.push_back(summary_path);
    if (!outcome.records.empty()) {
        for (auto &path : emit_plot_data(outcome.records, config.kind, summary,
                                         outcome.output_dir)) {
            outcome.files.push_back(std::move(path));
        }
    }
    return outcome;
}

struct VerifyOutcome {
    ResultRecord record;
    double recomputed_fidelity = 0.0;
    bool hash_matches = false;
    bool matches = false;
};

/**
 * Re-runs record `which` (or one drawn with `seed` if unset) of a results file
 * from its embedded config and compares the fidelity to `tolerance`.
 */
inline auto verify_results(const std::filesystem::path &results_path,
                           std::optional<std::size_t> which, std::uint64_t seed,
                           double tolerance = 1e-12) -> VerifyOutcome {
    const ResultsFile file = read_results_csv(results_path);
    if (file.records.empty()) {
        throw ConfigError("", "results file has no records");
    }
    std::size_t pick = 0;
    if (which) {
        if (*which >= file.records.size()) {
            throw ConfigError("record", "record index out of range");
        }
        pick = *which;
    } else {
        std::mt19937_64 rng(seed);
        pick = std::uniform_int_distribution<std::size_t>(0, file.records.size() - 1)(rng);
    }
    const ResultRecord &record = file.records[pick];
    const auto tasks = expand_tasks(file.config);
    if (record.task >= tasks.size()) {
        throw ConfigError("task", "record refers to a task outside the config");
    }
    const RunTask &task = tasks[record.task];
    VerifyOutcome outcome;
    outcome.record = record;
    outcome.hash_matches = task.hash() == record.config_hash;
    outcome.recomputed_fidelity = execute_task(task).fidelity;
    outcome.matches = outcome.hash_matches &&
                      std::abs(outcome.recomputed_fidelity - record.fidelity) <= tolerance;
    return outcome;
}

/// Scales a desk-size preset up to the ten-site chains of the original runs.
inline void apply_full_scale(ExperimentConfig &config) {
    if (config.kind == ExperimentKind::GateSweep) {
        return;
    }
    if (config.kind == ExperimentKind::FidelityVsN) {
        if (std::find(config.grids.N.begin(), config.grids.N.end(), 10) ==
            config.grids.N.end()) {
            config.grids.N.push_back(10);
        }
        return;
    }
    config.target.n_sites = 10;
    for (auto &spec : config.evolution) {
        spec.n_sites = 10;
    }
}

} // namespace spinprep
