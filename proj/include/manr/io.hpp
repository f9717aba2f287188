#pragma once

// Persistence: JSONL datasets and traces, binary checkpoints with a JSON
// manifest, metrics logs and evaluation reports.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "manr/datagen.hpp"
#include "manr/errors.hpp"
#include "manr/game.hpp"
#include "manr/inference.hpp"
#include "manr/models.hpp"
#include "manr/training.hpp"

namespace manr {

using json = nlohmann::json;

inline constexpr int kDatasetVersion = 1;
inline constexpr int kTraceVersion = 1;
inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "MANR-CKPT";

class IoError : public Error {
public:
    using Error::Error;
};

inline void check_version(const json& header, const std::string& format, int expected, const std::string& path) {
    if (!header.is_object() || header.value("format", "") != format) {
        throw FormatError(path + ": not a " + format + " file");
    }
    const int v = header.value("version", -1);
    if (v != expected) {
        throw VersionError(path + ": " + format + " version " + std::to_string(v) + " but this build reads version " +
                          std::to_string(expected));
    }
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
    if (!f) throw IoError("cannot write " + p.string());
    return f;
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = false) {
    std::ifstream f(p, binary ? std::ios::binary : std::ios::in);
    if (!f) throw IoError("cannot read " + p.string());
    return f;
}

// ---------------------------------------------------------------------------
// Configs.

inline json to_json(const GenConfig& c) {
    return {{"customers", c.customers},       {"agents", c.agents},
            {"size", c.size},                 {"train_fraction", c.train_fraction},
            {"validation_fraction", c.validation_fraction}, {"sigma", c.sigma},
            {"velocity_min", c.velocity_min}, {"velocity_max", c.velocity_max},
            {"seed", c.seed}};
}

inline GenConfig gen_config_from_json(const json& j) {
    GenConfig c;
    c.customers = j.value("customers", c.customers);
    c.agents = j.value("agents", c.agents);
    c.size = j.value("size", c.size);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.sigma = j.value("sigma", c.sigma);
    c.velocity_min = j.value("velocity_min", c.velocity_min);
    c.velocity_max = j.value("velocity_max", c.velocity_max);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline json to_json(const TrainingConfig& c) {
    return {{"steps", c.steps},
            {"candidates", c.candidates},
            {"epsilon", c.epsilon},
            {"gamma", c.gamma},
            {"alpha", c.alpha},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"window", c.window},
            {"learning_rate", c.learning_rate},
            {"lr_decay", c.lr_decay},
            {"decay_steps", c.decay_steps},
            {"clip_norm", c.clip_norm},
            {"validation_steps", c.validation_steps},
            {"seed", c.seed}};
}

// Keys absent from `j` keep the values of `base`; unknown keys are rejected.
inline TrainingConfig training_config_from_json(const json& j, TrainingConfig base = {}) {
    static const char* known[] = {"steps",         "candidates", "epsilon",     "gamma",     "alpha",
                                  "epochs",        "batch_size", "window",      "learning_rate", "lr_decay",
                                  "decay_steps",   "clip_norm",  "validation_steps", "seed"};
    if (!j.is_object()) throw FormatError("training config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) ==
            std::end(known)) {
            throw FormatError("unknown training config key '" + k + "'");
        }
    }
    TrainingConfig& c = base;
    c.steps = j.value("steps", c.steps);
    c.candidates = j.value("candidates", c.candidates);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.gamma = j.value("gamma", c.gamma);
    c.alpha = j.value("alpha", c.alpha);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.window = j.value("window", c.window);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.decay_steps = j.value("decay_steps", c.decay_steps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.validation_steps = j.value("validation_steps", c.validation_steps);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

inline json to_json(const ModelConfig& c) {
    return {{"hidden", c.hidden}, {"attention", c.attention}, {"scorer_hidden", c.scorer_hidden}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.attention = j.value("attention", c.attention);
    c.scorer_hidden = j.value("scorer_hidden", c.scorer_hidden);
    return c;
}

// ---------------------------------------------------------------------------
// Problems, states and datasets.

inline json points_json(const std::vector<Point>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back({p.x, p.y});
    return a;
}

inline std::vector<Point> points_from_json(const json& j) {
    std::vector<Point> out;
    for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return out;
}

inline json state_json(const GlobalState& s) {
    json routes = json::array();
    for (const auto& r : s.routes) routes.push_back(r.sequence);
    return {{"routes", routes}, {"pool", s.pool.members}};
}

inline GlobalState state_from_json(const json& j) {
    GlobalState s;
    AgentId a = 0;
    for (const auto& r : j.at("routes")) s.routes.push_back(Route{a++, r.get<std::vector<NodeId>>()});
    if (j.contains("pool")) {
        for (NodeId id : j.at("pool").get<std::vector<NodeId>>()) s.pool.insert(id);
    }
    return s;
}

inline json instance_json(const Instance& inst, int index) {
    return {{"index", index},
            {"customers", points_json(inst.problem.customer_positions())},
            {"depots", points_json(inst.problem.depot_positions())},
            {"velocities", inst.problem.velocities()},
            {"initial", state_json(inst.initial).at("routes")}};
}

inline Instance instance_from_json(const json& j) {
    Instance inst{RoutingProblem(points_from_json(j.at("customers")), points_from_json(j.at("depots")),
                                 j.at("velocities").get<std::vector<double>>()),
                  state_from_json(json{{"routes", j.at("initial")}})};
    const auto v = validate_state(inst.problem, inst.initial);
    if (!v.empty()) throw FormatError("initial solution invalid: " + v.front().message);
    return inst;
}

inline void write_instances(const std::filesystem::path& path, std::span<const Instance> instances,
                            const std::string& split, const GenConfig& cfg) {
    std::ofstream f = open_out(path);
    json header = {{"format", "manr-dataset"}, {"version", kDatasetVersion}, {"split", split},
                   {"count", instances.size()}, {"gen", to_json(cfg)}};
    f << header.dump() << '\n';
    for (std::size_t i = 0; i < instances.size(); ++i) f << instance_json(instances[i], static_cast<int>(i)).dump() << '\n';
    if (!f) throw IoError("write failed: " + path.string());
}

struct InstanceFile {
    json header;
    std::vector<Instance> instances;
};

inline InstanceFile read_instances(const std::filesystem::path& path) {
    std::ifstream f = open_in(path);
    std::string line;
    InstanceFile out;
    if (!std::getline(f, line)) throw FormatError(path.string() + ": empty file");
    try {
        out.header = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad header: " + e.what());
    }
    check_version(out.header, "manr-dataset", kDatasetVersion, path.string());
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.instances.push_back(instance_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const InvariantViolation& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d, const GenConfig& cfg) {
    write_instances(dir / "train.jsonl", d.train, "train", cfg);
    write_instances(dir / "validation.jsonl", d.validation, "validation", cfg);
    write_instances(dir / "test.jsonl", d.test, "test", cfg);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic line, one-line JSON manifest, then raw little-endian
// doubles for parameters, Adam first and second moments.

struct Checkpoint {
    ModelConfig model;
    TrainingConfig training;
    std::optional<GenConfig> gen;
    std::vector<std::string> names;
    std::vector<ad::Array> params;
    TrainingState state;
};

inline void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainingConfig& tc,
                            const std::optional<GenConfig>& gen, const TrainingState& st) {
    const ParamStore& ps = model.params();
    json shapes = json::array();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        shapes.push_back({{"name", ps.name(i)}, {"rows", ps[i].rows}, {"cols", ps[i].cols}});
    }
    json manifest = {{"version", kCheckpointVersion},
                     {"model", to_json(model.config())},
                     {"training", to_json(tc)},
                     {"gen", gen ? to_json(*gen) : json(nullptr)},
                     {"epoch", st.epoch},
                     {"rng", st.rng.state()},
                     {"adam_step", st.optimizer.step},
                     {"base_lr", st.optimizer.base_lr},
                     {"params", shapes}};
    std::ofstream f = open_out(path, true);
    f << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << manifest.dump() << '\n';
    auto dump = [&](const std::vector<ad::Array>& arrs) {
        for (const auto& a : arrs) {
            f.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        }
    };
    dump(ps.values());
    dump(st.optimizer.m);
    dump(st.optimizer.v);
    if (!f) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f = open_in(path, true);
    std::string magic_line, manifest_line;
    if (!std::getline(f, magic_line) || !std::getline(f, manifest_line)) {
        throw FormatError(path.string() + ": truncated checkpoint header");
    }
    std::istringstream ms(magic_line);
    std::string magic;
    int version = -1;
    ms >> magic >> version;
    if (magic != kCheckpointMagic) throw FormatError(path.string() + ": not a checkpoint");
    if (version != kCheckpointVersion) {
        throw VersionError(path.string() + ": checkpoint version " + std::to_string(version) +
                          " but this build reads version " + std::to_string(kCheckpointVersion));
    }
    json m;
    try {
        m = json::parse(manifest_line);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad manifest: " + e.what());
    }
    Checkpoint ck;
    ck.model = model_config_from_json(m.at("model"));
    ck.training = training_config_from_json(m.at("training"));
    if (!m.at("gen").is_null()) ck.gen = gen_config_from_json(m.at("gen"));
    ck.state.epoch = m.at("epoch").get<int>();
    ck.state.rng.set_state(m.at("rng").get<std::string>());
    ck.state.optimizer.step = m.at("adam_step").get<long>();
    ck.state.optimizer.base_lr = m.at("base_lr").get<double>();
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    for (const auto& p : m.at("params")) {
        ck.names.push_back(p.at("name").get<std::string>());
        shapes.emplace_back(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>());
    }
    auto read = [&](std::vector<ad::Array>& out) {
        for (const auto& [r, c] : shapes) {
            ad::Array a(r, c);
            f.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
            if (!f) throw FormatError(path.string() + ": truncated parameter data");
            out.push_back(std::move(a));
        }
    };
    read(ck.params);
    read(ck.state.optimizer.m);
    read(ck.state.optimizer.v);
    if (f.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
    return ck;
}

// Builds a model from a checkpoint, checking names and shapes.
inline Model model_from_checkpoint(const Checkpoint& ck) {
    Model model(ck.model, 0);
    ParamStore& ps = model.params();
    if (ps.size() != ck.params.size()) {
        throw ShapeError("checkpoint has " + std::to_string(ck.params.size()) + " parameters, model expects " +
                         std::to_string(ps.size()));
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps.name(i) != ck.names[i] || !ps[i].same_shape(ck.params[i])) {
            throw ShapeError("checkpoint parameter " + ck.names[i] + " " + ck.params[i].shape_string() +
                             " does not match " + ps.name(i) + " " + ps[i].shape_string());
        }
        ps[i] = ck.params[i];
    }
    return model;
}

// ---------------------------------------------------------------------------
// Metrics, traces and reports.

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const EpochMetrics& m) {
    return {{"epoch", m.epoch},
            {"train_loss", m.train_loss},
            {"critic_loss", m.critic_loss},
            {"policy_loss", m.policy_loss},
            {"mean_reward", m.mean_reward},
            {"validation_gap", opt_json(m.validation_gap)},
            {"optimizer_step", m.optimizer_step}};
}

inline json action_json(const GlobalState& s, const LocalAction& a) {
    return {{"agent", a.agent},
            {"region", a.region ? json(*a.region) : json(nullptr)},
            {"rule", a.is_noop() ? json(nullptr) : json(a.rule)},
            {"label", action_label(s, a)}};
}

inline json state_record(const RoutingProblem& problem, const GlobalState& s, int t) {
    json j = state_json(s);
    j["t"] = t;
    j["feasible"] = is_feasible(problem, s);
    j["cost"] = team_average_cost(problem, s);
    return j;
}

inline void write_trace(const std::filesystem::path& path, const RoutingProblem& problem, const EpisodeTrace& trace,
                        const json& meta) {
    std::ofstream f = open_out(path);
    json header = meta;
    header["format"] = "manr-trace";
    header["version"] = kTraceVersion;
    header["steps"] = trace.steps();
    header["agents"] = problem.agents();
    header["customers"] = problem.customers();
    f << header.dump() << '\n';
    f << state_record(problem, trace.states[0], 0).dump() << '\n';
    for (int t = 0; t < trace.steps(); ++t) {
        json rec = state_record(problem, trace.states[t + 1], t + 1);
        json acts = json::array();
        for (const auto& a : trace.actions[t].locals) acts.push_back(action_json(trace.states[t], a));
        json offers = json::array();
        for (const auto& o : trace.offers[t]) offers.push_back(o ? json(*o) : json(nullptr));
        rec["actions"] = acts;
        rec["offers"] = offers;
        rec["reward"] = trace.rewards[t];
        rec["prev_feasible"] = trace.prev_feasible[t];
        f << rec.dump() << '\n';
    }
    if (!f) throw IoError("write failed: " + path.string());
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

// report.csv and records.jsonl hold no wall-clock data so reruns compare
// byte-for-byte; timings go to timing.csv.
inline void write_eval_report(const std::filesystem::path& dir, const EvalReport& rep, const EvalOptions& opt) {
    {
        std::ofstream f = open_out(dir / "report.csv");
        f << "index,initial_cost,manr_cost,manr_best_cost,baseline_cost,baseline_skipped,gap_initial,gap_initial_best,"
             "gap_baseline,gap_baseline_best,noncollab_cost,collab_benefit\n";
        for (const auto& p : rep.problems) {
            std::optional<double> gb, gbb;
            if (p.baseline_cost) {
                gb = gap(*p.baseline_cost, p.mean_cost);
                gbb = gap(*p.baseline_cost, p.best_cost);
            }
            f << p.index << ',' << fmt_double(p.initial_cost) << ',' << fmt_double(p.mean_cost) << ','
              << fmt_double(p.best_cost) << ',' << fmt_opt(p.baseline_cost) << ',' << (p.baseline_skipped ? 1 : 0)
              << ',' << fmt_double(gap(p.initial_cost, p.mean_cost)) << ','
              << fmt_double(gap(p.initial_cost, p.best_cost)) << ',' << fmt_opt(gb) << ',' << fmt_opt(gbb) << ','
              << fmt_opt(p.noncollab_cost) << ',' << fmt_opt(p.collab_benefit) << '\n';
        }
    }
    {
        std::ofstream f = open_out(dir / "records.jsonl");
        for (const auto& p : rep.problems) {
            json j = {{"index", p.index},
                      {"initial_cost", p.initial_cost},
                      {"run_costs", p.run_costs},
                      {"manr_cost", p.mean_cost},
                      {"manr_best_cost", p.best_cost},
                      {"baseline_cost", opt_json(p.baseline_cost)},
                      {"baseline_skipped", p.baseline_skipped},
                      {"noncollab_cost", opt_json(p.noncollab_cost)},
                      {"collab_benefit", opt_json(p.collab_benefit)}};
            f << j.dump() << '\n';
        }
    }
    {
        std::ofstream f = open_out(dir / "summary.json");
        const char* base = opt.baseline == BaselineKind::Exact      ? "exact"
                           : opt.baseline == BaselineKind::NnTwoOpt ? "nn2opt"
                                                                    : "none";
        json j = {{"problems", rep.problems.size()},
                  {"runs", opt.runs},
                  {"steps", opt.steps},
                  {"seed", opt.seed},
                  {"baseline", base},
                  {"gap_initial", rep.gap_initial},
                  {"gap_initial_best", rep.gap_initial_best},
                  {"gap_baseline", opt_json(rep.gap_baseline)},
                  {"gap_baseline_best", opt_json(rep.gap_baseline_best)},
                  {"collab_benefit", opt_json(rep.collab_benefit)}};
        f << j.dump(2) << '\n';
    }
    {
        std::ofstream f = open_out(dir / "timing.csv");
        f << "index,seconds\n";
        for (const auto& p : rep.problems) f << p.index << ',' << fmt_double(p.seconds) << '\n';
    }
}

}  // namespace manr
