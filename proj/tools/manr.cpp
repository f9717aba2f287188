// manr: dataset generation, training, evaluation and trace export.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "manr/manr.hpp"

namespace fs = std::filesystem;
using namespace manr;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

int env_workers() {
    const char* s = std::getenv("MANR_WORKERS");
    if (!s) return 1;
    try {
        return std::max(1, std::stoi(s));
    } catch (...) {
        return 1;
    }
}

json read_json_file(const fs::path& p) {
    std::ifstream f = open_in(p);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw FormatError(p.string() + ": " + e.what());
    }
}

struct GenArgs {
    GenConfig cfg;
    std::string out;
};

int run_gen(const GenArgs& a) {
    a.cfg.validate();
    const Dataset d = generate_dataset(a.cfg);
    write_dataset(a.out, d, a.cfg);
    std::cout << "wrote " << d.train.size() << "/" << d.validation.size() << "/" << d.test.size()
              << " problems to " << a.out << "\n";
    return kOk;
}

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::string resume;
};

int run_train(const TrainArgs& a) {
    const fs::path dir(a.data);
    InstanceFile tr = read_instances(dir / "train.jsonl");
    InstanceFile va = read_instances(dir / "validation.jsonl");
    std::optional<GenConfig> gen;
    if (tr.header.contains("gen")) gen = gen_config_from_json(tr.header.at("gen"));
    const int customers = gen ? gen->customers : (tr.instances.empty() ? 10 : tr.instances[0].problem.customers());
    const int agents = gen ? gen->agents : (tr.instances.empty() ? 2 : tr.instances[0].problem.agents());

    TrainingConfig tc = TrainingConfig::defaults(customers, agents);
    ModelConfig mc;
    if (!a.config.empty()) {
        json j = read_json_file(a.config);
        if (j.contains("model")) {
            mc = model_config_from_json(j.at("model"));
            j.erase("model");
        }
        tc = training_config_from_json(j, tc);
    }

    Model model(mc, derive_seed(tc.seed, 0x6d6f64));
    TrainingState st = init_training(model, tc);
    const fs::path out(a.out);
    std::ios::openmode mode = std::ios::out;
    if (!a.resume.empty()) {
        const Checkpoint ck = load_checkpoint(a.resume);
        if (!(ck.model == mc)) throw VersionError("resume: model config differs from the checkpoint");
        TrainingConfig prev = ck.training;
        prev.epochs = tc.epochs;  // extending the schedule is allowed
        if (!(prev == tc)) throw VersionError("resume: training config differs from the checkpoint");
        model = model_from_checkpoint(ck);
        st = ck.state;
        mode |= std::ios::app;
    }
    fs::create_directories(out);
    std::ofstream metrics(out / "metrics.jsonl", mode);
    if (!metrics) throw IoError("cannot write " + (out / "metrics.jsonl").string());

    auto on_epoch = [&](const EpochMetrics& m, const Model& mdl, const TrainingState& s) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03d.ckpt", m.epoch);
        save_checkpoint(out / name, mdl, tc, gen, s);
        save_checkpoint(out / "last.ckpt", mdl, tc, gen, s);
        metrics << to_json(m).dump() << '\n' << std::flush;
        std::cout << "epoch " << m.epoch << " loss " << m.train_loss << " val gap "
                  << (m.validation_gap ? std::to_string(*m.validation_gap) + "%" : std::string("n/a")) << "\n";
    };
    train(model, tr.instances, va.instances, tc, st, on_epoch);
    if (tc.epochs == 0 || st.epoch == 0) save_checkpoint(out / "last.ckpt", model, tc, gen, st);
    return kOk;
}

struct EvalArgs {
    std::string data;
    std::string checkpoint;
    int runs = kDefaultRuns;
    int steps = kDefaultInferenceSteps;
    std::string baseline = "none";
    bool collab = false;
    std::uint64_t seed = 0;
    std::string out;
};

int run_eval(const EvalArgs& a) {
    fs::path data(a.data);
    if (fs::is_directory(data)) data /= "test.jsonl";
    const InstanceFile f = read_instances(data);
    const Model model = model_from_checkpoint(load_checkpoint(a.checkpoint));
    EvalOptions opt;
    opt.runs = a.runs;
    opt.steps = a.steps;
    opt.seed = a.seed;
    opt.collab = a.collab;
    opt.workers = env_workers();
    opt.baseline = a.baseline == "exact" ? BaselineKind::Exact
                   : a.baseline == "nn2opt" ? BaselineKind::NnTwoOpt
                                            : BaselineKind::None;
    const EvalReport rep = multi_run_eval(model, f.instances, opt);
    write_eval_report(a.out, rep, opt);
    std::cout << rep.problems.size() << " problems, MANR gap vs initial " << rep.gap_initial << "%, best "
              << rep.gap_initial_best << "%";
    if (rep.gap_baseline_best) std::cout << ", best vs baseline " << *rep.gap_baseline_best << "%";
    std::cout << "\n";
    return kOk;
}

struct TraceArgs {
    std::string problem;
    int index = 0;
    std::string checkpoint;
    std::uint64_t seed = 0;
    int steps = kDefaultInferenceSteps;
    std::string policy = "model";
    std::string out;
};

int run_trace(const TraceArgs& a) {
    const InstanceFile f = read_instances(a.problem);
    if (a.index < 0 || a.index >= static_cast<int>(f.instances.size())) {
        throw InvalidReference("problem index " + std::to_string(a.index) + " out of range (file has " +
                               std::to_string(f.instances.size()) + ")");
    }
    const Instance& inst = f.instances[a.index];
    Rng rng(derive_seed(a.seed, 0, static_cast<std::uint64_t>(a.index)));
    EpisodeTrace trace;
    const RewardConfig rc = RewardConfig::for_agents(inst.problem.agents());
    if (a.policy == "model") {
        if (a.checkpoint.empty()) throw ContractError("--policy model needs --checkpoint");
        const Model model = model_from_checkpoint(load_checkpoint(a.checkpoint));
        trace = run_inference_trace(model, inst.problem, inst.initial, a.steps, rng);
    } else if (a.policy == "noop") {
        auto p = [](const GlobalState& s, const Offers&, Rng&) { return GlobalAction::noop(s.agents()); };
        trace = rollout_episode(inst.problem, inst.initial, p, a.steps, rc, rng);
    } else {
        auto p = [](const GlobalState& s, const Offers& offers, Rng& r) {
            GlobalAction g;
            for (AgentId i = 0; i < s.agents(); ++i) {
                const auto acts = enumerate_local_actions(s, i, offers[i], true);
                g.locals.push_back(acts[r.uniform_int(acts.size())]);
            }
            return g;
        };
        trace = rollout_episode(inst.problem, inst.initial, p, a.steps, rc, rng);
    }
    json meta = {{"problem_file", fs::path(a.problem).filename().string()},
                 {"problem_index", a.index},
                 {"seed", a.seed},
                 {"policy", a.policy}};
    write_trace(a.out, inst.problem, trace, meta);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-agent neural rewriter for multi-vehicle routing"};
    app.require_subcommand(1);

    GenArgs g;
    auto* gen = app.add_subcommand("gen-data", "sample problems and initial solutions");
    gen->add_option("--customers", g.cfg.customers)->required();
    gen->add_option("--agents", g.cfg.agents)->required();
    gen->add_option("--size", g.cfg.size)->required();
    gen->add_option("--seed", g.cfg.seed)->required();
    gen->add_option("--out", g.out)->required();

    TrainArgs t;
    auto* tr = app.add_subcommand("train", "train the critic and rule policy");
    tr->add_option("--data", t.data, "directory with train.jsonl and validation.jsonl")->required();
    tr->add_option("--config", t.config, "JSON overrides of the training defaults");
    tr->add_option("--out", t.out)->required();
    tr->add_option("--resume", t.resume, "checkpoint to continue from");

    EvalArgs e;
    auto* ev = app.add_subcommand("eval", "multi-run decentral evaluation");
    ev->add_option("--data", e.data, "dataset file, or a directory holding test.jsonl")->required();
    ev->add_option("--checkpoint", e.checkpoint)->required();
    ev->add_option("--runs", e.runs)->check(CLI::PositiveNumber);
    ev->add_option("--steps", e.steps)->check(CLI::NonNegativeNumber);
    ev->add_option("--baseline", e.baseline)->check(CLI::IsMember({"exact", "nn2opt", "none"}));
    ev->add_flag("--collab", e.collab, "add the collaboration-benefit column");
    ev->add_option("--seed", e.seed);
    ev->add_option("--out", e.out)->required();

    TraceArgs r;
    auto* trc = app.add_subcommand("trace", "export one rollout as JSONL");
    trc->add_option("--problem", r.problem, "dataset file")->required();
    trc->add_option("--index", r.index);
    trc->add_option("--checkpoint", r.checkpoint);
    trc->add_option("--seed", r.seed);
    trc->add_option("--steps", r.steps)->check(CLI::NonNegativeNumber);
    trc->add_option("--policy", r.policy)->check(CLI::IsMember({"model", "noop", "random"}));
    trc->add_option("--out", r.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return run_gen(g);
        if (*tr) return run_train(t);
        if (*ev) return run_eval(e);
        if (*trc) return run_trace(r);
    } catch (const NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << "\n";
        return kNumerical;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kData;
    }
    return kUsage;
}
