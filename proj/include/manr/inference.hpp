#pragma once

// Decentralized execution, the multi-run evaluation protocol and gap metrics.

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "manr/baselines.hpp"
#include "manr/datagen.hpp"
#include "manr/game.hpp"
#include "manr/models.hpp"

namespace manr {

inline constexpr int kDefaultInferenceSteps = 100;
inline constexpr int kDefaultRuns = 20;

// Rule choice of one agent that was handed `region`. Inputs are restricted
// to the agent's own route/cost and the pool.
inline LocalAction decide_local_action(const Model& model, const LocalObservation& obs, const PoolObservation& pool,
                                       std::optional<NodeId> region) {
    if (!region) return LocalAction::noop(obs.agent);
    return LocalAction{obs.agent, region, choose_rule(model, obs, pool, *region, true, nullptr)};
}

inline GlobalAction decentral_action(const Model& model, const RoutingProblem& problem, const GlobalState& state,
                                     const Offers& offers, Rng& rng) {
    GlobalAction a;
    const PoolObservation pool = observe_pool(problem, state);
    for (AgentId i = 0; i < state.agents(); ++i) {
        const std::optional<NodeId> region = sample_region(state, i, offers[i], rng);
        a.locals.push_back(decide_local_action(model, observe_local(problem, state, i), pool, region));
    }
    return a;
}

inline EpisodeTrace run_inference_trace(const Model& model, const RoutingProblem& problem, const GlobalState& s0,
                                        int steps, Rng& rng) {
    auto provider = [&](const GlobalState& s, const Offers& offers, Rng& r) {
        return decentral_action(model, problem, s, offers, r);
    };
    return rollout_episode(problem, s0, provider, steps, RewardConfig::for_agents(problem.agents()), rng);
}

inline GlobalState run_inference(const Model& model, const RoutingProblem& problem, const GlobalState& s0, int steps,
                                 Rng& rng) {
    return final_solution(run_inference_trace(model, problem, s0, steps, rng));
}

// Percentage improvement of `achieved` over `reference`; negative = worse.
inline double gap(double reference, double achieved) {
    if (!(reference > 0.0)) throw ContractError("gap: reference cost must be positive");
    return 100.0 * (reference - achieved) / reference;
}

inline double collaboration_benefit(const RoutingProblem& problem, const Assignment& initial, double team_cost) {
    const NonCollaborative nc = per_agent_tsp(problem, initial);
    return gap(nc.cost, team_cost);
}

enum class BaselineKind { None, Exact, NnTwoOpt };

// Each customer goes to the agent whose depot is cheapest to reach.
inline Assignment nearest_depot_assignment(const RoutingProblem& problem) {
    Assignment a(static_cast<std::size_t>(problem.customers()));
    for (NodeId c = 0; c < problem.customers(); ++c) {
        AgentId best = 0;
        for (AgentId i = 1; i < problem.agents(); ++i) {
            if (edge_cost(problem, i, c, problem.depot_of(i)) < edge_cost(problem, best, c, problem.depot_of(best))) {
                best = i;
            }
        }
        a[c] = best;
    }
    return a;
}

struct EvalOptions {
    int runs = kDefaultRuns;
    int steps = kDefaultInferenceSteps;
    std::uint64_t seed = 0;
    BaselineKind baseline = BaselineKind::None;
    bool collab = false;
    int workers = 1;
};

struct ProblemRecord {
    int index = 0;
    double initial_cost = 0.0;
    std::vector<double> run_costs;
    double mean_cost = 0.0;  // "MANR"
    double best_cost = 0.0;  // "MANR best"
    std::optional<double> baseline_cost;
    bool baseline_skipped = false;
    std::optional<double> noncollab_cost;
    std::optional<double> collab_benefit;  // percent, for the best run
    double seconds = 0.0;                  // wall clock, all runs
};

struct EvalReport {
    std::vector<ProblemRecord> problems;
    double gap_initial = 0.0;       // mean over problems, MANR vs initial
    double gap_initial_best = 0.0;  // MANR best vs initial
    std::optional<double> gap_baseline;
    std::optional<double> gap_baseline_best;
    std::optional<double> collab_benefit;
    double mean_seconds = 0.0;
};

inline ProblemRecord evaluate_problem(const Model& model, const Instance& inst, int index, const EvalOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    ProblemRecord rec;
    rec.index = index;
    rec.initial_cost = team_average_cost(inst.problem, inst.initial);
    GlobalState best_state = inst.initial;
    rec.best_cost = std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (int r = 0; r < opt.runs; ++r) {
        Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(index)));
        GlobalState fin = run_inference(model, inst.problem, inst.initial, opt.steps, rng);
        const double c = team_average_cost(inst.problem, fin);
        rec.run_costs.push_back(c);
        total += c;
        if (c < rec.best_cost) {
            rec.best_cost = c;
            best_state = std::move(fin);
        }
    }
    rec.mean_cost = total / opt.runs;
    if (opt.baseline == BaselineKind::Exact) {
        try {
            rec.baseline_cost = exact_mvrp(inst.problem).cost;
        } catch (const SizeError&) {
            rec.baseline_skipped = true;
        }
    } else if (opt.baseline == BaselineKind::NnTwoOpt) {
        rec.baseline_cost = team_average_cost(inst.problem, nn_2opt(inst.problem, nearest_depot_assignment(inst.problem)));
    }
    if (opt.collab) {
        const NonCollaborative nc = per_agent_tsp(inst.problem, assignment_of(inst.problem, inst.initial));
        rec.noncollab_cost = nc.cost;
        rec.collab_benefit = gap(nc.cost, rec.best_cost);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

// Problems are spread over `workers` threads; rows are merged by index.
inline EvalReport multi_run_eval(const Model& model, std::span<const Instance> instances, const EvalOptions& opt) {
    if (opt.runs < 1) throw ContractError("multi_run_eval: runs must be >= 1");
    if (opt.steps < 0) throw ContractError("multi_run_eval: steps must be >= 0");
    EvalReport rep;
    rep.problems.resize(instances.size());
    const int workers = std::max(1, std::min<int>(opt.workers, static_cast<int>(instances.size())));
    auto work = [&](int w) {
        for (std::size_t i = static_cast<std::size_t>(w); i < instances.size(); i += static_cast<std::size_t>(workers)) {
            rep.problems[i] = evaluate_problem(model, instances[i], static_cast<int>(i), opt);
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    if (rep.problems.empty()) return rep;
    double gi = 0, gib = 0, gb = 0, gbb = 0, cb = 0, secs = 0;
    int nb = 0, nc = 0;
    for (const auto& p : rep.problems) {
        gi += gap(p.initial_cost, p.mean_cost);
        gib += gap(p.initial_cost, p.best_cost);
        secs += p.seconds;
        if (p.baseline_cost) {
            gb += gap(*p.baseline_cost, p.mean_cost);
            gbb += gap(*p.baseline_cost, p.best_cost);
            ++nb;
        }
        if (p.collab_benefit) {
            cb += *p.collab_benefit;
            ++nc;
        }
    }
    const double np = static_cast<double>(rep.problems.size());
    rep.gap_initial = gi / np;
    rep.gap_initial_best = gib / np;
    rep.mean_seconds = secs / np;
    if (nb > 0) {
        rep.gap_baseline = gb / nb;
        rep.gap_baseline_best = gbb / nb;
    }
    if (nc > 0) rep.collab_benefit = cb / nc;
    return rep;
}

}  // namespace manr
