#pragma once

// Problem sampling (uniform depots, mixed uniform / depot-clustered
// customers, near-unit velocities), initial solutions and dataset splits.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "manr/baselines.hpp"
#include "manr/errors.hpp"
#include "manr/rng.hpp"
#include "manr/routing.hpp"

namespace manr {

struct GenConfig {
    int customers = 10;
    int agents = 2;
    int size = 6280;
    double train_fraction = 0.8;
    double validation_fraction = 0.1;
    double sigma = 0.1;
    double velocity_min = 0.95;
    double velocity_max = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (agents < 1 || customers < agents) throw ContractError("gen config needs customers >= agents >= 1");
        if (size < 0) throw ContractError("dataset size must be nonnegative");
        if (!(sigma > 0.0)) throw ContractError("cluster sigma must be positive");
        if (train_fraction < 0 || validation_fraction < 0 || train_fraction + validation_fraction > 1.0 + 1e-12) {
            throw ContractError("split fractions must be nonnegative and sum to at most 1");
        }
        if (!(velocity_min > 0.0) || velocity_max < velocity_min) throw ContractError("bad velocity range");
    }

    friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

struct Instance {
    RoutingProblem problem;
    GlobalState initial;
};

struct Dataset {
    std::vector<Instance> train;
    std::vector<Instance> validation;
    std::vector<Instance> test;
};

// N(center, sigma^2 I) restricted to the unit square, by rejection.
inline Point sample_truncated_normal(const Point& center, double sigma, Rng& rng) {
    while (true) {
        const double x = center.x + sigma * rng.normal();
        const double y = center.y + sigma * rng.normal();
        if (x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0) return {x, y};
    }
}

inline RoutingProblem sample_problem(const GenConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<Point> depots;
    std::vector<double> velocities;
    for (int i = 0; i < cfg.agents; ++i) depots.push_back({rng.uniform(), rng.uniform()});
    for (int i = 0; i < cfg.agents; ++i) velocities.push_back(rng.uniform(cfg.velocity_min, cfg.velocity_max));
    const double f = rng.uniform();
    const int n_uniform = static_cast<int>(std::lround(f * cfg.customers));
    std::vector<Point> customers;
    for (int j = 0; j < n_uniform; ++j) customers.push_back({rng.uniform(), rng.uniform()});
    const int rest = cfg.customers - n_uniform;
    for (int i = 0; i < cfg.agents; ++i) {
        const int cnt = rest / cfg.agents + (i < rest % cfg.agents ? 1 : 0);
        for (int j = 0; j < cnt; ++j) customers.push_back(sample_truncated_normal(depots[i], cfg.sigma, rng));
    }
    return RoutingProblem(std::move(customers), std::move(depots), std::move(velocities));
}

// Random split into parts whose sizes differ by at most one, each toured by
// nearest neighbour from its depot.
inline GlobalState sample_initial_solution(const RoutingProblem& problem, Rng& rng) {
    const int k = problem.customers();
    const int n = problem.agents();
    std::vector<NodeId> ids(static_cast<std::size_t>(k));
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    std::vector<AgentId> agents(static_cast<std::size_t>(n));
    std::iota(agents.begin(), agents.end(), 0);
    rng.shuffle(agents);
    std::vector<std::vector<NodeId>> parts(static_cast<std::size_t>(n));
    std::size_t pos = 0;
    for (int p = 0; p < n; ++p) {
        const int cnt = k / n + (p < k % n ? 1 : 0);
        for (int j = 0; j < cnt; ++j) parts[agents[p]].push_back(ids[pos++]);
    }
    GlobalState s;
    for (AgentId i = 0; i < n; ++i) {
        s.routes.push_back(make_route(problem, i, nearest_neighbour_order(problem, i, parts[i])));
    }
    return s;
}

inline Instance sample_instance(const GenConfig& cfg, Rng& rng) {
    RoutingProblem p = sample_problem(cfg, rng);
    GlobalState s = sample_initial_solution(p, rng);
    return Instance{std::move(p), std::move(s)};
}

struct SplitSizes {
    int train = 0;
    int validation = 0;
    int test = 0;
};

inline SplitSizes split_sizes(const GenConfig& cfg) {
    SplitSizes s;
    s.train = static_cast<int>(std::floor(cfg.train_fraction * cfg.size + 1e-9));
    s.validation = static_cast<int>(std::floor(cfg.validation_fraction * cfg.size + 1e-9));
    s.test = cfg.size - s.train - s.validation;
    return s;
}

// Problem i is drawn from its own stream derived from (seed, i).
inline Dataset generate_dataset(const GenConfig& cfg) {
    cfg.validate();
    const SplitSizes sz = split_sizes(cfg);
    Dataset d;
    for (int i = 0; i < cfg.size; ++i) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i), 0));
        Instance inst = sample_instance(cfg, rng);
        if (i < sz.train) {
            d.train.push_back(std::move(inst));
        } else if (i < sz.train + sz.validation) {
            d.validation.push_back(std::move(inst));
        } else {
            d.test.push_back(std::move(inst));
        }
    }
    return d;
}

}  // namespace manr
