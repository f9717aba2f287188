#pragma once

#include <vector>

#include "manr/manr.hpp"

namespace manr::testing {

// Problem with explicit coordinates; customers get ids 0.., depots follow.
inline RoutingProblem make_problem(std::vector<Point> customers, std::vector<Point> depots,
                                   std::vector<double> velocities = {}) {
    if (velocities.empty()) velocities.assign(depots.size(), 1.0);
    return RoutingProblem(std::move(customers), std::move(depots), std::move(velocities));
}

inline GlobalState make_state(const RoutingProblem& p, const std::vector<std::vector<NodeId>>& parts,
                              std::vector<NodeId> pool = {}) {
    GlobalState s;
    for (AgentId i = 0; i < p.agents(); ++i) s.routes.push_back(make_route(p, i, parts[i]));
    for (NodeId id : pool) s.pool.insert(id);
    return s;
}

inline Instance random_instance(int customers, int agents, std::uint64_t seed) {
    GenConfig g;
    g.customers = customers;
    g.agents = agents;
    Rng rng(seed);
    return sample_instance(g, rng);
}

// Uniform over every legal local action, drops included.
inline GlobalAction random_legal_action(const GlobalState& s, const Offers& offers, Rng& rng) {
    GlobalAction g;
    for (AgentId i = 0; i < s.agents(); ++i) {
        const auto acts = enumerate_local_actions(s, i, offers[i], true);
        g.locals.push_back(acts[rng.uniform_int(acts.size())]);
    }
    return g;
}

// Small model for gradient checks and fast tests.
inline ModelConfig tiny_config() { return ModelConfig{3, 4, 5}; }

}  // namespace manr::testing
