#pragma once

// Reference solvers: Held-Karp TSP, an exact multi-agent oracle, nearest
// neighbour + 2-opt, and the non-collaborative per-agent TSP cost.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "manr/errors.hpp"
#include "manr/routing.hpp"

namespace manr {

inline constexpr int kHeldKarpMaxNodes = 16;
inline constexpr double kPartitionLimit = 1e7;

using CostMatrix = std::vector<std::vector<double>>;

// Tour over matrix indices; index 0 is the depot and is not listed.
struct Tour {
    std::vector<int> order;
    double cost = 0.0;
};

inline Tour held_karp(const CostMatrix& c) {
    const int N = static_cast<int>(c.size());
    if (N == 0) throw ContractError("held_karp: empty cost matrix");
    if (N > kHeldKarpMaxNodes) {
        throw SizeError("held_karp: " + std::to_string(N) + " nodes exceeds the limit of " +
                        std::to_string(kHeldKarpMaxNodes));
    }
    for (const auto& r : c) {
        if (static_cast<int>(r.size()) != N) throw ShapeError("held_karp: cost matrix must be square");
    }
    if (N == 1) return {};
    const int k = N - 1;
    const std::size_t full = std::size_t{1} << k;
    const double inf = std::numeric_limits<double>::infinity();
    // dp[mask * k + j]: cheapest path from the depot covering mask, ending at j+1.
    std::vector<double> dp(full * k, inf);
    std::vector<int> parent(full * k, -1);
    for (int j = 0; j < k; ++j) dp[(std::size_t{1} << j) * k + j] = c[0][j + 1];
    for (std::size_t mask = 1; mask < full; ++mask) {
        for (int j = 0; j < k; ++j) {
            if (!(mask >> j & 1)) continue;
            const double base = dp[mask * k + j];
            if (base == inf) continue;
            for (int x = 0; x < k; ++x) {
                if (mask >> x & 1) continue;
                const std::size_t nm = mask | (std::size_t{1} << x);
                const double v = base + c[j + 1][x + 1];
                if (v < dp[nm * k + x]) {
                    dp[nm * k + x] = v;
                    parent[nm * k + x] = j;
                }
            }
        }
    }
    Tour t;
    t.cost = inf;
    int last = -1;
    for (int j = 0; j < k; ++j) {
        const double v = dp[(full - 1) * k + j] + c[j + 1][0];
        if (v < t.cost) {
            t.cost = v;
            last = j;
        }
    }
    std::size_t mask = full - 1;
    while (last >= 0) {
        t.order.push_back(last + 1);
        const int p = parent[mask * k + last];
        mask &= ~(std::size_t{1} << last);
        last = p;
    }
    std::reverse(t.order.begin(), t.order.end());
    return t;
}

inline CostMatrix agent_cost_matrix(const RoutingProblem& problem, AgentId agent, std::span<const NodeId> customers) {
    std::vector<NodeId> ids{problem.depot_of(agent)};
    ids.insert(ids.end(), customers.begin(), customers.end());
    CostMatrix c(ids.size(), std::vector<double>(ids.size(), 0.0));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = 0; j < ids.size(); ++j) c[i][j] = edge_cost(problem, agent, ids[i], ids[j]);
    }
    return c;
}

// Optimal route of one agent over the given customers.
inline Route held_karp_route(const RoutingProblem& problem, AgentId agent, std::span<const NodeId> customers) {
    const Tour t = held_karp(agent_cost_matrix(problem, agent, customers));
    std::vector<NodeId> order;
    for (int i : t.order) order.push_back(customers[i - 1]);
    return make_route(problem, agent, order);
}

// Nearest neighbour from the depot; equal distances go to the lowest id.
inline std::vector<NodeId> nearest_neighbour_order(const RoutingProblem& problem, AgentId agent,
                                                   std::span<const NodeId> customers) {
    std::vector<NodeId> left(customers.begin(), customers.end());
    std::sort(left.begin(), left.end());
    std::vector<NodeId> order;
    order.reserve(left.size());
    NodeId cur = problem.depot_of(agent);
    while (!left.empty()) {
        std::size_t best = 0;
        double bd = distance(problem.position(cur), problem.position(left[0]));
        for (std::size_t i = 1; i < left.size(); ++i) {
            const double d = distance(problem.position(cur), problem.position(left[i]));
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        cur = left[best];
        order.push_back(cur);
        left.erase(left.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return order;
}

// First-improvement 2-opt, rescanning from the start after every move.
inline Route two_opt(const RoutingProblem& problem, Route route) {
    auto& s = route.sequence;
    const AgentId a = route.agent;
    auto c = [&](NodeId u, NodeId v) { return edge_cost(problem, a, u, v); };
    const std::size_t m = route.customer_count();
    bool improved = true;
    while (improved) {
        improved = false;
        for (std::size_t i = 1; i < m && !improved; ++i) {
            for (std::size_t j = i + 1; j <= m && !improved; ++j) {
                const double delta = c(s[i - 1], s[j]) + c(s[i], s[j + 1]) - c(s[i - 1], s[i]) - c(s[j], s[j + 1]);
                if (delta < -1e-12) {
                    std::reverse(s.begin() + static_cast<std::ptrdiff_t>(i),
                                 s.begin() + static_cast<std::ptrdiff_t>(j) + 1);
                    improved = true;
                }
            }
        }
    }
    return route;
}

inline std::vector<std::vector<NodeId>> customers_by_agent(const RoutingProblem& problem, const Assignment& assignment) {
    if (static_cast<int>(assignment.size()) != problem.customers()) {
        throw InvariantViolation("assignment must cover every customer exactly once");
    }
    std::vector<std::vector<NodeId>> parts(static_cast<std::size_t>(problem.agents()));
    for (NodeId id = 0; id < problem.customers(); ++id) {
        problem.check_agent(assignment[id]);
        parts[assignment[id]].push_back(id);
    }
    return parts;
}

inline GlobalState nn_2opt(const RoutingProblem& problem, const Assignment& assignment) {
    const auto parts = customers_by_agent(problem, assignment);
    GlobalState s;
    for (AgentId i = 0; i < problem.agents(); ++i) {
        s.routes.push_back(two_opt(problem, make_route(problem, i, nearest_neighbour_order(problem, i, parts[i]))));
    }
    return s;
}

struct MvrpSolution {
    Assignment assignment;
    GlobalState state;
    double cost = 0.0;  // team average
};

// Exact optimum over all assignments: a per-agent subset Held-Karp table,
// then a subset-partition DP across agents.
inline MvrpSolution exact_mvrp(const RoutingProblem& problem) {
    const int k = problem.customers();
    const int n = problem.agents();
    if (k + 1 > kHeldKarpMaxNodes) {
        throw SizeError("exact_mvrp: " + std::to_string(k) + " customers exceed the per-agent tour limit");
    }
    if (std::pow(static_cast<double>(n), k) > kPartitionLimit) {
        throw SizeError("exact_mvrp: " + std::to_string(n) + "^" + std::to_string(k) + " assignments exceed 1e7");
    }
    const std::size_t full = std::size_t{1} << k;
    const double inf = std::numeric_limits<double>::infinity();

    std::vector<std::vector<double>> tsp(static_cast<std::size_t>(n), std::vector<double>(full, inf));
    for (AgentId a = 0; a < n; ++a) {
        const NodeId d = problem.depot_of(a);
        std::vector<double> dp(full * std::max(k, 1), inf);
        for (int j = 0; j < k; ++j) dp[(std::size_t{1} << j) * k + j] = edge_cost(problem, a, d, j);
        for (std::size_t mask = 1; mask < full; ++mask) {
            for (int j = 0; j < k; ++j) {
                if (!(mask >> j & 1)) continue;
                const double base = dp[mask * k + j];
                if (base == inf) continue;
                for (int x = 0; x < k; ++x) {
                    if (mask >> x & 1) continue;
                    const std::size_t nm = mask | (std::size_t{1} << x);
                    dp[nm * k + x] = std::min(dp[nm * k + x], base + edge_cost(problem, a, j, x));
                }
            }
        }
        tsp[a][0] = 0.0;
        for (std::size_t mask = 1; mask < full; ++mask) {
            for (int j = 0; j < k; ++j) {
                if (mask >> j & 1) tsp[a][mask] = std::min(tsp[a][mask], dp[mask * k + j] + edge_cost(problem, a, j, d));
            }
        }
    }

    // best[a][mask]: agents 0..a cover exactly mask.
    std::vector<std::vector<double>> best(static_cast<std::size_t>(n), std::vector<double>(full, inf));
    std::vector<std::vector<std::uint32_t>> pick(static_cast<std::size_t>(n), std::vector<std::uint32_t>(full, 0));
    best[0] = tsp[0];
    for (std::size_t mask = 0; mask < full; ++mask) pick[0][mask] = static_cast<std::uint32_t>(mask);
    for (int a = 1; a < n; ++a) {
        for (std::size_t mask = 0; mask < full; ++mask) {
            // Enumerate subsets s of mask (including empty) given to agent a.
            std::size_t s = mask;
            while (true) {
                const double v = best[a - 1][mask & ~s] + tsp[a][s];
                if (v < best[a][mask]) {
                    best[a][mask] = v;
                    pick[a][mask] = static_cast<std::uint32_t>(s);
                }
                if (s == 0) break;
                s = (s - 1) & mask;
            }
        }
    }

    MvrpSolution sol;
    sol.assignment.assign(static_cast<std::size_t>(k), -1);
    std::size_t mask = full - 1;
    std::vector<std::vector<NodeId>> parts(static_cast<std::size_t>(n));
    for (int a = n - 1; a >= 0; --a) {
        const std::size_t s = pick[a][mask];
        for (int j = 0; j < k; ++j) {
            if (s >> j & 1) {
                sol.assignment[j] = a;
                parts[a].push_back(j);
            }
        }
        mask &= ~s;
    }
    for (AgentId a = 0; a < n; ++a) sol.state.routes.push_back(held_karp_route(problem, a, parts[a]));
    sol.cost = team_average_cost(problem, sol.state);
    return sol;
}

struct NonCollaborative {
    double cost = 0.0;  // average over agents
    std::vector<double> agent_costs;
    bool heuristic_fallback = false;  // some agent exceeded the exact bound
};

// Each agent solves a TSP on its own customers; agents without customers cost 0.
inline NonCollaborative per_agent_tsp(const RoutingProblem& problem, const Assignment& assignment) {
    const auto parts = customers_by_agent(problem, assignment);
    NonCollaborative out;
    for (AgentId i = 0; i < problem.agents(); ++i) {
        Route r;
        if (static_cast<int>(parts[i].size()) + 1 <= kHeldKarpMaxNodes) {
            r = held_karp_route(problem, i, parts[i]);
        } else {
            r = two_opt(problem, make_route(problem, i, nearest_neighbour_order(problem, i, parts[i])));
            out.heuristic_fallback = true;
        }
        out.agent_costs.push_back(route_cost(problem, i, r));
    }
    double total = 0.0;
    for (double c : out.agent_costs) total += c;
    out.cost = total / static_cast<double>(problem.agents());
    return out;
}

}  // namespace manr
