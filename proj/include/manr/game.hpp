#pragma once

// The team Markov game: legal rule sets, move-after action semantics, the
// pool offer mechanism, the team reward and episode rollout.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "manr/errors.hpp"
#include "manr/rng.hpp"
#include "manr/routing.hpp"

namespace manr {

// Rule value standing for the pool sentinel p (drop, or decline an offer).
inline constexpr NodeId kPoolSentinel = -1;

struct LocalAction {
    AgentId agent = 0;
    std::optional<NodeId> region;  // nullopt = NoOp
    NodeId rule = kPoolSentinel;   // ignored for NoOp

    static LocalAction noop(AgentId agent) { return LocalAction{agent, std::nullopt, kPoolSentinel}; }
    bool is_noop() const { return !region.has_value(); }
    friend bool operator==(const LocalAction&, const LocalAction&) = default;
};

struct GlobalAction {
    std::vector<LocalAction> locals;

    static GlobalAction noop(int n) {
        GlobalAction a;
        for (AgentId i = 0; i < n; ++i) a.locals.push_back(LocalAction::noop(i));
        return a;
    }
    friend bool operator==(const GlobalAction&, const GlobalAction&) = default;
};

// Per-agent pool offer for the current step.
using Offers = std::vector<std::optional<NodeId>>;

struct PoolCoordinatorState {
    std::map<NodeId, AgentId> dropper;
    // Agent that was sole integrator in the previous filled-pool step.
    std::optional<AgentId> last_integrator;
    friend bool operator==(const PoolCoordinatorState&, const PoolCoordinatorState&) = default;
};

struct RewardConfig {
    int m = 3;
    double penalty = -10.0;

    static RewardConfig for_agents(int n) { return RewardConfig{n + 1, -10.0}; }
};

struct EpisodeTrace {
    std::vector<GlobalState> states;    // s_0 .. s_T
    std::vector<GlobalAction> actions;  // a_0 .. a_{T-1}
    std::vector<Offers> offers;         // offers in force when a_t was chosen
    std::vector<double> rewards;        // r_1 .. r_T
    std::vector<char> feasible;         // per state
    std::vector<int> prev_feasible;     // prev_f(t) for t = 1..T (index t-1)

    int steps() const { return static_cast<int>(actions.size()); }
};

namespace detail {

inline std::string agent_tag(AgentId a) { return "agent " + std::to_string(a); }

inline const Route& route_of(const GlobalState& state, AgentId agent) {
    if (agent < 0 || agent >= state.agents()) throw InvalidReference("unknown agent id " + std::to_string(agent));
    return state.routes[agent];
}

}  // namespace detail

// Rule candidates of one agent for a region node: start depot and interior
// customers of the route (minus the region itself when it is local),
// followed by the pool sentinel. Never the terminal depot.
inline std::vector<NodeId> legal_rules(const Route& route, const PoolState& pool, NodeId region,
                                       std::optional<NodeId> offer) {
    std::vector<NodeId> out;
    out.reserve(route.sequence.size());
    if (pool.empty()) {
        if (!route.visits(region)) {
            throw IllegalAction(detail::agent_tag(route.agent) + ": region " + std::to_string(region) +
                                " is not one of its customers");
        }
    } else {
        if (!offer || *offer != region || !pool.contains(region)) {
            throw IllegalAction(detail::agent_tag(route.agent) + ": region " + std::to_string(region) +
                                " was not offered from the pool");
        }
    }
    for (std::size_t i = 0; i + 1 < route.sequence.size(); ++i) {
        if (route.sequence[i] != region) out.push_back(route.sequence[i]);
    }
    out.push_back(kPoolSentinel);
    return out;
}

inline std::vector<NodeId> legal_rules(const GlobalState& state, AgentId agent, NodeId region,
                                       std::optional<NodeId> offer) {
    return legal_rules(detail::route_of(state, agent), state.pool, region, offer);
}

// Predecessor rule that leaves a local route unchanged (pool-empty case).
inline NodeId noop_rule(const Route& route, NodeId region) {
    const int pos = route.position_of(region);
    if (pos < 1) throw IllegalAction("region " + std::to_string(region) + " not in route");
    return route.sequence[pos - 1];
}

struct LocalOutcome {
    Route route;
    std::optional<NodeId> pool_added;
    std::optional<NodeId> pool_removed;
};

inline LocalOutcome apply_local_action(const GlobalState& state, const LocalAction& action) {
    const Route& route = detail::route_of(state, action.agent);
    LocalOutcome out{route, std::nullopt, std::nullopt};
    if (action.is_noop()) return out;

    const NodeId w = *action.region;
    if (action.rule == w) {
        throw IllegalAction(detail::agent_tag(action.agent) + ": rule equals region " + std::to_string(w));
    }
    const bool from_pool = !state.pool.empty();
    if (from_pool) {
        if (!state.pool.contains(w)) {
            throw IllegalAction(detail::agent_tag(action.agent) + ": region " + std::to_string(w) +
                                " is not in the pool");
        }
        if (action.rule == kPoolSentinel) return out;  // decline
        const int upos = static_cast<int>(
            std::find(route.sequence.begin(), route.sequence.end() - 1, action.rule) - route.sequence.begin());
        if (upos >= static_cast<int>(route.sequence.size()) - 1) {
            throw IllegalAction(detail::agent_tag(action.agent) + ": rule " + std::to_string(action.rule) +
                                " not in its route");
        }
        out.route.sequence.insert(out.route.sequence.begin() + upos + 1, w);
        out.pool_removed = w;
        return out;
    }

    const int wpos = route.position_of(w);
    if (wpos < 1) {
        throw IllegalAction(detail::agent_tag(action.agent) + ": region " + std::to_string(w) +
                            " is not one of its customers");
    }
    out.route.sequence.erase(out.route.sequence.begin() + wpos);
    if (action.rule == kPoolSentinel) {
        out.pool_added = w;
        return out;
    }
    auto& seq = out.route.sequence;
    const auto it = std::find(seq.begin(), seq.end() - 1, action.rule);
    if (it == seq.end() - 1) {
        throw IllegalAction(detail::agent_tag(action.agent) + ": rule " + std::to_string(action.rule) +
                            " not in its route");
    }
    seq.insert(it + 1, w);
    return out;
}

inline GlobalState apply_global_action(const GlobalState& state, const GlobalAction& action) {
    if (static_cast<int>(action.locals.size()) != state.agents()) {
        throw IllegalAction("global action must hold one local action per agent");
    }
    std::vector<NodeId> claimed;
    for (std::size_t i = 0; i < action.locals.size(); ++i) {
        const LocalAction& a = action.locals[i];
        if (a.agent != static_cast<AgentId>(i)) throw IllegalAction("local action " + std::to_string(i) + " mislabeled");
        if (!a.is_noop() && !state.pool.empty()) {
            if (std::find(claimed.begin(), claimed.end(), *a.region) != claimed.end()) {
                throw ConflictError("pool node " + std::to_string(*a.region) + " claimed by several agents");
            }
            claimed.push_back(*a.region);
        }
    }
    GlobalState next;
    next.pool = state.pool;
    next.routes.reserve(state.routes.size());
    for (const LocalAction& a : action.locals) {
        LocalOutcome o = apply_local_action(state, a);
        next.routes.push_back(std::move(o.route));
        if (o.pool_added) next.pool.insert(*o.pool_added);
        if (o.pool_removed) next.pool.erase(*o.pool_removed);
    }
    return next;
}

namespace detail {

// Kuhn's augmenting paths over a node x agent permission matrix.
inline bool augment(int node, const std::vector<std::vector<char>>& allowed, const std::vector<int>& agent_order,
                    std::vector<int>& owner_of_agent, std::vector<char>& visited) {
    for (int a : agent_order) {
        if (!allowed[node][a] || visited[a]) continue;
        visited[a] = 1;
        if (owner_of_agent[a] < 0 || augment(owner_of_agent[a], allowed, agent_order, owner_of_agent, visited)) {
            owner_of_agent[a] = node;
            return true;
        }
    }
    return false;
}

inline std::vector<int> max_matching(const std::vector<std::vector<char>>& allowed, const std::vector<int>& node_order,
                                     const std::vector<int>& agent_order, int n) {
    std::vector<int> owner(static_cast<std::size_t>(n), -1);
    for (int v : node_order) {
        std::vector<char> visited(static_cast<std::size_t>(n), 0);
        augment(v, allowed, agent_order, owner, visited);
    }
    return owner;
}

}  // namespace detail

// Conflict-free offers: each pool node to at most one agent, at most one
// node per agent. Preferences: never re-offer a node to its dropper, and
// never ask the same agent twice in a row to be the sole integrator. When
// no offer is possible under them they are relaxed, repeat-integrator rule
// first.
inline Offers assign_pool_offers(const PoolState& pool, int n, PoolCoordinatorState& coord, Rng& rng) {
    if (pool.empty()) throw ContractError("assign_pool_offers requires a nonempty pool");
    const int p = static_cast<int>(pool.size());
    std::vector<int> node_order(static_cast<std::size_t>(p));
    std::vector<int> agent_order(static_cast<std::size_t>(n));
    for (int i = 0; i < p; ++i) node_order[i] = i;
    for (int i = 0; i < n; ++i) agent_order[i] = i;
    rng.shuffle(node_order);
    rng.shuffle(agent_order);

    auto build = [&](bool dropper_rule, bool repeat_rule) {
        std::vector<std::vector<char>> allowed(static_cast<std::size_t>(p), std::vector<char>(n, 1));
        for (int v = 0; v < p; ++v) {
            if (dropper_rule) {
                auto it = coord.dropper.find(pool.members[v]);
                if (it != coord.dropper.end() && it->second < n) allowed[v][it->second] = 0;
            }
            if (repeat_rule && coord.last_integrator && *coord.last_integrator < n) {
                allowed[v][*coord.last_integrator] = 0;
            }
        }
        return detail::max_matching(allowed, node_order, agent_order, n);
    };
    auto size_of = [](const std::vector<int>& m) {
        return static_cast<int>(std::count_if(m.begin(), m.end(), [](int x) { return x >= 0; }));
    };

    std::vector<int> match = build(true, false);
    if (size_of(match) == 1 && coord.last_integrator) {
        std::vector<int> strict = build(true, true);
        if (size_of(strict) >= 1) match = std::move(strict);
    }
    if (size_of(match) == 0) match = build(false, false);

    Offers offers(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a) {
        if (match[a] >= 0) offers[a] = pool.members[match[a]];
    }
    if (size_of(match) == 1) {
        coord.last_integrator = static_cast<AgentId>(std::find_if(match.begin(), match.end(), [](int x) {
                                                         return x >= 0;
                                                     }) - match.begin());
    } else {
        coord.last_integrator.reset();
    }
    return offers;
}

// Records droppers of newly pooled nodes and forgets nodes that left the pool.
inline void update_coordinator(PoolCoordinatorState& coord, const GlobalState& before, const GlobalAction& action,
                               const GlobalState& after) {
    if (before.pool.empty()) {
        for (const LocalAction& a : action.locals) {
            if (!a.is_noop() && a.rule == kPoolSentinel) coord.dropper[*a.region] = a.agent;
        }
    }
    for (auto it = coord.dropper.begin(); it != coord.dropper.end();) {
        if (!after.pool.contains(it->first)) {
            it = coord.dropper.erase(it);
        } else {
            ++it;
        }
    }
}

inline std::optional<NodeId> sample_region(const GlobalState& state, AgentId agent, std::optional<NodeId> offer,
                                           Rng& rng) {
    if (!state.pool.empty()) return offer;
    const Route& route = detail::route_of(state, agent);
    const auto in = route.interior();
    if (in.empty()) return std::nullopt;
    return in[rng.uniform_int(in.size())];
}

// Largest index < t whose state is feasible; -1 if none.
inline int previous_feasible(const RoutingProblem& problem, std::span<const GlobalState> states, int t) {
    for (int j = t - 1; j >= 0; --j) {
        if (is_feasible(problem, states[j])) return j;
    }
    return -1;
}

// Reward r_t for the last state of the prefix s_0..s_t.
inline double compute_reward(std::span<const GlobalState> prefix, const RewardConfig& config,
                             const RoutingProblem& problem) {
    const int t = static_cast<int>(prefix.size()) - 1;
    if (t < 1) throw ContractError("compute_reward needs t >= 1");
    if (config.m < 1) throw ContractError("reward window m must be >= 1");
    if (!is_feasible(problem, prefix[0])) throw ContractError("s_0 must be feasible");
    if (is_feasible(problem, prefix[t])) {
        const int pf = previous_feasible(problem, prefix, t);
        return team_average_cost(problem, prefix[pf]) - team_average_cost(problem, prefix[t]);
    }
    const int first = t - config.m + 1;
    if (first < 0) return 0.0;
    for (int j = first; j <= t; ++j) {
        if (is_feasible(problem, prefix[j])) return 0.0;
    }
    return config.penalty;
}

// Action provider: given the current state and offers, return one local
// action per agent.
using ActionProvider = std::function<GlobalAction(const GlobalState&, const Offers&, Rng&)>;

// Throws IllegalAction naming agent and step when the action breaks the rules.
inline void check_action_legal(const GlobalState& state, const Offers& offers, const GlobalAction& action, int step) {
    const std::string where = " at step " + std::to_string(step);
    if (static_cast<int>(action.locals.size()) != state.agents()) {
        throw IllegalAction("provider returned " + std::to_string(action.locals.size()) + " local actions" + where);
    }
    for (AgentId i = 0; i < state.agents(); ++i) {
        const LocalAction& a = action.locals[i];
        if (a.agent != i) throw IllegalAction("local action slot " + std::to_string(i) + " mislabeled" + where);
        if (a.is_noop()) continue;
        const std::optional<NodeId> offer = state.pool.empty() ? std::nullopt : offers[i];
        try {
            const auto rules = legal_rules(state, i, *a.region, offer);
            if (std::find(rules.begin(), rules.end(), a.rule) == rules.end()) {
                throw IllegalAction(detail::agent_tag(i) + ": rule " + std::to_string(a.rule) + " not legal for region " +
                                    std::to_string(*a.region));
            }
        } catch (const IllegalAction& e) {
            throw IllegalAction(std::string(e.what()) + where);
        }
    }
}

inline EpisodeTrace rollout_episode(const RoutingProblem& problem, const GlobalState& s0, const ActionProvider& provider,
                                    int T, const RewardConfig& config, Rng& rng) {
    if (!is_feasible(problem, s0)) throw ContractError("initial state must be feasible");
    if (T < 0) throw ContractError("episode length must be nonnegative");
    EpisodeTrace trace;
    trace.states.reserve(static_cast<std::size_t>(T) + 1);
    trace.states.push_back(s0);
    trace.feasible.push_back(1);
    PoolCoordinatorState coord;
    const int n = problem.agents();
    for (int t = 0; t < T; ++t) {
        const GlobalState& s = trace.states.back();
        Offers offers(static_cast<std::size_t>(n));
        if (!s.pool.empty()) offers = assign_pool_offers(s.pool, n, coord, rng);
        GlobalAction a = provider(s, offers, rng);
        check_action_legal(s, offers, a, t);
        GlobalState next = apply_global_action(s, a);
        update_coordinator(coord, s, a, next);
        trace.actions.push_back(std::move(a));
        trace.offers.push_back(std::move(offers));
        trace.states.push_back(std::move(next));
        trace.feasible.push_back(is_feasible(problem, trace.states.back()) ? 1 : 0);
        trace.prev_feasible.push_back(previous_feasible(problem, trace.states, t + 1));
        trace.rewards.push_back(compute_reward(trace.states, config, problem));
    }
    return trace;
}

inline const GlobalState& final_solution(const EpisodeTrace& trace) {
    for (std::size_t i = trace.states.size(); i-- > 0;) {
        if (trace.feasible[i]) return trace.states[i];
    }
    throw ContractError("trace has no feasible state");
}

// Human-readable label of what a local action does.
inline std::string action_label(const GlobalState& state, const LocalAction& a) {
    if (a.is_noop()) return "noop";
    if (!state.pool.empty()) return a.rule == kPoolSentinel ? "decline" : "integrate";
    if (a.rule == kPoolSentinel) return "drop";
    const Route& r = state.routes[a.agent];
    return noop_rule(r, *a.region) == a.rule ? "keep" : "reorder";
}

}  // namespace manr
